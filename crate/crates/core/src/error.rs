use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument (usually a time) fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A non-finite value appeared during evaluation.
    #[error("numeric failure in {context}{}", location(.layer, .step))]
    Numeric {
        context: String,
        layer: Option<usize>,
        step: Option<usize>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("acceptance failure: {0}")]
    Acceptance(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(layer: &Option<usize>, step: &Option<usize>) -> String {
    match (layer, step) {
        (Some(l), Some(s)) => format!(" (layer {l}, step {s})"),
        (Some(l), None) => format!(" (layer {l})"),
        (None, Some(s)) => format!(" (step {s})"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn numeric(context: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            layer: None,
            step: None,
        }
    }

    pub fn numeric_at_layer(context: impl Into<String>, layer: usize) -> Self {
        Error::Numeric {
            context: context.into(),
            layer: Some(layer),
            step: None,
        }
    }

    pub fn numeric_at_step(context: impl Into<String>, step: usize) -> Self {
        Error::Numeric {
            context: context.into(),
            layer: None,
            step: Some(step),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Domain(_) | Error::Checkpoint(_) => 2,
            Error::Numeric { .. } => 3,
            Error::Acceptance(_) => 4,
            Error::Io { .. } | Error::Internal(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Fails with [`Error::Domain`] unless `t` lies in the unit interval.
pub(crate) fn check_unit_time(name: &str, t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name}={t} outside [0, 1]")))
    }
}
