//! Per-run manifest listing the config hash, timings and emitted files.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub deterministic: bool,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Paths relative to the output directory, sorted.
    pub files: Vec<String>,
    pub metrics: Vec<(String, String)>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(command: &str, config_hash: String, seed: u64, deterministic: bool) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            deterministic,
            started_unix: unix_now(),
            finished_unix: 0,
            files: Vec::new(),
            metrics: Vec::new(),
        }
    }

    pub fn metric(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metrics.push((key.into(), value.to_string()));
    }

    /// Lists every file under `dir` (including the manifest itself) and
    /// writes the manifest there.
    pub fn finish(&mut self, dir: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let mut files = Vec::new();
        collect_files(dir, dir, &mut files)?;
        if !files.iter().any(|f| f == MANIFEST_FILE) {
            files.push(MANIFEST_FILE.to_string());
        }
        files.sort();
        self.files = files;
        let path = dir.join(MANIFEST_FILE);
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(self.render().as_bytes()).map_err(|e| Error::io(&path, e))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out += &format!("command={}\n", self.command);
        out += &format!("config_hash={}\n", self.config_hash);
        out += &format!("code_version={}\n", self.code_version);
        out += &format!("seed={}\n", self.seed);
        out += &format!("deterministic={}\n", self.deterministic);
        out += &format!("started_unix={}\n", self.started_unix);
        out += &format!("finished_unix={}\n", self.finished_unix);
        for (k, v) in &self.metrics {
            out += &format!("metric.{k}={v}\n");
        }
        for f in &self.files {
            out += &format!("file={f}\n");
        }
        out
    }

    /// File entries of a rendered manifest.
    pub fn parse_files(text: &str) -> Vec<String> {
        text.lines()
            .filter_map(|l| l.strip_prefix("file="))
            .map(str::to_string)
            .collect()
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_every_file_including_itself() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x").unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.png"), "y").unwrap();
        let mut m = RunManifest::start("sample", "abc".into(), 1, true);
        m.metric("kl", 0.5);
        m.finish(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(RunManifest::parse_files(&text), vec!["a.csv", MANIFEST_FILE, "sub/b.png"]);
        assert!(text.contains("metric.kl=0.5\n"));
    }
}
