//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "FMCK"
//! version      u32
//! model kind   u8       0 = velocity, 1 = flow map
//! d            u32
//! n_widths     u32, then n_widths × u32 layer widths
//! activation   u8
//! time inputs  u32      1 for velocity, 2 for flow map
//! frequencies  u32      sinusoidal frequencies per time input
//! label count  u32
//! optimizer    u8       0 = absent, 1 = present
//! parameters   f64 × P  declaration order (per layer: weight row-major, bias)
//! [step u64, first moments f64 × P, second moments f64 × P]   if optimizer present
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::adam::AdamState;
use super::mlp::{Activation, MlpParams};
use super::model::{FlowMapModel, TimeEmbedding, VelocityModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"FMCK";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Velocity,
    FlowMap,
}

impl ModelKind {
    fn id(self) -> u8 {
        match self {
            ModelKind::Velocity => 0,
            ModelKind::FlowMap => 1,
        }
    }

    fn time_inputs(self) -> u32 {
        match self {
            ModelKind::Velocity => 1,
            ModelKind::FlowMap => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Velocity => "velocity",
            ModelKind::FlowMap => "flow-map",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub dim: usize,
    pub embedding: TimeEmbedding,
    pub label_count: usize,
    pub params: MlpParams,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_velocity(model: &VelocityModel, optimizer: Option<&AdamState>) -> Self {
        Checkpoint {
            kind: ModelKind::Velocity,
            dim: model.dim,
            embedding: model.embedding,
            label_count: model.label_count,
            params: model.params.clone(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn from_flow_map(model: &FlowMapModel, optimizer: Option<&AdamState>) -> Self {
        Checkpoint {
            kind: ModelKind::FlowMap,
            dim: model.dim,
            embedding: model.embedding,
            label_count: model.label_count,
            params: model.params.clone(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn into_velocity(self) -> Result<VelocityModel> {
        if self.kind != ModelKind::Velocity {
            return Err(Error::Checkpoint(format!(
                "expected a velocity checkpoint, found {}",
                self.kind.name()
            )));
        }
        Ok(VelocityModel {
            params: self.params,
            dim: self.dim,
            embedding: self.embedding,
            label_count: self.label_count,
        })
    }

    pub fn into_flow_map(self) -> Result<FlowMapModel> {
        if self.kind != ModelKind::FlowMap {
            return Err(Error::Checkpoint(format!(
                "expected a flow-map checkpoint, found {}",
                self.kind.name()
            )));
        }
        Ok(FlowMapModel {
            params: self.params,
            dim: self.dim,
            embedding: self.embedding,
            label_count: self.label_count,
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&[self.kind.id()])?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        let widths = self.params.widths();
        w.write_all(&(widths.len() as u32).to_le_bytes())?;
        for width in widths {
            w.write_all(&(width as u32).to_le_bytes())?;
        }
        w.write_all(&[self.params.activation.id()])?;
        w.write_all(&self.kind.time_inputs().to_le_bytes())?;
        w.write_all(&(self.embedding.frequencies as u32).to_le_bytes())?;
        w.write_all(&(self.label_count as u32).to_le_bytes())?;
        w.write_all(&[self.optimizer.is_some() as u8])?;
        write_params(w, &self.params)?;
        if let Some(opt) = &self.optimizer {
            w.write_all(&opt.step.to_le_bytes())?;
            write_params(w, &opt.m)?;
            write_params(w, &opt.v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(what.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a flow-map checkpoint (bad magic)"));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let kind = match read_u8(r)? {
            0 => ModelKind::Velocity,
            1 => ModelKind::FlowMap,
            other => return Err(Error::Checkpoint(format!("unknown model kind {other}"))),
        };
        let dim = read_u32(r)? as usize;
        let n_widths = read_u32(r)? as usize;
        if !(2..=64).contains(&n_widths) {
            return Err(bad("implausible layer count"));
        }
        let widths = (0..n_widths)
            .map(|_| read_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let activation = Activation::from_id(read_u8(r)?).ok_or_else(|| bad("unknown activation id"))?;
        let time_inputs = read_u32(r)?;
        if time_inputs != kind.time_inputs() {
            return Err(bad("time input count does not match model kind"));
        }
        let embedding = TimeEmbedding {
            frequencies: read_u32(r)? as usize,
        };
        let label_count = read_u32(r)? as usize;
        let has_opt = read_u8(r)? != 0;
        let expected_input = time_inputs as usize * embedding.width() + dim + label_count;
        if widths[0] != expected_input || *widths.last().unwrap() != dim {
            return Err(bad("layer widths inconsistent with the embedding spec"));
        }
        let mut params = MlpParams::zeros(&widths, activation);
        read_params(r, &mut params)?;
        let optimizer = if has_opt {
            let mut step = [0u8; 8];
            r.read_exact(&mut step).map_err(|_| bad("truncated optimizer state"))?;
            let mut m = params.zeros_like();
            let mut v = params.zeros_like();
            read_params(r, &mut m)?;
            read_params(r, &mut v)?;
            Some(AdamState {
                step: u64::from_le_bytes(step),
                m,
                v,
            })
        } else {
            None
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::Checkpoint(e.to_string()))? != 0 {
            return Err(bad("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint {
            kind,
            dim,
            embedding,
            label_count,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

fn write_params<W: Write>(w: &mut W, p: &MlpParams) -> std::io::Result<()> {
    for v in p.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_params<R: Read>(r: &mut R, p: &mut MlpParams) -> Result<()> {
    let mut buf = [0u8; 8];
    for v in p.iter_mut() {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("truncated parameter block".into()))?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(b[0])
}
