//! Learning two-time flow maps of probability-flow ODEs.
//!
//! A flow map `X_{s,t}` sends the state of the ODE `ẋ = b_t(x)` at time `s` to
//! its state at time `t`. Once learned, it generates samples in one step
//! (`X_{0,1}`) or in a few steps through the semigroup identity
//! `X_{t,u} ∘ X_{s,t} = X_{s,u}`.
//!
//! The crate is organized as:
//!
//! - [`interpolant`]: schedules, couplings and time-pair samplers that
//!   produce training tuples.
//! - [`diffnet`]: MLP velocity fields and flow maps, plus a tape that carries
//!   forward-mode tangents and reverse-mode parameter gradients together.
//! - [`objectives`]: velocity regression and the flow-map losses
//!   (Lagrangian and Eulerian distillation, direct matching, progressive
//!   distillation, Eulerian estimation and the denoiser).
//! - [`oracle`]: closed-form Gaussian ground truths, RK4 reference maps and
//!   the Wasserstein bound audit.
//! - [`sampler`]: ODE integration, multi-step map sampling and style transfer.
//! - [`metrics`]: histogram KL, assignment-based `W₂²`, teacher agreement.
//! - [`cli`]: declarative experiment configs and run orchestration.

pub mod error;
pub mod interpolant;
pub mod diffnet;
pub mod objectives;
pub mod oracle;
pub mod sampler;
pub mod metrics;
pub mod cli;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic random stream for worker `worker` of a run seeded with `base_seed`.
pub fn worker_rng(base_seed: u64, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(worker as u64);
    rng
}
