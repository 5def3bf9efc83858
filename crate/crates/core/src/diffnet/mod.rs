//! Networks and the differentiation engine.
//!
//! Directional derivatives (in `s`, `t`, or along a spatial direction) are
//! propagated as tangent chains recorded on the same [`LossGraph`] as the
//! primal pass, so parameter gradients of losses that contain them come out
//! of a single reverse sweep.

mod adam;
mod checkpoint;
mod graph;
mod mlp;
mod model;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, ModelKind, CHECKPOINT_VERSION};
pub use graph::{Gradients, LossGraph, NodeId};
pub use mlp::{Activation, Dense, MlpParams};
pub use model::{
    flow_map_ds, flow_map_dt, flow_map_eval, flow_map_jvp_x, mlp_on_graph, velocity_eval, FlowMap,
    FlowMapModel, NetworkSpec, TangentSeed, TimeEmbedding, VelocityField, VelocityModel,
};
