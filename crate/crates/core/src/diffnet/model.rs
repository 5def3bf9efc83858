//! Velocity fields and two-time flow maps, evaluated either directly or on a
//! [`LossGraph`] together with a directional-derivative channel.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use super::graph::{LossGraph, NodeId};
use super::mlp::{Activation, MlpParams};
use crate::error::{check_unit_time, Error, Result};

/// Sinusoidal featurization `t ↦ [sin(2ᵏπt), cos(2ᵏπt)]` for `k < frequencies`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeEmbedding {
    pub frequencies: usize,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        TimeEmbedding { frequencies: 8 }
    }
}

impl TimeEmbedding {
    pub fn width(&self) -> usize {
        2 * self.frequencies
    }

    fn omega(k: usize) -> f64 {
        (1u64 << k) as f64 * PI
    }

    pub fn features(&self, t: f64, out: &mut [f64]) {
        for k in 0..self.frequencies {
            let (sin, cos) = (Self::omega(k) * t).sin_cos();
            out[2 * k] = sin;
            out[2 * k + 1] = cos;
        }
    }

    /// `d/dt` of [`features`](Self::features).
    pub fn derivative(&self, t: f64, out: &mut [f64]) {
        for k in 0..self.frequencies {
            let w = Self::omega(k);
            let (sin, cos) = (w * t).sin_cos();
            out[2 * k] = w * cos;
            out[2 * k + 1] = -w * sin;
        }
    }

    pub fn matrix(&self, times: &[f64]) -> Array2<f64> {
        let mut m = Array2::zeros((times.len(), self.width()));
        for (mut row, &t) in m.rows_mut().into_iter().zip(times) {
            self.features(t, row.as_slice_mut().expect("standard layout"));
        }
        m
    }

    pub fn derivative_matrix(&self, times: &[f64], scale: f64) -> Array2<f64> {
        let mut m = Array2::zeros((times.len(), self.width()));
        if scale != 0.0 {
            for (mut row, &t) in m.rows_mut().into_iter().zip(times) {
                self.derivative(t, row.as_slice_mut().expect("standard layout"));
            }
            m *= scale;
        }
        m
    }
}

/// Architecture of the network behind a model.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub embedding: TimeEmbedding,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            hidden: vec![128; 3],
            activation: Activation::Gelu,
            embedding: TimeEmbedding::default(),
        }
    }
}

impl NetworkSpec {
    /// The 6 × 512 configuration used for fidelity runs.
    pub fn paper_scale() -> Self {
        NetworkSpec {
            hidden: vec![512; 6],
            ..Self::default()
        }
    }

    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(&self.hidden);
        w.push(output);
        w
    }
}

fn one_hot(labels: Option<&[usize]>, rows: usize, count: usize) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((rows, count));
    match (labels, count) {
        (_, 0) => {}
        (None, _) => return Err(Error::Usage("conditional model evaluated without labels".into())),
        (Some(l), _) => {
            if l.len() != rows {
                return Err(Error::Usage("one label per row required".into()));
            }
            for (i, &y) in l.iter().enumerate() {
                if y >= count {
                    return Err(Error::Usage(format!("label {y} out of range (count {count})")));
                }
                m[[i, y]] = 1.0;
            }
        }
    }
    Ok(m)
}

fn check_rows(name: &str, times: &[f64], rows: usize) -> Result<()> {
    if times.len() != rows {
        return Err(Error::Usage(format!(
            "{name}: {} times for {rows} rows",
            times.len()
        )));
    }
    Ok(())
}

/// Runs the network on the graph, propagating an optional tangent.
///
/// Each hidden layer records `pre = h Wᵀ + b`, `h' = σ(pre)` and, for the
/// tangent, `dpre = dh Wᵀ`, `dh' = σ'(pre) ⊙ dpre`.
pub fn mlp_on_graph<'a>(
    g: &mut LossGraph<'a>,
    params: &'a MlpParams,
    input: NodeId,
    tangent: Option<NodeId>,
) -> Result<(NodeId, Option<NodeId>)> {
    let last = params.layers.len() - 1;
    let act = params.activation;
    let mut h = input;
    let mut dh = tangent;
    for layer in 0..=last {
        let pre = g.linear(h, params, layer, true);
        if !g.value(pre).iter().all(|v| v.is_finite()) {
            return Err(Error::numeric_at_layer("network forward pass", layer));
        }
        let dpre = dh.map(|d| g.linear(d, params, layer, false));
        if layer < last {
            h = g.activation(pre, act);
            dh = match dpre {
                Some(dp) => {
                    let slope = g.activation_derivative(pre, act);
                    Some(g.mul(slope, dp))
                }
                None => None,
            };
        } else {
            h = pre;
            dh = dpre;
        }
    }
    if let Some(d) = dh {
        if !g.value(d).iter().all(|v| v.is_finite()) {
            return Err(Error::numeric_at_layer("network tangent pass", last));
        }
    }
    Ok((h, dh))
}

/// Direction of a tangent pass: `ds·∂_s + dt·∂_t + ∇_x·dx`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TangentSeed {
    pub ds: f64,
    pub dt: f64,
    pub dx: Option<NodeId>,
}

impl TangentSeed {
    pub fn d_s() -> Self {
        TangentSeed {
            ds: 1.0,
            ..Default::default()
        }
    }

    pub fn d_t() -> Self {
        TangentSeed {
            dt: 1.0,
            ..Default::default()
        }
    }

    pub fn along_x(dir: NodeId) -> Self {
        TangentSeed {
            dx: Some(dir),
            ..Default::default()
        }
    }
}

/// A two-time map `X_{s,t}: ℝᵈ → ℝᵈ`, batched over rows.
pub trait FlowMap {
    fn dim(&self) -> usize;

    fn label_count(&self) -> usize {
        0
    }

    /// Network parameters, when the map has any.
    fn params(&self) -> Option<&MlpParams> {
        None
    }

    /// Records `X_{s_i,t_i}(x_i)` on the graph and, if seeded, its directional
    /// derivative.
    #[allow(clippy::too_many_arguments)]
    fn apply<'a>(
        &'a self,
        g: &mut LossGraph<'a>,
        s: &[f64],
        t: &[f64],
        x: NodeId,
        labels: Option<&[usize]>,
        seed: Option<&TangentSeed>,
    ) -> Result<(NodeId, Option<NodeId>)>;

    /// Direct evaluation without recording.
    fn eval(
        &self,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
        labels: Option<&[usize]>,
    ) -> Result<Array2<f64>> {
        let mut g = LossGraph::new();
        let xn = g.constant(x.to_owned());
        let (out, _) = self.apply(&mut g, s, t, xn, labels, None)?;
        Ok(g.value(out).clone())
    }
}

/// A time-dependent vector field `b_t: ℝᵈ → ℝᵈ`, batched over rows.
pub trait VelocityField {
    fn dim(&self) -> usize;

    fn label_count(&self) -> usize {
        0
    }

    fn params(&self) -> Option<&MlpParams> {
        None
    }

    fn apply<'a>(
        &'a self,
        g: &mut LossGraph<'a>,
        t: &[f64],
        x: NodeId,
        labels: Option<&[usize]>,
    ) -> Result<NodeId>;

    fn eval(&self, t: &[f64], x: ArrayView2<f64>, labels: Option<&[usize]>) -> Result<Array2<f64>> {
        let mut g = LossGraph::new();
        let xn = g.constant(x.to_owned());
        let out = self.apply(&mut g, t, xn, labels)?;
        Ok(g.value(out).clone())
    }
}

impl<T: FlowMap + ?Sized> FlowMap for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn label_count(&self) -> usize {
        (**self).label_count()
    }
    fn params(&self) -> Option<&MlpParams> {
        (**self).params()
    }
    fn apply<'a>(
        &'a self,
        g: &mut LossGraph<'a>,
        s: &[f64],
        t: &[f64],
        x: NodeId,
        labels: Option<&[usize]>,
        seed: Option<&TangentSeed>,
    ) -> Result<(NodeId, Option<NodeId>)> {
        (**self).apply(g, s, t, x, labels, seed)
    }
    fn eval(&self, s: &[f64], t: &[f64], x: ArrayView2<f64>, labels: Option<&[usize]>) -> Result<Array2<f64>> {
        (**self).eval(s, t, x, labels)
    }
}

impl<T: VelocityField + ?Sized> VelocityField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn label_count(&self) -> usize {
        (**self).label_count()
    }
    fn params(&self) -> Option<&MlpParams> {
        (**self).params()
    }
    fn apply<'a>(
        &'a self,
        g: &mut LossGraph<'a>,
        t: &[f64],
        x: NodeId,
        labels: Option<&[usize]>,
    ) -> Result<NodeId> {
        (**self).apply(g, t, x, labels)
    }
    fn eval(&self, t: &[f64], x: ArrayView2<f64>, labels: Option<&[usize]>) -> Result<Array2<f64>> {
        (**self).eval(t, x, labels)
    }
}

/// Neural estimate `b̂_t(x)` of the probability-flow velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    pub params: MlpParams,
    pub dim: usize,
    pub embedding: TimeEmbedding,
    pub label_count: usize,
}

impl VelocityModel {
    pub fn new<R: Rng + ?Sized>(dim: usize, label_count: usize, spec: &NetworkSpec, rng: &mut R) -> Self {
        let input = spec.embedding.width() + dim + label_count;
        VelocityModel {
            params: MlpParams::init(&spec.widths(input, dim), spec.activation, rng),
            dim,
            embedding: spec.embedding,
            label_count,
        }
    }

    fn input_matrix(&self, t: &[f64], x: ArrayView2<f64>, labels: Option<&[usize]>) -> Result<Array2<f64>> {
        let parts = [
            self.embedding.matrix(t),
            x.to_owned(),
            one_hot(labels, x.nrows(), self.label_count)?,
        ];
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(ndarray::Axis(1), &views).expect("row counts agree"))
    }
}

impl VelocityField for VelocityModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn label_count(&self) -> usize {
        self.label_count
    }

    fn params(&self) -> Option<&MlpParams> {
        Some(&self.params)
    }

    fn apply<'a>(
        &'a self,
        g: &mut LossGraph<'a>,
        t: &[f64],
        x: NodeId,
        labels: Option<&[usize]>,
    ) -> Result<NodeId> {
        let rows = g.value(x).nrows();
        check_rows("velocity", t, rows)?;
        let emb = g.constant(self.embedding.matrix(t));
        let lab = g.constant(one_hot(labels, rows, self.label_count)?);
        let input = g.concat(&[emb, x, lab]);
        let (out, _) = mlp_on_graph(g, &self.params, input, None)?;
        Ok(out)
    }

    fn eval(&self, t: &[f64], x: ArrayView2<f64>, labels: Option<&[usize]>) -> Result<Array2<f64>> {
        check_rows("velocity", t, x.nrows())?;
        let input = self.input_matrix(t, x, labels)?;
        self.params.forward(input.view())
    }
}

/// Flow map with the residual form `X̂_{s,t}(x) = x + (t − s)·v_{s,t}(x)`.
///
/// `X̂_{s,s}` is the identity for every parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMapModel {
    pub params: MlpParams,
    pub dim: usize,
    pub embedding: TimeEmbedding,
    pub label_count: usize,
}

impl FlowMapModel {
    /// Random hidden layers, zero output layer: the model starts as the identity map.
    pub fn new<R: Rng + ?Sized>(dim: usize, label_count: usize, spec: &NetworkSpec, rng: &mut R) -> Self {
        let input = 2 * spec.embedding.width() + dim + label_count;
        let mut params = MlpParams::init(&spec.widths(input, dim), spec.activation, rng);
        params.zero_final_layer();
        FlowMapModel {
            params,
            dim,
            embedding: spec.embedding,
            label_count,
        }
    }

    fn input_matrix(
        &self,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
        labels: Option<&[usize]>,
    ) -> Result<Array2<f64>> {
        let parts = [
            self.embedding.matrix(s),
            self.embedding.matrix(t),
            x.to_owned(),
            one_hot(labels, x.nrows(), self.label_count)?,
        ];
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(ndarray::Axis(1), &views).expect("row counts agree"))
    }

    /// The network output `v_{s,t}(x)` alone.
    pub fn residual_velocity(
        &self,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
        labels: Option<&[usize]>,
    ) -> Result<Array2<f64>> {
        let input = self.input_matrix(s, t, x, labels)?;
        self.params.forward(input.view())
    }
}

impl FlowMap for FlowMapModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn label_count(&self) -> usize {
        self.label_count
    }

    fn params(&self) -> Option<&MlpParams> {
        Some(&self.params)
    }

    fn apply<'a>(
        &'a self,
        g: &mut LossGraph<'a>,
        s: &[f64],
        t: &[f64],
        x: NodeId,
        labels: Option<&[usize]>,
        seed: Option<&TangentSeed>,
    ) -> Result<(NodeId, Option<NodeId>)> {
        let rows = g.value(x).nrows();
        check_rows("flow map s", s, rows)?;
        check_rows("flow map t", t, rows)?;
        let es = g.constant(self.embedding.matrix(s));
        let et = g.constant(self.embedding.matrix(t));
        let lab = g.constant(one_hot(labels, rows, self.label_count)?);
        let input = g.concat(&[es, et, x, lab]);
        let tangent_input = seed.map(|seed| {
            let des = g.constant(self.embedding.derivative_matrix(s, seed.ds));
            let det = g.constant(self.embedding.derivative_matrix(t, seed.dt));
            let dx = seed.dx.unwrap_or_else(|| g.zeros(rows, self.dim));
            let dlab = g.zeros(rows, self.label_count);
            g.concat(&[des, det, dx, dlab])
        });
        let (v, dv) = mlp_on_graph(g, &self.params, input, tangent_input)?;
        let gap: Array1<f64> = s.iter().zip(t).map(|(s, t)| t - s).collect();
        let scaled = g.row_scale(v, gap.clone());
        let out = g.add(x, scaled);
        let tangent = match (seed, dv) {
            (Some(seed), Some(dv)) => {
                // d[x + (t−s)v] = dx + (t−s)·dv + (dt − ds)·v
                let mut acc = g.row_scale(dv, gap);
                if seed.dt != seed.ds {
                    let shift = g.scale(v, seed.dt - seed.ds);
                    acc = g.add(acc, shift);
                }
                if let Some(dx) = seed.dx {
                    acc = g.add(acc, dx);
                }
                Some(acc)
            }
            _ => None,
        };
        Ok((out, tangent))
    }

    fn eval(
        &self,
        s: &[f64],
        t: &[f64],
        x: ArrayView2<f64>,
        labels: Option<&[usize]>,
    ) -> Result<Array2<f64>> {
        check_rows("flow map s", s, x.nrows())?;
        check_rows("flow map t", t, x.nrows())?;
        let mut v = self.residual_velocity(s, t, x, labels)?;
        for ((mut row, &s), &t) in v.rows_mut().into_iter().zip(s).zip(t) {
            row *= t - s;
        }
        Ok(v + x)
    }
}

fn check_times(s: f64, t: f64) -> Result<()> {
    check_unit_time("s", s)?;
    check_unit_time("t", t)
}

fn run_seeded<M: FlowMap + ?Sized>(
    model: &M,
    s: f64,
    t: f64,
    x: ArrayView2<f64>,
    labels: Option<&[usize]>,
    ds: f64,
    dt: f64,
    dir: Option<ArrayView2<f64>>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_times(s, t)?;
    let n = x.nrows();
    let (sv, tv) = (vec![s; n], vec![t; n]);
    let mut g = LossGraph::new();
    let xn = g.constant(x.to_owned());
    let dx = dir.map(|d| g.constant(d.to_owned()));
    let seed = TangentSeed { ds, dt, dx };
    let (out, tan) = model.apply(&mut g, &sv, &tv, xn, labels, Some(&seed))?;
    let tan = tan.ok_or_else(|| Error::Internal("tangent pass produced no tangent".into()))?;
    Ok((g.value(out).clone(), g.value(tan).clone()))
}

/// `X̂_{s,t}(x)` for a batch of points.
pub fn flow_map_eval<M: FlowMap + ?Sized>(
    model: &M,
    s: f64,
    t: f64,
    x: ArrayView2<f64>,
    labels: Option<&[usize]>,
) -> Result<Array2<f64>> {
    check_times(s, t)?;
    let n = x.nrows();
    model.eval(&vec![s; n], &vec![t; n], x, labels)
}

/// `(X̂_{s,t}(x), ∂_t X̂_{s,t}(x))` from one tangent pass.
pub fn flow_map_dt<M: FlowMap + ?Sized>(
    model: &M,
    s: f64,
    t: f64,
    x: ArrayView2<f64>,
    labels: Option<&[usize]>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    run_seeded(model, s, t, x, labels, 0.0, 1.0, None)
}

/// `(X̂_{s,t}(x), ∂_s X̂_{s,t}(x))` from one tangent pass.
pub fn flow_map_ds<M: FlowMap + ?Sized>(
    model: &M,
    s: f64,
    t: f64,
    x: ArrayView2<f64>,
    labels: Option<&[usize]>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    run_seeded(model, s, t, x, labels, 1.0, 0.0, None)
}

/// `(X̂_{s,t}(x), ∇X̂_{s,t}(x)·dir)` from one tangent pass.
pub fn flow_map_jvp_x<M: FlowMap + ?Sized>(
    model: &M,
    s: f64,
    t: f64,
    x: ArrayView2<f64>,
    dir: ArrayView2<f64>,
    labels: Option<&[usize]>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if dir.dim() != x.dim() {
        return Err(Error::Usage("direction shape differs from points".into()));
    }
    if !dir.iter().all(|v| v.is_finite()) {
        return Err(Error::Usage("direction must be finite".into()));
    }
    run_seeded(model, s, t, x, labels, 0.0, 0.0, Some(dir))
}

/// `b̂_t(x)` for a batch of points.
pub fn velocity_eval<B: VelocityField + ?Sized>(
    model: &B,
    t: f64,
    x: ArrayView2<f64>,
    labels: Option<&[usize]>,
) -> Result<Array2<f64>> {
    check_unit_time("t", t)?;
    let out = model.eval(&vec![t; x.nrows()], x, labels)?;
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("velocity output"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> NetworkSpec {
        NetworkSpec {
            hidden: vec![16, 16],
            activation: Activation::Gelu,
            embedding: TimeEmbedding { frequencies: 3 },
        }
    }

    fn random_map(seed: u64) -> FlowMapModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = FlowMapModel::new(2, 0, &small_spec(), &mut rng);
        let last = m.params.layers.len() - 1;
        m.params.layers[last] = MlpParams::init(&[16, 2], Activation::Gelu, &mut rng).layers[0].clone();
        m
    }

    #[test]
    fn identity_at_equal_times() {
        let m = random_map(4);
        let x = array![[1.0, 2.0]];
        assert_eq!(flow_map_eval(&m, 0.3, 0.3, x.view(), None).unwrap(), x);
    }

    #[test]
    fn zero_init_map_is_identity_with_zero_time_tangents() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = FlowMapModel::new(2, 0, &small_spec(), &mut rng);
        let x = array![[0.5, -1.0], [3.0, 0.25]];
        let (y, dt) = flow_map_dt(&m, 0.1, 0.9, x.view(), None).unwrap();
        assert_eq!(y, x);
        assert!(dt.iter().all(|&v| v == 0.0));
        let (_, ds) = flow_map_ds(&m, 0.1, 0.9, x.view(), None).unwrap();
        assert!(ds.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_time_tangents_reduce_to_velocity() {
        let m = random_map(6);
        let x = array![[0.5, -1.0], [3.0, 0.25]];
        let v = m.residual_velocity(&[0.4, 0.4], &[0.4, 0.4], x.view(), None).unwrap();
        let (_, dt) = flow_map_dt(&m, 0.4, 0.4, x.view(), None).unwrap();
        let (_, ds) = flow_map_ds(&m, 0.4, 0.4, x.view(), None).unwrap();
        assert_eq!(dt, v);
        assert_eq!(ds, -&v);
        let dir = array![[0.3, 0.1], [-2.0, 1.0]];
        let (_, jvp) = flow_map_jvp_x(&m, 0.4, 0.4, x.view(), dir.view(), None).unwrap();
        assert_eq!(jvp, dir);
        let (_, jvp0) = flow_map_jvp_x(&m, 0.2, 0.9, x.view(), Array2::zeros((2, 2)).view(), None).unwrap();
        assert!(jvp0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn direct_and_graph_evaluation_agree() {
        let m = random_map(7);
        let x = array![[0.5, -1.0], [3.0, 0.25]];
        let direct = m.eval(&[0.1, 0.7], &[0.8, 0.2], x.view(), None).unwrap();
        let mut g = LossGraph::new();
        let xn = g.constant(x.clone());
        let (out, _) = m.apply(&mut g, &[0.1, 0.7], &[0.8, 0.2], xn, None, None).unwrap();
        let diff = (&direct - g.value(out)).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        assert!(diff < 1e-13);
    }

    #[test]
    fn out_of_range_times_rejected() {
        let m = random_map(8);
        let x = array![[0.0, 0.0]];
        assert!(matches!(flow_map_eval(&m, -0.1, 0.5, x.view(), None), Err(Error::Domain(_))));
        assert!(matches!(flow_map_dt(&m, 0.1, 1.5, x.view(), None), Err(Error::Domain(_))));
    }

    #[test]
    fn conditional_model_requires_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = FlowMapModel::new(2, 2, &small_spec(), &mut rng);
        let x = array![[0.0, 0.0]];
        assert!(matches!(flow_map_eval(&m, 0.0, 1.0, x.view(), None), Err(Error::Usage(_))));
        assert!(flow_map_eval(&m, 0.0, 1.0, x.view(), Some(&[1])).is_ok());
        assert!(matches!(flow_map_eval(&m, 0.0, 1.0, x.view(), Some(&[2])), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_final_velocity_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut b = VelocityModel::new(2, 0, &small_spec(), &mut rng);
        b.params.zero_final_layer();
        let out = velocity_eval(&b, 0.3, array![[1.0, -4.0]].view(), None).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }
}
