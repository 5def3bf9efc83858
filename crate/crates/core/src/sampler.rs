//! Generation: fixed-step ODE integration of velocity fields, multi-step
//! flow-map sampling, and inversion-based style transfer.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::diffnet::{FlowMap, VelocityField};
use crate::error::{Error, Result};

/// Strictly monotone sequence of times in `[0, 1]`.
///
/// Forward grids increase; reversed grids (used to run a map backwards)
/// decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Usage("a time grid needs at least two points".into()));
        }
        if times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Domain("time grid leaves [0, 1]".into()));
        }
        let increasing = times.windows(2).all(|w| w[1] > w[0]);
        let decreasing = times.windows(2).all(|w| w[1] < w[0]);
        if !increasing && !decreasing {
            return Err(Error::Usage("time grid must be strictly monotone".into()));
        }
        Ok(TimeGrid { times })
    }

    /// `steps + 1` equally spaced points from `from` to `to`.
    pub fn uniform(from: f64, to: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Usage("a grid needs at least one step".into()));
        }
        let times = (0..=steps)
            .map(|k| {
                if k == steps {
                    to
                } else {
                    from + (to - from) * k as f64 / steps as f64
                }
            })
            .collect();
        Self::new(times)
    }

    /// The one-step grid `{0, 1}`.
    pub fn one_step() -> Self {
        TimeGrid {
            times: vec![0.0, 1.0],
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn is_forward(&self) -> bool {
        self.times[1] > self.times[0]
    }

    pub fn reversed(&self) -> TimeGrid {
        let mut times = self.times.clone();
        times.reverse();
        TimeGrid { times }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdeMethod {
    Heun,
    Rk4,
}

/// Endpoint of an integration, with the visited states if requested.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub end: Array2<f64>,
    /// States at every grid time, starting with the initial condition.
    pub states: Option<Vec<Array2<f64>>>,
}

/// Integrates `ẋ = f(t, x)` over `grid` with a fixed-step scheme.
pub fn integrate_fn<F>(
    mut f: F,
    x0: ArrayView2<f64>,
    grid: &TimeGrid,
    method: OdeMethod,
    keep_states: bool,
) -> Result<Trajectory>
where
    F: FnMut(f64, &Array2<f64>) -> Result<Array2<f64>>,
{
    let mut x = x0.to_owned();
    let mut states = keep_states.then(|| vec![x.clone()]);
    for (step, w) in grid.times().windows(2).enumerate() {
        let (t0, t1) = (w[0], w[1]);
        let h = t1 - t0;
        x = match method {
            OdeMethod::Heun => {
                let k1 = f(t0, &x)?;
                let pred = &x + &(&k1 * h);
                let k2 = f(t1, &pred)?;
                &x + &((k1 + k2) * (0.5 * h))
            }
            OdeMethod::Rk4 => {
                let tm = t0 + 0.5 * h;
                let k1 = f(t0, &x)?;
                let k2 = f(tm, &(&x + &(&k1 * (0.5 * h))))?;
                let k3 = f(tm, &(&x + &(&k2 * (0.5 * h))))?;
                let k4 = f(t1, &(&x + &(&k3 * h)))?;
                &x + &((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
            }
        };
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric_at_step("ODE integration", step));
        }
        if let Some(states) = states.as_mut() {
            states.push(x.clone());
        }
    }
    Ok(Trajectory { end: x, states })
}

/// Integrates the probability-flow ODE of `b` from `x0` over `grid`.
pub fn integrate_ode<B: VelocityField + ?Sized>(
    b: &B,
    x0: ArrayView2<f64>,
    grid: &TimeGrid,
    method: OdeMethod,
    labels: Option<&[usize]>,
    keep_states: bool,
) -> Result<Trajectory> {
    let n = x0.nrows();
    integrate_fn(
        |t, x| {
            // Stages may sit a hair outside [0, 1] only through roundoff.
            let t = t.clamp(0.0, 1.0);
            b.eval(&vec![t; n], x.view(), labels)
        },
        x0,
        grid,
        method,
        keep_states,
    )
}

/// Iterates `x ← X̂_{t_{k−1}, t_k}(x)` along `grid`: exactly `grid.steps()`
/// map evaluations.
pub fn map_sample<F: FlowMap + ?Sized>(
    map: &F,
    x0: ArrayView2<f64>,
    grid: &TimeGrid,
    labels: Option<&[usize]>,
) -> Result<Array2<f64>> {
    let n = x0.nrows();
    let mut x = x0.to_owned();
    for (step, w) in grid.times().windows(2).enumerate() {
        x = map.eval(&vec![w[0]; n], &vec![w[1]; n], x.view(), labels)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric_at_step("map sampling", step));
        }
    }
    Ok(x)
}

/// Style transfer by partial inversion: run the map backwards from 1 to `s′`
/// under label `y`, then forwards from `s′` to 1 under label `y′`.
pub fn invert_and_restyle<F: FlowMap + ?Sized>(
    map: &F,
    x1: ArrayView2<f64>,
    label: usize,
    new_label: usize,
    s_prime: f64,
    backward_steps: usize,
    forward_steps: usize,
) -> Result<Array2<f64>> {
    if !(s_prime > 0.0 && s_prime < 1.0) {
        return Err(Error::Domain(format!("s′={s_prime} must lie in (0, 1)")));
    }
    let count = map.label_count();
    if label >= count || new_label >= count {
        return Err(Error::Usage(format!(
            "labels ({label}, {new_label}) invalid for a model with {count} classes"
        )));
    }
    let n = x1.nrows();
    let back = TimeGrid::uniform(1.0, s_prime, backward_steps)?;
    let latent = map_sample(map, x1, &back, Some(&vec![label; n]))?;
    let forward = TimeGrid::uniform(s_prime, 1.0, forward_steps)?;
    map_sample(map, latent.view(), &forward, Some(&vec![new_label; n]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMethod {
    OdeHeun,
    OdeRk4,
    MapOneStep,
    MapMultiStep,
}

impl SampleMethod {
    pub fn name(self) -> &'static str {
        match self {
            SampleMethod::OdeHeun => "ode-heun",
            SampleMethod::OdeRk4 => "ode-rk4",
            SampleMethod::MapOneStep => "map-onestep",
            SampleMethod::MapMultiStep => "map-multistep",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "ode-heun" => SampleMethod::OdeHeun,
            "ode-rk4" => SampleMethod::OdeRk4,
            "map-onestep" => SampleMethod::MapOneStep,
            "map-multistep" => SampleMethod::MapMultiStep,
            other => return Err(Error::Config(format!("unknown sample method `{other}`"))),
        })
    }
}

/// A requested generation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    pub method: SampleMethod,
    pub grid: TimeGrid,
    pub seed: u64,
    pub count: usize,
    pub label: Option<usize>,
}

impl SampleRun {
    pub fn new(method: SampleMethod, steps: usize, seed: u64, count: usize, label: Option<usize>) -> Result<Self> {
        let grid = match method {
            SampleMethod::MapOneStep => {
                if steps != 1 {
                    return Err(Error::Config("map-onestep uses exactly one step".into()));
                }
                TimeGrid::one_step()
            }
            _ => TimeGrid::uniform(0.0, 1.0, steps)?,
        };
        Ok(SampleRun {
            method,
            grid,
            seed,
            count,
            label,
        })
    }
}

/// Writes one CSV row per point: `run_id,method,n,label,x0,x1,...`.
pub fn write_samples_csv<W: Write>(
    w: &mut W,
    run_id: &str,
    method: &str,
    steps: usize,
    labels: Option<&[usize]>,
    points: ArrayView2<f64>,
    header: bool,
) -> std::io::Result<()> {
    if header {
        write!(w, "run_id,method,n,label")?;
        for k in 0..points.ncols() {
            write!(w, ",x{k}")?;
        }
        writeln!(w)?;
    }
    for (i, row) in points.rows().into_iter().enumerate() {
        let label = labels.map_or(String::new(), |l| l[i].to_string());
        write!(w, "{run_id},{method},{steps},{label}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Palette used for scatter images, indexed by category.
pub const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
    [255, 187, 0],
    [80, 80, 80],
];

/// Side of the square scatter image in pixels.
pub const SCATTER_SIZE: u32 = 800;

/// Renders 2D points to an 800 × 800 PNG over `[−extent, extent]²`.
pub fn write_scatter_png(
    path: &Path,
    points: ArrayView2<f64>,
    categories: Option<&[usize]>,
    extent: f64,
) -> Result<()> {
    if points.ncols() != 2 {
        return Err(Error::Usage("scatter images need 2D points".into()));
    }
    let size = SCATTER_SIZE;
    let mut img = image::RgbImage::from_pixel(size, size, image::Rgb([255, 255, 255]));
    let scale = size as f64 / (2.0 * extent);
    for (i, p) in points.rows().into_iter().enumerate() {
        let px = ((p[0] + extent) * scale).floor();
        let py = ((extent - p[1]) * scale).floor();
        if !(px >= 0.0 && py >= 0.0 && px < size as f64 && py < size as f64) {
            continue;
        }
        let color = PALETTE[categories.map_or(0, |c| c[i]) % PALETTE.len()];
        let (cx, cy) = (px as u32, py as u32);
        for dx in 0..2 {
            for dy in 0..2 {
                let (x, y) = (cx + dx, cy + dy);
                if x < size && y < size {
                    img.put_pixel(x, y, image::Rgb(color));
                }
            }
        }
    }
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{LossGraph, NodeId, TangentSeed};
    use ndarray::array;
    use std::cell::Cell;

    struct Zero;
    impl VelocityField for Zero {
        fn dim(&self) -> usize {
            2
        }
        fn apply<'a>(&'a self, g: &mut LossGraph<'a>, _t: &[f64], x: NodeId, _l: Option<&[usize]>) -> Result<NodeId> {
            Ok(g.scale(x, 0.0))
        }
    }

    struct Counting<'m> {
        inner: &'m dyn FlowMap,
        calls: Cell<usize>,
    }
    impl FlowMap for Counting<'_> {
        fn dim(&self) -> usize {
            self.inner.dim()
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
            self.calls.set(self.calls.get() + 1);
            self.inner.apply(g, s, t, x, labels, seed)
        }
    }

    struct Shift;
    impl FlowMap for Shift {
        fn dim(&self) -> usize {
            2
        }
        fn apply<'a>(
            &'a self,
            g: &mut LossGraph<'a>,
            s: &[f64],
            t: &[f64],
            x: NodeId,
            _labels: Option<&[usize]>,
            _seed: Option<&TangentSeed>,
        ) -> Result<(NodeId, Option<NodeId>)> {
            let shift = Array2::from_shape_fn((s.len(), 2), |(i, _)| t[i] - s[i]);
            let c = g.constant(shift);
            Ok((g.add(x, c), None))
        }
    }

    #[test]
    fn zero_field_keeps_points() {
        let x0 = array![[1.0, -2.0], [0.5, 0.25]];
        for method in [OdeMethod::Heun, OdeMethod::Rk4] {
            let out = integrate_ode(&Zero, x0.view(), &TimeGrid::uniform(0.0, 1.0, 10).unwrap(), method, None, false)
                .unwrap();
            assert_eq!(out.end, x0);
        }
    }

    #[test]
    fn rk4_exponential_growth() {
        let x0 = array![[1.0], [-0.3]];
        let grid = TimeGrid::uniform(0.0, 1.0, 100).unwrap();
        let out = integrate_fn(|_, x| Ok(x.clone()), x0.view(), &grid, OdeMethod::Rk4, true).unwrap();
        let e = std::f64::consts::E;
        for (a, b) in out.end.iter().zip(x0.iter()) {
            assert!((a - e * b).abs() < 1e-8);
        }
        assert_eq!(out.states.unwrap().len(), 101);
    }

    #[test]
    fn non_finite_state_reports_step() {
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let err = integrate_fn(
            |t, x| Ok(if t > 0.4 { x.mapv(|_| f64::NAN) } else { x.clone() }),
            array![[1.0]].view(),
            &grid,
            OdeMethod::Heun,
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric { step: Some(1), .. }));
    }

    #[test]
    fn map_sampling_counts_evaluations() {
        let counting = Counting {
            inner: &Shift,
            calls: Cell::new(0),
        };
        let x0 = array![[0.0, 0.0]];
        for steps in [1, 4, 8] {
            counting.calls.set(0);
            let grid = TimeGrid::uniform(0.0, 1.0, steps).unwrap();
            let out = map_sample(&counting, x0.view(), &grid, None).unwrap();
            assert_eq!(counting.calls.get(), steps);
            assert!((out[[0, 0]] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 1.2]).is_err());
        assert!(TimeGrid::new(vec![0.3]).is_err());
        let g = TimeGrid::uniform(1.0, 0.3, 8).unwrap();
        assert!(!g.is_forward());
        assert_eq!(g.times()[8], 0.3);
        assert_eq!(g.reversed().times()[0], 0.3);
        assert!(SampleRun::new(SampleMethod::MapOneStep, 4, 0, 10, None).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, "r1", "map-multistep", 4, Some(&[1]), array![[0.5, -1.0]].view(), true).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "run_id,method,n,label,x0,x1\nr1,map-multistep,4,1,0.5,-1\n");
    }
}
