//! Sample-based evaluation: histogram KL, assignment-based `W₂²` and
//! agreement with a teacher map.

mod assignment;

pub use assignment::{solve_assignment, squared_distances};

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::diffnet::FlowMap;
use crate::interpolant::standard_normal;
use crate::error::{Error, Result};
use crate::worker_rng;

/// Regular histogram over a box with additive smoothing.
///
/// Points outside the box are counted in the nearest boundary cell, so mass
/// a model places far away still shows up as missing from the interior.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bins: Vec<usize>,
    /// Mass added to every cell before renormalizing.
    pub eps: f64,
}

impl HistogramGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, bins: Vec<usize>, eps: f64) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != bins.len() {
            return Err(Error::Usage("histogram axes disagree in dimension".into()));
        }
        if bins.iter().any(|&b| b < 2) {
            return Err(Error::Usage("histograms need at least two bins per axis".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(h > l)) {
            return Err(Error::Usage("histogram ranges must be non-empty".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::Usage("histogram smoothing must be positive".into()));
        }
        Ok(HistogramGrid { lo, hi, bins, eps })
    }

    /// Same range and bin count on every axis, `ε = 10⁻⁶ / cells`.
    pub fn square(dim: usize, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        let cells = (bins as f64).powi(dim as i32);
        Self::new(vec![lo; dim], vec![hi; dim], vec![bins; dim], 1e-6 / cells)
    }

    /// 64 × 64 bins over `[−4.5, 4.5]²`.
    pub fn checkerboard() -> Self {
        Self::square(2, -4.5, 4.5, 64).expect("valid defaults")
    }

    pub fn dim(&self) -> usize {
        self.bins.len()
    }

    pub fn cells(&self) -> usize {
        self.bins.iter().product()
    }

    fn cell_index(&self, p: &[f64]) -> usize {
        let mut idx = 0;
        for k in 0..self.dim() {
            let width = (self.hi[k] - self.lo[k]) / self.bins[k] as f64;
            let b = ((p[k] - self.lo[k]) / width).floor();
            let b = if b.is_nan() { 0.0 } else { b.clamp(0.0, (self.bins[k] - 1) as f64) };
            idx = idx * self.bins[k] + b as usize;
        }
        idx
    }

    /// Smoothed, normalized cell probabilities.
    pub fn probabilities(&self, points: ArrayView2<f64>) -> Result<Vec<f64>> {
        if points.nrows() == 0 {
            return Err(Error::Usage("histogram of an empty sample set".into()));
        }
        if points.ncols() != self.dim() {
            return Err(Error::Usage("sample dimension does not match histogram".into()));
        }
        let mut counts = vec![0.0; self.cells()];
        let mut buf = vec![0.0; self.dim()];
        for row in points.rows() {
            buf.iter_mut().zip(row).for_each(|(b, v)| *b = *v);
            counts[self.cell_index(&buf)] += 1.0;
        }
        let n = points.nrows() as f64;
        let total = 1.0 + self.eps * counts.len() as f64;
        Ok(counts.into_iter().map(|c| (c / n + self.eps) / total).collect())
    }
}

/// `KL(p ‖ q)` between the smoothed histograms of two sample sets. Pass the
/// target first and the model second.
pub fn kl_histogram(samples_p: ArrayView2<f64>, samples_q: ArrayView2<f64>, grid: &HistogramGrid) -> Result<f64> {
    let p = grid.probabilities(samples_p)?;
    let q = grid.probabilities(samples_q)?;
    Ok(p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum())
}

/// How the two subsamples of a `W₂²` repeat are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsampling {
    /// Separate index draws for each set.
    Independent,
    /// One index draw applied to both sets (they must be row-aligned, e.g.
    /// pushforwards of the same base points).
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Config {
    pub n: usize,
    pub repeats: usize,
    pub subsampling: Subsampling,
    pub seed: u64,
}

impl Default for W2Config {
    fn default() -> Self {
        W2Config {
            n: 512,
            repeats: 8,
            subsampling: Subsampling::Independent,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Estimate {
    pub mean: f64,
    pub stderr: f64,
}

static WORKER_CAP: AtomicUsize = AtomicUsize::new(0);

/// Caps the worker count for the rest of the process (0 removes the cap).
pub fn set_worker_cap(cap: usize) {
    WORKER_CAP.store(cap, Ordering::Relaxed);
}

/// Worker cap from [`set_worker_cap`], then `FLOWMAP_THREADS`, else the
/// available parallelism.
pub fn worker_count() -> usize {
    let cap = WORKER_CAP.load(Ordering::Relaxed);
    if cap > 0 {
        return cap;
    }
    std::env::var("FLOWMAP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Mean and standard error of a list of values.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Squared 2-Wasserstein distance estimated by exact assignment between
/// `n`-point subsamples, averaged over repeats. Each repeat has its own random
/// stream, so the result does not depend on the worker count.
pub fn w2_assignment(samples_p: ArrayView2<f64>, samples_q: ArrayView2<f64>, cfg: &W2Config) -> Result<W2Estimate> {
    let (np, nq) = (samples_p.nrows(), samples_q.nrows());
    if cfg.n == 0 || cfg.n > np.min(nq) {
        return Err(Error::Usage(format!(
            "W₂ subsample size {} must lie in 1..={}",
            cfg.n,
            np.min(nq)
        )));
    }
    if cfg.repeats == 0 {
        return Err(Error::Usage("W₂ needs at least one repeat".into()));
    }
    if cfg.subsampling == Subsampling::Shared && np != nq {
        return Err(Error::Usage("shared subsampling needs row-aligned sets".into()));
    }
    if samples_p.ncols() != samples_q.ncols() {
        return Err(Error::Usage("W₂ inputs differ in dimension".into()));
    }
    let one = |repeat: usize| -> Result<f64> {
        let mut rng = worker_rng(cfg.seed, repeat);
        let ip = sample_indices(&mut rng, np, cfg.n).into_vec();
        let iq = match cfg.subsampling {
            Subsampling::Shared => ip.clone(),
            Subsampling::Independent => sample_indices(&mut rng, nq, cfg.n).into_vec(),
        };
        let p = samples_p.select(Axis(0), &ip);
        let q = samples_q.select(Axis(0), &iq);
        let (_, total) = solve_assignment(squared_distances(p.view(), q.view()).view())?;
        Ok(total / cfg.n as f64)
    };
    let workers = worker_count().min(cfg.repeats);
    let costs: Vec<f64> = if workers <= 1 {
        (0..cfg.repeats).map(one).collect::<Result<_>>()?
    } else {
        let mut slots: Vec<Option<Result<f64>>> = (0..cfg.repeats).map(|_| None).collect();
        std::thread::scope(|scope| {
            for (w, chunk) in slots.chunks_mut(cfg.repeats.div_ceil(workers)).enumerate() {
                let one = &one;
                let start = w * cfg.repeats.div_ceil(workers);
                scope.spawn(move || {
                    for (k, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(one(start + k));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every repeat ran")).collect::<Result<_>>()?
    };
    let (mean, stderr) = mean_and_stderr(&costs);
    Ok(W2Estimate { mean, stderr })
}

/// `(1/N) Σ ‖teacher(x) − X̂_{0,1}(x)‖²` over the rows of `x0`.
pub fn teacher_l2<F, T>(student: &F, teacher: T, x0: ArrayView2<f64>, labels: Option<&[usize]>) -> Result<f64>
where
    F: FlowMap + ?Sized,
    T: FnOnce(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    let (t_out, s_out) = paired_outputs(student, teacher, x0, labels)?;
    let diff = t_out - s_out;
    Ok(diff.iter().map(|v| v * v).sum::<f64>() / x0.nrows() as f64)
}

fn paired_outputs<F, T>(
    student: &F,
    teacher: T,
    x0: ArrayView2<f64>,
    labels: Option<&[usize]>,
) -> Result<(Array2<f64>, Array2<f64>)>
where
    F: FlowMap + ?Sized,
    T: FnOnce(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    if x0.nrows() == 0 {
        return Err(Error::Usage("teacher comparison on an empty batch".into()));
    }
    let n = x0.nrows();
    let s_out = student.eval(&vec![0.0; n], &vec![1.0; n], x0, labels)?;
    let t_out = teacher(x0)?;
    if t_out.dim() != s_out.dim() {
        return Err(Error::Usage("teacher and student outputs differ in shape".into()));
    }
    Ok((t_out, s_out))
}

/// `‖X̂_{s,t}(X̂_{t,s}(x)) − x‖` per row.
pub fn cycle_errors<F: FlowMap + ?Sized>(
    map: &F,
    s: &[f64],
    t: &[f64],
    x: ArrayView2<f64>,
    labels: Option<&[usize]>,
) -> Result<Vec<f64>> {
    let there = map.eval(t, s, x, labels)?;
    let back = map.eval(s, t, there.view(), labels)?;
    Ok(back
        .rows()
        .into_iter()
        .zip(x.rows())
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .collect())
}

/// Median of a non-empty list.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median round-trip error of `X̂_{s,t}∘X̂_{t,s}` over random pairs with
/// `|t − s| ≤ max_gap` and base-marginal inputs pushed to time `t`.
pub fn median_cycle_error<F: FlowMap + ?Sized>(
    map: &F,
    count: usize,
    max_gap: f64,
    labels: Option<&[usize]>,
    seed: u64,
) -> Result<f64> {
    let mut rng = worker_rng(seed, 0);
    let mut s = Vec::with_capacity(count);
    let mut t = Vec::with_capacity(count);
    while s.len() < count {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        if (a - b).abs() <= max_gap {
            s.push(a);
            t.push(b);
        }
    }
    let x0 = standard_normal(count, map.dim(), &mut rng);
    let xt = map.eval(&vec![0.0; count], &t, x0.view(), labels)?;
    Ok(median(&cycle_errors(map, &s, &t, xt.view(), labels)?))
}

/// One base point with both endpoints and whether they disagree by more
/// than the threshold (in squared distance).
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchRow {
    pub x0: Vec<f64>,
    pub teacher: Vec<f64>,
    pub student: Vec<f64>,
    pub sq_distance: f64,
    pub exceeds: bool,
}

pub fn mismatch_report<F, T>(
    student: &F,
    teacher: T,
    x0: ArrayView2<f64>,
    labels: Option<&[usize]>,
    threshold: f64,
) -> Result<Vec<MismatchRow>>
where
    F: FlowMap + ?Sized,
    T: FnOnce(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    if !(threshold > 0.0) {
        return Err(Error::Usage("mismatch threshold must be positive".into()));
    }
    let (t_out, s_out) = paired_outputs(student, teacher, x0, labels)?;
    Ok((0..x0.nrows())
        .map(|i| {
            let sq: f64 = t_out.row(i).iter().zip(s_out.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
            MismatchRow {
                x0: x0.row(i).to_vec(),
                teacher: t_out.row(i).to_vec(),
                student: s_out.row(i).to_vec(),
                sq_distance: sq,
                exceeds: sq > threshold,
            }
        })
        .collect())
}

pub fn write_mismatch_csv<W: Write>(w: &mut W, rows: &[MismatchRow]) -> std::io::Result<()> {
    let d = rows.first().map_or(0, |r| r.x0.len());
    let cols: Vec<String> = ["x0", "teacher", "student"]
        .iter()
        .flat_map(|p| (0..d).map(move |k| format!("{p}_{k}")))
        .collect();
    writeln!(w, "{},sq_distance,exceeds", cols.join(","))?;
    for r in rows {
        let vals: Vec<String> = r.x0.iter().chain(&r.teacher).chain(&r.student).map(|v| v.to_string()).collect();
        writeln!(w, "{},{},{}", vals.join(","), r.sq_distance, r.exceeds as u8)?;
    }
    Ok(())
}

/// Metrics for one (model, sampler, step count) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub run_id: String,
    pub method: String,
    pub steps: usize,
    pub kl: f64,
    pub w2sq: f64,
    pub w2sq_stderr: f64,
    pub teacher_l2: Option<f64>,
    pub samples: usize,
    pub w2_n: usize,
    pub w2_repeats: usize,
    pub seed: u64,
}

impl MetricReport {
    const FIELDS: [&'static str; 11] = [
        "run_id",
        "method",
        "steps",
        "kl",
        "w2sq",
        "w2sq_stderr",
        "teacher_l2",
        "samples",
        "w2_n",
        "w2_repeats",
        "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        let finite = self.kl.is_finite()
            && self.w2sq.is_finite()
            && self.w2sq_stderr.is_finite()
            && self.teacher_l2.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::numeric("metric report has non-finite values"));
        }
        if self.w2sq_stderr < 0.0 {
            return Err(Error::Internal("negative standard error".into()));
        }
        Ok(())
    }

    fn values(&self) -> [String; 11] {
        [
            self.run_id.clone(),
            self.method.clone(),
            self.steps.to_string(),
            self.kl.to_string(),
            self.w2sq.to_string(),
            self.w2sq_stderr.to_string(),
            self.teacher_l2.map_or(String::new(), |v| v.to_string()),
            self.samples.to_string(),
            self.w2_n.to_string(),
            self.w2_repeats.to_string(),
            self.seed.to_string(),
        ]
    }

    pub fn to_key_value(&self) -> String {
        Self::FIELDS
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn csv_header() -> String {
        Self::FIELDS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.values().join(",")
    }

    /// Appends a row to a CSV file, writing the header if the file is new.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        let fresh = !path.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if fresh {
            writeln!(f, "{}", Self::csv_header()).map_err(|e| Error::io(path, e))?;
        }
        writeln!(f, "{}", self.to_csv_row()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpolant::standard_normal;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_sets_have_zero_divergences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = standard_normal(2000, 2, &mut rng);
        let grid = HistogramGrid::checkerboard();
        assert!(kl_histogram(x.view(), x.view(), &grid).unwrap().abs() < 1e-12);
        let est = w2_assignment(x.view(), x.view(), &W2Config { n: 64, repeats: 3, subsampling: Subsampling::Shared, seed: 1 }).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn histogram_is_normalized() {
        let grid = HistogramGrid::square(2, -1.0, 1.0, 4).unwrap();
        let pts = array![[0.1, 0.2], [5.0, -7.0], [f64::NAN, 0.0]];
        let p = grid.probabilities(pts.view()).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(grid.probabilities(Array2::zeros((0, 2)).view()).is_err());
        assert!(HistogramGrid::square(1, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn subsample_size_is_checked() {
        let x = Array2::zeros((10, 2));
        assert!(w2_assignment(x.view(), x.view(), &W2Config { n: 11, ..Default::default() }).is_err());
        assert!(w2_assignment(x.view(), x.view(), &W2Config { n: 5, repeats: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn report_formats() {
        let r = MetricReport {
            run_id: "a".into(),
            method: "map-onestep".into(),
            steps: 1,
            kl: 0.5,
            w2sq: 0.25,
            w2sq_stderr: 0.01,
            teacher_l2: None,
            samples: 100,
            w2_n: 10,
            w2_repeats: 2,
            seed: 7,
        };
        r.validate().unwrap();
        assert!(r.to_key_value().starts_with("run_id=a\nmethod=map-onestep\n"));
        assert_eq!(r.to_csv_row(), "a,map-onestep,1,0.5,0.25,0.01,,100,10,2,7");
        assert_eq!(MetricReport::csv_header().split(',').count(), 11);
        assert!(MetricReport { kl: f64::NAN, ..r }.validate().is_err());
    }
}
