//! The full checkerboard comparison in one process: an SI velocity baseline,
//! its Lagrangian and Eulerian distillations, flow map matching on the full
//! square and on four strips, and progressive distillation of the strip
//! model. Prints the histogram KL of each sampler.
//!
//! ```text
//! cargo run --release --example checkerboard_panel [steps] [samples]
//! ```

use flowmap::cli::train::{train_flow_map, train_velocity, FlowObjective, TrainSettings};
use flowmap::diffnet::{AdamState, FlowMapModel, NetworkSpec, VelocityModel};
use flowmap::interpolant::{Checkerboard, Coupling, Density, InterpolantSchedule, TimeWeight};
use flowmap::metrics::{kl_histogram, HistogramGrid};
use flowmap::objectives::LossOptions;
use flowmap::sampler::{integrate_ode, map_sample, OdeMethod, TimeGrid};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() -> flowmap::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(20_000);
    let samples: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200_000);

    let target = Density::Checkerboard { board: Checkerboard::default(), labeled: false };
    let coupling = Coupling::independent(Density::StandardNormal { dim: 2 }, target.clone())?;
    let schedule = InterpolantSchedule::linear();
    let spec = NetworkSpec::default();
    let grid = HistogramGrid::checkerboard();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (reference, _) = target.sample(samples, &mut rng);
    let (x0, _) = Density::StandardNormal { dim: 2 }.sample(samples, &mut rng);
    let kl = |points: &Array2<f64>| kl_histogram(reference.view(), points.view(), &grid);
    println!("base distribution KL {:.4}", kl(&x0)?);

    let clock = Instant::now();
    let mut velocity = VelocityModel::new(2, 0, &spec, &mut ChaCha8Rng::seed_from_u64(1));
    let mut state = AdamState::new(&velocity.params);
    let settings = TrainSettings { steps, seed: 1, ..TrainSettings::default() };
    train_velocity(&mut velocity, &schedule, &coupling, &settings, &mut state, &mut |_, _| {})?;
    let si = integrate_ode(&velocity, x0.view(), &TimeGrid::uniform(0.0, 1.0, 80)?, OdeMethod::Heun, None, false)?.end;
    println!("SI (Heun, 80 steps)   KL {:.4}  [{:.0}s]", kl(&si)?, clock.elapsed().as_secs_f64());

    let fit = |label: &str, objective: FlowObjective<'_>, weight: TimeWeight, init: Option<&FlowMapModel>, seed: u64| {
        let clock = Instant::now();
        let mut map = init.cloned().unwrap_or_else(|| FlowMapModel::new(2, 0, &spec, &mut ChaCha8Rng::seed_from_u64(seed)));
        let mut state = AdamState::new(&map.params);
        let settings = TrainSettings { steps, weight, seed, ..TrainSettings::default() };
        train_flow_map(&mut map, objective, &schedule, &coupling, &settings, &LossOptions::default(), &mut state, &mut |_, _| {})?;
        for n in [1, 4] {
            let out = map_sample(&map, x0.view(), &TimeGrid::uniform(0.0, 1.0, n)?, None)?;
            println!("{label:<14} N={n}  KL {:.4}  [{:.0}s]", kl(&out)?, clock.elapsed().as_secs_f64());
        }
        flowmap::Result::Ok(map)
    };
    fit("lmd", FlowObjective::Lmd(&velocity), TimeWeight::UniformSquare, None, 2)?;
    fit("emd", FlowObjective::Emd(&velocity), TimeWeight::UniformSquare, None, 3)?;
    fit("fmm full", FlowObjective::Fmm, TimeWeight::UniformSquare, None, 4)?;
    let strip = fit("fmm strip(4)", FlowObjective::Fmm, TimeWeight::Strip(4), None, 5)?;
    fit("pfmm(5)", FlowObjective::Pfmm { teacher: &strip, k: 5 }, TimeWeight::UniformSquare, Some(&strip), 6)?;
    Ok(())
}
