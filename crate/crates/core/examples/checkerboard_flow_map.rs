//! Trains a flow map on the checkerboard with flow map matching restricted
//! to a four-strip time weight, then samples it in one and four steps.
//!
//! ```text
//! cargo run --release --example checkerboard_flow_map [steps] [out.png]
//! ```

use flowmap::cli::train::{train_flow_map, FlowObjective, TrainSettings};
use flowmap::diffnet::{AdamState, FlowMapModel, NetworkSpec};
use flowmap::interpolant::{Checkerboard, Coupling, Density, InterpolantSchedule, TimeWeight};
use flowmap::metrics::{kl_histogram, HistogramGrid};
use flowmap::objectives::LossOptions;
use flowmap::sampler::{map_sample, write_scatter_png, TimeGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> flowmap::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|a| a.parse().ok()).unwrap_or(4000);
    let png = args.next().unwrap_or_else(|| "checkerboard_flow_map.png".into());

    let target = Density::Checkerboard { board: Checkerboard::default(), labeled: false };
    let coupling = Coupling::independent(Density::StandardNormal { dim: 2 }, target.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut map = FlowMapModel::new(2, 0, &NetworkSpec::default(), &mut rng);
    let mut state = AdamState::new(&map.params);
    let settings = TrainSettings { steps, weight: TimeWeight::Strip(4), seed: 5, ..TrainSettings::default() };
    train_flow_map(
        &mut map,
        FlowObjective::Fmm,
        &InterpolantSchedule::linear(),
        &coupling,
        &settings,
        &LossOptions::default(),
        &mut state,
        &mut |step, loss| {
            if step % 1000 == 0 {
                println!("step {step:>6}  loss {loss:.4}");
            }
        },
    )?;

    let n = 50_000;
    let (reference, _) = target.sample(n, &mut rng);
    let (x0, _) = Density::StandardNormal { dim: 2 }.sample(n, &mut rng);
    let grid = HistogramGrid::checkerboard();
    for k in [1, 4] {
        let out = map_sample(&map, x0.view(), &TimeGrid::uniform(0.0, 1.0, k)?, None)?;
        println!("{k}-step KL {:.4}", kl_histogram(reference.view(), out.view(), &grid)?);
        if k == 4 {
            write_scatter_png(png.as_ref(), out.view(), None, 4.5)?;
            println!("wrote {png}");
        }
    }
    Ok(())
}
