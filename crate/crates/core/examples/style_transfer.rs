//! Class-conditional flow map on the two-class checkerboard, used to move
//! samples from one class to the other through an intermediate time.
//!
//! ```text
//! cargo run --release --example style_transfer [steps]
//! ```

use flowmap::cli::train::{train_flow_map, FlowObjective, TrainSettings};
use flowmap::diffnet::{AdamState, FlowMapModel, NetworkSpec};
use flowmap::interpolant::{Checkerboard, Coupling, Density, InterpolantSchedule, TimeWeight};
use flowmap::metrics::{median, median_cycle_error};
use flowmap::objectives::LossOptions;
use flowmap::sampler::invert_and_restyle;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> flowmap::Result<()> {
    let steps = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4000);
    let board = Checkerboard::default();
    let target = Density::Checkerboard { board, labeled: true };
    let coupling = Coupling::independent(Density::StandardNormal { dim: 2 }, target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut map = FlowMapModel::new(2, 2, &NetworkSpec::default(), &mut rng);
    let mut state = AdamState::new(&map.params);
    let settings = TrainSettings { steps, weight: TimeWeight::Strip(4), seed: 7, ..TrainSettings::default() };
    train_flow_map(
        &mut map,
        FlowObjective::Fmm,
        &InterpolantSchedule::linear(),
        &coupling,
        &settings,
        &LossOptions::default(),
        &mut state,
        &mut |_, _| {},
    )?;

    let n = 2000;
    let mut x1 = ndarray::Array2::zeros((n, 2));
    for mut row in x1.rows_mut() {
        let p = board.sample_class(0, &mut rng);
        row[0] = p[0];
        row[1] = p[1];
    }
    let moved = invert_and_restyle(&map, x1.view(), 0, 1, 0.3, 8, 8)?;
    let landed = moved.rows().into_iter().filter(|p| board.class_of(*p) == Some(1)).count();
    println!("class 0 → 1: {:.1}% land in class 1", 100.0 * landed as f64 / n as f64);

    let same = invert_and_restyle(&map, x1.view(), 0, 0, 0.3, 8, 8)?;
    let errors: Vec<f64> = (&same - &x1).rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    println!("restyle with the same label, median displacement {:.4}", median(&errors));

    let labels = vec![0; 1000];
    println!("median cycle error (|t−s| ≤ 0.25): {:.4}", median_cycle_error(&map, 1000, 0.25, Some(&labels), 3)?);
    Ok(())
}
