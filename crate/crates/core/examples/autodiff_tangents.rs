//! Exact time derivatives and spatial JVPs of a flow-map network compared
//! with five-point differences.
//!
//! ```text
//! cargo run --release --example autodiff_tangents
//! ```

use flowmap::diffnet::{flow_map_ds, flow_map_dt, flow_map_jvp_x, FlowMap, FlowMapModel, NetworkSpec};
use flowmap::interpolant::standard_normal;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn main() -> flowmap::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = NetworkSpec { hidden: vec![32, 32], ..NetworkSpec::default() };
    let mut map = FlowMapModel::new(2, 0, &spec, &mut rng);
    // The default initialization zeroes the output layer; shake it so the
    // derivatives are non-trivial.
    for v in map.params.iter_mut() {
        *v += 0.05 * (rand::Rng::random::<f64>(&mut rng) - 0.5);
    }
    let (s, t) = (0.3, 0.8);
    let x = standard_normal(5, 2, &mut rng);
    let dir = standard_normal(5, 2, &mut rng);
    let eval = |s: f64, t: f64, x: &Array2<f64>| map.eval(&[s; 5], &[t; 5], x.view(), None).unwrap();
    let five_point = |f: &dyn Fn(f64) -> Array2<f64>, h: f64| (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h);

    let (_, dt) = flow_map_dt(&map, s, t, x.view(), None)?;
    let fd = five_point(&|e| eval(s, t + e, &x), 1e-5);
    println!("∂t   max |exact − fd| = {:.2e}", max_abs(&(&dt - &fd)));

    let (_, ds) = flow_map_ds(&map, s, t, x.view(), None)?;
    let fd = five_point(&|e| eval(s + e, t, &x), 1e-5);
    println!("∂s   max |exact − fd| = {:.2e}", max_abs(&(&ds - &fd)));

    let (_, jvp) = flow_map_jvp_x(&map, s, t, x.view(), dir.view(), None)?;
    let fd = five_point(&|e| eval(s, t, &(&x + &(&dir * e))), 1e-4);
    println!("J·v  max |exact − fd| = {:.2e}", max_abs(&(&jvp - &fd)));
    Ok(())
}
