use ndarray::Zip;

use super::mlp::MlpParams;
use crate::error::{Error, Result};

/// Adam hyperparameters, with a stepwise multiplicative learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Factor applied to the learning rate every `decay_every` steps.
    pub decay: f64,
    pub decay_every: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.992,
            decay_every: 1000,
        }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        self.lr * self.decay.powi((step / self.decay_every) as i32)
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: MlpParams,
    pub v: MlpParams,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        AdamState {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update. Leaves `params` and `state` untouched if
/// the update would produce a non-finite value.
pub fn adam_step(
    params: &mut MlpParams,
    grad: &MlpParams,
    state: &mut AdamState,
    hyper: &AdamConfig,
) -> Result<()> {
    if !params.same_shape(grad) || !params.same_shape(&state.m) {
        return Err(Error::Usage("adam: parameter, gradient and state shapes differ".into()));
    }
    let lr = hyper.lr_at(state.step);
    let step = state.step + 1;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    let mut next = params.clone();
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    for l in 0..next.layers.len() {
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + hyper.eps);
        };
        Zip::from(&mut next.layers[l].weight)
            .and(&mut m.layers[l].weight)
            .and(&mut v.layers[l].weight)
            .and(&grad.layers[l].weight)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut next.layers[l].bias)
            .and(&mut m.layers[l].bias)
            .and(&mut v.layers[l].bias)
            .and(&grad.layers[l].bias)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    if !next.all_finite() {
        return Err(Error::numeric_at_step("adam update", step as usize));
    }
    *params = next;
    state.m = m;
    state.v = v;
    state.step = step;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::mlp::Activation;

    fn scalar(value: f64) -> MlpParams {
        let mut p = MlpParams::zeros(&[1, 1], Activation::Tanh);
        p.layers[0].weight[[0, 0]] = value;
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.7);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &scalar(0.0), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, scalar(0.7));
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let hyper = AdamConfig::default();
        for g in [3.0, -0.02] {
            let mut p = scalar(1.0);
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &scalar(g), &mut st, &hyper).unwrap();
            let moved = p.layers[0].weight[[0, 0]] - 1.0;
            let expected = -hyper.lr * g.signum() * g.abs() / (g.abs() + hyper.eps);
            assert!((moved - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_converges() {
        let hyper = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&p);
        for _ in 0..100 {
            let theta = p.layers[0].weight[[0, 0]];
            adam_step(&mut p, &scalar(2.0 * theta), &mut st, &hyper).unwrap();
        }
        assert!(p.layers[0].weight[[0, 0]].abs() < 0.05);
    }

    #[test]
    fn non_finite_update_rejected_without_mutation() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &scalar(f64::NAN), &mut st, &AdamConfig::default());
        assert!(matches!(err, Err(Error::Numeric { .. })));
        assert_eq!(p, scalar(1.0));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn learning_rate_decays_per_thousand_steps() {
        let h = AdamConfig::default();
        assert_eq!(h.lr_at(999), 1e-3);
        assert!((h.lr_at(2500) - 1e-3 * 0.992 * 0.992).abs() < 1e-18);
    }
}
