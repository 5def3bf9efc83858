use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng;

use crate::error::{Error, Result};

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Gelu,
    Silu,
    Tanh,
}

impl Activation {
    pub fn id(self) -> u8 {
        match self {
            Activation::Gelu => 0,
            Activation::Silu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Gelu),
            1 => Some(Activation::Silu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gelu" => Ok(Activation::Gelu),
            "silu" => Ok(Activation::Silu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2)),
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// `(σ(x), σ'(x))` sharing the expensive transcendental calls.
    #[inline]
    pub fn value_and_derivative(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
                (x * cdf, cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp())
            }
            Activation::Silu => {
                let sig = 1.0 / (1.0 + (-x).exp());
                (x * sig, sig * (1.0 + x * (1.0 - sig)))
            }
            Activation::Tanh => {
                let th = x.tanh();
                (th, 1.0 - th * th)
            }
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
                cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
            }
            Activation::Silu => {
                let sig = 1.0 / (1.0 + (-x).exp());
                sig * (1.0 + x * (1.0 - sig))
            }
            Activation::Tanh => {
                let th = x.tanh();
                1.0 - th * th
            }
        }
    }

    #[inline]
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => INV_SQRT_2PI * (-0.5 * x * x).exp() * (2.0 - x * x),
            Activation::Silu => {
                let sig = 1.0 / (1.0 + (-x).exp());
                sig * (1.0 - sig) * (2.0 + x * (1.0 - 2.0 * sig))
            }
            Activation::Tanh => {
                let th = x.tanh();
                -2.0 * th * (1.0 - th * th)
            }
        }
    }
}

/// One affine layer `y = x Wᵀ + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Parameters of a fully connected network. Also used as the layout of
/// gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl MlpParams {
    /// Fan-in scaled uniform initialization, `U(−1/√fan_in, 1/√fan_in)`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut dense = Dense::zeros(w[0], w[1]);
                dense.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
                dense.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
                dense
            })
            .collect();
        MlpParams { layers, activation }
    }

    pub fn zeros(widths: &[usize], activation: Activation) -> Self {
        MlpParams {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            activation: self.activation,
        }
    }

    /// Zeroes the output layer so the network computes the constant 0.
    pub fn zero_final_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].input_dim()];
        w.extend(self.layers.iter().map(Dense::output_dim));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.widths() == other.widths()
    }

    /// Parameters in declaration order: for each layer, the weight matrix
    /// row-major, then the bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "flat parameter length");
        for (p, v) in self.iter_mut().zip(values) {
            *p = *v;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &MlpParams) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += scale · other`.
    pub fn axpy(&mut self, scale: f64, other: &MlpParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            Zip::from(&mut a.weight)
                .and(&b.weight)
                .for_each(|x, &y| *x += scale * y);
            Zip::from(&mut a.bias).and(&b.bias).for_each(|x, &y| *x += scale * y);
        }
    }

    /// Plain batched forward pass; rows of `input` are samples.
    ///
    /// Fails with the index of the first layer whose output is not finite.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        let last = self.layers.len() - 1;
        let mut h = input.to_owned();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut pre = h.dot(&layer.weight.t());
            pre += &layer.bias;
            if idx < last {
                let act = self.activation;
                pre.mapv_inplace(|v| act.apply(v));
            }
            if !pre.iter().all(|v| v.is_finite()) {
                return Err(Error::numeric_at_layer("network forward pass", idx));
            }
            h = pre;
        }
        Ok(h)
    }
}
