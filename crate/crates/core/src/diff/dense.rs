use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiffError, ParamRange, Params, Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Pointwise function applied after every hidden layer. Output layers are linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Identity,
}

/// Fully connected network laid out inside a shared [`Params`] buffer.
///
/// Layer `k` maps `dims[k] → dims[k+1]`; its weights (row-major,
/// `dims[k+1] × dims[k]`) are followed by its bias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseNet {
    dims: Vec<usize>,
    offset: usize,
    activation: Activation,
}

impl DenseNet {
    /// Panics if fewer than two dims or any dim is zero; layouts are built
    /// from validated configs only.
    pub fn new(dims: Vec<usize>, offset: usize, activation: Activation) -> Self {
        assert!(dims.len() >= 2, "a dense net needs at least one layer");
        assert!(dims.iter().all(|&d| d > 0), "layer dims must be positive");
        Self { dims, offset, activation }
    }

    pub fn param_count_for(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        Self::param_count_for(&self.dims)
    }

    pub fn range(&self) -> ParamRange {
        ParamRange {
            start: self.offset,
            len: self.param_count(),
        }
    }

    /// (weight offset, bias offset) of layer `k`.
    fn layer_offsets(&self, k: usize) -> (usize, usize) {
        let before: usize = self.dims[..=k].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let w = self.offset + before;
        (w, w + self.dims[k] * self.dims[k + 1])
    }

    /// Records the forward pass of this net on `tape`.
    pub fn forward(&self, tape: &mut Tape, params: &Params, x: Var) -> Result<Var, DiffError> {
        let got = tape.value(x).len();
        if got != self.input_dim() {
            return Err(DiffError::DimensionMismatch {
                expected: self.input_dim(),
                got,
            });
        }
        let layers = self.dims.len() - 1;
        let mut h = x;
        for k in 0..layers {
            let (w, b) = self.layer_offsets(k);
            h = tape.affine(params, h, w, b, self.dims[k + 1], self.dims[k])?;
            if k + 1 < layers && self.activation == Activation::LeakyRelu {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    /// Standalone forward pass: output plus the tape that recorded it.
    pub fn eval(&self, params: &Params, input: &[f64]) -> Result<(Vec<f64>, Tape, Var), DiffError> {
        let mut tape = Tape::new(params);
        let x = tape.input(input.to_vec());
        let y = self.forward(&mut tape, params, x)?;
        Ok((tape.value(y).to_vec(), tape, y))
    }

    /// He-uniform initialization `U(-√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn init(&self, params: &mut Params, rng: &mut impl Rng) {
        let values = params.values_mut();
        for k in 0..self.dims.len() - 1 {
            let (w, b) = self.layer_offsets(k);
            let bound = (6.0 / self.dims[k] as f64).sqrt();
            for v in &mut values[w..b] {
                *v = rng.random_range(-bound..bound);
            }
            for v in &mut values[b..b + self.dims[k + 1]] {
                *v = 0.0;
            }
        }
    }

    /// Sets layer `k`'s weights and bias to zero.
    pub fn zero_layer(&self, params: &mut Params, k: usize) {
        let (w, b) = self.layer_offsets(k);
        params.values_mut()[w..b + self.dims[k + 1]].fill(0.0);
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    /// Sets layer `k`'s weights to the identity (square layers only) and bias to zero.
    pub fn set_identity_layer(&self, params: &mut Params, k: usize) {
        let (w, b) = self.layer_offsets(k);
        let (rows, cols) = (self.dims[k + 1], self.dims[k]);
        assert_eq!(rows, cols, "identity needs a square layer");
        let values = params.values_mut();
        for r in 0..rows {
            for c in 0..cols {
                values[w + r * cols + c] = if r == c { 1.0 } else { 0.0 };
            }
            values[b + r] = 0.0;
        }
    }
}

/// Hands out consecutive parameter ranges for a set of networks.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    next: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dense(&mut self, dims: Vec<usize>, activation: Activation) -> DenseNet {
        let net = DenseNet::new(dims, self.next, activation);
        self.next += net.param_count();
        net
    }

    pub fn len(&self) -> usize {
        self.next
    }

    pub fn is_empty(&self) -> bool {
        self.next == 0
    }
}
