use serde::{Deserialize, Serialize};

use super::DiffError;

/// A contiguous slice of the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRange {
    pub start: usize,
    pub len: usize,
}

impl ParamRange {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, index: usize) -> bool {
        index >= self.start && index < self.end()
    }
}

/// Flat parameter storage shared by all networks of a model.
///
/// Every mutation bumps `version`, which lets a [`super::Tape`] detect that
/// the weights it recorded against have changed.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    values: Vec<f64>,
    version: u64,
}

impl Params {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            version: 0,
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values, version: 0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable access to the raw values; counts as a mutation.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.values
    }

    pub fn set(&mut self, index: usize, value: f64) {
        self.version += 1;
        self.values[index] = value;
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `θ[range] += rate · g[range]`, refused if anything would become non-finite.
    pub fn ascend(&mut self, grads: &Gradients, rate: f64, range: ParamRange) -> Result<(), DiffError> {
        if grads.len() != self.values.len() {
            return Err(DiffError::DimensionMismatch {
                expected: self.values.len(),
                got: grads.len(),
            });
        }
        let g = &grads.values()[range.start..range.end()];
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(DiffError::NonFiniteGradient { index: range.start + i });
        }
        let theta = &self.values[range.start..range.end()];
        if let Some(i) = theta.iter().zip(g).position(|(t, d)| !(t + rate * d).is_finite()) {
            return Err(DiffError::NonFiniteParameter { index: range.start + i });
        }
        self.version += 1;
        for (t, d) in self.values[range.start..range.end()].iter_mut().zip(g) {
            *t += rate * d;
        }
        Ok(())
    }

    pub fn full_range(&self) -> ParamRange {
        ParamRange {
            start: 0,
            len: self.values.len(),
        }
    }
}

/// Plain gradient ascent over the whole buffer: `θ ← θ + α·Δθ`.
pub fn sgd_step(params: &mut Params, grads: &Gradients, learning_rate: f64) -> Result<(), DiffError> {
    let range = params.full_range();
    params.ascend(grads, learning_rate, range)
}

/// Gradient buffer laid out exactly like [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Vec<f64>);

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.0 {
            *a *= factor;
        }
    }

    pub fn norm(&self, range: ParamRange) -> f64 {
        self.0[range.start..range.end()].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mean_abs(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|v| v.abs()).sum::<f64>() / self.0.len() as f64
    }
}
