//! Minimal reverse-mode differentiation for small dense networks.
//!
//! Parameters of every network live in one flat [`Params`] buffer; a
//! [`DenseNet`] is only a layout (dims + offset) into it. Forward passes are
//! recorded on a [`Tape`] of vector-valued nodes and differentiated in one
//! reverse sweep.

mod dense;
mod params;
mod tape;

pub use dense::{Activation, DenseNet, LayoutBuilder, LEAKY_SLOPE};
pub use params::{sgd_step, Gradients, ParamRange, Params};
pub use tape::{NodeGrads, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tape was recorded against parameter version {tape}, parameters are now at version {params}")]
    StaleTape { tape: u64, params: u64 },
    #[error("masked softmax needs at least one unmasked entry")]
    AllMasked,
    #[error("gradient contains a non-finite value at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("update would make parameter {index} non-finite")]
    NonFiniteParameter { index: usize },
    #[error("unknown tape variable {0}")]
    UnknownVar(usize),
}

/// Softmax over the unmasked entries; masked entries are exactly zero.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>, DiffError> {
    if scores.len() != mask.len() {
        return Err(DiffError::DimensionMismatch {
            expected: scores.len(),
            got: mask.len(),
        });
    }
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(DiffError::AllMasked);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// Numerically stable `log(softmax(scores))`.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|&s| s - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_scores_are_uniform() {
        let p = masked_softmax(&[0.3; 4], &[true; 4]).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn single_unmasked_entry_gets_all_mass() {
        let p = masked_softmax(&[5.0, -2.0, 9.0], &[false, true, false]).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn shift_invariance() {
        let s = [0.1, -1.3, 2.2, 0.7];
        let shifted: Vec<f64> = s.iter().map(|v| v + 123.4).collect();
        let mask = [true, true, false, true];
        let a = masked_softmax(&s, &mask).unwrap();
        let b = masked_softmax(&shifted, &mask).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a[2], 0.0);
    }

    #[test]
    fn all_masked_is_an_error() {
        assert_eq!(masked_softmax(&[1.0, 2.0], &[false, false]), Err(DiffError::AllMasked));
    }

    #[test]
    fn log_softmax_matches_softmax() {
        let s = [1.0, 2.0, -0.5];
        let p = masked_softmax(&s, &[true; 3]).unwrap();
        for (l, q) in log_softmax(&s).iter().zip(&p) {
            assert!((l.exp() - q).abs() < 1e-14);
        }
    }

    mod props {
        use super::super::masked_softmax;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn distribution_with_exact_zeros(
                entries in proptest::collection::vec((-50.0f64..50.0, any::<bool>()), 1..20)
            ) {
                let scores: Vec<f64> = entries.iter().map(|e| e.0).collect();
                let mut mask: Vec<bool> = entries.iter().map(|e| e.1).collect();
                mask[0] = true;
                let p = masked_softmax(&scores, &mask).unwrap();
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                for (v, m) in p.iter().zip(&mask) {
                    prop_assert!(*v >= 0.0);
                    if !m {
                        prop_assert_eq!(*v, 0.0);
                    }
                }
            }
        }
    }
}
