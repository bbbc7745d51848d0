use super::{log_softmax, DiffError, Gradients, Params};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Affine {
        x: Var,
        weights: usize,
        bias: usize,
        rows: usize,
        cols: usize,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Sum(Vec<Var>),
    Concat(Vec<Var>),
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Pick {
        x: Var,
        index: usize,
    },
    Dot(Var, Var),
    Scale {
        x: Var,
        factor: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Recorded forward computation over vector-valued nodes.
///
/// The tape stores indices into the parameter buffer, not copies of the
/// weights, so it is only valid for the parameter version it was built on.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    nodes: Vec<Node>,
}

/// Per-node adjoints produced by a backward sweep.
#[derive(Debug, Clone)]
pub struct NodeGrads(Vec<Option<Vec<f64>>>);

impl NodeGrads {
    /// Adjoint of `var`, zeros if nothing flowed into it.
    pub fn get(&self, var: Var, len: usize) -> Vec<f64> {
        self.0[var.0].clone().unwrap_or_else(|| vec![0.0; len])
    }
}

impl Tape {
    pub fn new(params: &Params) -> Self {
        Self {
            version: params.version(),
            nodes: Vec::with_capacity(64),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    /// `W x + b` with `W` stored row-major at `weights` (`rows × cols`) and `b` at `bias`.
    pub fn affine(&mut self, params: &Params, x: Var, weights: usize, bias: usize, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let input = &self.nodes[x.0].value;
        if input.len() != cols {
            return Err(DiffError::DimensionMismatch {
                expected: cols,
                got: input.len(),
            });
        }
        let p = params.values();
        let w = &p[weights..weights + rows * cols];
        let b = &p[bias..bias + rows];
        let out: Vec<f64> = (0..rows)
            .map(|r| {
                let row = &w[r * cols..(r + 1) * cols];
                b[r] + row.iter().zip(input).map(|(a, v)| a * v).sum::<f64>()
            })
            .collect();
        Ok(self.push(
            out,
            Op::Affine {
                x,
                weights,
                bias,
                rows,
                cols,
            },
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.nodes[x.0].value.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        self.push(out, Op::LeakyRelu { x, slope })
    }

    /// Elementwise sum of equally sized vectors.
    pub fn sum(&mut self, items: &[Var]) -> Result<Var, DiffError> {
        let len = self.nodes[items[0].0].value.len();
        let mut out = vec![0.0; len];
        for v in items {
            let val = &self.nodes[v.0].value;
            if val.len() != len {
                return Err(DiffError::DimensionMismatch {
                    expected: len,
                    got: val.len(),
                });
            }
            for (o, x) in out.iter_mut().zip(val) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::Sum(items.to_vec())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.sum(&[a, b])
    }

    pub fn concat(&mut self, items: &[Var]) -> Var {
        let out = items.iter().flat_map(|v| self.nodes[v.0].value.iter().copied()).collect();
        self.push(out, Op::Concat(items.to_vec()))
    }

    /// `Σ_i weights[i] · items[i]`; `weights` is a vector with one entry per item.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var, DiffError> {
        let w = &self.nodes[weights.0].value;
        if w.len() != items.len() {
            return Err(DiffError::DimensionMismatch {
                expected: items.len(),
                got: w.len(),
            });
        }
        let len = self.nodes[items[0].0].value.len();
        let mut out = vec![0.0; len];
        for (wi, v) in w.iter().zip(items) {
            let val = &self.nodes[v.0].value;
            if val.len() != len {
                return Err(DiffError::DimensionMismatch {
                    expected: len,
                    got: val.len(),
                });
            }
            for (o, x) in out.iter_mut().zip(val) {
                *o += wi * x;
            }
        }
        Ok(self.push(
            out,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = log_softmax(&self.nodes[x.0].value).into_iter().map(f64::exp).collect();
        self.push(out, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let out = log_softmax(&self.nodes[x.0].value);
        self.push(out, Op::LogSoftmax(x))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        let out = vec![self.nodes[x.0].value[index]];
        self.push(out, Op::Pick { x, index })
    }

    /// Inner product of two equally sized vectors, as a 1-vector.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.len() != vb.len() {
            return Err(DiffError::DimensionMismatch {
                expected: va.len(),
                got: vb.len(),
            });
        }
        let out = vec![va.iter().zip(vb).map(|(x, y)| x * y).sum()];
        Ok(self.push(out, Op::Dot(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v * factor).collect();
        self.push(out, Op::Scale { x, factor })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Reverse sweep from a single output with adjoint `output_grad`.
    pub fn backward(&self, params: &Params, output: Var, output_grad: &[f64]) -> Result<Gradients, DiffError> {
        let mut grads = Gradients::zeros(params.len());
        self.backward_into(params, &[(output, output_grad.to_vec())], &mut grads)?;
        Ok(grads)
    }

    /// Reverse sweep from several seeded outputs, accumulating parameter
    /// adjoints into `grads`. Returns the adjoints of every node.
    pub fn backward_into(&self, params: &Params, seeds: &[(Var, Vec<f64>)], grads: &mut Gradients) -> Result<NodeGrads, DiffError> {
        if params.version() != self.version {
            return Err(DiffError::StaleTape {
                tape: self.version,
                params: params.version(),
            });
        }
        if grads.len() != params.len() {
            return Err(DiffError::DimensionMismatch {
                expected: params.len(),
                got: grads.len(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (var, seed) in seeds {
            let node = self.nodes.get(var.0).ok_or(DiffError::UnknownVar(var.0))?;
            if seed.len() != node.value.len() {
                return Err(DiffError::DimensionMismatch {
                    expected: node.value.len(),
                    got: seed.len(),
                });
            }
            accumulate(&mut adj, *var, seed);
        }
        let p = params.values();
        let g = grads.values_mut();
        for i in (0..self.nodes.len()).rev() {
            let Some(up) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Affine {
                    x,
                    weights,
                    bias,
                    rows,
                    cols,
                } => {
                    let input = &self.nodes[x.0].value;
                    let mut dx = vec![0.0; *cols];
                    for r in 0..*rows {
                        let u = up[r];
                        if u == 0.0 {
                            continue;
                        }
                        g[bias + r] += u;
                        let row = weights + r * cols;
                        for c in 0..*cols {
                            g[row + c] += u * input[c];
                            dx[c] += u * p[row + c];
                        }
                    }
                    accumulate(&mut adj, *x, &dx);
                }
                Op::LeakyRelu { x, slope } => {
                    let input = &self.nodes[x.0].value;
                    let dx: Vec<f64> = up.iter().zip(input).map(|(u, &v)| if v > 0.0 { *u } else { slope * u }).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Sum(items) => {
                    for v in items {
                        accumulate(&mut adj, *v, &up);
                    }
                }
                Op::Concat(items) => {
                    let mut at = 0;
                    for v in items {
                        let n = self.nodes[v.0].value.len();
                        accumulate(&mut adj, *v, &up[at..at + n]);
                        at += n;
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let w = &self.nodes[weights.0].value;
                    let mut dw = vec![0.0; w.len()];
                    for (k, v) in items.iter().enumerate() {
                        let val = &self.nodes[v.0].value;
                        dw[k] = up.iter().zip(val).map(|(a, b)| a * b).sum();
                        let dv: Vec<f64> = up.iter().map(|a| a * w[k]).collect();
                        accumulate(&mut adj, *v, &dv);
                    }
                    accumulate(&mut adj, *weights, &dw);
                }
                Op::Softmax(x) => {
                    let s = &node.value;
                    let dot: f64 = up.iter().zip(s).map(|(a, b)| a * b).sum();
                    let dx: Vec<f64> = up.iter().zip(s).map(|(a, si)| si * (a - dot)).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::LogSoftmax(x) => {
                    let total: f64 = up.iter().sum();
                    let dx: Vec<f64> = up.iter().zip(&node.value).map(|(a, l)| a - l.exp() * total).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Pick { x, index } => {
                    let mut dx = vec![0.0; self.nodes[x.0].value.len()];
                    dx[*index] = up[0];
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Dot(a, b) => {
                    let da: Vec<f64> = self.nodes[b.0].value.iter().map(|v| v * up[0]).collect();
                    let db: Vec<f64> = self.nodes[a.0].value.iter().map(|v| v * up[0]).collect();
                    accumulate(&mut adj, *a, &da);
                    accumulate(&mut adj, *b, &db);
                }
                Op::Scale { x, factor } => {
                    let dx: Vec<f64> = up.iter().map(|u| u * factor).collect();
                    accumulate(&mut adj, *x, &dx);
                }
            }
            adj[i] = Some(up);
        }
        Ok(NodeGrads(adj))
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], var: Var, delta: &[f64]) {
    match &mut adj[var.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_linear_gradient_is_input() {
        // f(x) = w·x with w at 0, bias at 1
        let params = Params::from_values(vec![0.7, 0.0]);
        let mut tape = Tape::new(&params);
        let x = tape.input(vec![3.5]);
        let y = tape.affine(&params, x, 0, 1, 1, 1).unwrap();
        assert!((tape.scalar(y) - 2.45).abs() < 1e-15);
        let g = tape.backward(&params, y, &[1.0]).unwrap();
        assert_eq!(g.values(), &[3.5, 1.0]);
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut params = Params::from_values(vec![1.0, 0.0]);
        let mut tape = Tape::new(&params);
        let x = tape.input(vec![1.0]);
        let y = tape.affine(&params, x, 0, 1, 1, 1).unwrap();
        params.set(0, 2.0);
        assert!(matches!(tape.backward(&params, y, &[1.0]), Err(DiffError::StaleTape { .. })));
    }

    #[test]
    fn log_softmax_pick_gradient() {
        let params = Params::zeros(0);
        let mut tape = Tape::new(&params);
        let x = tape.input(vec![0.5, -1.0, 2.0]);
        let l = tape.log_softmax(x);
        let p = tape.pick(l, 1);
        let mut grads = Gradients::zeros(0);
        let nodes = tape.backward_into(&params, &[(p, vec![1.0])], &mut grads).unwrap();
        let probs = crate::diff::masked_softmax(&[0.5, -1.0, 2.0], &[true; 3]).unwrap();
        let dx = nodes.get(x, 3);
        for (k, d) in dx.iter().enumerate() {
            let expect = if k == 1 { 1.0 - probs[k] } else { -probs[k] };
            assert!((d - expect).abs() < 1e-14);
        }
    }
}
