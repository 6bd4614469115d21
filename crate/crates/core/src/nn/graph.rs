//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its value. [`Graph::backward`] walks the tape in reverse once and returns
//! the gradients of every tracked leaf. Graphs are cheap and meant to be
//! rebuilt for each forward pass; a graph can be differentiated only once.
//!
//! Nodes only carry gradient work when some input is tracked, so frozen
//! sub-networks (the text encoder, the adapters) cost a plain forward pass.

use std::collections::HashMap;

use super::param::{Gradients, Param, ParamId};
use super::tensor::matmul_into;
use super::{NnError, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[r, c] + [1, c]`
    AddRow(Var, Var),
    /// `[r, c] - [1, c]`
    SubRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Relu(Var),
    Softplus(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    /// `[r, c] -> [r, 1]`
    SumCols(Var),
    /// `[r, c] -> [1, c]`
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SoftmaxRows(Var),
    LayerNormRows(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
    param: Option<ParamId>,
}

/// One recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            tracked,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Tracked non-parameter input; its gradient is reported by `Gradients::var`.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bind a parameter. Trainable parameters are tracked; frozen ones enter
    /// as constants. Binding the same parameter twice returns the same node.
    pub fn param(&mut self, p: &Param) -> Var {
        if let Some(&v) = self.params.get(&p.id()) {
            return v;
        }
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable());
        self.nodes[v.0].param = Some(p.id());
        self.params.insert(p.id(), v);
        v
    }

    /// Bind a parameter as a constant regardless of its trainable flag.
    pub fn frozen(&mut self, p: &Param) -> Var {
        self.constant(p.value.clone())
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(k, bv.rows(), "matmul: {:?} x {:?}", av.shape(), bv.shape());
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n, false, false, false);
        let t = self.tracked(&[a, b]);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::MatMul(a, b), t)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        assert_eq!(k, bv.cols(), "matmul_nt: {:?} x {:?}ᵀ", av.shape(), bv.shape());
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n, false, true, false);
        let t = self.tracked(&[a, b]);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::MatMulNt(a, b), t)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert!(av.same_shape(bv), "elementwise: {:?} vs {:?}", av.shape(), bv.shape());
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).unwrap();
        let t = self.tracked(&[a, b]);
        self.push(value, op, t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn row_broadcast(&mut self, a: Var, row: Var, op: Op, sign: f64) -> Var {
        let (av, rv) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        let c = av.cols();
        assert_eq!(rv.len(), c, "row broadcast: {:?} vs {:?}", av.shape(), rv.shape());
        let r = rv.data();
        let data = av
            .data()
            .chunks(c.max(1))
            .flat_map(|chunk| chunk.iter().zip(r).map(move |(&x, &y)| x + sign * y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data).unwrap();
        let t = self.tracked(&[a, row]);
        self.push(value, op, t)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.row_broadcast(a, row, Op::AddRow(a, row), 1.0)
    }

    pub fn sub_row(&mut self, a: Var, row: Var) -> Var {
        self.row_broadcast(a, row, Op::SubRow(a, row), -1.0)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let t = self.tracked(&[a]);
        self.push(value, op, t)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Hard clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        let t = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), t)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        let t = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), t)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let r = v.rows();
        let data = (0..r).map(|i| v.row_slice(i).iter().sum()).collect();
        let t = self.tracked(&[a]);
        self.push(Tensor::new(vec![r, 1], data).unwrap(), Op::SumCols(a), t)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let (r, c) = (v.rows(), v.cols());
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (d, x) in data.iter_mut().zip(v.row_slice(i)) {
                *d += x;
            }
        }
        data.iter_mut().for_each(|d| *d /= r.max(1) as f64);
        let t = self.tracked(&[a]);
        self.push(Tensor::row(data), Op::MeanRows(a), t)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let c = self.nodes[parts[0].0].value.cols();
        let mut data = Vec::new();
        let mut r = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.cols(), c, "concat_rows: column mismatch");
            r += v.rows();
            data.extend_from_slice(v.data());
        }
        let t = self.tracked(parts);
        self.push(
            Tensor::new(vec![r, c], data).unwrap(),
            Op::ConcatRows(parts.to_vec()),
            t,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let r = self.nodes[parts[0].0].value.rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let v = &self.nodes[p.0].value;
                assert_eq!(v.rows(), r, "concat_cols: row mismatch");
                v.cols()
            })
            .collect();
        let c: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row_slice(i));
            }
        }
        let t = self.tracked(parts);
        self.push(
            Tensor::new(vec![r, c], data).unwrap(),
            Op::ConcatCols(parts.to_vec()),
            t,
        )
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = &self.nodes[a.0].value;
        assert!(start <= end && end <= v.cols(), "slice_cols out of range");
        let r = v.rows();
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&v.row_slice(i)[start..end]);
        }
        let t = self.tracked(&[a]);
        self.push(
            Tensor::new(vec![r, end - start], data).unwrap(),
            Op::SliceCols(a, start, end),
            t,
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let (r, c) = (v.rows(), v.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = v.row_slice(i);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            data.extend(e.into_iter().map(|x| x / s));
        }
        let t = self.tracked(&[a]);
        self.push(
            Tensor::new(v.shape().to_vec(), data).unwrap(),
            Op::SoftmaxRows(a),
            t,
        )
    }

    /// Per-row normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let v = &self.nodes[a.0].value;
        let (r, c) = (v.rows(), v.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = v.row_slice(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c as f64;
            let s = (var + eps).sqrt();
            data.extend(row.iter().map(|x| (x - mu) / s));
        }
        let t = self.tracked(&[a]);
        self.push(
            Tensor::new(v.shape().to_vec(), data).unwrap(),
            Op::LayerNormRows(a, eps),
            t,
        )
    }

    /// Reverse pass from a scalar output.
    ///
    /// Returns gradients for every tracked parameter and tracked variable that
    /// the output depends on. A graph can be differentiated only once.
    pub fn backward(&mut self, out: Var) -> Result<Gradients, NnError> {
        if self.consumed {
            return Err(NnError::GraphConsumed);
        }
        let shape = self.nodes[out.0].value.shape().to_vec();
        if self.nodes[out.0].value.len() != 1 {
            return Err(NnError::NonScalarOutput(shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(vec![1.0]);
        let mut result = Gradients::default();
        if !self.nodes[out.0].tracked {
            return Ok(result);
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            if let Op::Leaf = node.op {
                let t = Tensor::new(node.value.shape().to_vec(), g).unwrap();
                match node.param {
                    Some(id) => {
                        result.params.insert(id, t);
                    }
                    None => {
                        result.leaves.insert(idx, t);
                    }
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(result)
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let nodes = &self.nodes;
        let mut send = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].tracked {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| &nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                send(*a, &mut |s| matmul_into(g, bv.data(), s, m, n, k, false, true, true));
                send(*b, &mut |s| matmul_into(av.data(), g, s, k, m, n, true, false, true));
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                // C = A·Bᵀ: dA = dC · B, dB = dCᵀ · A
                send(*a, &mut |s| matmul_into(g, bv.data(), s, m, n, k, false, false, true));
                send(*b, &mut |s| matmul_into(g, av.data(), s, n, m, k, true, false, true));
            }
            Op::Add(a, b) => {
                send(*a, &mut |s| add_into(s, g, 1.0));
                send(*b, &mut |s| add_into(s, g, 1.0));
            }
            Op::Sub(a, b) => {
                send(*a, &mut |s| add_into(s, g, 1.0));
                send(*b, &mut |s| add_into(s, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                send(*a, &mut |s| {
                    for ((d, gi), y) in s.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                });
                send(*b, &mut |s| {
                    for ((d, gi), x) in s.iter_mut().zip(g).zip(av) {
                        *d += gi * x;
                    }
                });
            }
            Op::AddRow(a, r) | Op::SubRow(a, r) => {
                let sign = if matches!(node.op, Op::AddRow(..)) { 1.0 } else { -1.0 };
                let c = val(*a).cols();
                send(*a, &mut |s| add_into(s, g, 1.0));
                send(*r, &mut |s| {
                    for chunk in g.chunks(c.max(1)) {
                        for (d, gi) in s.iter_mut().zip(chunk) {
                            *d += sign * gi;
                        }
                    }
                });
            }
            Op::Scale(a, k) => send(*a, &mut |s| add_into(s, g, *k)),
            Op::AddScalar(a) => send(*a, &mut |s| add_into(s, g, 1.0)),
            Op::Tanh(a) => send(*a, &mut |s| {
                for ((d, gi), y) in s.iter_mut().zip(g).zip(out) {
                    *d += gi * (1.0 - y * y);
                }
            }),
            Op::Exp(a) => send(*a, &mut |s| {
                for ((d, gi), y) in s.iter_mut().zip(g).zip(out) {
                    *d += gi * y;
                }
            }),
            Op::Log(a) => {
                let x = val(*a).data();
                send(*a, &mut |s| {
                    for ((d, gi), xi) in s.iter_mut().zip(g).zip(x) {
                        *d += gi / xi;
                    }
                })
            }
            Op::Sqrt(a) => send(*a, &mut |s| {
                for ((d, gi), y) in s.iter_mut().zip(g).zip(out) {
                    *d += gi * 0.5 / y;
                }
            }),
            Op::Relu(a) => {
                let x = val(*a).data();
                send(*a, &mut |s| {
                    for ((d, gi), xi) in s.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                })
            }
            Op::Softplus(a) => {
                let x = val(*a).data();
                send(*a, &mut |s| {
                    for ((d, gi), xi) in s.iter_mut().zip(g).zip(x) {
                        *d += gi * sigmoid(*xi);
                    }
                })
            }
            Op::Square(a) => {
                let x = val(*a).data();
                send(*a, &mut |s| {
                    for ((d, gi), xi) in s.iter_mut().zip(g).zip(x) {
                        *d += gi * 2.0 * xi;
                    }
                })
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a).data();
                send(*a, &mut |s| {
                    for ((d, gi), xi) in s.iter_mut().zip(g).zip(x) {
                        if xi >= lo && xi <= hi {
                            *d += gi;
                        }
                    }
                })
            }
            Op::Sum(a) => send(*a, &mut |s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len().max(1) as f64;
                send(*a, &mut |s| s.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::SumCols(a) => {
                let c = val(*a).cols();
                send(*a, &mut |s| {
                    for (chunk, gi) in s.chunks_mut(c.max(1)).zip(g) {
                        chunk.iter_mut().for_each(|d| *d += gi);
                    }
                })
            }
            Op::MeanRows(a) => {
                let (r, c) = (val(*a).rows(), val(*a).cols());
                send(*a, &mut |s| {
                    for chunk in s.chunks_mut(c.max(1)) {
                        for (d, gi) in chunk.iter_mut().zip(g) {
                            *d += gi / r as f64;
                        }
                    }
                })
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    let piece = &g[off..off + n];
                    send(*p, &mut |s| add_into(s, piece, 1.0));
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut col = 0;
                for p in parts {
                    let w = val(*p).cols();
                    send(*p, &mut |s| {
                        for (i, chunk) in s.chunks_mut(w.max(1)).enumerate() {
                            let src = &g[i * total + col..i * total + col + w];
                            add_into(chunk, src, 1.0);
                        }
                    });
                    col += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let c = val(*a).cols();
                let w = end - start;
                send(*a, &mut |s| {
                    for (i, chunk) in s.chunks_mut(c.max(1)).enumerate() {
                        add_into(&mut chunk[*start..*end], &g[i * w..(i + 1) * w], 1.0);
                    }
                })
            }
            Op::SoftmaxRows(a) => {
                let c = node.value.cols();
                send(*a, &mut |s| {
                    for ((sc, gc), yc) in s
                        .chunks_mut(c.max(1))
                        .zip(g.chunks(c.max(1)))
                        .zip(out.chunks(c.max(1)))
                    {
                        let dot: f64 = gc.iter().zip(yc).map(|(a, b)| a * b).sum();
                        for ((d, gi), yi) in sc.iter_mut().zip(gc).zip(yc) {
                            *d += yi * (gi - dot);
                        }
                    }
                })
            }
            Op::LayerNormRows(a, eps) => {
                let x = val(*a);
                let c = x.cols();
                send(*a, &mut |s| {
                    for (i, sc) in s.chunks_mut(c.max(1)).enumerate() {
                        let row = x.row_slice(i);
                        let mu = row.iter().sum::<f64>() / c as f64;
                        let var =
                            row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gc = &g[i * c..(i + 1) * c];
                        let yc = &out[i * c..(i + 1) * c];
                        let mg = gc.iter().sum::<f64>() / c as f64;
                        let mgy = gc.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for ((d, gi), yi) in sc.iter_mut().zip(gc).zip(yc) {
                            *d += inv * (gi - mg - yi * mgy);
                        }
                    }
                })
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
