//! Tape-based reverse-mode differentiation over 2-D values.
//!
//! A [`Graph`] records every operation eagerly; [`Graph::backward`] replays the
//! tape in reverse. Parameter leaves borrow their tensors from a [`ParamStore`],
//! so building a graph never copies weights.

use std::borrow::Cow;

use super::kernels;
use super::params::{Gradients, ParamId, ParamStore};
use super::{Float, Tensor};
use crate::error::{ensure, Result};

const LAYER_NORM_EPS: Float = 1e-5;

/// Index of a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, Float),
    AddBias(Var, Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<Float>,
        inv_std: Vec<Float>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Gather(Var, Vec<usize>),
    Sum(Var),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

pub struct Graph<'a> {
    store: Option<&'a ParamStore>,
    nodes: Vec<Node<'a>>,
    param_vars: Vec<Option<Var>>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    /// A graph with no parameter store; only constants may be used as leaves.
    pub fn detached() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        self.nodes.push(Node {
            value: Cow::Borrowed(store.get(id)),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Leaf holding a value owned by the graph. Its gradient is available
    /// through [`Gradients::node`] after `backward`.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        ensure!(
            k == k2,
            "matmul inner dimensions differ: {m}x{k} · {k2}x{n}"
        );
        let out = kernels::matmul(self.value(a).values(), self.value(b).values(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = kernels::transpose(self.value(a).values(), r, c);
        self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            "{what}: shapes {:?} and {:?} differ",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let va = self.value(a);
        let out = va
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x + y)
            .collect();
        let shape = va.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let va = self.value(a);
        let out = va
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x * y)
            .collect();
        let shape = va.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: Float) -> Var {
        let va = self.value(a);
        let out = va.values().iter().map(|x| x * s).collect();
        let shape = va.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Scale(a, s))
    }

    /// Adds a length-`c` bias to every row of an r×c value.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let b = self.value(bias);
        ensure!(
            b.numel() == c,
            "bias of {} entries cannot broadcast over {c} columns",
            b.numel()
        );
        let bv = b.values();
        let mut out = self.value(x).values().to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        Ok(self.push(Tensor::from_parts(vec![r, c], out), Op::AddBias(x, bias)))
    }

    /// `x·W + b` with `W` stored as in×out.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let h = self.matmul(x, weight)?;
        self.add_bias(h, bias)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.values().iter().map(|&x| kernels::gelu(x)).collect();
        let shape = va.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Gelu(a))
    }

    /// Row-wise layer normalization with learned gain and shift.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        ensure!(
            self.value(gain).numel() == c && self.value(shift).numel() == c,
            "layer norm parameters must have {c} entries"
        );
        let xv = self.value(x).values();
        let g = self.value(gain).values();
        let s = self.value(shift).values();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for (i, slot) in inv_std.iter_mut().enumerate() {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<Float>() / c as Float;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Float>() / c as Float;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            *slot = rstd;
            for j in 0..c {
                let h = (row[j] - mean) * rstd;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + s[j];
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![r, c], out),
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
        ))
    }

    /// Gathers rows of `table` (V×d) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.shape(table);
        ensure!(!ids.is_empty(), "embedding lookup needs at least one id");
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            ensure!(id < v, "token id {id} outside vocabulary of size {v}");
            out.extend_from_slice(tv.row(id));
        }
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "concat_rows needs at least one part");
        let c = self.shape(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.shape(p);
            ensure!(pc == c, "concat_rows: width {pc} differs from {c}");
            out.extend_from_slice(self.value(p).values());
            rows += r;
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, c], out),
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "concat_cols needs at least one part");
        let r = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        for &p in parts {
            ensure!(self.shape(p).0 == r, "concat_cols: row counts differ");
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p).values();
            for i in 0..r {
                out[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(
            Tensor::from_parts(vec![r, total], out),
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        ensure!(
            start < end && end <= r,
            "row slice {start}..{end} out of range for {r} rows"
        );
        let out = self.value(x).values()[start * c..end * c].to_vec();
        Ok(self.push(
            Tensor::from_parts(vec![end - start, c], out),
            Op::SliceRows(x, start),
        ))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        ensure!(
            start < end && end <= c,
            "column slice {start}..{end} out of range for {c} columns"
        );
        let xv = self.value(x).values();
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + end]);
        }
        Ok(self.push(Tensor::from_parts(vec![r, w], out), Op::SliceCols(x, start)))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = kernels::softmax_rows(self.value(x).values(), c);
        self.push(Tensor::from_parts(vec![r, c], out), Op::SoftmaxRows(x))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = kernels::log_softmax_rows(self.value(x).values(), c);
        self.push(Tensor::from_parts(vec![r, c], out), Op::LogSoftmaxRows(x))
    }

    /// Picks `x[t, ids[t]]` for every row, giving a column of length r.
    pub fn gather(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(x);
        ensure!(ids.len() == r, "gather: {} ids for {r} rows", ids.len());
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r);
        for (t, &id) in ids.iter().enumerate() {
            ensure!(id < c, "gather id {id} outside {c} columns");
            out.push(xv.at(t, id));
        }
        Ok(self.push(
            Tensor::from_parts(vec![r, 1], out),
            Op::Gather(x, ids.to_vec()),
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean negative log-likelihood of `gold` under row-wise logits.
    pub fn cross_entropy(&mut self, logits: Var, gold: &[usize]) -> Result<Var> {
        ensure!(
            !gold.is_empty(),
            "cross_entropy needs at least one position"
        );
        let lp = self.log_softmax_rows(logits);
        let picked = self.gather(lp, gold)?;
        let total = self.sum(picked);
        Ok(self.scale(total, -1.0 / gold.len() as Float))
    }

    /// Reverse pass from a scalar. Gradients are returned, not stored; use
    /// [`ParamStore::accumulate`] to add them into the parameters.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        ensure!(
            self.value(loss).numel() == 1,
            "backward needs a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        let mut grads: Vec<Option<Vec<Float>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }

        let params = self
            .param_vars
            .iter()
            .map(|v| v.and_then(|v| grads[v.0].clone()))
            .collect();
        Ok(Gradients {
            params,
            nodes: grads,
        })
    }

    fn propagate(&self, i: usize, dy: &[Float], grads: &mut [Option<Vec<Float>>]) {
        fn acc(grads: &mut [Option<Vec<Float>>], v: Var, delta: Vec<Float>) {
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(&delta).for_each(|(g, d)| *g += d),
                slot @ None => *slot = Some(delta),
            }
        }
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                let da = kernels::matmul_bt(dy, self.value(*b).values(), m, n, k);
                let db = kernels::matmul_at(self.value(*a).values(), dy, m, k, n);
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Transpose(a) => {
                let (r, c) = self.shape(*a);
                acc(grads, *a, kernels::transpose(dy, c, r));
            }
            Op::Add(a, b) => {
                acc(grads, *a, dy.to_vec());
                acc(grads, *b, dy.to_vec());
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).values();
                let vb = self.value(*b).values();
                acc(grads, *a, dy.iter().zip(vb).map(|(d, y)| d * y).collect());
                acc(grads, *b, dy.iter().zip(va).map(|(d, x)| d * x).collect());
            }
            Op::Scale(a, s) => acc(grads, *a, dy.iter().map(|d| d * s).collect()),
            Op::AddBias(x, bias) => {
                let c = self.shape(*x).1;
                let mut db = vec![0.0; c];
                for row in dy.chunks(c) {
                    db.iter_mut().zip(row).for_each(|(b, d)| *b += d);
                }
                acc(grads, *x, dy.to_vec());
                acc(grads, *bias, db);
            }
            Op::Gelu(a) => {
                let va = self.value(*a).values();
                acc(
                    grads,
                    *a,
                    dy.iter()
                        .zip(va)
                        .map(|(d, &x)| d * kernels::gelu_grad(x))
                        .collect(),
                );
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let (r, c) = self.shape(*x);
                let g = self.value(*gain).values();
                let mut dx = vec![0.0; r * c];
                let mut dg = vec![0.0; c];
                let mut ds = vec![0.0; c];
                for (row, &rstd) in inv_std.iter().enumerate() {
                    let base = row * c;
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..c {
                        let d = dy[base + j];
                        let h = xhat[base + j];
                        dg[j] += d * h;
                        ds[j] += d;
                        let dh = d * g[j];
                        sum_dh += dh;
                        sum_dh_h += dh * h;
                    }
                    let n = c as Float;
                    for j in 0..c {
                        let dh = dy[base + j] * g[j];
                        let h = xhat[base + j];
                        dx[base + j] = rstd / n * (n * dh - sum_dh - h * sum_dh_h);
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gain, dg);
                acc(grads, *shift, ds);
            }
            Op::Embedding { table, ids } => {
                let (v, d) = self.shape(*table);
                let mut dt = vec![0.0; v * d];
                for (t, &id) in ids.iter().enumerate() {
                    dt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&dy[t * d..(t + 1) * d])
                        .for_each(|(g, d)| *g += d);
                }
                acc(grads, *table, dt);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    acc(grads, p, dy[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let (r, w) = self.shape(p);
                    let mut dp = Vec::with_capacity(r * w);
                    for row in 0..r {
                        dp.extend_from_slice(&dy[row * total + offset..row * total + offset + w]);
                    }
                    acc(grads, p, dp);
                    offset += w;
                }
            }
            Op::SliceRows(x, start) => {
                let (r, c) = self.shape(*x);
                let mut dx = vec![0.0; r * c];
                dx[start * c..start * c + dy.len()].copy_from_slice(dy);
                acc(grads, *x, dx);
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.shape(*x);
                let w = out.cols();
                let mut dx = vec![0.0; r * c];
                for row in 0..r {
                    dx[row * c + start..row * c + start + w]
                        .copy_from_slice(&dy[row * w..(row + 1) * w]);
                }
                acc(grads, *x, dx);
            }
            Op::SoftmaxRows(x) => {
                let c = out.cols();
                let y = out.values();
                let mut dx = vec![0.0; y.len()];
                for (row, (yr, dr)) in y.chunks(c).zip(dy.chunks(c)).enumerate() {
                    let dot: Float = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[row * c + j] = yr[j] * (dr[j] - dot);
                    }
                }
                acc(grads, *x, dx);
            }
            Op::LogSoftmaxRows(x) => {
                let c = out.cols();
                let y = out.values();
                let mut dx = vec![0.0; y.len()];
                for (row, (yr, dr)) in y.chunks(c).zip(dy.chunks(c)).enumerate() {
                    let sum: Float = dr.iter().sum();
                    for j in 0..c {
                        dx[row * c + j] = dr[j] - yr[j].exp() * sum;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Gather(x, ids) => {
                let (r, c) = self.shape(*x);
                let mut dx = vec![0.0; r * c];
                for (t, &id) in ids.iter().enumerate() {
                    dx[t * c + id] = dy[t];
                }
                acc(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                acc(grads, *x, vec![dy[0]; n]);
            }
        }
    }
}
