//! Matrix-level reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles. Node inputs
//! always have smaller indices than the node itself, so the record is already
//! in topological order and [`Tape::backward`] is a single reverse sweep.

use super::activation::Activation;
use super::matrix::{softmax_rows, SeqMatrix};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Const,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    Act(Var, Activation),
    RmsNorm {
        x: Var,
        gain: Var,
        eps: f64,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Rope {
        x: Var,
        cos: SeqMatrix,
        sin: SeqMatrix,
        head_dim: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: SeqMatrix,
    },
    MeanSquare(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: SeqMatrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<SeqMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&SeqMatrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zero-filled when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> SeqMatrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                SeqMatrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &SeqMatrix {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: SeqMatrix) -> Var {
        self.push_raw(value, Op::Param, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: SeqMatrix) -> Var {
        self.push_raw(value, Op::Const, false)
    }

    fn push_raw(&mut self, value: SeqMatrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: SeqMatrix, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_raw(value, op, needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(value, Op::MatMulNT(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::Softmax(a), &[a])
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let value = act.apply_matrix(self.value(a));
        self.push(value, Op::Act(a, act), &[a])
    }

    /// Row-wise RMS normalization scaled by a `1 x cols` gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let gv = self.value(gain);
        if gv.rows() != 1 || gv.cols() != xv.cols() {
            return Err(Error::shape("rms_norm", xv.shape(), gv.shape()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            for (v, g) in row.iter_mut().zip(gv.row(0)) {
                *v *= inv * g;
            }
        }
        Ok(self.push(out, Op::RmsNorm { x, gain, eps }, &[x, gain]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&SeqMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = SeqMatrix::concat_rows(&mats)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&SeqMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = SeqMatrix::concat_cols(&mats)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(a).slice_rows(start, len)?;
        Ok(self.push(value, Op::SliceRows(a, start), &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(a).slice_cols(start, len)?;
        Ok(self.push(value, Op::SliceCols(a, start), &[a]))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} out of range for table with {} rows",
                t.rows()
            )));
        }
        let mut value = SeqMatrix::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).copy_from_slice(t.row(id));
        }
        Ok(self.push(value, Op::Gather(table, ids.to_vec()), &[table]))
    }

    /// Rotates consecutive feature pairs inside each `head_dim` block by
    /// `positions[row] * base^(-2i/head_dim)`.
    pub fn rope(&mut self, x: Var, positions: &[usize], head_dim: usize, base: f64) -> Result<Var> {
        let xv = self.value(x);
        if head_dim == 0 || !head_dim.is_multiple_of(2) || !xv.cols().is_multiple_of(head_dim) {
            return Err(Error::InvalidArgument(format!(
                "rotary embedding needs an even head dim dividing {} (got {head_dim})",
                xv.cols()
            )));
        }
        if positions.len() != xv.rows() {
            return Err(Error::InvalidArgument(format!(
                "rotary embedding got {} positions for {} rows",
                positions.len(),
                xv.rows()
            )));
        }
        let half = head_dim / 2;
        let cos = SeqMatrix::from_fn(xv.rows(), half, |r, i| {
            (positions[r] as f64 * base.powf(-2.0 * i as f64 / head_dim as f64)).cos()
        });
        let sin = SeqMatrix::from_fn(xv.rows(), half, |r, i| {
            (positions[r] as f64 * base.powf(-2.0 * i as f64 / head_dim as f64)).sin()
        });
        let value = rotate_pairs(xv, &cos, &sin, head_dim, 1.0);
        Ok(self.push(
            value,
            Op::Rope {
                x,
                cos,
                sin,
                head_dim,
            },
            &[x],
        ))
    }

    /// Mean over rows of `-log softmax(logits)[target]`, as a 1x1 value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(Error::InvalidArgument(format!(
                "cross entropy got {} targets for {} rows",
                targets.len(),
                lv.rows()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= lv.cols()) {
            return Err(Error::InvalidArgument(format!(
                "target {bad} out of range for {} classes",
                lv.cols()
            )));
        }
        let probs = softmax_rows(lv);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        loss /= targets.len().max(1) as f64;
        let value = SeqMatrix::new(1, 1, vec![loss])?;
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean of squared entries, as a 1x1 value.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let ms = v.data().iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64;
        let value = SeqMatrix::new(1, 1, vec![ms]).expect("1x1");
        self.push(value, Op::MeanSquare(a), &[a])
    }

    /// Propagates adjoints from `root`, seeded with ones. Every node at or
    /// below `root` is visited once, in reverse recording order.
    pub fn backward(&self, root: Var) -> Gradients {
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<SeqMatrix>> = vec![None; self.nodes.len()];
        let (r, c) = shapes[root.0];
        grads[root.0] = Some(SeqMatrix::filled(r, c, 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads, shapes }
    }

    fn accumulate(&self, grads: &mut [Option<SeqMatrix>], v: Var, g: SeqMatrix) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &SeqMatrix, grads: &mut [Option<SeqMatrix>]) {
        match &node.op {
            Op::Param | Op::Const => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, g.matmul_nt(bv).expect("shape"));
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, av.matmul_tn(g).expect("shape"));
                }
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, g.matmul(bv).expect("shape"));
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, g.matmul_tn(av).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::Softmax(a) => {
                let y = &node.value;
                let mut out = SeqMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (o, (p, q)) in out.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - dot);
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::Act(a, act) => {
                let x = self.value(*a);
                let mut out = g.clone();
                for (o, &xv) in out.data_mut().iter_mut().zip(x.data()) {
                    *o *= act.derivative(xv);
                }
                self.accumulate(grads, *a, out);
            }
            Op::RmsNorm { x, gain, eps } => {
                let (xv, gv) = (self.value(*x), self.value(*gain));
                let d = xv.cols() as f64;
                let mut gx = SeqMatrix::zeros(xv.rows(), xv.cols());
                let mut gg = SeqMatrix::zeros(1, xv.cols());
                for r in 0..xv.rows() {
                    let xr = xv.row(r);
                    let gr = g.row(r);
                    let inv = 1.0 / (xr.iter().map(|v| v * v).sum::<f64>() / d + eps).sqrt();
                    // xhat = x * inv; dL/dxhat = g * gain
                    let mut dot = 0.0;
                    for c in 0..xr.len() {
                        let xhat = xr[c] * inv;
                        let gh = gr[c] * gv.get(0, c);
                        dot += gh * xhat;
                        gg.data_mut()[c] += gr[c] * xhat;
                    }
                    let dot = dot / d;
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        let xhat = xr[c] * inv;
                        let gh = gr[c] * gv.get(0, c);
                        *o = inv * (gh - xhat * dot);
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gain, gg);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    if self.nodes[p.0].needs_grad {
                        self.accumulate(grads, *p, g.slice_rows(start, rows).expect("shape"));
                    }
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    if self.nodes[p.0].needs_grad {
                        self.accumulate(grads, *p, g.slice_cols(start, cols).expect("shape"));
                    }
                    start += cols;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.value(*a).shape();
                let mut out = SeqMatrix::zeros(r, c);
                for i in 0..g.rows() {
                    out.row_mut(start + i).copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, out);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.value(*a).shape();
                let mut out = SeqMatrix::zeros(r, c);
                for i in 0..r {
                    out.row_mut(i)[*start..start + g.cols()].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, out);
            }
            Op::Gather(table, ids) => {
                let (r, c) = self.value(*table).shape();
                let mut out = SeqMatrix::zeros(r, c);
                for (i, &id) in ids.iter().enumerate() {
                    for (o, v) in out.row_mut(id).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *table, out);
            }
            Op::Rope {
                x,
                cos,
                sin,
                head_dim,
            } => {
                self.accumulate(grads, *x, rotate_pairs(g, cos, sin, *head_dim, -1.0));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let scale = g.get(0, 0) / targets.len().max(1) as f64;
                let mut out = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    out.row_mut(r)[t] -= 1.0;
                }
                self.accumulate(grads, *logits, out.scale(scale));
            }
            Op::MeanSquare(a) => {
                let x = self.value(*a);
                let scale = 2.0 * g.get(0, 0) / x.len().max(1) as f64;
                self.accumulate(grads, *a, x.scale(scale));
            }
        }
    }
}

/// Rotates each `(2i, 2i+1)` pair by angle `sign * theta`.
fn rotate_pairs(
    x: &SeqMatrix,
    cos: &SeqMatrix,
    sin: &SeqMatrix,
    head_dim: usize,
    sign: f64,
) -> SeqMatrix {
    let mut out = x.clone();
    let half = head_dim / 2;
    for r in 0..x.rows() {
        let (cr, sr) = (cos.row(r), sin.row(r));
        let row = out.row_mut(r);
        for head in row.chunks_mut(head_dim) {
            for i in 0..half {
                let (a, b) = (head[2 * i], head[2 * i + 1]);
                let (c, s) = (cr[i], sign * sr[i]);
                head[2 * i] = a * c - b * s;
                head[2 * i + 1] = a * s + b * c;
            }
        }
    }
    out
}
