//! Reverse-mode tape over a small, fixed set of matrix primitives.
//!
//! Every primitive records its inputs (and any intermediates its adjoint
//! needs) when applied; [`Tape::backward`] then walks the records in exact
//! reverse order. Parameters are bound from a [`ParamStore`] once per tape
//! and their adjoints are folded back into the store by
//! [`Tape::accumulate`].

use std::collections::HashMap;

use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Variance floor used by [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    RowSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    MeanPoolRows(Var),
    Sum(Var),
    SumSquares(Var),
    HCat(Var, Var),
    Select(Var, usize, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    visit_order: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Node indices in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visit_order
    }
}

pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Softmax of each row with per-row max subtraction.
pub fn row_softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Convenience for 1x1 values.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a stored parameter. Binding the same id twice returns the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Adds a `1 x d` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::shape("add_row", xv.shape(), rv.shape()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.as_slice()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s))
    }

    /// Multiplies `x` by the 1x1 value `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(Error::shape("scale_by", self.value(x).shape(), sv.shape()));
        }
        let k = sv[(0, 0)];
        let out = self.value(x).scale(k);
        Ok(self.push(out, Op::ScaleBy(x, s)))
    }

    pub fn row_softmax(&mut self, x: Var) -> Var {
        let out = row_softmax(self.value(x));
        self.push(out, Op::RowSoftmax(x))
    }

    /// Row-wise layer normalisation followed by the affine `gain`/`bias` (both `1 x d`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if d < 2 {
            return Err(Error::DegenerateWidth(d));
        }
        for p in [gain, bias] {
            if self.value(p).shape() != (1, d) {
                return Err(Error::shape(
                    "layer_norm",
                    xv.shape(),
                    self.value(p).shape(),
                ));
            }
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = Matrix::zeros(xv.rows(), d);
        let mut out = Matrix::zeros(xv.rows(), d);
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat[(r, c)] = h;
                out[(r, c)] = h * g[(0, c)] + b[(0, c)];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x))
    }

    /// Arithmetic mean over rows, giving a `1 x d` row.
    pub fn mean_pool_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(1, xv.cols());
        let n = xv.rows() as f64;
        for r in 0..xv.rows() {
            for (o, v) in out.row_mut(0).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let out = out.scale(1.0 / n);
        self.push(out, Op::MeanPoolRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Matrix::scalar(s), Op::Sum(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).as_slice().iter().map(|v| v * v).sum();
        self.push(Matrix::scalar(s), Op::SumSquares(x))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn hcat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::shape("hcat", av.shape(), bv.shape()));
        }
        let mut out = Matrix::zeros(av.rows(), av.cols() + bv.cols());
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..av.cols()].copy_from_slice(av.row(r));
            row[av.cols()..].copy_from_slice(bv.row(r));
        }
        Ok(self.push(out, Op::HCat(a, b)))
    }

    /// The single entry `x[r, c]` as a 1x1 value.
    pub fn select(&mut self, x: Var, r: usize, c: usize) -> Result<Var> {
        let xv = self.value(x);
        if r >= xv.rows() {
            return Err(Error::IndexOutOfRange {
                index: r,
                len: xv.rows(),
            });
        }
        if c >= xv.cols() {
            return Err(Error::IndexOutOfRange {
                index: c,
                len: xv.cols(),
            });
        }
        let v = xv[(r, c)];
        Ok(self.push(Matrix::scalar(v), Op::Select(x, r, c)))
    }

    /// Propagates adjoints from the scalar `loss` back to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut visit_order = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            visit_order.push(idx);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value(*b).transpose())?;
                    let db = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.scale(-1.0));
                }
                Op::AddRow(x, row) => {
                    let mut dr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in dr.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, g.clone());
                    accumulate(&mut grads, *row, dr);
                }
                Op::Scale(x, s) => accumulate(&mut grads, *x, g.scale(*s)),
                Op::ScaleBy(x, s) => {
                    let k = self.scalar(*s);
                    let ds: f64 = g
                        .as_slice()
                        .iter()
                        .zip(self.value(*x).as_slice())
                        .map(|(a, b)| a * b)
                        .sum();
                    accumulate(&mut grads, *x, g.scale(k));
                    accumulate(&mut grads, *s, Matrix::scalar(ds));
                }
                Op::RowSoftmax(x) => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            dx[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let d = xhat.cols();
                    let mut dx = Matrix::zeros(xhat.rows(), d);
                    let mut dgain = Matrix::zeros(1, d);
                    let mut dbias = Matrix::zeros(1, d);
                    for r in 0..xhat.rows() {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..d {
                            let dy = g[(r, c)];
                            dgain[(0, c)] += dy * xhat[(r, c)];
                            dbias[(0, c)] += dy;
                            let dh = dy * gv[(0, c)];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[(r, c)];
                        }
                        let k = inv_std[r] / d as f64;
                        for c in 0..d {
                            let dh = g[(r, c)] * gv[(0, c)];
                            dx[(r, c)] = k * (d as f64 * dh - sum_dh - xhat[(r, c)] * sum_dh_h);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                }
                Op::Gelu(x) => {
                    let dx = g.zip_map(self.value(*x), |dy, v| dy * gelu_derivative(v))?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::MeanPoolRows(x) => {
                    let xv = self.value(*x);
                    let n = xv.rows() as f64;
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        for (o, v) in dx.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o = v / n;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    accumulate(
                        &mut grads,
                        *x,
                        Matrix::filled(xv.rows(), xv.cols(), g[(0, 0)]),
                    );
                }
                Op::SumSquares(x) => {
                    let k = 2.0 * g[(0, 0)];
                    accumulate(&mut grads, *x, self.value(*x).scale(k));
                }
                Op::HCat(a, b) => {
                    let ac = self.value(*a).cols();
                    let bc = self.value(*b).cols();
                    let mut da = Matrix::zeros(g.rows(), ac);
                    let mut db = Matrix::zeros(g.rows(), bc);
                    for r in 0..g.rows() {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Select(x, r, c) => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    dx[(*r, *c)] = g[(0, 0)];
                    accumulate(&mut grads, *x, dx);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, visit_order })
    }

    /// Adds the adjoints of every bound parameter into its store accumulator.
    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) {
        for (&id, &v) in &self.bound {
            if let Some(g) = grads.get(v) {
                // shapes agree by construction of `param`
                let _ = store.get_mut(id).grad.add_assign(g);
            }
        }
    }

    /// The var a parameter was bound to on this tape, if any.
    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound.get(&id).copied()
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
