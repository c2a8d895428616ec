//! Reverse-mode differentiation over 2-D fp64 tensors.
//!
//! A `Tape` records every operation in evaluation order. Each operation knows
//! its forward value and its vector-Jacobian product; `backward` walks the
//! record in reverse and returns gradients for inputs and parameters.
//! Parameter values are borrowed from a `ParamStore`, never copied.

use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, gelu, gelu_grad, gemm, sigmoid};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Val<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Val<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Val::Owned(t) => t,
            Val::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ShiftDiag(Var),
    Gelu(Var),
    Sigmoid(Var),
    Exp(Var),
    LnClamped(Var, f64),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Softmax { x: Var, t: f64 },
    LogSoftmax { x: Var, t: f64 },
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SegmentMean { x: Var, bounds: Vec<(usize, usize)> },
    Transpose(Var),
    Sum(Var),
    CumsumCols(Var),
    PinvInit { a: Var, scale: f64, arg_col: usize, arg_row: usize, n1: f64, ninf: f64 },
}

struct Node<'p> {
    value: Val<'p>,
    op: Op,
    grad: bool,
}

/// Default layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

pub struct Tape<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    /// A tape without parameters (inputs and constants only).
    pub fn new() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> Option<&'p ParamStore> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn push(&mut self, value: Tensor, op: Op, grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value: Val::Owned(value),
            op,
            grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Val::Owned(t),
            op: Op::Leaf,
            grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by `backward`.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Val::Owned(t),
            op: Op::Leaf,
            grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// The parameter's value; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store.expect("tape has no parameter store");
        self.nodes.push(Node {
            value: Val::Borrowed(store.value(id)),
            op: Op::Param,
            grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let store = self
            .store
            .ok_or_else(|| Error::UnknownParam(name.into()))?;
        let id = store.require(name)?;
        Ok(self.param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposition of either operand.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::mismatch("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            self.value(a).data(),
            ar,
            ac,
            ta,
            self.value(b).data(),
            br,
            bc,
            tb,
            &mut out,
            false,
        );
        let grad = self.g(a) || self.g(b);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul { a, b, ta, tb }, grad, "matmul")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::mismatch(op, self.value(a).shape(), self.value(b).shape()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let grad = self.g(a) || self.g(b);
        self.push(out, Op::Add(a, b), grad, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let grad = self.g(a) || self.g(b);
        self.push(out, Op::Sub(a, b), grad, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let grad = self.g(a) || self.g(b);
        self.push(out, Op::Mul(a, b), grad, "mul")
    }

    /// `x + 1·bias` where `bias` is a single row broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(bias) != (1, c) {
            return Err(Error::mismatch("add_row", &[r, c], self.value(bias).shape()));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, bb) in row.iter_mut().zip(b) {
                *o += bb;
            }
        }
        let grad = self.g(x) || self.g(bias);
        self.push(Tensor::matrix(r, c, out)?, Op::AddRow(x, bias), grad, "add_row")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        let grad = self.g(x);
        self.push(out, Op::Scale(x, s), grad, "scale")
    }

    /// `x + s·I` for square `x`.
    pub fn shift_diag(&mut self, x: Var, s: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if r != c {
            return Err(Error::mismatch("shift_diag", &[r, c], &[r, r]));
        }
        let mut out = self.value(x).clone();
        for i in 0..r {
            let v = out.get(i, i);
            out.set(i, i, v + s);
        }
        let grad = self.g(x);
        self.push(out, Op::ShiftDiag(x), grad, "shift_diag")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(gelu);
        let grad = self.g(x);
        self.push(out, Op::Gelu(x), grad, "gelu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        let grad = self.g(x);
        self.push(out, Op::Sigmoid(x), grad, "sigmoid")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(libm::exp);
        let grad = self.g(x);
        self.push(out, Op::Exp(x), grad, "exp")
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_clamped(&mut self, x: Var, floor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| libm::log(v.max(floor)));
        let grad = self.g(x);
        self.push(out, Op::LnClamped(x, floor), grad, "ln_clamped")
    }

    /// Row-wise layer normalization with gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(gain) != (1, c) || self.dims(bias) != (1, c) {
            return Err(Error::mismatch("layer_norm", &[r, c], self.value(gain).shape()));
        }
        let xs = self.value(x).data();
        let gs = self.value(gain).data();
        let bs = self.value(bias).data();
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / libm::sqrt(var + LN_EPS);
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gs[j] + bs[j];
            }
        }
        let grad = self.g(x) || self.g(gain) || self.g(bias);
        self.push(
            Tensor::matrix(r, c, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            grad,
            "layer_norm",
        )
    }

    /// Row-wise `softmax(x / t)`.
    pub fn softmax(&mut self, x: Var, t: f64) -> Result<Var> {
        if !(t > 0.0) {
            return Err(Error::arg("softmax temperature must be positive"));
        }
        let (r, c) = self.dims(x);
        let mut out: Vec<f64> = self.value(x).data().iter().map(|v| v / t).collect();
        for row in out.chunks_mut(c) {
            kernels::softmax_in_place(row);
        }
        let grad = self.g(x);
        self.push(Tensor::matrix(r, c, out)?, Op::Softmax { x, t }, grad, "softmax")
    }

    /// Row-wise `log softmax(x / t)`.
    pub fn log_softmax(&mut self, x: Var, t: f64) -> Result<Var> {
        if !(t > 0.0) {
            return Err(Error::arg("softmax temperature must be positive"));
        }
        let (r, c) = self.dims(x);
        let mut out: Vec<f64> = self.value(x).data().iter().map(|v| v / t).collect();
        for row in out.chunks_mut(c) {
            let lse = kernels::logsumexp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let grad = self.g(x);
        self.push(Tensor::matrix(r, c, out)?, Op::LogSoftmax { x, t }, grad, "log_softmax")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > c {
            return Err(Error::mismatch("slice_cols", &[r, c], &[start, len]));
        }
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xs[i * c + start..i * c + start + len]);
        }
        let grad = self.g(x);
        self.push(Tensor::matrix(r, len, out)?, Op::SliceCols { x, start }, grad, "slice_cols")
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > r {
            return Err(Error::mismatch("slice_rows", &[r, c], &[start, len]));
        }
        let out = self.value(x).slice_rows(start, len);
        let grad = self.g(x);
        self.push(out, Op::SliceRows { x, start }, grad, "slice_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|p| self.dims(*p).0)
            .ok_or_else(|| Error::arg("concat_cols of nothing"))?;
        let mut total = 0;
        for p in parts {
            let (pr, pc) = self.dims(*p);
            if pr != r {
                return Err(Error::mismatch("concat_cols", &[r], &[pr]));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                out.extend_from_slice(self.value(*p).row_slice(i));
            }
        }
        let grad = parts.iter().any(|p| self.g(*p));
        self.push(
            Tensor::matrix(r, total, out)?,
            Op::ConcatCols(parts.to_vec()),
            grad,
            "concat_cols",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts
            .first()
            .map(|p| self.dims(*p).1)
            .ok_or_else(|| Error::arg("concat_rows of nothing"))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let (pr, pc) = self.dims(*p);
            if pc != c {
                return Err(Error::mismatch("concat_rows", &[c], &[pc]));
            }
            rows += pr;
            out.extend_from_slice(self.value(*p).data());
        }
        let grad = parts.iter().any(|p| self.g(*p));
        self.push(
            Tensor::matrix(rows, c, out)?,
            Op::ConcatRows(parts.to_vec()),
            grad,
            "concat_rows",
        )
    }

    /// Means over `segments` contiguous, near-equal row blocks; the last
    /// block absorbs the remainder.
    pub fn segment_means(&mut self, x: Var, segments: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if segments == 0 || segments > r {
            return Err(Error::arg(alloc::format!(
                "{segments} segments over {r} rows"
            )));
        }
        let bounds = segment_bounds(r, segments);
        let xs = self.value(x).data();
        let mut out = vec![0.0; segments * c];
        for (s, &(lo, hi)) in bounds.iter().enumerate() {
            let inv = 1.0 / (hi - lo) as f64;
            for i in lo..hi {
                for j in 0..c {
                    out[s * c + j] += xs[i * c + j];
                }
            }
            for j in 0..c {
                out[s * c + j] *= inv;
            }
        }
        let grad = self.g(x);
        self.push(
            Tensor::matrix(segments, c, out)?,
            Op::SegmentMean { x, bounds },
            grad,
            "segment_means",
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose();
        let grad = self.g(x);
        self.push(out, Op::Transpose(x), grad, "transpose")
    }

    /// Sum of all entries as a `1 × 1` value.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let grad = self.g(x);
        self.push(Tensor::scalar(s), Op::Sum(x), grad, "sum")
    }

    /// Running sum along each row.
    pub fn cumsum_cols(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            for j in 1..c {
                row[j] += row[j - 1];
            }
        }
        let grad = self.g(x);
        self.push(Tensor::matrix(r, c, out)?, Op::CumsumCols(x), grad, "cumsum_cols")
    }

    /// Newton–Schulz starting point `Aᵀ / (‖A‖₁ ‖A‖∞)`.
    pub fn pinv_init(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r != c {
            return Err(Error::mismatch("pinv_init", &[r, c], &[r, r]));
        }
        let av = self.value(a);
        let (mut n1, mut arg_col) = (f64::NEG_INFINITY, 0);
        for j in 0..c {
            let s: f64 = (0..r).map(|i| av.get(i, j).abs()).sum();
            if s > n1 {
                n1 = s;
                arg_col = j;
            }
        }
        let (mut ninf, mut arg_row) = (f64::NEG_INFINITY, 0);
        for i in 0..r {
            let s: f64 = av.row_slice(i).iter().map(|v| v.abs()).sum();
            if s > ninf {
                ninf = s;
                arg_row = i;
            }
        }
        if !(n1 > 0.0) || !(ninf > 0.0) {
            return Err(Error::arg("pseudoinverse of a zero matrix"));
        }
        let scale = 1.0 / (n1 * ninf);
        let out = av.transpose().map(|v| v * scale);
        let grad = self.g(a);
        self.push(
            out,
            Op::PinvInit {
                a,
                scale,
                arg_col,
                arg_row,
                n1,
                ninf,
            },
            grad,
            "pinv_init",
        )
    }

    /// Reverse sweep from a `1 × 1` output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.dims(out) != (1, 1) {
            return Err(Error::mismatch("backward", self.value(out).shape(), &[1, 1]));
        }
        let n = out.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(1.0));
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.vjp(i, &g, &mut grads);
        }
        let param_nodes = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        Ok(Gradients { grads, param_nodes })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn vjp(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = node.value.get();
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = self.dims(*a);
                let (br, bc) = self.dims(*b);
                let (m, n) = y.dims();
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(da) = self.acc(grads, *a) {
                    if !ta {
                        gemm(gd, m, n, false, bv, br, bc, !tb, da, true);
                    } else {
                        gemm(bv, br, bc, *tb, gd, m, n, true, da, true);
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    if !tb {
                        gemm(av, ar, ac, !ta, gd, m, n, false, db, true);
                    } else {
                        gemm(gd, m, n, true, av, ar, ac, *ta, db, true);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.acc(grads, v) {
                        add_into(d, gd);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.acc(grads, *a) {
                    add_into(d, gd);
                }
                if let Some(d) = self.acc(grads, *b) {
                    for (x, gg) in d.iter_mut().zip(gd) {
                        *x -= gg;
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(d) = self.acc(grads, *a) {
                    for ((x, gg), bb) in d.iter_mut().zip(gd).zip(bv) {
                        *x += gg * bb;
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    for ((x, gg), aa) in d.iter_mut().zip(gd).zip(av) {
                        *x += gg * aa;
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if let Some(d) = self.acc(grads, *x) {
                    add_into(d, gd);
                }
                let c = y.cols();
                if let Some(d) = self.acc(grads, *bias) {
                    for row in gd.chunks(c) {
                        add_into(d, row);
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(d) = self.acc(grads, *x) {
                    for (a, gg) in d.iter_mut().zip(gd) {
                        *a += s * gg;
                    }
                }
            }
            Op::ShiftDiag(x) => {
                if let Some(d) = self.acc(grads, *x) {
                    add_into(d, gd);
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.acc(grads, *x) {
                    for ((a, gg), xx) in d.iter_mut().zip(gd).zip(xv) {
                        *a += gg * gelu_grad(*xx);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(d) = self.acc(grads, *x) {
                    for ((a, gg), yy) in d.iter_mut().zip(gd).zip(y.data()) {
                        *a += gg * yy * (1.0 - yy);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(d) = self.acc(grads, *x) {
                    for ((a, gg), yy) in d.iter_mut().zip(gd).zip(y.data()) {
                        *a += gg * yy;
                    }
                }
            }
            Op::LnClamped(x, floor) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.acc(grads, *x) {
                    for ((a, gg), xx) in d.iter_mut().zip(gd).zip(xv) {
                        if *xx > *floor {
                            *a += gg / xx;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (r, c) = y.dims();
                let gs = self.value(*gain).data();
                if let Some(d) = self.acc(grads, *gain) {
                    for i in 0..r {
                        for j in 0..c {
                            d[j] += gd[i * c + j] * xhat[i * c + j];
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *bias) {
                    for row in gd.chunks(c) {
                        add_into(d, row);
                    }
                }
                if let Some(d) = self.acc(grads, *x) {
                    let inv_c = 1.0 / c as f64;
                    for i in 0..r {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            let dh = gd[i * c + j] * gs[j];
                            s1 += dh;
                            s2 += dh * xhat[i * c + j];
                        }
                        for j in 0..c {
                            let dh = gd[i * c + j] * gs[j];
                            d[i * c + j] +=
                                rstd[i] * (dh - inv_c * s1 - xhat[i * c + j] * inv_c * s2);
                        }
                    }
                }
            }
            Op::Softmax { x, t } => {
                let c = y.cols();
                if let Some(d) = self.acc(grads, *x) {
                    for ((drow, grow), yrow) in
                        d.chunks_mut(c).zip(gd.chunks(c)).zip(y.data().chunks(c))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            drow[j] += yrow[j] * (grow[j] - dot) / t;
                        }
                    }
                }
            }
            Op::LogSoftmax { x, t } => {
                let c = y.cols();
                if let Some(d) = self.acc(grads, *x) {
                    for ((drow, grow), yrow) in
                        d.chunks_mut(c).zip(gd.chunks(c)).zip(y.data().chunks(c))
                    {
                        let total: f64 = grow.iter().sum();
                        for j in 0..c {
                            drow[j] += (grow[j] - libm::exp(yrow[j]) * total) / t;
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (r, len) = y.dims();
                let c = self.dims(*x).1;
                if let Some(d) = self.acc(grads, *x) {
                    for i in 0..r {
                        add_into(&mut d[i * c + start..i * c + start + len], &gd[i * len..(i + 1) * len]);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let c = y.cols();
                if let Some(d) = self.acc(grads, *x) {
                    add_into(&mut d[start * c..start * c + gd.len()], gd);
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = y.dims();
                let mut off = 0;
                for p in parts {
                    let pc = self.dims(*p).1;
                    if let Some(d) = self.acc(grads, *p) {
                        for i in 0..r {
                            add_into(
                                &mut d[i * pc..(i + 1) * pc],
                                &gd[i * total + off..i * total + off + pc],
                            );
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(d) = self.acc(grads, *p) {
                        add_into(d, &gd[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::SegmentMean { x, bounds } => {
                let c = y.cols();
                if let Some(d) = self.acc(grads, *x) {
                    for (s, &(lo, hi)) in bounds.iter().enumerate() {
                        let inv = 1.0 / (hi - lo) as f64;
                        for i in lo..hi {
                            for j in 0..c {
                                d[i * c + j] += gd[s * c + j] * inv;
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(d) = self.acc(grads, *x) {
                    add_into(d, g.transpose().data());
                }
            }
            Op::Sum(x) => {
                let s = gd[0];
                if let Some(d) = self.acc(grads, *x) {
                    for a in d.iter_mut() {
                        *a += s;
                    }
                }
            }
            Op::CumsumCols(x) => {
                let c = y.cols();
                if let Some(d) = self.acc(grads, *x) {
                    for (drow, grow) in d.chunks_mut(c).zip(gd.chunks(c)) {
                        let mut run = 0.0;
                        for j in (0..c).rev() {
                            run += grow[j];
                            drow[j] += run;
                        }
                    }
                }
            }
            Op::PinvInit {
                a,
                scale,
                arg_col,
                arg_row,
                n1,
                ninf,
            } => {
                let av = self.value(*a);
                let (r, c) = av.dims();
                let gt = g.transpose();
                // d(scale) = Σ dZ ⊙ Aᵀ
                let dscale: f64 = gt.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                if let Some(d) = self.acc(grads, *a) {
                    for (x, gg) in d.iter_mut().zip(gt.data()) {
                        *x += scale * gg;
                    }
                    // scale = 1 / (n1 · ninf)
                    let k1 = -dscale * scale / n1;
                    let k2 = -dscale * scale / ninf;
                    for i in 0..r {
                        let v = av.get(i, *arg_col);
                        d[i * c + arg_col] += k1 * sign(v);
                    }
                    for j in 0..c {
                        let v = av.get(*arg_row, j);
                        d[arg_row * c + j] += k2 * sign(v);
                    }
                }
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Contiguous `(start, end)` row ranges; the last absorbs `n % m` extras.
pub fn segment_bounds(n: usize, m: usize) -> Vec<(usize, usize)> {
    let base = n / m;
    (0..m)
        .map(|s| {
            let lo = s * base;
            let hi = if s + 1 == m { n } else { lo + base };
            (lo, hi)
        })
        .collect()
}

/// Gradients produced by one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_nodes: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to an input leaf (or any recorded value).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.param_nodes
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// Parameters that received a gradient.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.param_nodes
            .iter()
            .filter_map(|(p, v)| self.wrt(*v).map(|g| (*p, g)))
    }
}
