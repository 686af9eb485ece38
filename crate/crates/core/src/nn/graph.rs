//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients.
//! Nodes are created in topological order, so a single reverse sweep is
//! enough. Values whose inputs do not require gradients are treated as
//! constants and skipped during the sweep.

use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Epsilon inside layer-norm's variance.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    BroadcastRows(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    MaxPoolGroups { x: Var, argmax: Vec<usize> },
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix,
    },
    EulerRotation(Var),
    StraightThrough(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of a node, if it received one.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient or zeros of the given shape.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
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

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Index of the parameter behind a node, if it is a parameter leaf.
    pub fn param_index(&self, v: Var) -> Option<usize> {
        match self.nodes[v.0].op {
            Op::Param(i) => Some(i),
            _ => None,
        }
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A free input that receives gradients.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A parameter leaf tagged with its index in the owning store.
    pub fn param(&mut self, value: Matrix, index: usize) -> Var {
        self.push(value, Op::Param(index), true)
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} · {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = Matrix::zeros(av.rows(), bv.cols());
        gemm(av, false, bv, false, &mut out, 0.0);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?} · {:?}ᵀ", av.shape(), bv.shape()),
            ));
        }
        let mut out = Matrix::zeros(av.rows(), bv.rows());
        gemm(av, false, bv, true, &mut out, 0.0);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::MatMulNT(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Adds a `1×C` row to every row of `x` (bias-add).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + {:?}", xv.shape(), rv.shape()),
            ));
        }
        let mut out = xv.clone();
        let r = rv.row(0).to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        let ng = self.ng(&[x, row]);
        Ok(self.push(out, Op::AddRow(x, row), ng))
    }

    /// Multiplies every row of `x` element-wise by a `1×C` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::shape(
                "mul_row",
                format!("{:?} ⊙ {:?}", xv.shape(), rv.shape()),
            ));
        }
        let mut out = xv.clone();
        let r = rv.row(0).to_vec();
        for i in 0..out.rows() {
            for (o, s) in out.row_mut(i).iter_mut().zip(&r) {
                *o *= s;
            }
        }
        let ng = self.ng(&[x, row]);
        Ok(self.push(out, Op::MulRow(x, row), ng))
    }

    /// Multiplies row `i` of `x` by the scalar `col[i]` (`col` is `N×1`).
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(col));
        if cv.cols() != 1 || cv.rows() != xv.rows() {
            return Err(Error::shape(
                "mul_col",
                format!("{:?} ⊙ {:?}", xv.shape(), cv.shape()),
            ));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            let s = cv.get(i, 0);
            for o in out.row_mut(i) {
                *o *= s;
            }
        }
        let ng = self.ng(&[x, col]);
        Ok(self.push(out, Op::MulCol(x, col), ng))
    }

    /// Repeats a `1×C` row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != 1 {
            return Err(Error::shape("broadcast_rows", format!("{:?}", xv.shape())));
        }
        let mut data = Vec::with_capacity(n * xv.cols());
        for _ in 0..n {
            data.extend_from_slice(xv.row(0));
        }
        let out = Matrix::from_vec(n, xv.cols(), data)?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::BroadcastRows(x), ng))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        let ng = self.ng(&[x]);
        self.push(out, Op::Scale(x, k), ng)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v + k);
        let ng = self.ng(&[x]);
        self.push(out, Op::AddScalar(x), ng)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        let ng = self.ng(&[x]);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Natural log; inputs must be positive.
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    /// Clamp into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            let dst = out.row_mut(r);
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                dst[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        let ng = self.ng(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Columns `start..start+len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}+{len} > {}", xv.cols()),
            ));
        }
        let mut out = Matrix::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::SliceCols(x, start), ng))
    }

    /// Rows `start..start+len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("{start}+{len} > {}", xv.rows()),
            ));
        }
        let c = xv.cols();
        let out = Matrix::from_vec(len, c, xv.data()[start * c..(start + len) * c].to_vec())?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::SliceRows(x, start), ng))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).clone().reshaped(rows, cols)?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Row gather; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::invalid(format!(
                "gather index {bad} out of range for {} rows",
                xv.rows()
            )));
        }
        let c = xv.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(xv.row(i));
        }
        let out = Matrix::from_vec(idx.len(), c, data)?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::GatherRows(x, idx.to_vec()), ng))
    }

    /// Max over consecutive groups of `group` rows: `[G·group × C] → [G × C]`.
    ///
    /// The backward pass routes each gradient to the arg-max row only; ties
    /// go to the first row of the group.
    pub fn max_pool_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        if group == 0 || xv.rows() % group != 0 {
            return Err(Error::shape(
                "max_pool_groups",
                format!("{} rows not divisible into groups of {group}", xv.rows()),
            ));
        }
        let (g_count, c) = (xv.rows() / group, xv.cols());
        let mut out = Matrix::zeros(g_count, c);
        let mut argmax = vec![0usize; g_count * c];
        for g in 0..g_count {
            let base = g * group;
            let dst = out.row_mut(g);
            dst.copy_from_slice(xv.row(base));
            let am = &mut argmax[g * c..(g + 1) * c];
            am.fill(base);
            for r in base + 1..base + group {
                for (j, &v) in xv.row(r).iter().enumerate() {
                    if v > dst[j] {
                        dst[j] = v;
                        am[j] = r;
                    }
                }
            }
        }
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::MaxPoolGroups { x, argmax }, ng))
    }

    /// Max over all rows: `[N × C] → [1 × C]`.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).rows();
        self.max_pool_groups(x, n)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(&[x]);
        self.push(Matrix::scalar(s), Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.len() as f64;
        let ng = self.ng(&[x]);
        self.push(Matrix::scalar(s), Op::MeanAll(x), ng)
    }

    /// Column means: `[N × C] → [1 × C]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for (o, v) in out.row_mut(0).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        out.scale_in_place(1.0 / xv.rows() as f64);
        let ng = self.ng(&[x]);
        self.push(out, Op::MeanRows(x), ng)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::SoftmaxRows(x), ng)
    }

    /// Per-row layer normalisation with learned `1×C` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let c = xv.cols();
        if gv.shape() != (1, c) || bv.shape() != (1, c) {
            return Err(Error::shape(
                "layer_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", xv.shape(), gv.shape(), bv.shape()),
            ));
        }
        let mut xhat = Matrix::zeros(xv.rows(), c);
        let mut out = Matrix::zeros(xv.rows(), c);
        let mut inv_std = Vec::with_capacity(xv.rows());
        let (gr, br) = (gv.row(0), bv.row(0));
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            let hr = xhat.row_mut(r);
            for (h, v) in hr.iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
            for (((o, h), g), b) in out.row_mut(r).iter_mut().zip(xhat.row(r)).zip(gr).zip(br) {
                *o = h * g + b;
            }
        }
        let ng = self.ng(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != labels.len() || lv.rows() == 0 {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} logit rows for {} labels", lv.rows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= lv.cols()) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} classes",
                lv.cols()
            )));
        }
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = lv.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            softmax_in_place(probs.row_mut(r));
        }
        loss /= labels.len() as f64;
        let ng = self.ng(&[logits]);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Row-wise Euler angles `[M×3]` to flattened rotations `[M×9]`
    /// (row-major `Rz·Ry·Rx`).
    pub fn euler_rotation(&mut self, angles: Var) -> Result<Var> {
        let av = self.value(angles);
        if av.cols() != 3 {
            return Err(Error::shape("euler_rotation", format!("{:?}", av.shape())));
        }
        let mut out = Matrix::zeros(av.rows(), 9);
        for r in 0..av.rows() {
            let a = av.row(r);
            let rot = crate::geom::euler_to_rotation(crate::geom::EulerAngles::new(a[0], a[1], a[2]));
            let dst = out.row_mut(r);
            for i in 0..3 {
                for j in 0..3 {
                    dst[i * 3 + j] = rot[i][j];
                }
            }
        }
        let ng = self.ng(&[angles]);
        Ok(self.push(out, Op::EulerRotation(angles), ng))
    }

    /// Emits `forward` while passing gradients straight through to `x`.
    pub fn straight_through(&mut self, x: Var, forward: Matrix) -> Result<Var> {
        same_shape("straight_through", self.value(x), &forward)?;
        let ng = self.ng(&[x]);
        Ok(self.push(forward, Op::StraightThrough(x), ng))
    }

    /// Hash of every piecewise branch taken in the forward pass: relu and
    /// abs signs, clamp regions and max-pool arg-maxes. Two evaluations with
    /// equal patterns lie on the same smooth piece.
    pub fn branch_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) | Op::Abs(x) => {
                    for &v in self.value(*x).data() {
                        eat(u64::from(v > 0.0));
                    }
                }
                Op::Clamp(x, lo, hi) => {
                    for &v in self.value(*x).data() {
                        eat(if v < *lo { 0 } else if v > *hi { 2 } else { 1 });
                    }
                }
                Op::MaxPoolGroups { argmax, .. } => {
                    for &a in argmax {
                        eat(a as u64);
                    }
                }
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from a scalar output with seed gradient 1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.backward_with(output, 1.0)
    }

    /// Reverse sweep from a scalar output with an arbitrary seed gradient.
    pub fn backward_with(&self, output: Var, seed: f64) -> Result<Gradients> {
        let ov = self.value(output);
        if ov.shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("output must be 1x1, got {:?}", ov.shape()),
            ));
        }
        if !ov.all_finite() {
            return Err(Error::NonFinite("backward from a non-finite output".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(seed));
        for i in (0..=output.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, dy: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.needs_grad(*a) {
                    let bv = self.value(*b);
                    let g = grad_slot(grads, *a, self.value(*a).shape());
                    gemm(dy, false, bv, true, g, 1.0);
                }
                if self.needs_grad(*b) {
                    let av = self.value(*a);
                    let g = grad_slot(grads, *b, self.value(*b).shape());
                    gemm(av, true, dy, false, g, 1.0);
                }
            }
            Op::MatMulNT(a, b) => {
                if self.needs_grad(*a) {
                    let bv = self.value(*b);
                    let g = grad_slot(grads, *a, self.value(*a).shape());
                    gemm(dy, false, bv, false, g, 1.0);
                }
                if self.needs_grad(*b) {
                    let av = self.value(*a);
                    let g = grad_slot(grads, *b, self.value(*b).shape());
                    gemm(dy, true, av, false, g, 1.0);
                }
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, dy);
                self.accum(grads, *b, dy);
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, dy);
                if self.needs_grad(*b) {
                    self.accum_owned(grads, *b, dy.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.needs_grad(*a) {
                    self.accum_owned(grads, *a, zip_map(dy, self.value(*b), |g, v| g * v));
                }
                if self.needs_grad(*b) {
                    self.accum_owned(grads, *b, zip_map(dy, self.value(*a), |g, v| g * v));
                }
            }
            Op::AddRow(x, row) => {
                self.accum(grads, *x, dy);
                if self.needs_grad(*row) {
                    self.accum_owned(grads, *row, column_sums(dy));
                }
            }
            Op::MulRow(x, row) => {
                let rv = self.value(*row);
                if self.needs_grad(*x) {
                    let mut g = dy.clone();
                    for r in 0..g.rows() {
                        for (o, s) in g.row_mut(r).iter_mut().zip(rv.row(0)) {
                            *o *= s;
                        }
                    }
                    self.accum_owned(grads, *x, g);
                }
                if self.needs_grad(*row) {
                    let xv = self.value(*x);
                    let g = column_sums(&zip_map(dy, xv, |a, b| a * b));
                    self.accum_owned(grads, *row, g);
                }
            }
            Op::MulCol(x, col) => {
                let cv = self.value(*col);
                if self.needs_grad(*x) {
                    let mut g = dy.clone();
                    for r in 0..g.rows() {
                        let s = cv.get(r, 0);
                        for o in g.row_mut(r) {
                            *o *= s;
                        }
                    }
                    self.accum_owned(grads, *x, g);
                }
                if self.needs_grad(*col) {
                    let xv = self.value(*x);
                    let mut g = Matrix::zeros(cv.rows(), 1);
                    for r in 0..xv.rows() {
                        let s: f64 = dy.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                        g.set(r, 0, s);
                    }
                    self.accum_owned(grads, *col, g);
                }
            }
            Op::BroadcastRows(x) => {
                self.accum_owned(grads, *x, column_sums(dy));
            }
            Op::Scale(x, k) => {
                let k = *k;
                self.accum_owned(grads, *x, dy.map(|v| v * k));
            }
            Op::AddScalar(x) => self.accum(grads, *x, dy),
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accum_owned(grads, *x, zip_map(dy, xv, |g, v| if v > 0.0 { g } else { 0.0 }));
            }
            Op::Tanh(x) => {
                self.accum_owned(grads, *x, zip_map(dy, y, |g, t| g * (1.0 - t * t)));
            }
            Op::Sigmoid(x) => {
                self.accum_owned(grads, *x, zip_map(dy, y, |g, s| g * s * (1.0 - s)));
            }
            Op::Exp(x) => {
                self.accum_owned(grads, *x, zip_map(dy, y, |g, e| g * e));
            }
            Op::Log(x) => {
                let xv = self.value(*x);
                self.accum_owned(grads, *x, zip_map(dy, xv, |g, v| g / v));
            }
            Op::Abs(x) => {
                let xv = self.value(*x);
                self.accum_owned(grads, *x, zip_map(dy, xv, |g, v| g * sign(v)));
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let xv = self.value(*x);
                self.accum_owned(
                    grads,
                    *x,
                    zip_map(dy, xv, |g, v| if v >= lo && v <= hi { g } else { 0.0 }),
                );
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.needs_grad(p) {
                        let mut g = Matrix::zeros(dy.rows(), pc);
                        for r in 0..dy.rows() {
                            g.row_mut(r).copy_from_slice(&dy.row(r)[c0..c0 + pc]);
                        }
                        self.accum_owned(grads, p, g);
                    }
                    c0 += pc;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let g = grad_slot(grads, *x, xv.shape());
                for r in 0..dy.rows() {
                    for (o, v) in g.row_mut(r)[*start..*start + dy.cols()].iter_mut().zip(dy.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let g = grad_slot(grads, *x, xv.shape());
                for r in 0..dy.rows() {
                    for (o, v) in g.row_mut(start + r).iter_mut().zip(dy.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::Reshape(x) => {
                let (r, c) = self.value(*x).shape();
                self.accum_owned(grads, *x, dy.clone().reshaped(r, c).expect("same size"));
            }
            Op::GatherRows(x, idx) => {
                let xv = self.value(*x);
                let g = grad_slot(grads, *x, xv.shape());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, v) in g.row_mut(src).iter_mut().zip(dy.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::MaxPoolGroups { x, argmax } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let g = grad_slot(grads, *x, xv.shape());
                for (k, &src) in argmax.iter().enumerate() {
                    let (gr, j) = (k / c, k % c);
                    let cur = g.get(src, j);
                    g.set(src, j, cur + dy.get(gr, j));
                }
            }
            Op::SumAll(x) => {
                let (r, c) = self.value(*x).shape();
                self.accum_owned(grads, *x, Matrix::filled(r, c, dy.item()));
            }
            Op::MeanAll(x) => {
                let (r, c) = self.value(*x).shape();
                let v = dy.item() / (r * c) as f64;
                self.accum_owned(grads, *x, Matrix::filled(r, c, v));
            }
            Op::MeanRows(x) => {
                let (r, c) = self.value(*x).shape();
                let mut g = Matrix::zeros(r, c);
                let inv = 1.0 / r as f64;
                for i in 0..r {
                    for (o, v) in g.row_mut(i).iter_mut().zip(dy.row(0)) {
                        *o = v * inv;
                    }
                }
                self.accum_owned(grads, *x, g);
            }
            Op::SoftmaxRows(x) => {
                self.accum_owned(grads, *x, softmax_backward(y, dy));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let (n, c) = xhat.shape();
                if self.needs_grad(*x) {
                    let mut gx = Matrix::zeros(n, c);
                    let mut dxhat = vec![0.0; c];
                    for r in 0..n {
                        let (dyr, xh) = (dy.row(r), xhat.row(r));
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            dxhat[j] = dyr[j] * gv.get(0, j);
                            s1 += dxhat[j];
                            s2 += dxhat[j] * xh[j];
                        }
                        let k = inv_std[r] / c as f64;
                        for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = k * (c as f64 * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                    self.accum_owned(grads, *x, gx);
                }
                if self.needs_grad(*gamma) {
                    self.accum_owned(grads, *gamma, column_sums(&zip_map(dy, xhat, |a, b| a * b)));
                }
                if self.needs_grad(*beta) {
                    self.accum_owned(grads, *beta, column_sums(dy));
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = dy.item() / labels.len() as f64;
                let mut g = probs.clone();
                for (r, &lab) in labels.iter().enumerate() {
                    let row = g.row_mut(r);
                    row[lab] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= k;
                    }
                }
                self.accum_owned(grads, *logits, g);
            }
            Op::EulerRotation(angles) => {
                let av = self.value(*angles);
                let mut g = Matrix::zeros(av.rows(), 3);
                for r in 0..av.rows() {
                    let a = av.row(r);
                    let partials = euler_partials(a[0], a[1], a[2]);
                    let d = dy.row(r);
                    for (k, p) in partials.iter().enumerate() {
                        let s: f64 = p.iter().zip(d).map(|(x, y)| x * y).sum();
                        g.set(r, k, s);
                    }
                }
                self.accum_owned(grads, *angles, g);
            }
            Op::StraightThrough(x) => self.accum(grads, *x, dy),
        }
    }

    fn accum(&self, grads: &mut [Option<Matrix>], v: Var, g: &Matrix) {
        if !self.needs_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    fn accum_owned(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.needs_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

fn grad_slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    let inv = 1.0 / s;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

fn softmax_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let mut g = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, dr) = (y.row(r), dy.row(r));
        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for (j, o) in g.row_mut(r).iter_mut().enumerate() {
            *o = yr[j] * (dr[j] - dot);
        }
    }
    g
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.row_mut(0).iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

/// Partial derivatives of the flattened `Rz·Ry·Rx` matrix with respect to
/// (α, β, γ).
fn euler_partials(alpha: f64, beta: f64, gamma: f64) -> [[f64; 9]; 3] {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    [
        [
            0.0,
            cg * sb * ca + sg * sa,
            -cg * sb * sa + sg * ca,
            0.0,
            sg * sb * ca - cg * sa,
            -sg * sb * sa - cg * ca,
            0.0,
            cb * ca,
            -cb * sa,
        ],
        [
            -cg * sb,
            cg * cb * sa,
            cg * cb * ca,
            -sg * sb,
            sg * cb * sa,
            sg * cb * ca,
            -cb,
            -sb * sa,
            -sb * ca,
        ],
        [
            -sg * cb,
            -sg * sb * sa - cg * ca,
            -sg * sb * ca + cg * sa,
            cg * cb,
            cg * sb * sa - sg * ca,
            cg * sb * ca + sg * sa,
            0.0,
            0.0,
            0.0,
        ],
    ]
}
