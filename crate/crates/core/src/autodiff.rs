//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation eagerly (values are computed as the
//! graph is built) and [`Tape::backward`] sweeps the recorded nodes in
//! reverse. Nodes are whole row-major matrices, so a full training batch is a
//! handful of nodes rather than millions of scalar ones.
//!
//! Kinks use fixed subgradients: `relu'(0) = 0`, `pos_part'(0) = 0`,
//! `abs'(0) = 0`, and `leaky_relu'(0) = 0.01`.

use crate::linalg::{gemm, Mat};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Slope of the negative branch of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Elementwise functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Relu,
    LeakyRelu,
    Tanh,
    Swish,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Square,
    Abs,
    PosPart,
    Neg,
    Recip,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Unary {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu | Unary::PosPart => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Unary::Tanh => x.tanh(),
            Unary::Swish => x * sigmoid(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Abs => x.abs(),
            Unary::Neg => -x,
            Unary::Recip => 1.0 / x,
        }
    }

    /// Derivative given the input `x` and the output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu | Unary::PosPart => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Neg => -1.0,
            Unary::Recip => -y * y,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `a * bᵀ`
    MatMulNT(Var, Var),
    /// `a + row` with `row` broadcast over rows
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `a` (r x c) times column `v` (r x 1) broadcast over columns
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    SumRows(Var),
    SumAll(Var),
    Cols(Var, Vec<usize>),
    HCat(Vec<Var>),
    LogSumExp(Var),
    /// contiguous range of a row vector reshaped to `rows x cols`
    Slice(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.adj.get(v.0).and_then(|a| a.as_ref())
    }
}

fn acc(slot: &mut Option<Mat>, rows: usize, cols: usize) -> &mut Mat {
    slot.get_or_insert_with(|| Mat::zeros(rows, cols))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.len(), 1, "scalar() on non-scalar node");
        m.data[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let m = self.value(v);
        (m.rows, m.cols)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Mat::scalar(v))
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// `a * bᵀ`, with `a: r x k` and `b: c x k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(ma.cols, mb.cols, "matmul_nt inner dimension");
        let mut out = Mat::zeros(ma.rows, mb.rows);
        gemm(
            1.0, &ma.data, ma.rows, ma.cols, false, &mb.data, mb.rows, mb.cols, true, 0.0,
            &mut out.data,
        );
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMulNT(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ma, mr) = (self.value(a), self.value(row));
        assert!(mr.rows == 1 && mr.cols == ma.cols, "add_row shape");
        let mut out = ma.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&mr.data) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert!(
            ma.rows == mb.rows && ma.cols == mb.cols,
            "elementwise shape mismatch {}x{} vs {}x{}",
            ma.rows,
            ma.cols,
            mb.rows,
            mb.cols
        );
        let data = ma.data.iter().zip(&mb.data).map(|(x, y)| f(*x, *y)).collect();
        let out = Mat::from_vec(ma.rows, ma.cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (ma, mc) = (self.value(a), self.value(col));
        assert!(mc.cols == 1 && mc.rows == ma.rows, "mul_col shape");
        let mut out = ma.clone();
        for r in 0..out.rows {
            let s = mc.data[r];
            for o in out.row_mut(r) {
                *o *= s;
            }
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(out, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let m = self.value(a);
        let out = Mat::from_vec(m.rows, m.cols, m.data.iter().map(|x| x * s).collect());
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let m = self.value(a);
        let out = Mat::from_vec(m.rows, m.cols, m.data.iter().map(|x| x + s).collect());
        let ng = self.ng(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let m = self.value(a);
        let out = Mat::from_vec(m.rows, m.cols, m.data.iter().map(|x| f.apply(*x)).collect());
        let ng = self.ng(a);
        self.push(out, Op::Unary(a, f), ng)
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let data = (0..m.rows).map(|r| m.row(r).iter().sum()).collect();
        let out = Mat::from_vec(m.rows, 1, data);
        let ng = self.ng(a);
        self.push(out, Op::SumRows(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.ng(a);
        self.push(Mat::scalar(s), Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let m = self.value(a);
        let mut out = Mat::zeros(m.rows, idx.len());
        for r in 0..m.rows {
            let src = m.row(r);
            for (j, &c) in idx.iter().enumerate() {
                out.data[r * idx.len() + j] = src[c];
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::Cols(a, idx.to_vec()), ng)
    }

    pub fn col(&mut self, a: Var, c: usize) -> Var {
        self.cols(a, &[c])
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "hcat of nothing");
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Mat::zeros(rows, total);
        let mut off = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.rows, rows, "hcat row mismatch");
            for r in 0..rows {
                out.data[r * total + off..r * total + off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(out, Op::HCat(parts.to_vec()), ng)
    }

    /// `log Σ exp(a)` over every entry, evaluated with the max-shift identity.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let out = log_sum_exp(&m.data);
        let ng = self.ng(a);
        self.push(Mat::scalar(out), Op::LogSumExp(a), ng)
    }

    /// Reshapes `a[offset .. offset + rows*cols]` (a row vector) into a matrix.
    pub fn slice(&mut self, a: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let m = self.value(a);
        assert_eq!(m.rows, 1, "slice expects a row vector");
        assert!(offset + rows * cols <= m.cols, "slice out of range");
        let out = Mat::from_vec(rows, cols, m.data[offset..offset + rows * cols].to_vec());
        let ng = self.ng(a);
        self.push(out, Op::Slice(a, offset), ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let sq = self.unary(a, Unary::Square);
        self.sum_all(sq)
    }

    /// Reverse sweep from the scalar node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).len(), 1, "backward from non-scalar");
        let mut adj: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        adj[out.0] = Some(Mat::scalar(1.0));
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(node, &g, &mut adj);
            adj[idx] = Some(g);
        }
        Gradients { adj }
    }

    fn propagate(&self, node: &Node, g: &Mat, adj: &mut [Option<Mat>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMulNT(a, b) => {
                let (ma, mb) = (val(*a), val(*b));
                if self.ng(*a) {
                    // dA = G * B
                    let s = acc(&mut adj[a.0], ma.rows, ma.cols);
                    gemm(
                        1.0, &g.data, g.rows, g.cols, false, &mb.data, mb.rows, mb.cols, false,
                        1.0, &mut s.data,
                    );
                }
                if self.ng(*b) {
                    // dB = Gᵀ * A
                    let s = acc(&mut adj[b.0], mb.rows, mb.cols);
                    gemm(
                        1.0, &g.data, g.rows, g.cols, true, &ma.data, ma.rows, ma.cols, false,
                        1.0, &mut s.data,
                    );
                }
            }
            Op::AddRow(a, row) => {
                if self.ng(*a) {
                    add_into(acc(&mut adj[a.0], g.rows, g.cols), &g.data, 1.0);
                }
                if self.ng(*row) {
                    let s = acc(&mut adj[row.0], 1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in s.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.ng(*a) {
                    add_into(acc(&mut adj[a.0], g.rows, g.cols), &g.data, 1.0);
                }
                if self.ng(*b) {
                    add_into(acc(&mut adj[b.0], g.rows, g.cols), &g.data, sign);
                }
            }
            Op::Mul(a, b) => {
                let (ma, mb) = (val(*a), val(*b));
                if self.ng(*a) {
                    let s = acc(&mut adj[a.0], g.rows, g.cols);
                    for ((o, gi), bi) in s.data.iter_mut().zip(&g.data).zip(&mb.data) {
                        *o += gi * bi;
                    }
                }
                if self.ng(*b) {
                    let s = acc(&mut adj[b.0], g.rows, g.cols);
                    for ((o, gi), ai) in s.data.iter_mut().zip(&g.data).zip(&ma.data) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Div(a, b) => {
                let mb = val(*b);
                if self.ng(*a) {
                    let s = acc(&mut adj[a.0], g.rows, g.cols);
                    for ((o, gi), bi) in s.data.iter_mut().zip(&g.data).zip(&mb.data) {
                        *o += gi / bi;
                    }
                }
                if self.ng(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let s = acc(&mut adj[b.0], g.rows, g.cols);
                    for (((o, gi), qi), bi) in
                        s.data.iter_mut().zip(&g.data).zip(&node.value.data).zip(&mb.data)
                    {
                        *o -= gi * qi / bi;
                    }
                }
            }
            Op::MulCol(a, col) => {
                let (ma, mc) = (val(*a), val(*col));
                if self.ng(*a) {
                    let s = acc(&mut adj[a.0], g.rows, g.cols);
                    for r in 0..g.rows {
                        let c = mc.data[r];
                        for (o, gi) in s.row_mut(r).iter_mut().zip(g.row(r)) {
                            *o += gi * c;
                        }
                    }
                }
                if self.ng(*col) {
                    let s = acc(&mut adj[col.0], g.rows, 1);
                    for r in 0..g.rows {
                        s.data[r] += g
                            .row(r)
                            .iter()
                            .zip(ma.row(r))
                            .map(|(x, y)| x * y)
                            .sum::<f64>();
                    }
                }
            }
            Op::Scale(a, k) => {
                add_into(acc(&mut adj[a.0], g.rows, g.cols), &g.data, *k);
            }
            Op::AddScalar(a) => {
                add_into(acc(&mut adj[a.0], g.rows, g.cols), &g.data, 1.0);
            }
            Op::Unary(a, f) => {
                let ma = val(*a);
                let s = acc(&mut adj[a.0], g.rows, g.cols);
                for (((o, gi), xi), yi) in
                    s.data.iter_mut().zip(&g.data).zip(&ma.data).zip(&node.value.data)
                {
                    if *gi != 0.0 {
                        *o += gi * f.derivative(*xi, *yi);
                    }
                }
            }
            Op::SumRows(a) => {
                let ma = val(*a);
                let s = acc(&mut adj[a.0], ma.rows, ma.cols);
                for r in 0..ma.rows {
                    let gr = g.data[r];
                    for o in s.row_mut(r) {
                        *o += gr;
                    }
                }
            }
            Op::SumAll(a) => {
                let ma = val(*a);
                let s = acc(&mut adj[a.0], ma.rows, ma.cols);
                let gv = g.data[0];
                for o in s.data.iter_mut() {
                    *o += gv;
                }
            }
            Op::Cols(a, idx) => {
                let ma = val(*a);
                let s = acc(&mut adj[a.0], ma.rows, ma.cols);
                for r in 0..ma.rows {
                    let gr = g.row(r);
                    let sr = s.row_mut(r);
                    for (j, &c) in idx.iter().enumerate() {
                        sr[c] += gr[j];
                    }
                }
            }
            Op::HCat(parts) => {
                let mut off = 0;
                for p in parts {
                    let mp = val(*p);
                    if self.ng(*p) {
                        let s = acc(&mut adj[p.0], mp.rows, mp.cols);
                        for r in 0..mp.rows {
                            let src = &g.row(r)[off..off + mp.cols];
                            for (o, x) in s.row_mut(r).iter_mut().zip(src) {
                                *o += x;
                            }
                        }
                    }
                    off += mp.cols;
                }
            }
            Op::LogSumExp(a) => {
                let ma = val(*a);
                let lse = node.value.data[0];
                let gv = g.data[0];
                let s = acc(&mut adj[a.0], ma.rows, ma.cols);
                for (o, x) in s.data.iter_mut().zip(&ma.data) {
                    *o += gv * (x - lse).exp();
                }
            }
            Op::Slice(a, offset) => {
                let ma = val(*a);
                let s = acc(&mut adj[a.0], 1, ma.cols);
                for (o, x) in s.data[*offset..*offset + g.len()].iter_mut().zip(&g.data) {
                    *o += x;
                }
            }
        }
    }
}

fn add_into(dst: &mut Mat, src: &[f64], k: f64) {
    for (o, x) in dst.data.iter_mut().zip(src) {
        *o += k * x;
    }
}

/// `log Σ exp(v)` with the max-shift identity; `-inf` for an empty slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Value and reverse-mode gradient of `objective` at `theta`.
///
/// `objective` receives the tape and `theta` as a `1 x n` parameter leaf and
/// must return a scalar node.
pub fn grad<F>(objective: F, theta: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let th = tape.param(Mat::row_vector(theta));
    let out = objective(&mut tape, th);
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("objective value {value}")));
    }
    let grads = tape.backward(out);
    let g = grads
        .wrt(th)
        .map(|m| m.data.clone())
        .unwrap_or_else(|| vec![0.0; theta.len()]);
    if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {bad}")));
    }
    Ok((value, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_squared_norm_has_gradient_theta() {
        let theta = [0.3, -1.2, 2.5];
        let (v, g) = grad(
            |t, th| {
                let s = t.sum_squares(th);
                t.scale(s, 0.5)
            },
            &theta,
        )
        .unwrap();
        assert!((v - 0.5 * (0.09 + 1.44 + 6.25)).abs() < 1e-15);
        assert_eq!(g, theta.to_vec());
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let (v, g) = grad(|t, _| t.constant_scalar(4.0), &[1.0, 2.0]).unwrap();
        assert_eq!(v, 4.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let r = grad(
            |t, th| {
                let l = t.unary(th, Unary::Log);
                t.sum_all(l)
            },
            &[-1.0],
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        assert_eq!(Unary::Relu.derivative(0.0, 0.0), 0.0);
        assert_eq!(Unary::LeakyRelu.derivative(0.0, 0.0), LEAKY_SLOPE);
        assert_eq!(Unary::Swish.apply(0.0), 0.0);
    }

    #[test]
    fn log_sum_exp_is_overflow_safe() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    // Every op once, checked against central differences.
    #[test]
    fn all_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 3 * 2 + 2 * 2 + 2 + 3;
        let theta: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.5)).collect();
        let f = |t: &mut Tape, th: Var| {
            let a = t.slice(th, 0, 3, 2);
            let w = t.slice(th, 6, 2, 2);
            let b = t.slice(th, 10, 1, 2);
            let c = t.slice(th, 12, 3, 1);
            let h = t.matmul_nt(a, w);
            let h = t.add_row(h, b);
            let s = t.unary(h, Unary::Swish);
            let th_ = t.unary(s, Unary::Tanh);
            let q = t.mul(th_, s);
            let d = t.div(q, a);
            let e = t.sub(d, a);
            let m = t.mul_col(e, c);
            let sq = t.unary(m, Unary::Square);
            let rs = t.sum_rows(sq);
            let c0 = t.cols(m, &[1]);
            let cat = t.hcat(&[rs, c0, c]);
            let sig = t.unary(cat, Unary::Sigmoid);
            let ex = t.unary(sig, Unary::Exp);
            let lg = t.unary(ex, Unary::Log);
            let sr = t.unary(lg, Unary::Sqrt);
            let ab = t.unary(sr, Unary::Abs);
            let ng = t.unary(ab, Unary::Neg);
            let rc = t.unary(ng, Unary::Recip);
            let sc = t.scale(rc, 0.7);
            let ad = t.add_scalar(sc, 3.0);
            let lse = t.log_sum_exp(ad);
            let tot = t.sum_all(ad);
            let mean = t.mean_all(ad);
            let x = t.add(lse, tot);
            t.add(x, mean)
        };
        let (_, g) = grad(f, &theta).unwrap();
        let h = 1e-6;
        for k in 0..n {
            let mut tp = theta.clone();
            tp[k] += h;
            let mut tm = theta.clone();
            tm[k] -= h;
            let fp = grad(f, &tp).unwrap().0;
            let fm = grad(f, &tm).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - g[k]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "component {k}: fd {fd} vs ad {}",
                g[k]
            );
        }
    }
}
