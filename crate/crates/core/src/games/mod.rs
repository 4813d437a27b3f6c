//! Parametric games: agents' costs `J_i(x, p)`, shared constraints
//! `g(x, p) ≤ 0` and `h(x, p) = 0`, a decision box and a parameter box.
//!
//! Box bounds live in [`ParametricGame::x_lb`]/[`ParametricGame::x_ub`] and are
//! not rows of `g`.

mod builtin;
mod expr;
mod io;
mod tape;

use std::ops::Range;

pub use builtin::{
    build_builtin, lq17, nonconvex21, nonmono18, nonmono18_exact, qcqp19, random_lq_gnep, random_mpqcqp,
    random_mpqp, random_qcqp_gnep, switching20, BuiltinId, QCQP19_SEED,
};
pub use expr::Expr;
pub use io::GAME_MAGIC;

use crate::linalg::{dot, Mat};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureTag {
    Lq,
    Qcqp,
    Switching,
    NonconvexTanh,
    SingleAgent,
    Custom,
}

impl StructureTag {
    pub fn name(self) -> &'static str {
        match self {
            StructureTag::Lq => "lq",
            StructureTag::Qcqp => "qcqp",
            StructureTag::Switching => "switching",
            StructureTag::NonconvexTanh => "nonconvex_tanh",
            StructureTag::SingleAgent => "single_agent",
            StructureTag::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "lq" => StructureTag::Lq,
            "qcqp" => StructureTag::Qcqp,
            "switching" => StructureTag::Switching,
            "nonconvex_tanh" => StructureTag::NonconvexTanh,
            "single_agent" => StructureTag::SingleAgent,
            "custom" => StructureTag::Custom,
            other => return Err(Error::parse("structure tag", format!("unknown tag {other:?}"))),
        })
    }
}

/// `½(x - center)ᵀQ(x - center) ≤ b + sᵀp`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    pub q: Mat,
    pub center: Vec<f64>,
    pub b: f64,
    pub s: Vec<f64>,
}

impl QuadConstraint {
    pub fn value(&self, x: &[f64], p: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        0.5 * self.q.quad_form(&d) - self.b - dot(&self.s, p)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        self.q.mul_vec(&d)
    }
}

/// Costs `J_i = ½xᵀQ_i x + c_iᵀx + (F_i p)ᵀx`, linear rows `Ax ≤ b + Sp`,
/// equality rows `Ex = e + Tp` and optional convex quadratic rows.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticData {
    pub q: Vec<Mat>,
    pub c: Vec<Vec<f64>>,
    pub f: Vec<Mat>,
    pub a: Mat,
    pub b: Vec<f64>,
    pub s: Mat,
    pub e: Mat,
    pub e_rhs: Vec<f64>,
    pub t: Mat,
    pub quad: Vec<QuadConstraint>,
}

impl QuadraticData {
    /// Costs only, no constraints.
    pub fn unconstrained(q: Vec<Mat>, c: Vec<Vec<f64>>, f: Vec<Mat>, n_p: usize) -> Self {
        let n = c.first().map_or(0, Vec::len);
        QuadraticData {
            q,
            c,
            f,
            a: Mat::zeros(0, n),
            b: Vec::new(),
            s: Mat::zeros(0, n_p),
            e: Mat::zeros(0, n),
            e_rhs: Vec::new(),
            t: Mat::zeros(0, n_p),
            quad: Vec::new(),
        }
    }

    /// `c_i + F_i p`, the linear cost coefficient of agent `i` at `p`.
    pub fn linear_term(&self, i: usize, p: &[f64]) -> Vec<f64> {
        let fp = self.f[i].mul_vec(p);
        self.c[i].iter().zip(fp).map(|(a, b)| a + b).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CustomData {
    pub costs: Vec<Expr>,
    pub ineq: Vec<Expr>,
    pub eq: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GameKind {
    Quadratic(QuadraticData),
    /// `J_i = -x_i/Σx + x_i/p`, `Σx ≤ p`
    Switching { ell: f64 },
    /// `J_i = (i+1)‖s‖² + p₀(N-i)(s - x_i)ᵀs + p₁ tanh(i‖x‖²)`, `s = Σ_j x_j`, 1-based `i`
    NonconvexTanh,
    Custom(CustomData),
}

/// Linear constraint data at a fixed parameter: `A x ≤ b`, `E x = e`.
#[derive(Debug, Clone)]
pub struct LinearSet {
    pub a: Mat,
    pub b: Vec<f64>,
    pub e: Mat,
    pub e_rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricGame {
    pub name: String,
    pub tag: StructureTag,
    pub agent_dims: Vec<usize>,
    pub n_p: usize,
    pub p_lb: Vec<f64>,
    pub p_ub: Vec<f64>,
    pub x_lb: Vec<f64>,
    pub x_ub: Vec<f64>,
    pub kind: GameKind,
}

impl ParametricGame {
    pub fn n_agents(&self) -> usize {
        self.agent_dims.len()
    }

    pub fn n_x(&self) -> usize {
        self.agent_dims.iter().sum()
    }

    pub fn agent_range(&self, i: usize) -> Range<usize> {
        let start: usize = self.agent_dims[..i].iter().sum();
        start..start + self.agent_dims[i]
    }

    /// Indices of `x_{-i}` in increasing order.
    pub fn others(&self, i: usize) -> Vec<usize> {
        let r = self.agent_range(i);
        (0..self.n_x()).filter(|j| !r.contains(j)).collect()
    }

    pub fn n_g(&self) -> usize {
        match &self.kind {
            GameKind::Quadratic(d) => d.a.rows + d.quad.len(),
            GameKind::Switching { .. } => 1,
            GameKind::NonconvexTanh => 0,
            GameKind::Custom(c) => c.ineq.len(),
        }
    }

    pub fn n_h(&self) -> usize {
        match &self.kind {
            GameKind::Quadratic(d) => d.e.rows,
            GameKind::Custom(c) => c.eq.len(),
            _ => 0,
        }
    }

    /// Whether every row of `g` and `h` is affine in `x`.
    pub fn has_linear_constraints(&self) -> bool {
        match &self.kind {
            GameKind::Quadratic(d) => d.quad.is_empty(),
            GameKind::Switching { .. } | GameKind::NonconvexTanh => true,
            GameKind::Custom(c) => c.ineq.is_empty() && c.eq.is_empty(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_x();
        let np = self.n_p;
        if self.agent_dims.is_empty() || self.agent_dims.contains(&0) {
            return Err(Error::InvalidArgument("every agent needs at least one variable".into()));
        }
        if self.x_lb.len() != n || self.x_ub.len() != n {
            return Err(Error::dim("decision box", n, self.x_lb.len()));
        }
        if self.p_lb.len() != np || self.p_ub.len() != np {
            return Err(Error::dim("parameter box", np, self.p_lb.len()));
        }
        if self.x_lb.iter().zip(&self.x_ub).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("decision box with lb > ub".into()));
        }
        if self.p_lb.iter().zip(&self.p_ub).any(|(l, u)| !(l <= u && l.is_finite() && u.is_finite())) {
            return Err(Error::InvalidArgument("parameter box must be finite with lb ≤ ub".into()));
        }
        let na = self.n_agents();
        match &self.kind {
            GameKind::Quadratic(d) => {
                if d.q.len() != na || d.c.len() != na || d.f.len() != na {
                    return Err(Error::dim("quadratic cost count", na, d.q.len()));
                }
                for i in 0..na {
                    if d.q[i].rows != n || d.q[i].cols != n || d.c[i].len() != n {
                        return Err(Error::dim("quadratic cost Q/c", n, d.q[i].rows));
                    }
                    if d.f[i].rows != n || d.f[i].cols != np {
                        return Err(Error::dim("quadratic cost F", np, d.f[i].cols));
                    }
                    if d.q[i].max_abs_asymmetry() > 1e-12 {
                        return Err(Error::InvalidArgument(format!("Q_{i} is not symmetric")));
                    }
                }
                if d.a.cols != n || d.b.len() != d.a.rows || d.s.rows != d.a.rows || d.s.cols != np {
                    return Err(Error::dim("linear rows A/b/S", d.a.rows, d.b.len()));
                }
                if d.e.cols != n || d.e_rhs.len() != d.e.rows || d.t.rows != d.e.rows || d.t.cols != np {
                    return Err(Error::dim("equality rows E/e/T", d.e.rows, d.e_rhs.len()));
                }
                for qc in &d.quad {
                    if qc.q.rows != n || qc.q.cols != n || qc.center.len() != n || qc.s.len() != np {
                        return Err(Error::dim("quadratic constraint", n, qc.center.len()));
                    }
                }
            }
            GameKind::Switching { ell } => {
                if np != 1 || !(*ell > 0.0) || self.agent_dims.iter().any(|&d| d != 1) {
                    return Err(Error::InvalidArgument(
                        "switching game needs scalar agents, one parameter and ell > 0".into(),
                    ));
                }
            }
            GameKind::NonconvexTanh => {
                if np != 2 || self.agent_dims.windows(2).any(|w| w[0] != w[1]) {
                    return Err(Error::InvalidArgument(
                        "nonconvex tanh game needs equal agent sizes and two parameters".into(),
                    ));
                }
            }
            GameKind::Custom(c) => {
                if c.costs.len() != na {
                    return Err(Error::dim("custom costs", na, c.costs.len()));
                }
                for e in c.costs.iter().chain(&c.ineq).chain(&c.eq) {
                    let (ax, ap) = e.arity();
                    if ax > n || ap > np {
                        return Err(Error::InvalidArgument(format!("expression {e} references a missing variable")));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_dims(&self, x: &[f64], p: &[f64]) -> Result<()> {
        if x.len() != self.n_x() {
            return Err(Error::dim("decision vector", self.n_x(), x.len()));
        }
        if p.len() != self.n_p {
            return Err(Error::dim("parameter vector", self.n_p, p.len()));
        }
        Ok(())
    }

    /// `J_i(x, p)` with dimension checks.
    pub fn eval_cost(&self, i: usize, x: &[f64], p: &[f64]) -> Result<f64> {
        self.check_dims(x, p)?;
        if i >= self.n_agents() {
            return Err(Error::InvalidArgument(format!("agent {i} out of range")));
        }
        Ok(self.cost(i, x, p))
    }

    /// `(g, h)` with dimension checks.
    pub fn eval_constraints(&self, x: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dims(x, p)?;
        Ok(self.constraints(x, p))
    }

    /// `J_i(x, p)`; dimensions are the caller's responsibility.
    pub fn cost(&self, i: usize, x: &[f64], p: &[f64]) -> f64 {
        match &self.kind {
            GameKind::Quadratic(d) => 0.5 * d.q[i].quad_form(x) + dot(&d.linear_term(i, p), x),
            GameKind::Switching { .. } => {
                let s: f64 = x.iter().sum();
                -x[i] / s + x[i] / p[0]
            }
            GameKind::NonconvexTanh => {
                let (s, si, sq) = self.tanh_sums(i, x);
                let n = self.n_agents() as f64;
                let ii = (i + 1) as f64;
                let cross: f64 = s.iter().zip(&si).map(|(a, b)| (a - b) * a).sum();
                (ii + 1.0) * dot(&s, &s) + p[0] * (n - ii) * cross + p[1] * (ii * sq).tanh()
            }
            GameKind::Custom(c) => c.costs[i].eval(x, p),
        }
    }

    /// `(Σ_j x_j, x_i, ‖x‖²)` for the nonconvex tanh family.
    fn tanh_sums(&self, i: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let m = self.agent_dims[0];
        let mut s = vec![0.0; m];
        for (k, v) in x.iter().enumerate() {
            s[k % m] += v;
        }
        let si = x[self.agent_range(i)].to_vec();
        (s, si, dot(x, x))
    }

    /// `∇_x J_i(x, p)` over the full decision vector.
    pub fn cost_grad(&self, i: usize, x: &[f64], p: &[f64]) -> Vec<f64> {
        match &self.kind {
            GameKind::Quadratic(d) => {
                let mut g = d.q[i].mul_vec(x);
                for (gk, l) in g.iter_mut().zip(d.linear_term(i, p)) {
                    *gk += l;
                }
                g
            }
            GameKind::Switching { .. } => {
                let s: f64 = x.iter().sum();
                let mut g: Vec<f64> = vec![x[i] / (s * s); x.len()];
                g[i] += -1.0 / s + 1.0 / p[0];
                g
            }
            GameKind::NonconvexTanh => {
                let (s, si, sq) = self.tanh_sums(i, x);
                let m = self.agent_dims[0];
                let n = self.n_agents() as f64;
                let ii = (i + 1) as f64;
                let w = p[0] * (n - ii);
                let t = (ii * sq).tanh();
                let range = self.agent_range(i);
                (0..x.len())
                    .map(|k| {
                        let c = k % m;
                        // d/dx_k of (s - s_i)ᵀs: (s - s_i)_c + s_c, minus s_c when k belongs to agent i
                        let mut dcross = (s[c] - si[c]) + s[c];
                        if range.contains(&k) {
                            dcross -= s[c];
                        }
                        2.0 * (ii + 1.0) * s[c] + w * dcross + p[1] * (1.0 - t * t) * ii * 2.0 * x[k]
                    })
                    .collect()
            }
            GameKind::Custom(c) => c.costs[i].eval_grad(x, p).1,
        }
    }

    /// Stacked `∂J_i/∂x_i`.
    pub fn pseudo_gradient(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_x());
        for i in 0..self.n_agents() {
            let g = self.cost_grad(i, x, p);
            out.extend_from_slice(&g[self.agent_range(i)]);
        }
        out
    }

    /// x-Jacobian of the pseudo-gradient; exact for quadratic games and
    /// central differences otherwise.
    pub fn pseudo_gradient_jacobian(&self, x: &[f64], p: &[f64]) -> Mat {
        let n = self.n_x();
        let mut jac = Mat::zeros(n, n);
        if let GameKind::Quadratic(d) = &self.kind {
            for i in 0..self.n_agents() {
                for r in self.agent_range(i) {
                    jac.row_mut(r).copy_from_slice(d.q[i].row(r));
                }
            }
            return jac;
        }
        let h = 1e-6;
        for k in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let (fp, fm) = (self.pseudo_gradient(&xp, p), self.pseudo_gradient(&xm, p));
            for r in 0..n {
                jac.set(r, k, (fp[r] - fm[r]) / (2.0 * h));
            }
        }
        jac
    }

    pub fn constraints(&self, x: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            GameKind::Quadratic(d) => {
                let ax = d.a.mul_vec(x);
                let sp = d.s.mul_vec(p);
                let mut g: Vec<f64> = (0..d.a.rows).map(|j| ax[j] - d.b[j] - sp[j]).collect();
                g.extend(d.quad.iter().map(|qc| qc.value(x, p)));
                let ex = d.e.mul_vec(x);
                let tp = d.t.mul_vec(p);
                let h = (0..d.e.rows).map(|j| ex[j] - d.e_rhs[j] - tp[j]).collect();
                (g, h)
            }
            GameKind::Switching { .. } => (vec![x.iter().sum::<f64>() - p[0]], Vec::new()),
            GameKind::NonconvexTanh => (Vec::new(), Vec::new()),
            GameKind::Custom(c) => (
                c.ineq.iter().map(|e| e.eval(x, p)).collect(),
                c.eq.iter().map(|e| e.eval(x, p)).collect(),
            ),
        }
    }

    /// Jacobians of `g` and `h` with respect to `x`.
    pub fn constraint_jacobians(&self, x: &[f64], p: &[f64]) -> (Mat, Mat) {
        let n = self.n_x();
        match &self.kind {
            GameKind::Quadratic(d) => {
                let mut jg = Mat::zeros(d.a.rows + d.quad.len(), n);
                jg.data[..d.a.data.len()].copy_from_slice(&d.a.data);
                for (j, qc) in d.quad.iter().enumerate() {
                    jg.row_mut(d.a.rows + j).copy_from_slice(&qc.gradient(x));
                }
                (jg, d.e.clone())
            }
            GameKind::Switching { .. } => (Mat::from_vec(1, n, vec![1.0; n]), Mat::zeros(0, n)),
            GameKind::NonconvexTanh => (Mat::zeros(0, n), Mat::zeros(0, n)),
            GameKind::Custom(c) => {
                let rows = |es: &[Expr]| {
                    let mut m = Mat::zeros(es.len(), n);
                    for (j, e) in es.iter().enumerate() {
                        m.row_mut(j).copy_from_slice(&e.eval_grad(x, p).1);
                    }
                    m
                };
                (rows(&c.ineq), rows(&c.eq))
            }
        }
    }

    /// Constraint data at `p` when every row is affine.
    pub fn linear_constraints(&self, p: &[f64]) -> Option<LinearSet> {
        let n = self.n_x();
        match &self.kind {
            GameKind::Quadratic(d) if d.quad.is_empty() => {
                let sp = d.s.mul_vec(p);
                let tp = d.t.mul_vec(p);
                Some(LinearSet {
                    a: d.a.clone(),
                    b: d.b.iter().zip(sp).map(|(a, b)| a + b).collect(),
                    e: d.e.clone(),
                    e_rhs: d.e_rhs.iter().zip(tp).map(|(a, b)| a + b).collect(),
                })
            }
            GameKind::Switching { .. } => Some(LinearSet {
                a: Mat::from_vec(1, n, vec![1.0; n]),
                b: vec![p[0]],
                e: Mat::zeros(0, n),
                e_rhs: Vec::new(),
            }),
            GameKind::NonconvexTanh => Some(LinearSet {
                a: Mat::zeros(0, n),
                b: Vec::new(),
                e: Mat::zeros(0, n),
                e_rhs: Vec::new(),
            }),
            GameKind::Custom(c) if c.ineq.is_empty() && c.eq.is_empty() => Some(LinearSet {
                a: Mat::zeros(0, n),
                b: Vec::new(),
                e: Mat::zeros(0, n),
                e_rhs: Vec::new(),
            }),
            _ => None,
        }
    }

    /// `max(max_j g_j, max_t |h_t|, 0)`; box bounds are not included.
    pub fn shared_violation(&self, x: &[f64], p: &[f64]) -> f64 {
        let (g, h) = self.constraints(x, p);
        g.iter()
            .map(|v| v.max(0.0))
            .chain(h.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }

    /// Largest distance of `x` outside the decision box.
    pub fn box_violation(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.x_lb.iter().zip(&self.x_ub))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.x_lb).zip(&self.x_ub) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Nikaido-Isoda gap `Σ_i J_i(x) - J̄_i(x_{-i})` given the best-response values.
    pub fn ni_gap(&self, x: &[f64], p: &[f64], values: &[f64]) -> f64 {
        (0..self.n_agents()).map(|i| self.cost(i, x, p) - values[i]).sum()
    }
}
