//! Generic log-barrier Newton machinery for smooth convex programs of the
//! form `minimize f(z) s.t. g_k(z) <= 0` with analytic derivatives.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::{ct_bound, logsumexp, sigmoid};

/// Sparse affine form `sum coeffs * z + offset`.
#[derive(Debug, Clone)]
pub(crate) struct AffineForm {
    pub coeffs: Vec<(usize, f64)>,
    pub offset: f64,
}

impl AffineForm {
    pub fn new(coeffs: Vec<(usize, f64)>, offset: f64) -> Self {
        Self { coeffs, offset }
    }

    pub fn var(i: usize) -> Self {
        Self::new(vec![(i, 1.0)], 0.0)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.offset + self.coeffs.iter().map(|&(i, c)| c * z[i]).sum::<f64>()
    }
}

/// Scalar convex functions applied to affine forms inside `ScalarSum`.
#[derive(Debug, Clone)]
pub(crate) enum Scalar {
    Linear,
    Exp,
    Softplus,
    /// `l / log2(1 + e^x)`, the completion-time lower bound.
    CtBound { l: f64 },
}

impl Scalar {
    /// Value and first two derivatives at `x`.
    fn eval012(&self, x: f64) -> (f64, f64, f64) {
        match self {
            Scalar::Linear => (x, 1.0, 0.0),
            Scalar::Exp => {
                let e = x.exp();
                (e, e, e)
            }
            Scalar::Softplus => {
                let s = crate::numeric::log1pexp(x);
                let sig = sigmoid(x);
                (s, sig, sig * (1.0 - sig))
            }
            Scalar::CtBound { l } => {
                let (h, h1, h2) = ct_bound(x);
                (l * h, l * h1, l * h2)
            }
        }
    }
}

/// A smooth inequality constraint `g(z) <= 0`.
pub(crate) trait ConstraintFn: Send + Sync {
    fn value(&self, z: &[f64]) -> f64;
    /// Writes the gradient into `out` (overwrites).
    fn grad(&self, z: &[f64], out: &mut [f64]);
    /// Adds `scale * hessian` into `h`.
    fn add_hess(&self, z: &[f64], scale: f64, h: &mut DMatrix<f64>);
}

/// `sum_k psi_k(a_k' z + b_k) + offset <= 0`.
pub(crate) struct ScalarSum {
    pub terms: Vec<(Scalar, AffineForm)>,
    pub offset: f64,
}

impl ConstraintFn for ScalarSum {
    fn value(&self, z: &[f64]) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .map(|(s, a)| s.eval012(a.eval(z)).0)
                .sum::<f64>()
    }

    fn grad(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (s, a) in &self.terms {
            let (_, d1, _) = s.eval012(a.eval(z));
            for &(i, c) in &a.coeffs {
                out[i] += d1 * c;
            }
        }
    }

    fn add_hess(&self, z: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        for (s, a) in &self.terms {
            let (_, _, d2) = s.eval012(a.eval(z));
            if d2 == 0.0 {
                continue;
            }
            for &(i, ci) in &a.coeffs {
                for &(j, cj) in &a.coeffs {
                    h[(i, j)] += scale * d2 * ci * cj;
                }
            }
        }
    }
}

/// `ln sum_k exp(a_k' z + b_k) <= 0`, evaluated max-shifted.
pub(crate) struct LogSumExp {
    pub terms: Vec<AffineForm>,
}

impl LogSumExp {
    fn softmax(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let u: Vec<f64> = self.terms.iter().map(|a| a.eval(z)).collect();
        let v = logsumexp(&u);
        let p: Vec<f64> = u.iter().map(|&x| (x - v).exp()).collect();
        (v, p)
    }
}

impl ConstraintFn for LogSumExp {
    fn value(&self, z: &[f64]) -> f64 {
        let u: Vec<f64> = self.terms.iter().map(|a| a.eval(z)).collect();
        logsumexp(&u)
    }

    fn grad(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let (_, p) = self.softmax(z);
        for (pk, a) in p.iter().zip(&self.terms) {
            for &(i, c) in &a.coeffs {
                out[i] += pk * c;
            }
        }
    }

    fn add_hess(&self, z: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        let n = h.nrows();
        let (_, p) = self.softmax(z);
        // H = A' (diag(p) - p p') A
        let mut mean = vec![0.0; n];
        for (pk, a) in p.iter().zip(&self.terms) {
            for &(i, c) in &a.coeffs {
                mean[i] += pk * c;
            }
        }
        for (pk, a) in p.iter().zip(&self.terms) {
            for &(i, ci) in &a.coeffs {
                for &(j, cj) in &a.coeffs {
                    h[(i, j)] += scale * pk * ci * cj;
                }
            }
        }
        for i in 0..n {
            if mean[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                h[(i, j)] -= scale * mean[i] * mean[j];
            }
        }
    }
}

/// Smooth convex objective: a dense linear part plus optional p-norm
/// blocks over subsets of the variables.
pub(crate) struct Objective {
    pub linear: Vec<f64>,
    pub pnorm: Vec<PNormBlock>,
}

pub(crate) struct PNormBlock {
    pub weight: f64,
    pub p: f64,
    pub idxs: Vec<usize>,
}

impl Objective {
    pub fn linear(c: Vec<f64>) -> Self {
        Self { linear: c, pnorm: vec![] }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        let mut v: f64 = self.linear.iter().zip(z).map(|(c, x)| c * x).sum();
        for b in &self.pnorm {
            v += b.weight * b.norm(z).0;
        }
        v
    }

    pub fn grad(&self, z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.linear);
        for b in &self.pnorm {
            let (_, mu, vsum) = b.norm(z);
            // d/dx_i = v^(1/p - 1) * (x_i/mu)^(p-1)
            let vpow = vsum.powf(1.0 / b.p - 1.0);
            for &i in &b.idxs {
                out[i] += b.weight * vpow * (z[i] / mu).powf(b.p - 1.0);
            }
        }
    }

    pub fn add_hess(&self, z: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        for b in &self.pnorm {
            let (_, mu, vsum) = b.norm(z);
            let c1 = vsum.powf(1.0 / b.p - 1.0);
            let c2 = vsum.powf(1.0 / b.p - 2.0);
            let w = scale * b.weight * (b.p - 1.0) / mu;
            for &i in &b.idxs {
                let ri = (z[i] / mu).powf(b.p - 1.0);
                h[(i, i)] += w * c1 * (z[i] / mu).powf(b.p - 2.0);
                for &j in &b.idxs {
                    let rj = (z[j] / mu).powf(b.p - 1.0);
                    h[(i, j)] -= w * c2 * ri * rj;
                }
            }
        }
    }
}

impl PNormBlock {
    /// Returns `(norm, mu, sum (x/mu)^p)` max-factored for overflow safety.
    fn norm(&self, z: &[f64]) -> (f64, f64, f64) {
        let mu = self.idxs.iter().map(|&i| z[i]).fold(0.0, f64::max);
        if !(mu > 0.0) {
            return (f64::NAN, f64::NAN, f64::NAN);
        }
        let vsum: f64 = self.idxs.iter().map(|&i| (z[i] / mu).powf(self.p)).sum();
        (mu * vsum.powf(1.0 / self.p), mu, vsum)
    }
}

/// Inner-loop tuning knobs for the barrier method.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BarrierParams {
    pub t_init: f64,
    pub mu: f64,
    pub newton_tol: f64,
    pub gap_tol: f64,
    pub max_outer: usize,
    pub max_newton: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierResult {
    pub z: Vec<f64>,
    #[allow(dead_code)]
    pub objective: f64,
    /// `m / t` at the final barrier stage, a suboptimality proxy.
    pub gap: f64,
    pub outer_iters: usize,
    pub newton_iters: usize,
    pub max_violation: f64,
}

fn max_violation(constraints: &[&dyn ConstraintFn], z: &[f64]) -> f64 {
    constraints
        .iter()
        .map(|c| c.value(z))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Barrier objective `t*f + phi` at `z`; `None` when `z` is infeasible or
/// the value is non-finite.
fn psi(
    objective: &Objective,
    constraints: &[&dyn ConstraintFn],
    t: f64,
    z: &[f64],
) -> Option<f64> {
    // Feasibility first: objective terms (e.g. p-norm blocks) may not be
    // defined outside the feasible region.
    let mut v = 0.0;
    for c in constraints {
        let g = c.value(z);
        if !(g < 0.0) {
            return None;
        }
        v -= (-g).ln();
    }
    v += t * objective.value(z);
    if v.is_finite() {
        Some(v)
    } else {
        None
    }
}

/// Centering step: Newton minimization of `t*f + phi` from `z`.
/// Returns the Newton iteration count. `stop` allows early exit (phase I).
fn newton_center(
    objective: &Objective,
    constraints: &[&dyn ConstraintFn],
    t: f64,
    z: &mut Vec<f64>,
    params: &BarrierParams,
    stop: Option<&dyn Fn(&[f64]) -> bool>,
) -> Result<usize> {
    let n = z.len();
    let mut gbuf = vec![0.0; n];
    let mut iters = 0;
    let mut stalls = 0;
    loop {
        if iters >= params.max_newton {
            return Err(Error::NoConvergence {
                reason: format!("Newton iteration cap {} reached at barrier t={t:.3e}", params.max_newton),
                max_violation: max_violation(constraints, z),
                gap: f64::NAN,
            });
        }
        if let Some(s) = stop {
            if s(z) {
                return Ok(iters);
            }
        }
        // Assemble gradient and Hessian of t*f + phi.
        let mut grad = DVector::<f64>::zeros(n);
        let mut hess = DMatrix::<f64>::zeros(n, n);
        objective.grad(z, grad.as_mut_slice());
        grad *= t;
        objective.add_hess(z, t, &mut hess);
        for c in constraints {
            let g = c.value(z);
            debug_assert!(g < 0.0);
            let inv = 1.0 / (-g);
            c.grad(z, &mut gbuf);
            c.add_hess(z, inv, &mut hess);
            for i in 0..n {
                grad[i] += gbuf[i] * inv;
            }
            for i in 0..n {
                if gbuf[i] == 0.0 {
                    continue;
                }
                let gi = gbuf[i] * inv;
                for j in 0..n {
                    hess[(i, j)] += gi * gbuf[j] * inv;
                }
            }
        }

        // Solve H d = -grad, regularizing if the factorization fails
        // (can happen for SAA Hessians which are only convex up to
        // sampling noise).
        let mean_diag = hess.diagonal().mean().max(1e-30);
        let mut ridge = 0.0;
        let step = loop {
            let mut h = hess.clone();
            if ridge > 0.0 {
                for i in 0..n {
                    h[(i, i)] += ridge;
                }
            }
            match Cholesky::new(h) {
                Some(ch) => break ch.solve(&(-&grad)),
                None => {
                    ridge = if ridge == 0.0 { 1e-12 * mean_diag } else { ridge * 100.0 };
                    if ridge > 1e6 * mean_diag {
                        return Err(Error::NoConvergence {
                            reason: "Hessian factorization failed".into(),
                            max_violation: max_violation(constraints, z),
                            gap: f64::NAN,
                        });
                    }
                }
            }
        };

        let decrement = -grad.dot(&step);
        iters += 1;
        if decrement / 2.0 <= params.newton_tol {
            return Ok(iters);
        }

        // Backtracking line search on the barrier objective.
        let psi0 = psi(objective, constraints, t, z)
            .expect("current iterate must be strictly feasible");
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-18 {
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(x, d)| x + alpha * d).collect();
            if let Some(v) = psi(objective, constraints, t, &trial) {
                if v <= psi0 - 0.25 * alpha * decrement {
                    // Once |psi| is large, rounding noise in psi can
                    // "accept" steps that change nothing; detect that and
                    // treat the point as numerically centered.
                    let moved = z
                        .iter()
                        .zip(&trial)
                        .any(|(x, y)| (x - y).abs() > 1e-14 * (1.0 + x.abs()));
                    *z = trial;
                    accepted = true;
                    if !moved {
                        stalls += 1;
                        if stalls >= 2 {
                            return Ok(iters);
                        }
                    } else {
                        stalls = 0;
                    }
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Line search stalled at numerical precision; accept the
            // current point as centered.
            return Ok(iters);
        }
    }
}

/// Runs the path-following barrier method from a strictly feasible `z0`.
pub(crate) fn minimize(
    objective: &Objective,
    constraints: &[&dyn ConstraintFn],
    z0: Vec<f64>,
    params: &BarrierParams,
) -> Result<BarrierResult> {
    let mv = max_violation(constraints, &z0);
    if !(mv < 0.0) {
        return Err(Error::Infeasible(format!(
            "initial point not strictly feasible (max constraint value {mv:.3e})"
        )));
    }
    let m = constraints.len() as f64;
    let mut z = z0;
    let mut t = params.t_init;
    let mut newton_total = 0;
    let mut outer = 0;
    loop {
        outer += 1;
        newton_total += newton_center(objective, constraints, t, &mut z, params, None)?;
        if m / t <= params.gap_tol {
            break;
        }
        if outer >= params.max_outer {
            return Err(Error::NoConvergence {
                reason: format!("outer iteration cap {} reached", params.max_outer),
                max_violation: max_violation(constraints, &z),
                gap: m / t,
            });
        }
        t *= params.mu;
    }
    Ok(BarrierResult {
        objective: objective.value(&z),
        gap: m / t,
        outer_iters: outer,
        newton_iters: newton_total,
        max_violation: max_violation(constraints, &z),
        z,
    })
}

/// Shifts a constraint by a slack variable: `g(z) - z[slack] <= 0`.
struct SlackShift<'a> {
    inner: &'a dyn ConstraintFn,
    slack: usize,
}

impl ConstraintFn for SlackShift<'_> {
    fn value(&self, z: &[f64]) -> f64 {
        self.inner.value(z) - z[self.slack]
    }
    fn grad(&self, z: &[f64], out: &mut [f64]) {
        self.inner.grad(z, out);
        out[self.slack] -= 1.0;
    }
    fn add_hess(&self, z: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        self.inner.add_hess(z, scale, h);
    }
}

/// Phase-I feasibility search: minimizes the common slack `s` in
/// `g_k(z) <= s`, stopping as soon as a strictly feasible `z` is found.
/// Errors with `Infeasible` if the slack cannot be driven below zero.
pub(crate) fn phase1(
    constraints: &[&dyn ConstraintFn],
    z0: &[f64],
    params: &BarrierParams,
) -> Result<Vec<f64>> {
    let n = z0.len();
    let slack = n;
    let shifted: Vec<SlackShift> = constraints
        .iter()
        .map(|c| SlackShift { inner: *c, slack })
        .collect();
    let refs: Vec<&dyn ConstraintFn> = shifted.iter().map(|c| c as &dyn ConstraintFn).collect();

    let s0 = max_violation(constraints, z0);
    let mut z = z0.to_vec();
    z.push(s0.max(0.0) + 1.0);

    let mut objective = Objective::linear(vec![0.0; n + 1]);
    objective.linear[slack] = 1.0;

    let feasible = |zz: &[f64]| max_violation(constraints, &zz[..n]) < -1e-9;

    let mut t = params.t_init;
    for _ in 0..params.max_outer {
        newton_center(&objective, &refs, t, &mut z, params, Some(&feasible))?;
        if feasible(&z) {
            z.truncate(n);
            return Ok(z);
        }
        if (refs.len() as f64) / t <= params.gap_tol {
            break;
        }
        t *= params.mu;
    }
    Err(Error::Infeasible(format!(
        "phase-I slack converged to {:.3e} >= 0: no strictly feasible point to tolerance",
        z[slack]
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> BarrierParams {
        BarrierParams {
            t_init: 1.0,
            mu: 20.0,
            newton_tol: 1e-10,
            gap_tol: 1e-9,
            max_outer: 60,
            max_newton: 200,
        }
    }

    #[test]
    fn linear_program_box() {
        // minimize -x - 2y s.t. x <= 1, y <= 1, -x <= 0, -y <= 0
        let objective = Objective::linear(vec![-1.0, -2.0]);
        let cs: Vec<Box<dyn ConstraintFn>> = vec![
            Box::new(ScalarSum { terms: vec![(Scalar::Linear, AffineForm::var(0))], offset: -1.0 }),
            Box::new(ScalarSum { terms: vec![(Scalar::Linear, AffineForm::var(1))], offset: -1.0 }),
            Box::new(ScalarSum { terms: vec![(Scalar::Linear, AffineForm::new(vec![(0, -1.0)], 0.0))], offset: 0.0 }),
            Box::new(ScalarSum { terms: vec![(Scalar::Linear, AffineForm::new(vec![(1, -1.0)], 0.0))], offset: 0.0 }),
        ];
        let refs: Vec<&dyn ConstraintFn> = cs.iter().map(|c| c.as_ref()).collect();
        let res = minimize(&objective, &refs, vec![0.5, 0.5], &params()).unwrap();
        assert_relative_eq!(res.z[0], 1.0, max_relative = 1e-6);
        assert_relative_eq!(res.z[1], 1.0, max_relative = 1e-6);
        assert_relative_eq!(res.objective, -3.0, max_relative = 1e-6);
    }

    #[test]
    fn exp_constraint_analytic_optimum() {
        // minimize x s.t. e^{-x} <= 1/2  =>  x* = ln 2
        let objective = Objective::linear(vec![1.0]);
        let c = ScalarSum {
            terms: vec![(Scalar::Exp, AffineForm::new(vec![(0, -1.0)], 0.0))],
            offset: -0.5,
        };
        let refs: Vec<&dyn ConstraintFn> = vec![&c];
        let res = minimize(&objective, &refs, vec![5.0], &params()).unwrap();
        assert_relative_eq!(res.z[0], std::f64::consts::LN_2, max_relative = 1e-7);
    }

    #[test]
    fn logsumexp_constraint_gradients_match_fd() {
        let c = LogSumExp {
            terms: vec![
                AffineForm::new(vec![(0, 1.0), (1, -1.0)], 0.3),
                AffineForm::new(vec![(0, 1.0), (1, 1.0)], -0.7),
            ],
        };
        let z = vec![-0.4, 0.2];
        let mut g = vec![0.0; 2];
        c.grad(&z, &mut g);
        let eps = 1e-6;
        for i in 0..2 {
            let mut zp = z.clone();
            zp[i] += eps;
            let mut zm = z.clone();
            zm[i] -= eps;
            let fd = (c.value(&zp) - c.value(&zm)) / (2.0 * eps);
            assert_relative_eq!(g[i], fd, max_relative = 1e-6);
        }
        let mut h = DMatrix::zeros(2, 2);
        c.add_hess(&z, 1.0, &mut h);
        for i in 0..2 {
            let mut zp = z.clone();
            zp[i] += eps;
            let mut zm = z.clone();
            zm[i] -= eps;
            let mut gp = vec![0.0; 2];
            let mut gm = vec![0.0; 2];
            c.grad(&zp, &mut gp);
            c.grad(&zm, &mut gm);
            for j in 0..2 {
                let fd = (gp[j] - gm[j]) / (2.0 * eps);
                assert_relative_eq!(h[(i, j)], fd, epsilon = 1e-7, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn pnorm_objective_gradients_match_fd() {
        let obj = Objective {
            linear: vec![0.0, 0.0],
            pnorm: vec![PNormBlock { weight: 1.3, p: 2.5, idxs: vec![0, 1] }],
        };
        let z = vec![2.0, 5.0];
        let mut g = vec![0.0; 2];
        obj.grad(&z, &mut g);
        let eps = 1e-6;
        for i in 0..2 {
            let mut zp = z.clone();
            zp[i] += eps;
            let mut zm = z.clone();
            zm[i] -= eps;
            let fd = (obj.value(&zp) - obj.value(&zm)) / (2.0 * eps);
            assert_relative_eq!(g[i], fd, max_relative = 1e-5);
        }
        let mut h = DMatrix::zeros(2, 2);
        obj.add_hess(&z, 1.0, &mut h);
        for i in 0..2 {
            let mut zp = z.clone();
            zp[i] += eps;
            let mut zm = z.clone();
            zm[i] -= eps;
            let mut gp = vec![0.0; 2];
            let mut gm = vec![0.0; 2];
            obj.grad(&zp, &mut gp);
            obj.grad(&zm, &mut gm);
            for j in 0..2 {
                let fd = (gp[j] - gm[j]) / (2.0 * eps);
                assert_relative_eq!(h[(i, j)], fd, epsilon = 1e-7, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn phase1_finds_feasible_point() {
        // x <= -1 starting from x = 5 (infeasible).
        let c = ScalarSum {
            terms: vec![(Scalar::Linear, AffineForm::var(0))],
            offset: 1.0,
        };
        let refs: Vec<&dyn ConstraintFn> = vec![&c];
        let z = phase1(&refs, &[5.0], &params()).unwrap();
        assert!(z[0] < -1.0);
    }

    #[test]
    fn phase1_detects_infeasibility() {
        // x <= -1 and -x <= 0 cannot both hold.
        let c1 = ScalarSum {
            terms: vec![(Scalar::Linear, AffineForm::var(0))],
            offset: 1.0,
        };
        let c2 = ScalarSum {
            terms: vec![(Scalar::Linear, AffineForm::new(vec![(0, -1.0)], 0.0))],
            offset: 0.0,
        };
        let refs: Vec<&dyn ConstraintFn> = vec![&c1, &c2];
        assert!(matches!(phase1(&refs, &[5.0], &params()), Err(Error::Infeasible(_))));
    }
}
