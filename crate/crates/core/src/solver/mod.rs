//! The convexified completion-time minimization: change of variables,
//! smooth constraint rows with analytic derivatives, and the log-barrier
//! Newton solve; plus a grid brute-force oracle.

pub(crate) mod barrier;

use serde::{Deserialize, Serialize};

use crate::costs::{epigraph_reform, eval_cost, CostSpec, EpigraphObjective};
use crate::error::{Error, Result};
use crate::model::{sinr, LinkState, NetworkInstance, PowerAllocation};
use crate::numeric::{ct_bound as ct_bound_derivs, logsumexp};
use crate::par;

use barrier::{AffineForm, BarrierParams, ConstraintFn, LogSumExp, Objective, PNormBlock, Scalar, ScalarSum};

/// A point in the transformed variable space.
#[derive(Debug, Clone)]
pub struct TransformedPoint {
    /// Natural-log SINR targets.
    pub stilde: Vec<f64>,
    /// Natural-log powers.
    pub ptilde: Vec<f64>,
    pub t: Vec<f64>,
    pub aux: Vec<f64>,
}

/// `h(x) = 1 / log2(1 + e^x)` with analytic first and second derivatives.
pub fn ct_bound(x: f64) -> (f64, f64, f64) {
    ct_bound_derivs(x)
}

/// The transformed SINR feasibility row for user `i`:
/// `ln{ exp(S~_i - P~_i - ln G_ii + ln N_i)
///     + sum_{j!=i} exp(S~_i - P~_i + P~_j - ln G_ii + ln G_ij) }`,
/// feasible iff `<= 0`. Evaluated max-shifted.
pub fn feasibility_residual(i: usize, x: &TransformedPoint, inst: &NetworkInstance) -> Result<f64> {
    let m = inst.users();
    if i >= m {
        return Err(Error::invalid(format!("user index {i} out of range for M={m}")));
    }
    if x.stilde.len() != m || x.ptilde.len() != m {
        return Err(Error::Dimension {
            context: "transformed point",
            expected: m,
            got: x.stilde.len().min(x.ptilde.len()),
        });
    }
    let gii = inst.gain(i, i);
    if !(gii > 0.0) {
        return Err(Error::invalid(format!("G[{i}][{i}] must be > 0")));
    }
    let base = x.stilde[i] - x.ptilde[i] - gii.ln();
    let mut terms = vec![base + inst.noise()[i].ln()];
    for j in 0..m {
        if j != i && inst.gain(i, j) > 0.0 {
            terms.push(base + x.ptilde[j] + inst.gain(i, j).ln());
        }
    }
    Ok(logsumexp(&terms))
}

/// Barrier schedule and solver knobs, all with documented defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Initial barrier parameter.
    pub t_init: f64,
    /// Barrier multiplier between outer stages.
    pub mu: f64,
    /// Inner Newton tolerance on the decrement.
    pub newton_tol: f64,
    /// Outer stop when (number of constraints)/t falls below this.
    pub gap_tol: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    /// Strict-feasibility margin used by the initializer.
    pub feas_margin: f64,
    /// Internal completion-time ceiling, as a multiple of the worst
    /// full-power completion time. Keeps the barrier bounded when a
    /// user carries zero cost weight.
    pub t_ceiling_factor: f64,
    /// Lower clamp on powers, as a fraction of Pmax.
    pub power_floor_factor: f64,
    /// Cap on the fading state count accepted by the joint solves.
    pub max_states: usize,
    /// Sample count for the SAA robust path.
    pub saa_samples: usize,
    /// Initial smoothing temperature for the SAA outage indicator.
    pub saa_temperature: f64,
    /// Number of temperature-halving rounds in the SAA solve.
    pub saa_anneal_rounds: usize,
    /// Seed for the common random numbers frozen per robust solve.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            t_init: 1.0,
            mu: 20.0,
            newton_tol: 1e-10,
            gap_tol: 1e-8,
            max_outer: 60,
            max_newton: 1000,
            feas_margin: 0.1,
            t_ceiling_factor: 1e6,
            power_floor_factor: 1e-12,
            max_states: 64,
            saa_samples: 100_000,
            saa_temperature: 0.05,
            saa_anneal_rounds: 3,
            seed: 0,
        }
    }
}

impl SolveOptions {
    pub(crate) fn barrier_params(&self) -> BarrierParams {
        BarrierParams {
            t_init: self.t_init,
            mu: self.mu,
            newton_tol: self.newton_tol,
            gap_tol: self.gap_tol,
            max_outer: self.max_outer,
            max_newton: self.max_newton,
        }
    }
}

/// Solver certificate: residuals and iteration counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    /// Max constraint value at the solver point (feasible iff <= 0).
    pub max_violation: f64,
    /// Suboptimality proxy m/t at the final barrier stage.
    pub gap: f64,
    pub outer_iters: usize,
    pub newton_iters: usize,
    /// Users whose power hit the lower clamp.
    pub clamped_power: Vec<usize>,
}

/// An optimal power allocation with the induced link state and cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub p: Vec<f64>,
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    pub time: Vec<f64>,
    pub cost: f64,
    pub certificate: Certificate,
}

impl Solution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Incremental program assembly shared by the perfect-CSI, fading, and
/// robust solves. Tracks variable count, initial values, constraint rows,
/// and the objective.
pub(crate) struct ProgramBuilder {
    pub init: Vec<f64>,
    pub constraints: Vec<Box<dyn ConstraintFn>>,
    linear_obj: Vec<(usize, f64)>,
    pnorm_blocks: Vec<PNormBlock>,
    /// Variable/constraint counts before the first `attach_cost` call.
    /// Phase-I runs over this prefix only: epigraph rows are always
    /// satisfiable by pushing the auxiliaries up, which would make the
    /// phase-I barrier unbounded if they were included.
    core: Option<(usize, usize)>,
    /// Re-initializers for epigraph auxiliaries after phase-I moves the
    /// core variables.
    aux_reinit: Vec<Box<dyn Fn(&mut [f64]) + Send + Sync>>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self {
            init: vec![],
            constraints: vec![],
            linear_obj: vec![],
            pnorm_blocks: vec![],
            core: None,
            aux_reinit: vec![],
        }
    }

    pub fn add_var(&mut self, init: f64) -> usize {
        self.init.push(init);
        self.init.len() - 1
    }

    pub fn n(&self) -> usize {
        self.init.len()
    }

    /// `affine <= 0`
    pub fn add_linear_le(&mut self, coeffs: Vec<(usize, f64)>, offset: f64) {
        self.constraints.push(Box::new(ScalarSum {
            terms: vec![(Scalar::Linear, AffineForm::new(coeffs, offset))],
            offset: 0.0,
        }));
    }

    /// `l * h(z[s_idx]) - z[t_idx] <= 0`
    pub fn add_ct_bound(&mut self, t_idx: usize, s_idx: usize, l: f64) {
        self.constraints.push(Box::new(ScalarSum {
            terms: vec![
                (Scalar::CtBound { l }, AffineForm::var(s_idx)),
                (Scalar::Linear, AffineForm::new(vec![(t_idx, -1.0)], 0.0)),
            ],
            offset: 0.0,
        }));
    }

    pub fn add_lse(&mut self, terms: Vec<AffineForm>) {
        self.constraints.push(Box::new(LogSumExp { terms }));
    }

    pub fn add_constraint(&mut self, c: Box<dyn ConstraintFn>) {
        self.constraints.push(c);
    }

    pub fn add_objective_term(&mut self, idx: usize, coeff: f64) {
        self.linear_obj.push((idx, coeff));
    }

    /// Attaches the cost `spec` over "virtual" completion times given as
    /// affine forms of existing variables, scaled by `weight`. Appends
    /// any epigraph auxiliaries with strictly feasible initial values.
    pub fn attach_cost(&mut self, spec: &CostSpec, users: usize, virtual_t: &[AffineForm], weight: f64) -> Result<()> {
        if self.core.is_none() {
            self.core = Some((self.n(), self.constraints.len()));
        }
        let ep = epigraph_reform(spec, users)?;
        let vt_init: Vec<f64> = virtual_t.iter().map(|a| a.eval(&self.init)).collect();
        let vt_max = vt_init.iter().cloned().fold(0.0, f64::max);

        match &ep.objective {
            EpigraphObjective::Linear { t_coeffs, aux_coeffs } => {
                let aux_base = self.n();
                for k in 0..ep.naux {
                    // t0-style auxiliaries start above every virtual T;
                    // u-style ones start at a positive margin.
                    let init = if k == 0 { vt_max + 1.0 } else { 1.0 };
                    self.add_var(init);
                }
                if ep.naux > 0 {
                    let vts = virtual_t.to_vec();
                    let naux = ep.naux;
                    self.aux_reinit.push(Box::new(move |z: &mut [f64]| {
                        let vmax = vts.iter().map(|a| a.eval(z)).fold(0.0, f64::max);
                        z[aux_base] = vmax + 1.0;
                        for k in 1..naux {
                            z[aux_base + k] = 1.0;
                        }
                    }));
                }
                for (i, &c) in t_coeffs.iter().enumerate() {
                    if c != 0.0 {
                        for &(idx, a) in &virtual_t[i].coeffs {
                            self.add_objective_term(idx, weight * c * a);
                        }
                    }
                }
                for (k, &d) in aux_coeffs.iter().enumerate() {
                    if d != 0.0 {
                        self.add_objective_term(aux_base + k, weight * d);
                    }
                }
                for row in &ep.constraints {
                    let mut coeffs: Vec<(usize, f64)> = vec![];
                    let mut offset = -row.rhs;
                    for &(i, c) in &row.t_coeffs {
                        for &(idx, a) in &virtual_t[i].coeffs {
                            coeffs.push((idx, c * a));
                        }
                        offset += c * virtual_t[i].offset;
                    }
                    for &(k, d) in &row.aux_coeffs {
                        coeffs.push((aux_base + k, d));
                    }
                    self.add_linear_le(coeffs, offset);
                }
            }
            EpigraphObjective::PNorm { p } => {
                let simple: Option<Vec<usize>> = virtual_t
                    .iter()
                    .map(|a| match (a.coeffs.as_slice(), a.offset) {
                        ([(i, c)], 0.0) if *c == 1.0 => Some(*i),
                        _ => None,
                    })
                    .collect();
                let idxs = match simple {
                    Some(idxs) => idxs,
                    None => {
                        // Introduce e_i >= virtual_t_i; exact since the
                        // p-norm is nondecreasing on the positive orthant.
                        let mut idxs = vec![];
                        for (i, vt) in virtual_t.iter().enumerate() {
                            let e = self.add_var(vt_init[i] + 1.0);
                            let mut coeffs = vt.coeffs.clone();
                            coeffs.push((e, -1.0));
                            self.add_linear_le(coeffs, vt.offset);
                            idxs.push(e);
                        }
                        let vts = virtual_t.to_vec();
                        let es = idxs.clone();
                        self.aux_reinit.push(Box::new(move |z: &mut [f64]| {
                            for (vt, &e) in vts.iter().zip(&es) {
                                z[e] = vt.eval(z) + 1.0;
                            }
                        }));
                        idxs
                    }
                };
                self.pnorm_blocks.push(PNormBlock { weight, p: *p, idxs });
            }
        }
        Ok(())
    }

    pub fn build_objective(&self) -> Objective {
        let mut linear = vec![0.0; self.n()];
        for &(i, c) in &self.linear_obj {
            linear[i] += c;
        }
        Objective {
            linear,
            pnorm: self.pnorm_blocks.iter().map(|b| PNormBlock { weight: b.weight, p: b.p, idxs: b.idxs.clone() }).collect(),
        }
    }

    /// Runs phase-I (if needed) and the barrier method. Phase-I searches
    /// over the core (pre-epigraph) variables and constraints only, then
    /// re-initializes the epigraph auxiliaries from the feasible point.
    pub fn solve(&self, opts: &SolveOptions) -> Result<barrier::BarrierResult> {
        let objective = self.build_objective();
        let refs: Vec<&dyn ConstraintFn> = self.constraints.iter().map(|c| c.as_ref()).collect();
        let params = opts.barrier_params();
        let mv = refs.iter().map(|c| c.value(&self.init)).fold(f64::NEG_INFINITY, f64::max);
        let z0 = if mv < 0.0 {
            self.init.clone()
        } else {
            let (nvars, ncons) = self.core.unwrap_or((self.n(), self.constraints.len()));
            let core = barrier::phase1(&refs[..ncons], &self.init[..nvars], &params)?;
            let mut z = self.init.clone();
            z[..nvars].copy_from_slice(&core);
            for f in &self.aux_reinit {
                f(&mut z);
            }
            let mv = refs.iter().map(|c| c.value(&z)).fold(f64::NEG_INFINITY, f64::max);
            if !(mv < 0.0) {
                return Err(Error::Infeasible(format!(
                    "post-phase-I point not strictly feasible (max constraint value {mv:.3e})"
                )));
            }
            z
        };
        barrier::minimize(&objective, &refs, z0, &params)
    }
}

/// Variable layout of the perfect-CSI program: `[T | S~ | P~ | aux]`.
pub(crate) struct CsiLayout {
    pub m: usize,
}

impl CsiLayout {
    pub fn t(&self, i: usize) -> usize {
        i
    }
    pub fn s(&self, i: usize) -> usize {
        self.m + i
    }
    pub fn p(&self, i: usize) -> usize {
        2 * self.m + i
    }
}

/// Adds the physics rows (ct bound, SINR feasibility, power box,
/// optional time caps and the internal ceiling) for one gain matrix.
/// Index accessors allow reuse across fading states.
pub(crate) fn add_physics_rows(
    b: &mut ProgramBuilder,
    inst: &NetworkInstance,
    t_idx: &dyn Fn(usize) -> usize,
    s_idx: &dyn Fn(usize) -> usize,
    p_idx: &dyn Fn(usize) -> usize,
    opts: &SolveOptions,
    per_state_power_cap: bool,
) {
    let m = inst.users();
    let t_ceiling = ceiling(inst, opts);
    for i in 0..m {
        b.add_ct_bound(t_idx(i), s_idx(i), inst.packet_bits()[i]);
        let gii = inst.gain(i, i);
        let mut terms = vec![AffineForm::new(
            vec![(s_idx(i), 1.0), (p_idx(i), -1.0)],
            inst.noise()[i].ln() - gii.ln(),
        )];
        for j in 0..m {
            if j != i && inst.gain(i, j) > 0.0 {
                terms.push(AffineForm::new(
                    vec![(s_idx(i), 1.0), (p_idx(i), -1.0), (p_idx(j), 1.0)],
                    inst.gain(i, j).ln() - gii.ln(),
                ));
            }
        }
        b.add_lse(terms);
        if per_state_power_cap {
            b.add_linear_le(vec![(p_idx(i), 1.0)], -inst.pmax()[i].ln());
        }
        let floor = (opts.power_floor_factor * inst.pmax()[i]).ln();
        b.add_linear_le(vec![(p_idx(i), -1.0)], floor);
        b.add_linear_le(vec![(t_idx(i), 1.0)], -t_ceiling);
        if let Some(tmax) = inst.tmax() {
            b.add_linear_le(vec![(t_idx(i), 1.0)], -tmax[i]);
        }
    }
}

fn ceiling(inst: &NetworkInstance, opts: &SolveOptions) -> f64 {
    // Worst-case completion time at full power, all interferers on.
    let p = PowerAllocation::new(inst.pmax().to_vec());
    let ls = LinkState::evaluate(inst, &p).expect("full power is always valid");
    let worst = ls.time.iter().cloned().fold(1.0, f64::max);
    opts.t_ceiling_factor * worst
}

/// Strictly feasible initializer: half power, SINR targets a margin below
/// their equality values, times a margin above their bounds.
pub(crate) fn feasible_init(inst: &NetworkInstance, opts: &SolveOptions) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = inst.users();
    let delta = opts.feas_margin;
    let p0: Vec<f64> = inst.pmax().iter().map(|&x| x / 2.0).collect();
    let s0 = sinr(inst, &PowerAllocation::new(p0.clone())).expect("init power valid");
    let stilde: Vec<f64> = s0.iter().map(|&s| s.ln() - delta).collect();
    let t0: Vec<f64> = (0..m)
        .map(|i| inst.packet_bits()[i] * ct_bound_derivs(stilde[i]).0 * (1.0 + delta))
        .collect();
    let ptilde: Vec<f64> = p0.iter().map(|&x| x.ln()).collect();
    (t0, stilde, ptilde)
}

/// Solves the convexified completion-time minimization under perfect CSI.
pub fn solve_perfect_csi(inst: &NetworkInstance, spec: &CostSpec, opts: &SolveOptions) -> Result<Solution> {
    let m = inst.users();
    spec.validate(m)?;
    let layout = CsiLayout { m };

    let mut b = ProgramBuilder::new();
    let (t0, s0, p0) = feasible_init(inst, opts);
    for v in t0.iter().chain(&s0).chain(&p0) {
        b.add_var(*v);
    }
    add_physics_rows(
        &mut b,
        inst,
        &|i| layout.t(i),
        &|i| layout.s(i),
        &|i| layout.p(i),
        opts,
        true,
    );
    let virtual_t: Vec<AffineForm> = (0..m).map(|i| AffineForm::var(layout.t(i))).collect();
    b.attach_cost(spec, m, &virtual_t, 1.0)?;

    let res = b.solve(opts)?;
    extract_solution(inst, spec, opts, &res, &layout)
}

fn extract_solution(
    inst: &NetworkInstance,
    spec: &CostSpec,
    opts: &SolveOptions,
    res: &barrier::BarrierResult,
    layout: &CsiLayout,
) -> Result<Solution> {
    let m = inst.users();
    let p: Vec<f64> = (0..m).map(|i| res.z[layout.p(i)].exp().min(inst.pmax()[i])).collect();
    let clamped: Vec<usize> = (0..m)
        .filter(|&i| res.z[layout.p(i)] <= (opts.power_floor_factor * inst.pmax()[i]).ln() + 1e-6)
        .collect();
    // Report the solution through the physics chain: SINR at equality,
    // so no transmitted power is wasted.
    let ls = LinkState::evaluate(inst, &PowerAllocation::new(p.clone()))?;
    let cost = eval_cost(spec, &ls.time);
    Ok(Solution {
        p,
        sinr: ls.sinr,
        rate: ls.rate,
        time: ls.time,
        cost,
        certificate: Certificate {
            max_violation: res.max_violation,
            gap: res.gap,
            outer_iters: res.outer_iters,
            newton_iters: res.newton_iters,
            clamped_power: clamped,
        },
    })
}

/// Best point found by exhaustive evaluation on a per-user logarithmic
/// power grid, SINR taken at its equality value.
#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub p: Vec<f64>,
    pub time: Vec<f64>,
    pub cost: f64,
}

/// Decades spanned by the oracle grid below each Pmax endpoint.
pub const ORACLE_GRID_DECADES: f64 = 2.0;

/// Exhaustive grid oracle. Grids nest under doubling of
/// `grid_points_per_dim`; the Pmax endpoint is always included.
/// Intended for M <= 3.
pub fn brute_force_oracle(inst: &NetworkInstance, spec: &CostSpec, grid_points_per_dim: usize) -> OracleResult {
    let m = inst.users();
    let n = grid_points_per_dim.max(1);
    let grids: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..n)
                .map(|k| inst.pmax()[i] * 10f64.powf(-ORACLE_GRID_DECADES * k as f64 / n as f64))
                .collect()
        })
        .collect();

    let combos = n.pow((m - 1) as u32);
    let per_first = par::map_indexed(n, |k0| {
        let mut best_cost = f64::INFINITY;
        let mut best_p = vec![0.0; m];
        let mut best_t = vec![0.0; m];
        let mut p = vec![0.0; m];
        p[0] = grids[0][k0];
        for combo in 0..combos {
            let mut rem = combo;
            for (i, pi) in p.iter_mut().enumerate().skip(1) {
                *pi = grids[i][rem % n];
                rem /= n;
            }
            let alloc = PowerAllocation::new(p.clone());
            let s = sinr(inst, &alloc).expect("grid power valid");
            let t: Vec<f64> = (0..m)
                .map(|i| inst.packet_bits()[i] / (1.0 + s[i]).log2())
                .collect();
            let feasible = match inst.tmax() {
                Some(tm) => t.iter().zip(tm).all(|(ti, tmi)| ti <= tmi),
                None => true,
            };
            if feasible {
                let c = eval_cost(spec, &t);
                if c < best_cost {
                    best_cost = c;
                    best_p.copy_from_slice(&p);
                    best_t.copy_from_slice(&t);
                }
            }
        }
        (best_cost, best_p, best_t)
    });

    let mut best = (f64::INFINITY, vec![0.0; m], vec![0.0; m]);
    for cand in per_first {
        if cand.0 < best.0 {
            best = cand;
        }
    }
    OracleResult { p: best.1, time: best.2, cost: best.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::reference_instance;
    use approx::assert_relative_eq;

    fn opts() -> SolveOptions {
        SolveOptions::default()
    }

    #[test]
    fn feasibility_residual_single_user_boundary() {
        let inst = NetworkInstance::new(vec![vec![1.0]], vec![1.0], vec![1.0], vec![10.0], None).unwrap();
        let x = TransformedPoint {
            stilde: vec![0.0],
            ptilde: vec![0.0],
            t: vec![10.0],
            aux: vec![],
        };
        let r = feasibility_residual(0, &x, &inst).unwrap();
        assert_relative_eq!(r, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn feasibility_residual_reference_instance_at_equality() {
        let inst = reference_instance();
        let s = sinr(&inst, &PowerAllocation::new(vec![1.0, 1.0])).unwrap();
        let x = TransformedPoint {
            stilde: s.iter().map(|v| v.ln()).collect(),
            ptilde: vec![0.0, 0.0],
            t: vec![0.0, 0.0],
            aux: vec![],
        };
        for i in 0..2 {
            let r = feasibility_residual(i, &x, &inst).unwrap();
            assert_relative_eq!(r, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn feasibility_residual_decreasing_in_stilde() {
        let inst = reference_instance();
        let s = sinr(&inst, &PowerAllocation::new(vec![0.5, 0.5])).unwrap();
        let mut x = TransformedPoint {
            stilde: s.iter().map(|v| v.ln()).collect(),
            ptilde: vec![0.5f64.ln(), 0.5f64.ln()],
            t: vec![],
            aux: vec![],
        };
        let r0 = feasibility_residual(0, &x, &inst).unwrap();
        x.stilde[0] -= 0.3;
        let r1 = feasibility_residual(0, &x, &inst).unwrap();
        assert!(r1 < r0);
    }

    #[test]
    fn single_user_full_power() {
        let inst = NetworkInstance::new(vec![vec![1.0]], vec![1.0], vec![1.0], vec![10.0], None).unwrap();
        for spec in [CostSpec::Max, CostSpec::WeightedSum { w: vec![1.0] }, CostSpec::PNorm { p: 2.0 }] {
            let sol = solve_perfect_csi(&inst, &spec, &opts()).unwrap();
            assert_relative_eq!(sol.p[0], 1.0, max_relative = 1e-6);
            assert_relative_eq!(sol.time[0], 10.0, max_relative = 1e-6);
        }
    }

    #[test]
    fn reference_instance_matches_oracle() {
        let inst = reference_instance();
        let spec = CostSpec::WeightedSum { w: vec![0.5, 0.5] };
        let sol = solve_perfect_csi(&inst, &spec, &opts()).unwrap();
        let oracle = brute_force_oracle(&inst, &spec, 200);
        let gap = (oracle.cost - sol.cost).abs() / oracle.cost;
        assert!(gap <= 1e-3, "solver {} vs oracle {} (gap {gap})", sol.cost, oracle.cost);
        // Oracle is an upper bound on the optimum.
        assert!(oracle.cost >= sol.cost - 1e-6 * sol.cost);
    }

    #[test]
    fn symmetric_instance_max_cost_symmetric_solution() {
        let inst = NetworkInstance::new(
            vec![vec![1.0, 0.3], vec![0.3, 1.0]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![10.0, 10.0],
            None,
        )
        .unwrap();
        let sol = solve_perfect_csi(&inst, &CostSpec::Max, &opts()).unwrap();
        assert_relative_eq!(sol.time[0], sol.time[1], max_relative = 1e-6);
    }

    #[test]
    fn oracle_grid_one_is_full_power() {
        let inst = NetworkInstance::new(vec![vec![1.0]], vec![1.0], vec![1.0], vec![10.0], None).unwrap();
        let o = brute_force_oracle(&inst, &CostSpec::Max, 1);
        assert_relative_eq!(o.p[0], 1.0);
        let sol = solve_perfect_csi(&inst, &CostSpec::Max, &opts()).unwrap();
        assert_relative_eq!(o.cost, sol.cost, max_relative = 1e-6);
    }

    #[test]
    fn oracle_refinement_nonincreasing() {
        let inst = reference_instance();
        let spec = CostSpec::Max;
        let c50 = brute_force_oracle(&inst, &spec, 50).cost;
        let c100 = brute_force_oracle(&inst, &spec, 100).cost;
        let c200 = brute_force_oracle(&inst, &spec, 200).cost;
        assert!(c100 <= c50 + 1e-12);
        assert!(c200 <= c100 + 1e-12);
    }

    #[test]
    fn pmax_scaling_never_increases_cost() {
        let inst = reference_instance();
        let spec = CostSpec::WeightedSum { w: vec![0.5, 0.5] };
        let base = solve_perfect_csi(&inst, &spec, &opts()).unwrap().cost;
        for c in [1.5, 2.0, 4.0] {
            let scaled = NetworkInstance::new(
                inst.gains().to_vec(),
                inst.noise().to_vec(),
                inst.pmax().iter().map(|&x| c * x).collect(),
                inst.packet_bits().to_vec(),
                None,
            )
            .unwrap();
            let cost = solve_perfect_csi(&scaled, &spec, &opts()).unwrap().cost;
            assert!(cost <= base * (1.0 + 1e-6), "c={c}: {cost} > {base}");
        }
    }

    #[test]
    fn determinism() {
        let inst = reference_instance();
        let spec = CostSpec::Max;
        let a = solve_perfect_csi(&inst, &spec, &opts()).unwrap();
        let b = solve_perfect_csi(&inst, &spec, &opts()).unwrap();
        assert_eq!(a.p, b.p);
        assert_eq!(a.cost, b.cost);
        assert_eq!(a.certificate.newton_iters, b.certificate.newton_iters);
    }

    #[test]
    fn transform_soundness() {
        // The reported powers satisfy the original-variable constraints.
        let inst = reference_instance();
        let sol = solve_perfect_csi(&inst, &CostSpec::Max, &opts()).unwrap();
        for i in 0..2 {
            assert!(sol.p[i] <= inst.pmax()[i] * (1.0 + 1e-9));
            assert!(sol.p[i] > 0.0);
            assert_relative_eq!(sol.rate[i], (1.0 + sol.sinr[i]).log2(), max_relative = 1e-9);
            assert_relative_eq!(sol.time[i] * sol.rate[i], inst.packet_bits()[i], max_relative = 1e-9);
        }
    }

    #[test]
    fn tmax_infeasible_instance_diagnosed() {
        // Feasible per-user at zero interference, but the cross gains are
        // so strong that both caps cannot hold at once.
        let inst = NetworkInstance::new(
            vec![vec![1.0, 50.0], vec![50.0, 1.0]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![10.0, 10.0],
            Some(vec![10.5, 10.5]),
        )
        .unwrap();
        let res = solve_perfect_csi(&inst, &CostSpec::Max, &opts());
        assert!(matches!(res, Err(Error::Infeasible(_))), "expected infeasible, got {res:?}");
    }

    #[test]
    fn tight_tmax_triggers_phase1_then_solves() {
        // Caps are tight but achievable (weak coupling).
        let inst = NetworkInstance::new(
            vec![vec![1.0, 0.01], vec![0.01, 1.0]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![10.0, 10.0],
            Some(vec![10.5, 10.5]),
        )
        .unwrap();
        let sol = solve_perfect_csi(&inst, &CostSpec::Max, &opts()).unwrap();
        assert!(sol.time[0] <= 10.5 && sol.time[1] <= 10.5);
    }
}
