//! Self-contained verification suite: each check pits a solver output
//! against an independent oracle (finite differences, grid search,
//! scalar bisection, closed forms, Monte Carlo) and reports pass/fail.
//! The `verify` CLI command and the acceptance test target both run
//! these.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::costs::{eval_cost, harmonic_mean_utility, utility_from_cost, CostSpec};
use crate::error::Result;
use crate::fading::{solve_adaptive_avg, solve_adaptive_expected_cost, solve_short_term_decomposed, FadingStates, GainState, PowerMode};
use crate::model::{NetworkInstance, PowerAllocation};
use crate::region::{convexity_audit, trace_completion_region, PointKind};
use crate::robust::{
    log_concavity_probe, reliability_mc, reliability_rayleigh_closed, solve_robust, ChannelDistribution, Marginal,
    OutageSpec, RobustInstance,
};
use crate::solver::{brute_force_oracle, ct_bound, solve_perfect_csi, SolveOptions};

/// Outcome of one verification check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        CheckReport { name, pass, detail }
    }

    /// The single status line printed per check.
    pub fn line(&self) -> String {
        format!("{}: {} — {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn reference_instance(tmax: bool) -> NetworkInstance {
    NetworkInstance::new(
        vec![vec![0.42, 0.89], vec![0.63, 0.15]],
        vec![1.0, 1.0],
        vec![1.0, 1.0],
        vec![10.0, 10.0],
        if tmax { Some(vec![1000.0, 1000.0]) } else { None },
    )
    .expect("reference instance is valid")
}

fn random_gains(rng: &mut ChaCha8Rng, m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..m).map(|_| rng.gen_range(0.05..1.0)).collect())
        .collect()
}

/// Criterion 1: a K=65 boundary sweep of the reference 2-user instance
/// finishes in under 60 s; the completion-time trace audits convex
/// (worst relative violation <= 1e-7) while the mapped rate trace yields
/// a non-convexity witness chord.
pub fn criterion_1_region_figures() -> Result<CheckReport> {
    let inst = reference_instance(true);
    let start = Instant::now();
    let trace = trace_completion_region(&inst, 65, &SolveOptions::default())?;
    let elapsed = start.elapsed().as_secs_f64();
    let t_audit = convexity_audit(&trace.t_points(), PointKind::CompletionTime)?;
    let r_audit = convexity_audit(&trace.r_points(), PointKind::Rate)?;
    let pass = elapsed < 60.0
        && trace.failures.is_empty()
        && trace.entries.len() == 65
        && t_audit.convex
        && t_audit.worst_violation <= 1e-7
        && !r_audit.convex
        && r_audit.witness.is_some();
    Ok(CheckReport::new(
        "region figure reproduction (K=65 sweep)",
        pass,
        format!(
            "{:.1} s, {} points, T-trace convex={} (worst {:.2e}), R-trace witness={}",
            elapsed,
            trace.entries.len(),
            t_audit.convex,
            t_audit.worst_violation,
            r_audit.witness.is_some()
        ),
    ))
}

/// Criterion 2: barrier solver vs a 200-points-per-dimension log-grid
/// brute-force search, relative cost gap <= 1e-3, each solve under 1 s,
/// on 20 random 2-user and 5 random 3-user instances.
pub fn criterion_2_oracle_equivalence() -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = SolveOptions::default();
    let mut worst_gap: f64 = 0.0;
    let mut worst_time: f64 = 0.0;
    let cases: Vec<usize> = std::iter::repeat(2).take(20).chain(std::iter::repeat(3).take(5)).collect();
    for (c, m) in cases.into_iter().enumerate() {
        let inst = NetworkInstance::new(random_gains(&mut rng, m), vec![1.0; m], vec![1.0; m], vec![10.0; m], None)?;
        let start = Instant::now();
        let sol = solve_perfect_csi(&inst, &CostSpec::Max, &opts)?;
        let solve_time = start.elapsed().as_secs_f64();
        let oracle = brute_force_oracle(&inst, &CostSpec::Max, 200);
        // The solver's cost is achievable (recomputed from a feasible
        // power vector), so beating the discretized oracle is fine; only
        // falling short of it counts against the solver.
        let gap = (sol.cost - oracle.cost).max(0.0) / oracle.cost;
        worst_gap = worst_gap.max(gap);
        worst_time = worst_time.max(solve_time);
        if gap > 1e-3 || solve_time >= 1.0 {
            return Ok(CheckReport::new(
                "solver vs brute-force grid oracle",
                false,
                format!("case {c} (M={m}): gap {gap:.2e}, solve time {solve_time:.3} s"),
            ));
        }
    }
    Ok(CheckReport::new(
        "solver vs brute-force grid oracle",
        true,
        format!("25 instances, worst gap {worst_gap:.2e} (<= 1e-3), worst solve {worst_time:.3} s (< 1 s)"),
    ))
}

/// Criterion 3: analytic first and second derivatives of the
/// completion-time bound match central finite differences to 1e-6
/// relative on 41 grid points of [-10, 10], and the displayed
/// second-derivative expression is positive at every grid point.
pub fn criterion_3_derivatives() -> Result<CheckReport> {
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..41 {
        let x = -10.0 + 20.0 * k as f64 / 40.0;
        let (h0, h1, h2) = ct_bound(x);
        let (hp, hp1, _) = ct_bound(x + step);
        let (hm, hm1, _) = ct_bound(x - step);
        let fd1 = (hp - hm) / (2.0 * step);
        let fd2 = (hp1 - hm1) / (2.0 * step);
        worst = worst.max((h1 - fd1).abs() / h1.abs().max(1e-12));
        worst = worst.max((h2 - fd2).abs() / h2.abs().max(1e-12));
        // Displayed closed form: ln2 * e^x * (2 e^x - ln(1+e^x)) /
        // ((1+e^x)^2 * ln(1+e^x)^3), evaluated literally.
        let _ = h0;
        let ex = x.exp();
        let s = (1.0 + ex).ln();
        let displayed = std::f64::consts::LN_2 * ex * (2.0 * ex - s) / ((1.0 + ex) * (1.0 + ex) * s * s * s);
        if !(displayed > 0.0) || (displayed - h2).abs() / h2 > 1e-9 {
            return Ok(CheckReport::new(
                "completion-time bound derivatives",
                false,
                format!("x={x}: displayed h'' = {displayed:.3e} vs analytic {h2:.3e}"),
            ));
        }
    }
    Ok(CheckReport::new(
        "completion-time bound derivatives",
        worst <= 1e-6,
        format!("worst finite-difference relative error {worst:.2e} (<= 1e-6); h'' > 0 at all 41 points"),
    ))
}

/// Criterion 4: closed-form Rayleigh reliability vs 10^6-sample Monte
/// Carlo within 3 standard errors on 20 random configurations with
/// M in {1, 2, 3}.
pub fn criterion_4_rayleigh_mc() -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_sigmas: f64 = 0.0;
    for c in 0..20 {
        let m = 1 + c % 3;
        let means: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..m).map(|_| rng.gen_range(0.2..2.0)).collect())
            .collect();
        let dist = ChannelDistribution {
            entries: means
                .iter()
                .map(|row| row.iter().map(|&mean| Marginal::Rayleigh { mean }).collect())
                .collect(),
        };
        let p = PowerAllocation::new((0..m).map(|_| rng.gen_range(0.1..1.0)).collect());
        let noise = vec![1.0; m];
        let i = rng.gen_range(0..m);
        let s_target = rng.gen_range(0.2..1.5);
        let exact = reliability_rayleigh_closed(i, s_target, &p, &means, &noise)?;
        let est = reliability_mc(i, s_target, &p, &dist, &noise, 1_000_000, 400 + c as u64)?;
        let sigmas = (est.value - exact).abs() / est.std_error.max(1e-12);
        worst_sigmas = worst_sigmas.max(sigmas);
        if sigmas > 3.0 {
            return Ok(CheckReport::new(
                "Rayleigh closed form vs Monte Carlo",
                false,
                format!("config {c} (M={m}): |MC - closed| = {sigmas:.2} standard errors"),
            ));
        }
    }
    Ok(CheckReport::new(
        "Rayleigh closed form vs Monte Carlo",
        true,
        format!("20 configs, n=10^6 each, worst deviation {worst_sigmas:.2} standard errors (<= 3)"),
    ))
}

/// Criterion 5: the transformed-density log-concavity probe passes
/// (violation <= 1e-9) for Rayleigh, Nakagami m in {0.5, 1, 4}, and
/// log-normal sigma in {0.5, 1}, 10^4 midpoint trials each.
pub fn criterion_5_log_concavity() -> Result<CheckReport> {
    let families = vec![
        ("rayleigh", Marginal::Rayleigh { mean: 1.0 }),
        ("nakagami m=0.5", Marginal::Nakagami { m: 0.5, mean: 1.0 }),
        ("nakagami m=1", Marginal::Nakagami { m: 1.0, mean: 1.0 }),
        ("nakagami m=4", Marginal::Nakagami { m: 4.0, mean: 1.0 }),
        ("lognormal s=0.5", Marginal::Lognormal { mu: 0.0, sigma: 0.5 }),
        ("lognormal s=1", Marginal::Lognormal { mu: 0.0, sigma: 1.0 }),
    ];
    let mut worst: f64 = f64::NEG_INFINITY;
    for (label, f) in families {
        let dist = ChannelDistribution {
            entries: vec![vec![f.clone(), f.clone()], vec![f.clone(), f]],
        };
        let rep = log_concavity_probe(&dist, 0, 10_000, 5)?;
        worst = worst.max(rep.worst_violation);
        if !rep.pass {
            return Ok(CheckReport::new(
                "log-concavity hypothesis probes",
                false,
                format!("{label}: violation {:.2e} > 1e-9", rep.worst_violation),
            ));
        }
    }
    Ok(CheckReport::new(
        "log-concavity hypothesis probes",
        true,
        format!("6 families x 10^4 trials, worst midpoint defect {worst:.2e} (<= 1e-9)"),
    ))
}

/// Criterion 6: single-user Rayleigh robust solve with q = 0.1 recovers
/// S* = ln(10/9) and T* = 10/log2(1+ln(10/9)) to 1e-6 relative; the
/// oracle values are themselves recomputed by scalar bisection.
pub fn criterion_6_robust_analytic() -> Result<CheckReport> {
    let inst = RobustInstance {
        noise: vec![1.0],
        pmax: vec![1.0],
        packet_bits: vec![10.0],
        tmax: None,
    };
    let dist = ChannelDistribution {
        entries: vec![vec![Marginal::Rayleigh { mean: 1.0 }]],
    };
    let sol = solve_robust(&inst, &dist, &OutageSpec { q: vec![0.1] }, &CostSpec::Max, &SolveOptions::default())?;
    // Independent oracle: at P = Pmax = 1 the reliability is exp(-S), so
    // bisect exp(-S) = 0.9 rather than trusting ln(10/9) algebra.
    let (mut lo, mut hi) = (0.0f64, 10.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (-mid).exp() >= 0.9 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s_star = lo;
    let t_star = 10.0 / (1.0 + s_star).log2();
    let es = (sol.sinr_target[0] - s_star).abs() / s_star;
    let et = (sol.time[0] - t_star).abs() / t_star;
    Ok(CheckReport::new(
        "robust single-user analytic check",
        es <= 1e-6 && et <= 1e-6,
        format!("S* rel err {es:.2e}, T* rel err {et:.2e} (<= 1e-6); bisection oracle S*={s_star:.9}"),
    ))
}

fn random_fading(rng: &mut ChaCha8Rng) -> Result<FadingStates> {
    let m = 2;
    let a = rng.gen_range(0.2..0.8);
    let fs = FadingStates {
        probs: vec![a, 1.0 - a],
        states: vec![
            GainState { g: random_gains(rng, m) },
            GainState { g: random_gains(rng, m) },
        ],
        noise: vec![1.0; m],
        pmax: vec![1.0; m],
        packet_bits: vec![10.0; m],
    };
    fs.validate(&SolveOptions::default())?;
    Ok(fs)
}

/// Criterion 7: the joint short-term expected-cost solve matches the
/// per-state decomposition within 1e-6 in objective on 10 random 2-state
/// instances, and the average-power objective never exceeds the
/// short-term objective.
pub fn criterion_7_fading_decomposition() -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let opts = SolveOptions::default();
    let spec = CostSpec::WeightedSum { w: vec![0.5, 0.5] };
    let mut worst_gap: f64 = 0.0;
    for c in 0..10 {
        let fs = random_fading(&mut rng)?;
        let joint = solve_adaptive_expected_cost(&fs, &spec, PowerMode::ShortTerm, &opts)?;
        let decomposed = solve_short_term_decomposed(&fs, &spec, &opts)?;
        let gap = (joint.objective - decomposed.objective).abs() / decomposed.objective;
        worst_gap = worst_gap.max(gap);
        let avg = solve_adaptive_avg(&fs, &spec, &opts)?;
        if gap > 1e-6 || avg.objective > joint.objective * (1.0 + 1e-6) {
            return Ok(CheckReport::new(
                "fading short-term decomposition",
                false,
                format!(
                    "instance {c}: joint/decomposed gap {gap:.2e}, avg {} vs short-term {}",
                    avg.objective, joint.objective
                ),
            ));
        }
    }
    Ok(CheckReport::new(
        "fading short-term decomposition",
        true,
        format!("10 instances, worst joint/decomposed gap {worst_gap:.2e} (<= 1e-6); avg <= short-term throughout"),
    ))
}

/// Criterion 8: optimal cost is nonincreasing when every power cap is
/// scaled up (10 random instances, 3 scalings) and nonincreasing in the
/// outage allowance q (5 levels).
pub fn criterion_8_monotonicities() -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let opts = SolveOptions::default();
    for c in 0..10 {
        let g = random_gains(&mut rng, 2);
        let mut last = f64::INFINITY;
        for scale in [1.0, 2.0, 4.0] {
            let inst = NetworkInstance::new(g.clone(), vec![1.0; 2], vec![scale; 2], vec![10.0; 2], None)?;
            let sol = solve_perfect_csi(&inst, &CostSpec::Max, &opts)?;
            if sol.cost > last * (1.0 + 1e-7) {
                return Ok(CheckReport::new(
                    "relaxation monotonicities",
                    false,
                    format!("instance {c}: cost rose from {last} to {} at Pmax scale {scale}", sol.cost),
                ));
            }
            last = sol.cost;
        }
    }
    let inst = RobustInstance {
        noise: vec![1.0],
        pmax: vec![1.0],
        packet_bits: vec![10.0],
        tmax: None,
    };
    let dist = ChannelDistribution {
        entries: vec![vec![Marginal::Rayleigh { mean: 1.0 }]],
    };
    let mut last = f64::INFINITY;
    for q in [0.02, 0.05, 0.1, 0.2, 0.5] {
        let sol = solve_robust(&inst, &dist, &OutageSpec { q: vec![q] }, &CostSpec::Max, &opts)?;
        if sol.cost > last * (1.0 + 1e-7) {
            return Ok(CheckReport::new(
                "relaxation monotonicities",
                false,
                format!("robust cost rose from {last} to {} at q={q}", sol.cost),
            ));
        }
        last = sol.cost;
    }
    Ok(CheckReport::new(
        "relaxation monotonicities",
        true,
        "cost nonincreasing over 10 instances x 3 Pmax scalings and over 5 outage levels".into(),
    ))
}

/// Criterion 9: over traced boundary points, the argmin of the weighted
/// completion-time cost equals the argmax of the delay utility with
/// w'_i = w_i L_i (exact index match); the Jensen bound
/// `sum w' R >= U_h(R)` holds on 100 random points with equality at
/// equal-rate points to 1e-9.
pub fn criterion_9_utilities() -> Result<CheckReport> {
    let inst = reference_instance(true);
    let l = inst.packet_bits().to_vec();
    let trace = trace_completion_region(&inst, 33, &SolveOptions::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let a = rng.gen_range(0.05..0.95);
        let w = vec![a, 1.0 - a];
        let spec = CostSpec::WeightedSum { w: w.clone() };
        let argmin = trace
            .entries
            .iter()
            .enumerate()
            .min_by(|(_, x), (_, y)| eval_cost(&spec, &x.t).total_cmp(&eval_cost(&spec, &y.t)))
            .map(|(i, _)| i)
            .unwrap();
        // U_d(R) = -sum w'_i / R_i with w' = w .* L, evaluated through the
        // cost-to-utility mapping.
        let argmax = trace
            .entries
            .iter()
            .enumerate()
            .max_by(|(_, x), (_, y)| {
                utility_from_cost(&spec, &l, &x.r).total_cmp(&utility_from_cost(&spec, &l, &y.r))
            })
            .map(|(i, _)| i)
            .unwrap();
        if argmin != argmax {
            return Ok(CheckReport::new(
                "utility correspondences",
                false,
                format!("w={w:?}: argmin J_w index {argmin} != argmax U_d index {argmax}"),
            ));
        }
    }
    let mut worst_eq: f64 = 0.0;
    for k in 0..100 {
        let m = 2 + k % 3;
        let mut wprime: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s: f64 = wprime.iter().sum();
        wprime.iter_mut().for_each(|x| *x /= s);
        let r: Vec<f64> = if k % 4 == 0 {
            vec![rng.gen_range(0.1..3.0); m]
        } else {
            (0..m).map(|_| rng.gen_range(0.1..3.0)).collect()
        };
        let arith: f64 = wprime.iter().zip(&r).map(|(w, ri)| w * ri).sum();
        let harm = harmonic_mean_utility(&wprime, &r);
        if arith < harm - 1e-12 {
            return Ok(CheckReport::new(
                "utility correspondences",
                false,
                format!("Jensen bound violated: {arith} < {harm}"),
            ));
        }
        if k % 4 == 0 {
            worst_eq = worst_eq.max((arith - harm).abs());
        }
    }
    Ok(CheckReport::new(
        "utility correspondences",
        worst_eq <= 1e-9,
        format!("5 weight sweeps index-matched; Jensen bound held on 100 points, equal-rate residual {worst_eq:.2e}"),
    ))
}

/// Runs all nine checks in order, returning the individual reports.
pub fn run_all() -> Result<Vec<CheckReport>> {
    Ok(vec![
        criterion_1_region_figures()?,
        criterion_2_oracle_equivalence()?,
        criterion_3_derivatives()?,
        criterion_4_rayleigh_mc()?,
        criterion_5_log_concavity()?,
        criterion_6_robust_analytic()?,
        criterion_7_fading_decomposition()?,
        criterion_8_monotonicities()?,
        criterion_9_utilities()?,
    ])
}
