//! Robust power control under distributional channel knowledge: outage
//! probability constraints, reliability evaluation (closed-form Rayleigh,
//! Monte Carlo general), and numerical probes of the log-concavity
//! hypothesis that makes the robust program convex.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::costs::{eval_cost, CostSpec};
use crate::error::{Error, Result};
use crate::model::PowerAllocation;
use crate::numeric::{ct_bound, logsumexp, sigmoid};
use crate::par;
use crate::solver::barrier::{AffineForm, ConstraintFn, Scalar, ScalarSum};
use crate::solver::{Certificate, ProgramBuilder, SolveOptions};

/// Marginal distribution of one channel power gain, in linear units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    /// Rayleigh fading: power gain exponential with the given mean.
    Rayleigh { mean: f64 },
    /// Nakagami-m fading: power gain Gamma(m, mean/m).
    Nakagami { m: f64, mean: f64 },
    /// Log-normal shadowing: `ln(gain) ~ Normal(mu, sigma)`.
    Lognormal { mu: f64, sigma: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match self {
            Marginal::Rayleigh { mean } => {
                if !(*mean > 0.0) {
                    return Err(Error::invalid(format!("Rayleigh mean {mean} must be > 0")));
                }
            }
            Marginal::Nakagami { m, mean } => {
                if !(*m >= 0.5) {
                    return Err(Error::invalid(format!("Nakagami m = {m} must be >= 0.5")));
                }
                if !(*mean > 0.0) {
                    return Err(Error::invalid(format!("Nakagami mean {mean} must be > 0")));
                }
            }
            Marginal::Lognormal { sigma, .. } => {
                if !(*sigma > 0.0) {
                    return Err(Error::invalid(format!("log-normal sigma {sigma} must be > 0")));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Marginal::Rayleigh { mean } => Exp::new(1.0 / mean).unwrap().sample(rng),
            Marginal::Nakagami { m, mean } => Gamma::new(*m, mean / m).unwrap().sample(rng),
            Marginal::Lognormal { mu, sigma } => LogNormal::new(*mu, *sigma).unwrap().sample(rng),
        }
    }

    /// Log-density of the power gain at `x > 0`.
    fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        match self {
            Marginal::Rayleigh { mean } => -mean.ln() - x / mean,
            Marginal::Nakagami { m, mean } => {
                let theta = mean / m;
                (m - 1.0) * x.ln() - x / theta - m * theta.ln() - ln_gamma(*m)
            }
            Marginal::Lognormal { mu, sigma } => {
                let lx = x.ln();
                -lx - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
                    - (lx - mu) * (lx - mu) / (2.0 * sigma * sigma)
            }
        }
    }

    /// A rough location for the transformed-domain probe sampler.
    fn ln_scale(&self) -> f64 {
        match self {
            Marginal::Rayleigh { mean } => mean.ln(),
            Marginal::Nakagami { mean, .. } => mean.ln(),
            Marginal::Lognormal { mu, .. } => *mu,
        }
    }
}

/// Lanczos approximation of `ln Gamma(x)` for `x > 0`.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Independent per-entry channel gain distribution (M x M matrix).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelDistribution {
    pub entries: Vec<Vec<Marginal>>,
}

impl ChannelDistribution {
    pub fn validate(&self) -> Result<()> {
        let m = self.entries.len();
        if m == 0 {
            return Err(Error::invalid("distribution must have at least one row"));
        }
        for row in &self.entries {
            if row.len() != m {
                return Err(Error::Dimension {
                    context: "distribution row",
                    expected: m,
                    got: row.len(),
                });
            }
            for e in row {
                e.validate()?;
            }
        }
        Ok(())
    }

    pub fn users(&self) -> usize {
        self.entries.len()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: ChannelDistribution = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }

    /// Mean-gain matrix if every entry is Rayleigh; error otherwise.
    pub fn rayleigh_means(&self) -> Result<Vec<Vec<f64>>> {
        self.entries
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| match e {
                        Marginal::Rayleigh { mean } => Ok(*mean),
                        other => Err(Error::invalid(format!(
                            "closed-form reliability requires Rayleigh marginals, got {other:?}"
                        ))),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn is_all_rayleigh(&self) -> bool {
        self.entries
            .iter()
            .all(|row| row.iter().all(|e| matches!(e, Marginal::Rayleigh { .. })))
    }
}

/// Per-user outage probability caps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutageSpec {
    pub q: Vec<f64>,
}

impl OutageSpec {
    pub fn validate(&self, users: usize) -> Result<()> {
        if self.q.len() != users {
            return Err(Error::Dimension {
                context: "outage caps",
                expected: users,
                got: self.q.len(),
            });
        }
        for (i, &qi) in self.q.iter().enumerate() {
            if !(0.0..1.0).contains(&qi) {
                return Err(Error::invalid(format!("q[{i}] = {qi} must be in [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    ClosedForm,
    MonteCarlo,
}

/// A reliability (non-outage probability) estimate with its uncertainty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReliabilityEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub estimator: EstimatorTag,
}

const MC_CHUNK: usize = 8192;

/// Monte Carlo estimate of the reliability of user `i` at SINR target
/// `s_target`: the probability that the realized SINR exceeds the target.
/// Reproducible for a fixed seed regardless of thread count: samples are
/// drawn in fixed-size chunks on per-chunk ChaCha substreams.
pub fn reliability_mc(
    i: usize,
    s_target: f64,
    p: &PowerAllocation,
    dist: &ChannelDistribution,
    noise: &[f64],
    n: usize,
    seed: u64,
) -> Result<ReliabilityEstimate> {
    dist.validate()?;
    let m = dist.users();
    if i >= m || p.p.len() != m || noise.len() != m {
        return Err(Error::Dimension {
            context: "reliability inputs",
            expected: m,
            got: p.p.len().min(noise.len()),
        });
    }
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    if !(s_target > 0.0) {
        return Err(Error::invalid(format!("SINR target {s_target} must be > 0")));
    }
    if p.p[i] == 0.0 {
        return Ok(ReliabilityEstimate {
            value: 0.0,
            std_error: 0.0,
            samples: n,
            estimator: EstimatorTag::MonteCarlo,
        });
    }

    let row = &dist.entries[i];
    let chunks = n.div_ceil(MC_CHUNK);
    let counts = par::map_indexed(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64 + 1);
        let lo = c * MC_CHUNK;
        let hi = ((c + 1) * MC_CHUNK).min(n);
        let mut hits = 0usize;
        let mut w = vec![0.0; m];
        for _ in lo..hi {
            for (j, e) in row.iter().enumerate() {
                w[j] = e.sample(&mut rng);
            }
            let mut denom = noise[i];
            for j in 0..m {
                if j != i {
                    denom += p.p[j] * w[j];
                }
            }
            if p.p[i] * w[i] / denom > s_target {
                hits += 1;
            }
        }
        hits
    });
    let hits: usize = counts.iter().sum();
    let value = hits as f64 / n as f64;
    let std_error = (value * (1.0 - value) / n as f64).sqrt();
    Ok(ReliabilityEstimate {
        value,
        std_error,
        samples: n,
        estimator: EstimatorTag::MonteCarlo,
    })
}

/// Closed-form reliability under independent Rayleigh fading:
/// `Phi_i = exp(-S N_i / (Gbar_ii P_i)) * prod_{j!=i} (1 + S Gbar_ij P_j / (Gbar_ii P_i))^-1`.
pub fn reliability_rayleigh_closed(
    i: usize,
    s_target: f64,
    p: &PowerAllocation,
    mean_g: &[Vec<f64>],
    noise: &[f64],
) -> Result<f64> {
    let m = mean_g.len();
    if i >= m || p.p.len() != m || noise.len() != m {
        return Err(Error::Dimension {
            context: "closed-form reliability inputs",
            expected: m,
            got: p.p.len().min(noise.len()),
        });
    }
    if p.p[i] == 0.0 {
        return Ok(0.0);
    }
    let own = mean_g[i][i] * p.p[i];
    let mut ln_phi = -s_target * noise[i] / own;
    for j in 0..m {
        if j != i {
            ln_phi -= (s_target * mean_g[i][j] * p.p[j] / own).ln_1p();
        }
    }
    Ok(ln_phi.exp())
}

/// Result of a numerical log-concavity probe.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub pass: bool,
    /// Largest midpoint-concavity defect observed (<= tol means pass).
    pub worst_violation: f64,
    /// Trials skipped due to density underflow.
    pub skipped: usize,
}

const PROBE_TOL: f64 = 1e-9;

/// Midpoint log-concavity probe of the transformed row density
/// `g(w~) = sum_j w~_j + ln f_{W_i}(exp(w~))` over random segment pairs.
/// This is exactly the quantity whose concavity makes the reliability
/// function log-concave.
pub fn log_concavity_probe(dist: &ChannelDistribution, i: usize, trials: usize, seed: u64) -> Result<ProbeReport> {
    dist.validate()?;
    let m = dist.users();
    if i >= m {
        return Err(Error::invalid(format!("user index {i} out of range for M={m}")));
    }
    let row = &dist.entries[i];
    let g = |w: &[f64]| -> f64 {
        w.iter()
            .zip(row)
            .map(|(&wj, e)| wj + e.ln_pdf(wj.exp()))
            .sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = Normal::new(0.0, 1.5).unwrap();
    let centers: Vec<f64> = row.iter().map(|e| e.ln_scale()).collect();
    let mut worst = f64::NEG_INFINITY;
    let mut skipped = 0usize;
    for _ in 0..trials {
        let a: Vec<f64> = centers.iter().map(|c| c + sampler.sample(&mut rng)).collect();
        let b: Vec<f64> = centers.iter().map(|c| c + sampler.sample(&mut rng)).collect();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let (ga, gb, gm) = (g(&a), g(&b), g(&mid));
        if !ga.is_finite() || !gb.is_finite() || !gm.is_finite() {
            skipped += 1;
            continue;
        }
        worst = worst.max(0.5 * (ga + gb) - gm);
    }
    Ok(ProbeReport {
        pass: worst <= PROBE_TOL,
        worst_violation: worst,
        skipped,
    })
}

/// Instance shape for the robust solve: the channel itself is known only
/// through `dist`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustInstance {
    #[serde(rename = "N")]
    pub noise: Vec<f64>,
    #[serde(rename = "Pmax")]
    pub pmax: Vec<f64>,
    #[serde(rename = "L")]
    pub packet_bits: Vec<f64>,
    #[serde(rename = "Tmax", default, skip_serializing_if = "Option::is_none")]
    pub tmax: Option<Vec<f64>>,
}

impl RobustInstance {
    pub fn validate(&self) -> Result<()> {
        let m = self.noise.len();
        if m == 0 || self.pmax.len() != m || self.packet_bits.len() != m {
            return Err(Error::invalid("robust instance dimensions inconsistent"));
        }
        for v in [&self.noise, &self.pmax, &self.packet_bits] {
            if v.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::invalid("N, Pmax, L must all be > 0"));
            }
        }
        if let Some(t) = &self.tmax {
            if t.len() != m || t.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::invalid("Tmax must be positive and length M"));
            }
        }
        Ok(())
    }

    pub fn users(&self) -> usize {
        self.noise.len()
    }
}

/// Post-solve reliability audit entry for one user.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReliabilityAudit {
    pub user: usize,
    pub sinr_target: f64,
    pub required: f64,
    pub estimate: ReliabilityEstimate,
}

/// Robust solve result: the SINRs are chosen targets, not realizations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustSolution {
    pub p: Vec<f64>,
    pub sinr_target: Vec<f64>,
    pub rate: Vec<f64>,
    pub time: Vec<f64>,
    pub cost: f64,
    pub certificate: Certificate,
    pub reliability: Vec<ReliabilityAudit>,
}

impl RobustSolution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serialization cannot fail")
    }
}

/// One frozen channel row sample in the transformed (log-gain) domain.
struct SampleRow {
    w_own: f64,
    /// `w~_ij` for j != i, paired with the interferer index.
    w_interf: Vec<(usize, f64)>,
}

/// Smoothed sample-average outage constraint
/// `-ln Phi_hat + ln(1 - q) <= 0`, where `Phi_hat` averages a logistic
/// sigmoid of the per-sample log-margin at temperature `tau`. The common
/// random numbers are frozen per solve, so the constraint (and the whole
/// solve) is deterministic.
struct SaaOutage {
    samples: Arc<Vec<SampleRow>>,
    tau: f64,
    ln_one_minus_q: f64,
    s_idx: usize,
    p_own_idx: usize,
    /// Variable index of `P~_j` for each interferer in `w_interf` order.
    p_idx: Vec<usize>,
    ln_noise: f64,
}

impl SaaOutage {
    /// Per-sample `lse_k` with softmax weights over the local variables
    /// `[S~_i, P~_i, P~_j...]` stacked as the callers expect.
    fn sample_margin(&self, z: &[f64], row: &SampleRow, grad_local: Option<&mut Vec<f64>>) -> f64 {
        let s = z[self.s_idx];
        let p_own = z[self.p_own_idx];
        let mut terms = Vec::with_capacity(1 + row.w_interf.len());
        terms.push(s - p_own + self.ln_noise);
        for (k, &(_, w)) in row.w_interf.iter().enumerate() {
            terms.push(s - p_own + z[self.p_idx[k]] + w);
        }
        let lse = logsumexp(&terms);
        if let Some(g) = grad_local {
            // d(margin)/dz = -d(lse)/dz; local order: [s, p_own, p_j...]
            g.fill(0.0);
            for (t, &u) in terms.iter().enumerate() {
                let soft = (u - lse).exp();
                g[0] -= soft;
                g[1] += soft;
                if t > 0 {
                    g[2 + t - 1] -= soft;
                }
            }
        }
        row.w_own - lse
    }

    fn local_vars(&self) -> Vec<usize> {
        let mut v = vec![self.s_idx, self.p_own_idx];
        v.extend(&self.p_idx);
        v
    }

    /// Accumulates `(sum sigma, sum d(sigma), sum dd(sigma))` over the
    /// samples, in local coordinates. Chunked for deterministic parallel
    /// reduction.
    fn accumulate(&self, z: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let nl = 2 + self.p_idx.len();
        let n = self.samples.len();
        let chunks = n.div_ceil(MC_CHUNK);
        let samples = &self.samples;
        let parts = par::map_indexed(chunks, |c| {
            let lo = c * MC_CHUNK;
            let hi = ((c + 1) * MC_CHUNK).min(n);
            let mut sum = 0.0;
            let mut grad = vec![0.0; nl];
            let mut hess = vec![vec![0.0; nl]; nl];
            let mut gl = vec![0.0; nl];
            for row in &samples[lo..hi] {
                let margin = self.sample_margin(z, row, Some(&mut gl));
                let x = margin / self.tau;
                let sig = sigmoid(x);
                let d1 = sig * (1.0 - sig) / self.tau;
                let d2 = sig * (1.0 - sig) * (1.0 - 2.0 * sig) / (self.tau * self.tau);
                sum += sig;
                // Hessian of lse in local coords: softmax outer structure;
                // margin = w - lse, so dd(margin) = -dd(lse).
                // dd(sigma) = d2 * dm dm' + d1 * dd(margin).
                for a in 0..nl {
                    grad[a] += d1 * gl[a];
                    for bidx in 0..nl {
                        hess[a][bidx] += d2 * gl[a] * gl[bidx];
                    }
                }
                // -d1 * dd(lse): recompute softmax weights for the
                // curvature term.
                self.add_lse_curvature(z, row, -d1, &mut hess);
            }
            (sum, grad, hess)
        });
        let mut sum = 0.0;
        let mut grad = vec![0.0; nl];
        let mut hess = vec![vec![0.0; nl]; nl];
        for (s, g, h) in parts {
            sum += s;
            for a in 0..nl {
                grad[a] += g[a];
                for bidx in 0..nl {
                    hess[a][bidx] += h[a][bidx];
                }
            }
        }
        (sum, grad, hess)
    }

    fn add_lse_curvature(&self, z: &[f64], row: &SampleRow, scale: f64, hess: &mut [Vec<f64>]) {
        let nl = 2 + self.p_idx.len();
        let s = z[self.s_idx];
        let p_own = z[self.p_own_idx];
        let mut terms = Vec::with_capacity(1 + row.w_interf.len());
        terms.push(s - p_own + self.ln_noise);
        for (k, &(_, w)) in row.w_interf.iter().enumerate() {
            terms.push(s - p_own + z[self.p_idx[k]] + w);
        }
        let lse = logsumexp(&terms);
        // Local coefficient rows a_t for each term t.
        let mut mean = vec![0.0; nl];
        let mut diag_acc = vec![vec![0.0; nl]; nl];
        for (t, &u) in terms.iter().enumerate() {
            let soft = (u - lse).exp();
            let mut a = vec![0.0; nl];
            a[0] = 1.0;
            a[1] = -1.0;
            if t > 0 {
                a[2 + t - 1] = 1.0;
            }
            for x in 0..nl {
                if a[x] == 0.0 {
                    continue;
                }
                mean[x] += soft * a[x];
                for y in 0..nl {
                    diag_acc[x][y] += soft * a[x] * a[y];
                }
            }
        }
        for x in 0..nl {
            for y in 0..nl {
                hess[x][y] += scale * (diag_acc[x][y] - mean[x] * mean[y]);
            }
        }
    }
}

impl ConstraintFn for SaaOutage {
    fn value(&self, z: &[f64]) -> f64 {
        let n = self.samples.len();
        let chunks = n.div_ceil(MC_CHUNK);
        let samples = &self.samples;
        let sums = par::map_indexed(chunks, |c| {
            let lo = c * MC_CHUNK;
            let hi = ((c + 1) * MC_CHUNK).min(n);
            samples[lo..hi]
                .iter()
                .map(|row| sigmoid(self.sample_margin(z, row, None) / self.tau))
                .sum::<f64>()
        });
        let phi = sums.iter().sum::<f64>() / n as f64;
        if phi <= 0.0 {
            return f64::INFINITY;
        }
        -phi.ln() + self.ln_one_minus_q
    }

    fn grad(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let n = self.samples.len() as f64;
        let (sum, grad_local, _) = self.accumulate(z);
        let phi = sum / n;
        let vars = self.local_vars();
        for (a, &idx) in vars.iter().enumerate() {
            out[idx] += -grad_local[a] / n / phi;
        }
    }

    fn add_hess(&self, z: &[f64], scale: f64, h: &mut nalgebra::DMatrix<f64>) {
        let n = self.samples.len() as f64;
        let (sum, grad_local, hess_local) = self.accumulate(z);
        let phi = sum / n;
        let vars = self.local_vars();
        let nl = vars.len();
        // dd(-ln phi) = (dphi dphi')/phi^2 - dd(phi)/phi
        for a in 0..nl {
            for b in 0..nl {
                let dphi_a = grad_local[a] / n;
                let dphi_b = grad_local[b] / n;
                let v = dphi_a * dphi_b / (phi * phi) - hess_local[a][b] / n / phi;
                h[(vars[a], vars[b])] += scale * v;
            }
        }
    }
}

/// Draws the frozen per-user channel row samples for the SAA path.
fn draw_rows(dist: &ChannelDistribution, i: usize, n: usize, seed: u64) -> Vec<SampleRow> {
    let row = &dist.entries[i];
    let chunks = n.div_ceil(MC_CHUNK);
    let nested = par::map_indexed(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        rng.set_stream(c as u64 + 1);
        let lo = c * MC_CHUNK;
        let hi = ((c + 1) * MC_CHUNK).min(n);
        let mut out = Vec::with_capacity(hi - lo);
        for _ in lo..hi {
            let mut w_own = 0.0;
            let mut w_interf = vec![];
            for (j, e) in row.iter().enumerate() {
                let w = e.sample(&mut rng);
                if j == i {
                    w_own = w.ln();
                } else {
                    w_interf.push((j, w.ln()));
                }
            }
            out.push(SampleRow { w_own, w_interf });
        }
        out
    });
    let mut rows = Vec::with_capacity(n);
    for mut chunk in nested {
        rows.append(&mut chunk);
    }
    rows
}

/// Solves the outage-constrained completion-time minimization. Rayleigh
/// marginals use the closed-form reliability with analytic derivatives;
/// other distributions use a smoothed sample-average approximation with
/// frozen common random numbers and an annealed temperature. The final
/// report re-checks each outage constraint with the unsmoothed Monte
/// Carlo estimator.
pub fn solve_robust(
    inst: &RobustInstance,
    dist: &ChannelDistribution,
    q: &OutageSpec,
    spec: &CostSpec,
    opts: &SolveOptions,
) -> Result<RobustSolution> {
    inst.validate()?;
    dist.validate()?;
    let m = inst.users();
    if dist.users() != m {
        return Err(Error::Dimension {
            context: "distribution size",
            expected: m,
            got: dist.users(),
        });
    }
    q.validate(m)?;
    spec.validate(m)?;
    for (i, &qi) in q.q.iter().enumerate() {
        // All shipped marginals have unbounded support.
        if qi == 0.0 {
            return Err(Error::Infeasible(format!(
                "q[{i}] = 0 with unbounded gain support: outage cannot be exactly zero"
            )));
        }
    }
    for i in 0..m {
        let probe = log_concavity_probe(dist, i, 1000, opts.seed.wrapping_add(i as u64))?;
        if !probe.pass {
            log::warn!(
                "log-concavity probe failed for user {i} (violation {:.3e}): convexity of the robust program is not guaranteed",
                probe.worst_violation
            );
        }
    }

    let rayleigh = dist.is_all_rayleigh();
    if rayleigh {
        solve_robust_rayleigh(inst, dist, q, spec, opts)
    } else {
        solve_robust_saa(inst, dist, q, spec, opts)
    }
}

/// Variable layout shared by both robust paths: `[T | S~ | P~ | aux]`.
fn robust_layout(m: usize) -> (impl Fn(usize) -> usize, impl Fn(usize) -> usize, impl Fn(usize) -> usize) {
    (move |i| i, move |i: usize| m + i, move |i: usize| 2 * m + i)
}

fn add_robust_common_rows(b: &mut ProgramBuilder, inst: &RobustInstance, opts: &SolveOptions, t_ceiling: f64) {
    let m = inst.users();
    let (t_idx, s_idx, p_idx) = robust_layout(m);
    for i in 0..m {
        b.add_ct_bound(t_idx(i), s_idx(i), inst.packet_bits[i]);
        b.add_linear_le(vec![(p_idx(i), 1.0)], -inst.pmax[i].ln());
        let floor = (opts.power_floor_factor * inst.pmax[i]).ln();
        b.add_linear_le(vec![(p_idx(i), -1.0)], floor);
        b.add_linear_le(vec![(t_idx(i), 1.0)], -t_ceiling);
        if let Some(tmax) = &inst.tmax {
            b.add_linear_le(vec![(t_idx(i), 1.0)], -tmax[i]);
        }
    }
}

/// Bisects the largest `S~` with constraint value <= `target` at fixed
/// powers; `eval` must be increasing in `S~`.
fn bisect_stilde(eval: &dyn Fn(f64) -> f64, target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (-40.0, 40.0);
    if eval(lo) > target {
        return Err(Error::Infeasible(
            "outage constraint unsatisfiable even at vanishing SINR target".into(),
        ));
    }
    if eval(hi) <= target {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn solve_robust_rayleigh(
    inst: &RobustInstance,
    dist: &ChannelDistribution,
    q: &OutageSpec,
    spec: &CostSpec,
    opts: &SolveOptions,
) -> Result<RobustSolution> {
    let m = inst.users();
    let mean_g = dist.rayleigh_means()?;
    let (t_idx, s_idx, p_idx) = robust_layout(m);

    // Initial powers at half cap; SINR targets from the closed form at a
    // margin inside the outage constraint.
    let p0: Vec<f64> = inst.pmax.iter().map(|&x| x / 2.0).collect();
    let mut s0 = vec![0.0; m];
    for i in 0..m {
        let alloc = PowerAllocation::new(p0.clone());
        let eval = |st: f64| -> f64 {
            let phi = reliability_rayleigh_closed(i, st.exp(), &alloc, &mean_g, &inst.noise).unwrap();
            -phi.ln() + (1.0 - q.q[i]).ln()
        };
        // Margin relative to the outage budget keeps the start near the
        // active constraint instead of deep inside the region.
        s0[i] = bisect_stilde(&eval, -opts.feas_margin * (1.0 - q.q[i]).ln().abs())?;
    }
    let t0: Vec<f64> = (0..m)
        .map(|i| inst.packet_bits[i] * ct_bound(s0[i]).0 * (1.0 + opts.feas_margin))
        .collect();
    let t_ceiling = opts.t_ceiling_factor * t0.iter().cloned().fold(1.0, f64::max);

    let mut b = ProgramBuilder::new();
    for v in t0.iter().chain(&s0).chain(p0.iter().map(|x| x.ln()).collect::<Vec<_>>().iter()) {
        b.add_var(*v);
    }
    add_robust_common_rows(&mut b, inst, opts, t_ceiling);
    for i in 0..m {
        // -ln Phi_i + ln(1-q_i) <= 0 as exp + softplus of affine forms.
        let own = mean_g[i][i];
        let mut terms = vec![(
            Scalar::Exp,
            AffineForm::new(vec![(s_idx(i), 1.0), (p_idx(i), -1.0)], inst.noise[i].ln() - own.ln()),
        )];
        for j in 0..m {
            if j != i && mean_g[i][j] > 0.0 {
                terms.push((
                    Scalar::Softplus,
                    AffineForm::new(
                        vec![(s_idx(i), 1.0), (p_idx(i), -1.0), (p_idx(j), 1.0)],
                        mean_g[i][j].ln() - own.ln(),
                    ),
                ));
            }
        }
        b.add_constraint(Box::new(ScalarSum {
            terms,
            offset: (1.0 - q.q[i]).ln(),
        }));
    }
    let virtual_t: Vec<AffineForm> = (0..m).map(|i| AffineForm::var(t_idx(i))).collect();
    b.attach_cost(spec, m, &virtual_t, 1.0)?;

    let res = b.solve(opts)?;

    // Tighten: powers from the solve, SINR targets at exact constraint
    // equality via bisection on the closed form.
    let p: Vec<f64> = (0..m).map(|i| res.z[p_idx(i)].exp().min(inst.pmax[i])).collect();
    let alloc = PowerAllocation::new(p.clone());
    let mut sinr_target = vec![0.0; m];
    for i in 0..m {
        let eval = |st: f64| -> f64 {
            let phi = reliability_rayleigh_closed(i, st.exp(), &alloc, &mean_g, &inst.noise).unwrap();
            -phi.ln() + (1.0 - q.q[i]).ln()
        };
        sinr_target[i] = bisect_stilde(&eval, 0.0)?.exp();
    }
    finish_robust(inst, dist, q, spec, opts, res, p, sinr_target, EstimatorTag::ClosedForm, &mean_g)
}

fn solve_robust_saa(
    inst: &RobustInstance,
    dist: &ChannelDistribution,
    q: &OutageSpec,
    spec: &CostSpec,
    opts: &SolveOptions,
) -> Result<RobustSolution> {
    let m = inst.users();
    let (t_idx, s_idx, p_idx) = robust_layout(m);
    let n = opts.saa_samples.max(1);
    let rows: Vec<Arc<Vec<SampleRow>>> = (0..m)
        .map(|i| Arc::new(draw_rows(dist, i, n, opts.seed)))
        .collect();

    let make_constraint = |i: usize, tau: f64| -> Box<dyn ConstraintFn> {
        Box::new(SaaOutage {
            samples: rows[i].clone(),
            tau,
            ln_one_minus_q: (1.0 - q.q[i]).ln(),
            s_idx: s_idx(i),
            p_own_idx: p_idx(i),
            p_idx: rows[i][0].w_interf.iter().map(|&(j, _)| p_idx(j)).collect(),
            ln_noise: inst.noise[i].ln(),
        })
    };

    // Anneal the smoothing temperature, warm-starting each round.
    let p0: Vec<f64> = inst.pmax.iter().map(|&x| x / 2.0).collect();
    let mut z = vec![0.0; 3 * m];
    for i in 0..m {
        z[p_idx(i)] = p0[i].ln();
    }
    let mut t_ceiling = 0.0f64;
    for i in 0..m {
        let probe = make_constraint(i, opts.saa_temperature);
        let zi = z.clone();
        let eval = |st: f64| -> f64 {
            let mut zz = zi.clone();
            zz[s_idx(i)] = st;
            probe.value(&zz)
        };
        z[s_idx(i)] = bisect_stilde(&eval, -opts.feas_margin * (1.0 - q.q[i]).ln().abs())?;
        let t_init = inst.packet_bits[i] * ct_bound(z[s_idx(i)]).0 * (1.0 + opts.feas_margin);
        z[t_idx(i)] = t_init;
        t_ceiling = t_ceiling.max(opts.t_ceiling_factor * t_init);
    }

    let mut final_res = None;
    let rounds = opts.saa_anneal_rounds.max(1);
    for round in 0..rounds {
        let tau = opts.saa_temperature * 0.5f64.powi(round as i32);
        let mut b = ProgramBuilder::new();
        for &v in &z {
            b.add_var(v);
        }
        add_robust_common_rows(&mut b, inst, opts, t_ceiling);
        for i in 0..m {
            b.add_constraint(make_constraint(i, tau));
        }
        let virtual_t: Vec<AffineForm> = (0..m).map(|i| AffineForm::var(t_idx(i))).collect();
        b.attach_cost(spec, m, &virtual_t, 1.0)?;
        let res = b.solve(opts)?;
        z = res.z[..3 * m].to_vec();
        final_res = Some(res);
    }
    let res = final_res.expect("at least one anneal round");

    let p: Vec<f64> = (0..m).map(|i| z[p_idx(i)].exp().min(inst.pmax[i])).collect();
    let sinr_target: Vec<f64> = (0..m).map(|i| z[s_idx(i)].exp()).collect();
    finish_robust(inst, dist, q, spec, opts, res, p, sinr_target, EstimatorTag::MonteCarlo, &[])
}

#[allow(clippy::too_many_arguments)]
fn finish_robust(
    inst: &RobustInstance,
    dist: &ChannelDistribution,
    q: &OutageSpec,
    spec: &CostSpec,
    opts: &SolveOptions,
    res: crate::solver::barrier::BarrierResult,
    p: Vec<f64>,
    sinr_target: Vec<f64>,
    estimator: EstimatorTag,
    mean_g: &[Vec<f64>],
) -> Result<RobustSolution> {
    let m = inst.users();
    let rate: Vec<f64> = sinr_target.iter().map(|&s| (1.0 + s).log2()).collect();
    let time: Vec<f64> = inst
        .packet_bits
        .iter()
        .zip(&rate)
        .map(|(l, r)| if *r > 0.0 { l / r } else { f64::INFINITY })
        .collect();
    let cost = eval_cost(spec, &time);
    let alloc = PowerAllocation::new(p.clone());
    let mut reliability = vec![];
    for i in 0..m {
        let estimate = match estimator {
            EstimatorTag::ClosedForm => ReliabilityEstimate {
                value: reliability_rayleigh_closed(i, sinr_target[i], &alloc, mean_g, &inst.noise)?,
                std_error: 0.0,
                samples: 0,
                estimator: EstimatorTag::ClosedForm,
            },
            EstimatorTag::MonteCarlo => reliability_mc(
                i,
                sinr_target[i],
                &alloc,
                dist,
                &inst.noise,
                opts.saa_samples.max(1),
                opts.seed.wrapping_add(0x5eed_au64),
            )?,
        };
        reliability.push(ReliabilityAudit {
            user: i,
            sinr_target: sinr_target[i],
            required: 1.0 - q.q[i],
            estimate,
        });
    }
    Ok(RobustSolution {
        p,
        sinr_target,
        rate,
        time,
        cost,
        certificate: Certificate {
            max_violation: res.max_violation,
            gap: res.gap,
            outer_iters: res.outer_iters,
            newton_iters: res.newton_iters,
            clamped_power: vec![],
        },
        reliability,
    })
}
