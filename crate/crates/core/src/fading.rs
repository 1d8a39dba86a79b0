//! Discrete fading states with power adaptation: average-power
//! constrained joint solves, expected-cost objectives, and short-term
//! per-state decomposition.

use serde::{Deserialize, Serialize};

use crate::costs::{eval_cost, CostSpec};
use crate::error::{Error, Result};
use crate::model::{LinkState, NetworkInstance, PowerAllocation};
use crate::par;
use crate::solver::{
    add_physics_rows, feasible_init, solve_perfect_csi, Certificate, ProgramBuilder, SolveOptions,
};
use crate::solver::barrier::AffineForm;

/// A finite set of quantized channel states sharing noise, power caps,
/// and packet lengths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FadingStates {
    pub probs: Vec<f64>,
    pub states: Vec<GainState>,
    #[serde(rename = "N")]
    pub noise: Vec<f64>,
    #[serde(rename = "Pmax")]
    pub pmax: Vec<f64>,
    #[serde(rename = "L")]
    pub packet_bits: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainState {
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
}

/// Power constraint mode for the adaptive solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    /// `sum_s p_s P_i^(s) <= Pmax_i`
    Average,
    /// `P_i^(s) <= Pmax_i` for every state
    ShortTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ObjectiveMode {
    /// `J(E[T_1], ..., E[T_M])`
    ExpectedTime,
    /// `sum_s p_s J(T^(s))`
    ExpectedCost,
}

impl FadingStates {
    pub fn validate(&self, opts: &SolveOptions) -> Result<()> {
        let s = self.states.len();
        if s == 0 {
            return Err(Error::invalid("at least one fading state required"));
        }
        if s > opts.max_states {
            return Err(Error::invalid(format!(
                "{s} states exceeds the cap of {} (raise SolveOptions::max_states)",
                opts.max_states
            )));
        }
        if self.probs.len() != s {
            return Err(Error::Dimension {
                context: "state probabilities",
                expected: s,
                got: self.probs.len(),
            });
        }
        if self.probs.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::invalid("state probabilities must be > 0"));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("state probabilities must sum to 1, got {total}")));
        }
        // Gain invariants are enforced through per-state instances.
        for g in &self.states {
            self.state_instance_from(g)?;
        }
        Ok(())
    }

    fn state_instance_from(&self, g: &GainState) -> Result<NetworkInstance> {
        NetworkInstance::new(
            g.g.clone(),
            self.noise.clone(),
            self.pmax.clone(),
            self.packet_bits.clone(),
            None,
        )
    }

    pub fn state_instance(&self, s: usize) -> Result<NetworkInstance> {
        self.state_instance_from(&self.states[s])
    }

    pub fn users(&self) -> usize {
        self.noise.len()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Per-state powers and completion times of an adaptive solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveSolution {
    pub p_states: Vec<Vec<f64>>,
    pub t_states: Vec<Vec<f64>>,
    pub expected_time: Vec<f64>,
    pub objective: f64,
    pub certificate: Certificate,
}

impl AdaptiveSolution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serialization cannot fail")
    }
}

/// Minimizes `J(E[T])` under the average power constraint
/// `sum_s p_s P_i^(s) <= Pmax_i`, jointly over all per-state variables.
pub fn solve_adaptive_avg(fs: &FadingStates, spec: &CostSpec, opts: &SolveOptions) -> Result<AdaptiveSolution> {
    solve_adaptive(fs, spec, ObjectiveMode::ExpectedTime, PowerMode::Average, opts)
}

/// Minimizes the expected cost `sum_s p_s J(T^(s))` under the selected
/// power constraint mode. With short-term constraints the joint problem
/// decomposes into independent per-state solves; the joint formulation
/// here must agree with that decomposition.
pub fn solve_adaptive_expected_cost(
    fs: &FadingStates,
    spec: &CostSpec,
    mode: PowerMode,
    opts: &SolveOptions,
) -> Result<AdaptiveSolution> {
    solve_adaptive(fs, spec, ObjectiveMode::ExpectedCost, mode, opts)
}

fn solve_adaptive(
    fs: &FadingStates,
    spec: &CostSpec,
    objective: ObjectiveMode,
    power: PowerMode,
    opts: &SolveOptions,
) -> Result<AdaptiveSolution> {
    fs.validate(opts)?;
    let m = fs.users();
    spec.validate(m)?;
    let ns = fs.states.len();
    let instances: Vec<NetworkInstance> = (0..ns).map(|s| fs.state_instance(s)).collect::<Result<_>>()?;

    // Layout: per state s, block [T | S~ | P~] of width 3m.
    let t_idx = |s: usize, i: usize| 3 * m * s + i;
    let s_idx = |s: usize, i: usize| 3 * m * s + m + i;
    let p_idx = |s: usize, i: usize| 3 * m * s + 2 * m + i;

    let mut b = ProgramBuilder::new();
    for inst in &instances {
        let (t0, s0, p0) = feasible_init(inst, opts);
        for v in t0.iter().chain(&s0).chain(&p0) {
            b.add_var(*v);
        }
    }
    for (s, inst) in instances.iter().enumerate() {
        add_physics_rows(
            &mut b,
            inst,
            &|i| t_idx(s, i),
            &|i| s_idx(s, i),
            &|i| p_idx(s, i),
            opts,
            power == PowerMode::ShortTerm,
        );
    }
    if power == PowerMode::Average {
        // ln sum_s exp(P~_i^(s) + ln p_s - ln Pmax_i) <= 0
        for i in 0..m {
            let terms: Vec<AffineForm> = (0..ns)
                .map(|s| AffineForm::new(vec![(p_idx(s, i), 1.0)], fs.probs[s].ln() - fs.pmax[i].ln()))
                .collect();
            b.add_lse(terms);
        }
    }

    match objective {
        ObjectiveMode::ExpectedTime => {
            let virtual_t: Vec<AffineForm> = (0..m)
                .map(|i| {
                    AffineForm::new(
                        (0..ns).map(|s| (t_idx(s, i), fs.probs[s])).collect(),
                        0.0,
                    )
                })
                .collect();
            b.attach_cost(spec, m, &virtual_t, 1.0)?;
        }
        ObjectiveMode::ExpectedCost => {
            for s in 0..ns {
                let virtual_t: Vec<AffineForm> = (0..m).map(|i| AffineForm::var(t_idx(s, i))).collect();
                b.attach_cost(spec, m, &virtual_t, fs.probs[s])?;
            }
        }
    }

    let res = b.solve(opts)?;

    // Report through the physics chain, per state.
    let mut p_states = vec![];
    let mut t_states = vec![];
    for (s, inst) in instances.iter().enumerate() {
        let p: Vec<f64> = (0..m).map(|i| res.z[p_idx(s, i)].exp()).collect();
        let ls = LinkState::evaluate(inst, &PowerAllocation::new(p.clone()))?;
        p_states.push(p);
        t_states.push(ls.time);
    }
    let expected_time: Vec<f64> = (0..m)
        .map(|i| (0..ns).map(|s| fs.probs[s] * t_states[s][i]).sum())
        .collect();
    let objective_value = match objective {
        ObjectiveMode::ExpectedTime => eval_cost(spec, &expected_time),
        ObjectiveMode::ExpectedCost => (0..ns).map(|s| fs.probs[s] * eval_cost(spec, &t_states[s])).sum(),
    };
    Ok(AdaptiveSolution {
        p_states,
        t_states,
        expected_time,
        objective: objective_value,
        certificate: Certificate {
            max_violation: res.max_violation,
            gap: res.gap,
            outer_iters: res.outer_iters,
            newton_iters: res.newton_iters,
            clamped_power: vec![],
        },
    })
}

/// Short-term expected cost via explicit per-state decomposition:
/// independent perfect-CSI solves, probability-weighted. Used as the
/// cross-check for the joint formulation.
pub fn solve_short_term_decomposed(
    fs: &FadingStates,
    spec: &CostSpec,
    opts: &SolveOptions,
) -> Result<AdaptiveSolution> {
    fs.validate(opts)?;
    let ns = fs.states.len();
    let m = fs.users();
    let solutions = par::map_indexed(ns, |s| {
        let inst = fs.state_instance(s)?;
        solve_perfect_csi(&inst, spec, opts)
    });
    let mut p_states = vec![];
    let mut t_states = vec![];
    let mut objective = 0.0;
    let mut cert = Certificate {
        max_violation: f64::NEG_INFINITY,
        gap: 0.0,
        outer_iters: 0,
        newton_iters: 0,
        clamped_power: vec![],
    };
    for (s, res) in solutions.into_iter().enumerate() {
        let sol = res?;
        objective += fs.probs[s] * sol.cost;
        cert.max_violation = cert.max_violation.max(sol.certificate.max_violation);
        cert.gap = cert.gap.max(sol.certificate.gap);
        cert.outer_iters += sol.certificate.outer_iters;
        cert.newton_iters += sol.certificate.newton_iters;
        p_states.push(sol.p);
        t_states.push(sol.time);
    }
    let expected_time: Vec<f64> = (0..m)
        .map(|i| (0..ns).map(|s| fs.probs[s] * t_states[s][i]).sum())
        .collect();
    Ok(AdaptiveSolution {
        p_states,
        t_states,
        expected_time,
        objective,
        certificate: cert,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_state(m1: f64) -> FadingStates {
        FadingStates {
            probs: vec![0.5, 0.5],
            states: vec![
                GainState { g: vec![vec![m1]] },
                GainState { g: vec![vec![m1 / 4.0]] },
            ],
            noise: vec![1.0],
            pmax: vec![1.0],
            packet_bits: vec![10.0],
        }
    }

    #[test]
    fn single_state_reduces_to_perfect_csi() {
        let fs = FadingStates {
            probs: vec![1.0],
            states: vec![GainState { g: vec![vec![0.42, 0.89], vec![0.63, 0.15]] }],
            noise: vec![1.0, 1.0],
            pmax: vec![1.0, 1.0],
            packet_bits: vec![10.0, 10.0],
        };
        let spec = CostSpec::WeightedSum { w: vec![0.5, 0.5] };
        let opts = SolveOptions::default();
        let adaptive = solve_adaptive_avg(&fs, &spec, &opts).unwrap();
        let single = solve_perfect_csi(&fs.state_instance(0).unwrap(), &spec, &opts).unwrap();
        assert_relative_eq!(adaptive.objective, single.cost, max_relative = 1e-6);
        let ec = solve_adaptive_expected_cost(&fs, &spec, PowerMode::ShortTerm, &opts).unwrap();
        assert_relative_eq!(ec.objective, single.cost, max_relative = 1e-6);
    }

    #[test]
    fn identical_states_symmetric_powers() {
        let fs = FadingStates {
            probs: vec![0.5, 0.5],
            states: vec![
                GainState { g: vec![vec![1.0, 0.2], vec![0.2, 1.0]] },
                GainState { g: vec![vec![1.0, 0.2], vec![0.2, 1.0]] },
            ],
            noise: vec![1.0, 1.0],
            pmax: vec![1.0, 1.0],
            packet_bits: vec![10.0, 10.0],
        };
        let spec = CostSpec::WeightedSum { w: vec![0.5, 0.5] };
        let opts = SolveOptions::default();
        let adaptive = solve_adaptive_avg(&fs, &spec, &opts).unwrap();
        for i in 0..2 {
            assert_relative_eq!(adaptive.p_states[0][i], adaptive.p_states[1][i], max_relative = 1e-4);
        }
        let single = solve_perfect_csi(&fs.state_instance(0).unwrap(), &spec, &opts).unwrap();
        assert_relative_eq!(adaptive.objective, single.cost, max_relative = 1e-5);
    }

    #[test]
    fn average_mode_relaxes_short_term() {
        let fs = two_state(4.0);
        let spec = CostSpec::WeightedSum { w: vec![1.0] };
        let opts = SolveOptions::default();
        // For M=1 weighted sum, J(E[T]) == E[J(T)], so the two objective
        // forms are directly comparable across power modes.
        let avg = solve_adaptive_avg(&fs, &spec, &opts).unwrap();
        let short = solve_adaptive_expected_cost(&fs, &spec, PowerMode::ShortTerm, &opts).unwrap();
        assert!(avg.objective <= short.objective * (1.0 + 1e-6));
        // Asymmetric states make the relaxation strict.
        assert!(avg.objective < short.objective * (1.0 - 1e-4));
        // Average constraint holds.
        let avg_p: f64 = fs.probs.iter().zip(&avg.p_states).map(|(p, ps)| p * ps[0]).sum();
        assert!(avg_p <= 1.0 + 1e-6);
    }

    #[test]
    fn short_term_joint_matches_decomposition() {
        let fs = FadingStates {
            probs: vec![0.3, 0.7],
            states: vec![
                GainState { g: vec![vec![0.8, 0.2], vec![0.3, 0.9]] },
                GainState { g: vec![vec![0.4, 0.1], vec![0.2, 0.5]] },
            ],
            noise: vec![1.0, 1.0],
            pmax: vec![1.0, 1.0],
            packet_bits: vec![10.0, 10.0],
        };
        let spec = CostSpec::WeightedSum { w: vec![0.5, 0.5] };
        let opts = SolveOptions::default();
        let joint = solve_adaptive_expected_cost(&fs, &spec, PowerMode::ShortTerm, &opts).unwrap();
        let decomposed = solve_short_term_decomposed(&fs, &spec, &opts).unwrap();
        assert_relative_eq!(joint.objective, decomposed.objective, max_relative = 1e-6);
        for s in 0..2 {
            for i in 0..2 {
                assert_relative_eq!(joint.p_states[s][i], decomposed.p_states[s][i], max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn jensen_direction_at_feasible_points() {
        let fs = two_state(2.0);
        let opts = SolveOptions::default();
        let spec = CostSpec::Max;
        let sol = solve_adaptive_avg(&fs, &spec, &opts).unwrap();
        let e_j: f64 = fs.probs.iter().zip(&sol.t_states).map(|(p, t)| p * eval_cost(&spec, t)).sum();
        let j_e = eval_cost(&spec, &sol.expected_time);
        assert!(j_e <= e_j + 1e-9);
    }

    #[test]
    fn validation_errors() {
        let mut fs = two_state(1.0);
        fs.probs = vec![0.5, 0.6];
        assert!(fs.validate(&SolveOptions::default()).is_err());
        let mut fs2 = two_state(1.0);
        fs2.states[0].g = vec![vec![0.0]];
        assert!(fs2.validate(&SolveOptions::default()).is_err());
    }

    #[test]
    fn json_parse() {
        let json = r#"{
            "probs": [0.5, 0.5],
            "states": [{"G": [[1.0]]}, {"G": [[0.25]]}],
            "N": [1.0], "Pmax": [1.0], "L": [10.0]
        }"#;
        let fs = FadingStates::from_json(json).unwrap();
        assert_eq!(fs.states.len(), 2);
        fs.validate(&SolveOptions::default()).unwrap();
    }
}
