//! Cost functionals over completion times, their epigraph reformulations,
//! and the corresponding rate-utility functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The catalog of convex completion-time cost functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSpec {
    /// `max_i T_i`
    Max,
    /// `sum_i w_i T_i` with `w >= 0`, `sum w = 1`
    WeightedSum { w: Vec<f64> },
    /// Sum of the `r` largest completion times.
    SumRLargest { r: usize },
    /// `l_p` norm of the completion times, `p >= 1`.
    PNorm { p: f64 },
}

impl CostSpec {
    pub fn validate(&self, users: usize) -> Result<()> {
        match self {
            CostSpec::Max => Ok(()),
            CostSpec::WeightedSum { w } => {
                if w.len() != users {
                    return Err(Error::Dimension {
                        context: "weight vector",
                        expected: users,
                        got: w.len(),
                    });
                }
                if w.iter().any(|&x| x < 0.0) {
                    return Err(Error::invalid("weights must be nonnegative"));
                }
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!("weights must sum to 1, got {sum}")));
                }
                Ok(())
            }
            CostSpec::SumRLargest { r } => {
                if *r < 1 || *r > users {
                    return Err(Error::invalid(format!("r = {r} must be in 1..={users}")));
                }
                Ok(())
            }
            CostSpec::PNorm { p } => {
                if !(*p >= 1.0) {
                    return Err(Error::invalid(format!("p = {p} must be >= 1")));
                }
                if p.is_infinite() {
                    return Err(Error::invalid("p = inf is not supported; use kind \"max\""));
                }
                Ok(())
            }
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Evaluates `J(T)` exactly. Any infinite completion time yields `+inf`.
pub fn eval_cost(spec: &CostSpec, t: &[f64]) -> f64 {
    if t.iter().any(|x| x.is_infinite()) {
        return f64::INFINITY;
    }
    match spec {
        CostSpec::Max => t.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        CostSpec::WeightedSum { w } => w.iter().zip(t).map(|(wi, ti)| wi * ti).sum(),
        CostSpec::SumRLargest { r } => {
            let mut sorted = t.to_vec();
            // Descending; total order is fine since entries are finite.
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            sorted[..*r].iter().sum()
        }
        CostSpec::PNorm { p } => {
            // Max-factored to avoid overflow for large p.
            let tmax = t.iter().cloned().fold(0.0, f64::max);
            if tmax == 0.0 {
                return 0.0;
            }
            let s: f64 = t.iter().map(|&x| (x / tmax).powf(*p)).sum();
            tmax * s.powf(1.0 / p)
        }
    }
}

/// One linear inequality `sum c_i T_i + sum d_k aux_k <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearIneq {
    pub t_coeffs: Vec<(usize, f64)>,
    pub aux_coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Objective of an epigraph program, linear in `(T, aux)` or a smooth
/// p-norm kept without auxiliaries.
#[derive(Debug, Clone, PartialEq)]
pub enum EpigraphObjective {
    Linear {
        t_coeffs: Vec<f64>,
        aux_coeffs: Vec<f64>,
    },
    PNorm {
        p: f64,
    },
}

/// Smooth reformulation of a (possibly nonsmooth) cost: minimizing the
/// objective over `aux` at fixed `T` reproduces `eval_cost` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EpigraphProgram {
    pub naux: usize,
    pub constraints: Vec<LinearIneq>,
    pub objective: EpigraphObjective,
}

impl EpigraphProgram {
    /// Minimum of the objective over `aux` at fixed `T`, by the analytic
    /// inner solution. Used by tests and the value-equivalence invariant.
    pub fn min_over_aux(&self, t: &[f64]) -> f64 {
        match &self.objective {
            EpigraphObjective::PNorm { p } => eval_cost(&CostSpec::PNorm { p: *p }, t),
            EpigraphObjective::Linear { t_coeffs, aux_coeffs } => {
                if self.naux == 0 {
                    return t_coeffs.iter().zip(t).map(|(c, x)| c * x).sum();
                }
                // All aux-bearing forms here are scalar epigraphs of
                // max / sum-r-largest: minimize by scanning over the
                // epigraph threshold t0 among the candidate breakpoints.
                let base: f64 = t_coeffs.iter().zip(t).map(|(c, x)| c * x).sum();
                let mut best = f64::INFINITY;
                for &cand in t.iter().chain(std::iter::once(&0.0)) {
                    let mut aux = vec![0.0; self.naux];
                    aux[0] = cand;
                    for k in 1..self.naux {
                        // u_{k} >= T_{k-1} - t0, u >= 0
                        aux[k] = (t[k - 1] - cand).max(0.0);
                    }
                    // feasibility check against constraints
                    let feasible = self.constraints.iter().all(|c| {
                        let v: f64 = c.t_coeffs.iter().map(|&(i, a)| a * t[i]).sum::<f64>()
                            + c.aux_coeffs.iter().map(|&(k, d)| d * aux[k]).sum::<f64>();
                        v <= c.rhs + 1e-12
                    });
                    if feasible {
                        let obj = base + aux_coeffs.iter().zip(&aux).map(|(d, a)| d * a).sum::<f64>();
                        best = best.min(obj);
                    }
                }
                best
            }
        }
    }
}

/// Builds the epigraph reformulation of `spec` for `m` users.
pub fn epigraph_reform(spec: &CostSpec, m: usize) -> Result<EpigraphProgram> {
    spec.validate(m)?;
    Ok(match spec {
        CostSpec::Max => EpigraphProgram {
            naux: 1,
            constraints: (0..m)
                .map(|i| LinearIneq {
                    t_coeffs: vec![(i, 1.0)],
                    aux_coeffs: vec![(0, -1.0)],
                    rhs: 0.0,
                })
                .collect(),
            objective: EpigraphObjective::Linear {
                t_coeffs: vec![0.0; m],
                aux_coeffs: vec![1.0],
            },
        },
        CostSpec::WeightedSum { w } => EpigraphProgram {
            naux: 0,
            constraints: vec![],
            objective: EpigraphObjective::Linear {
                t_coeffs: w.clone(),
                aux_coeffs: vec![],
            },
        },
        CostSpec::SumRLargest { r } => {
            // aux = (t0, u_1..u_m): minimize r*t0 + sum u, u_i >= T_i - t0, u >= 0.
            let mut constraints: Vec<LinearIneq> = (0..m)
                .map(|i| LinearIneq {
                    t_coeffs: vec![(i, 1.0)],
                    aux_coeffs: vec![(0, -1.0), (i + 1, -1.0)],
                    rhs: 0.0,
                })
                .collect();
            constraints.extend((0..m).map(|i| LinearIneq {
                t_coeffs: vec![],
                aux_coeffs: vec![(i + 1, -1.0)],
                rhs: 0.0,
            }));
            let mut aux_coeffs = vec![1.0; m + 1];
            aux_coeffs[0] = *r as f64;
            EpigraphProgram {
                naux: m + 1,
                constraints,
                objective: EpigraphObjective::Linear {
                    t_coeffs: vec![0.0; m],
                    aux_coeffs,
                },
            }
        }
        CostSpec::PNorm { p } => {
            if *p == 1.0 {
                EpigraphProgram {
                    naux: 0,
                    constraints: vec![],
                    objective: EpigraphObjective::Linear {
                        t_coeffs: vec![1.0; m],
                        aux_coeffs: vec![],
                    },
                }
            } else {
                EpigraphProgram {
                    naux: 0,
                    constraints: vec![],
                    objective: EpigraphObjective::PNorm { p: *p },
                }
            }
        }
    })
}

/// `U_T(R) = -J(L_1/R_1, ..., L_M/R_M)`; `-inf` on any zero rate.
pub fn utility_from_cost(spec: &CostSpec, l: &[f64], r: &[f64]) -> f64 {
    if r.iter().any(|&x| x <= 0.0) {
        return f64::NEG_INFINITY;
    }
    let t: Vec<f64> = l.iter().zip(r).map(|(li, ri)| li / ri).collect();
    -eval_cost(spec, &t)
}

/// Weighted harmonic mean of the rates: `(sum w'_i / R_i)^(-1)`.
/// Returns 0 on any zero rate.
pub fn harmonic_mean_utility(wprime: &[f64], r: &[f64]) -> f64 {
    if r.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    let s: f64 = wprime.iter().zip(r).map(|(w, ri)| w / ri).sum();
    1.0 / s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_cost_catalog() {
        assert_relative_eq!(eval_cost(&CostSpec::Max, &[34.54, 78.72]), 78.72);
        assert_relative_eq!(eval_cost(&CostSpec::SumRLargest { r: 3 }, &[1.0, 2.0, 3.0]), 6.0);
        assert_relative_eq!(eval_cost(&CostSpec::PNorm { p: 1.0 }, &[1.0, 2.0, 3.0]), 6.0);
        assert_eq!(eval_cost(&CostSpec::Max, &[1.0, f64::INFINITY]), f64::INFINITY);
    }

    #[test]
    fn pnorm_large_p_no_overflow() {
        let v = eval_cost(&CostSpec::PNorm { p: 900.0 }, &[1e3, 2e3]);
        assert!(v.is_finite());
        assert_relative_eq!(v, 2e3, max_relative = 1e-2);
    }

    #[test]
    fn epigraph_shapes() {
        let max2 = epigraph_reform(&CostSpec::Max, 2).unwrap();
        assert_eq!(max2.naux, 1);
        assert_eq!(max2.constraints.len(), 2);
        let ws = epigraph_reform(&CostSpec::WeightedSum { w: vec![0.5, 0.5] }, 2).unwrap();
        assert_eq!(ws.naux, 0);
        assert!(epigraph_reform(&CostSpec::PNorm { p: f64::INFINITY }, 2).is_err());
    }

    #[test]
    fn sum_1_largest_equals_max() {
        let prog = epigraph_reform(&CostSpec::SumRLargest { r: 1 }, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let t: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..100.0)).collect();
            let v = prog.min_over_aux(&t);
            assert_relative_eq!(v, eval_cost(&CostSpec::Max, &t), max_relative = 1e-9);
        }
    }

    #[test]
    fn epigraph_value_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let specs = [
            CostSpec::Max,
            CostSpec::SumRLargest { r: 2 },
            CostSpec::SumRLargest { r: 3 },
            CostSpec::WeightedSum { w: vec![0.2, 0.3, 0.5] },
            CostSpec::PNorm { p: 1.0 },
            CostSpec::PNorm { p: 2.5 },
        ];
        for spec in &specs {
            let prog = epigraph_reform(spec, 3).unwrap();
            for _ in 0..50 {
                let t: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..100.0)).collect();
                let v = prog.min_over_aux(&t);
                assert_relative_eq!(v, eval_cost(spec, &t), max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn utility_from_cost_values() {
        let spec = CostSpec::WeightedSum { w: vec![1.0] };
        assert_relative_eq!(utility_from_cost(&spec, &[10.0], &[1.0]), -10.0);
        assert_eq!(utility_from_cost(&spec, &[10.0], &[0.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn weighted_sum_utility_is_potential_delay_fairness() {
        let w = vec![0.3, 0.7];
        let l = vec![10.0, 20.0];
        let r = vec![0.5, 1.5];
        let u = utility_from_cost(&CostSpec::WeightedSum { w: w.clone() }, &l, &r);
        let wprime: Vec<f64> = w.iter().zip(&l).map(|(wi, li)| wi * li).collect();
        let ud: f64 = -wprime.iter().zip(&r).map(|(wp, ri)| wp / ri).sum::<f64>();
        assert_relative_eq!(u, ud, max_relative = 1e-12);
    }

    #[test]
    fn max_cost_argmax_matches_min_rate_for_equal_lengths() {
        let l = vec![10.0, 10.0, 10.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let candidates: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.gen_range(0.05..2.0)).collect())
            .collect();
        let by_cost = candidates
            .iter()
            .enumerate()
            .max_by(|a, b| {
                utility_from_cost(&CostSpec::Max, &l, a.1)
                    .partial_cmp(&utility_from_cost(&CostSpec::Max, &l, b.1))
                    .unwrap()
            })
            .unwrap()
            .0;
        let by_min_rate = candidates
            .iter()
            .enumerate()
            .max_by(|a, b| {
                let ma = a.1.iter().cloned().fold(f64::INFINITY, f64::min);
                let mb = b.1.iter().cloned().fold(f64::INFINITY, f64::min);
                ma.partial_cmp(&mb).unwrap()
            })
            .unwrap()
            .0;
        assert_eq!(by_cost, by_min_rate);
    }

    #[test]
    fn harmonic_mean_values_and_jensen() {
        assert_relative_eq!(harmonic_mean_utility(&[0.5, 0.5], &[1.0, 1.0]), 1.0);
        assert_eq!(harmonic_mean_utility(&[0.5, 0.5], &[0.0, 1.0]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let m = rng.gen_range(1..5);
            let mut w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..2.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            let r: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..5.0)).collect();
            let lhs: f64 = w.iter().zip(&r).map(|(wi, ri)| wi * ri).sum();
            assert!(lhs >= harmonic_mean_utility(&w, &r) - 1e-12);
        }
        // Equality at equal rates with normalized weights.
        let w = vec![0.25, 0.25, 0.5];
        let r = vec![3.0, 3.0, 3.0];
        let lhs: f64 = w.iter().zip(&r).map(|(wi, ri)| wi * ri).sum();
        assert_relative_eq!(lhs, harmonic_mean_utility(&w, &r), max_relative = 1e-9);
        assert_relative_eq!(lhs, 3.0, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn midpoint_convexity(
            a in proptest::collection::vec(0.1f64..200.0, 3),
            b in proptest::collection::vec(0.1f64..200.0, 3),
        ) {
            let specs = [
                CostSpec::Max,
                CostSpec::WeightedSum { w: vec![0.2, 0.3, 0.5] },
                CostSpec::SumRLargest { r: 2 },
                CostSpec::PNorm { p: 3.0 },
            ];
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            for spec in &specs {
                let jm = eval_cost(spec, &mid);
                let avg = 0.5 * (eval_cost(spec, &a) + eval_cost(spec, &b));
                prop_assert!(jm <= avg + 1e-12 * avg.abs().max(1.0));
            }
        }

        #[test]
        fn weight_scaling_preserves_argmin(c in 0.1f64..10.0) {
            let w = vec![0.2, 0.8];
            let candidates = [[1.0, 5.0], [4.0, 2.0], [3.0, 3.0], [0.5, 9.0]];
            let argmin = |w: &[f64]| {
                candidates.iter().enumerate().min_by(|a, b| {
                    let va: f64 = w.iter().zip(a.1).map(|(wi, t)| wi * t).sum();
                    let vb: f64 = w.iter().zip(b.1).map(|(wi, t)| wi * t).sum();
                    va.partial_cmp(&vb).unwrap()
                }).unwrap().0
            };
            let scaled: Vec<f64> = w.iter().map(|x| c * x).collect();
            prop_assert_eq!(argmin(&w), argmin(&scaled));
        }
    }
}
