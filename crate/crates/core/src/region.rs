//! Completion-time region boundary tracing by weighted-sum sweeps, the
//! induced rate region, and convexity auditing.

use serde::Serialize;
use std::f64::consts::FRAC_PI_2;

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::model::NetworkInstance;
use crate::par;
use crate::solver::{solve_perfect_csi, SolveOptions};

/// One boundary point: the weighted-sum minimizer for its weight vector.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub theta: f64,
    pub w: Vec<f64>,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub cost: f64,
}

/// An ordered boundary trace, with per-point solver failures recorded
/// rather than aborting the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct RegionTrace {
    pub entries: Vec<TraceEntry>,
    pub failures: Vec<(f64, String)>,
    pub fingerprint: String,
}

/// Sweeps `k` weight vectors `w(theta) = (cos^2 theta, sin^2 theta)` with
/// `theta` uniform in the open interval `(0, pi/2)`, solving each via the
/// perfect-CSI solver. The squared-trig parametrization concentrates
/// samples near the axes where the boundary bends sharply.
pub fn trace_completion_region(inst: &NetworkInstance, k: usize, opts: &SolveOptions) -> Result<RegionTrace> {
    if inst.users() != 2 {
        return Err(Error::invalid(
            "angle sweep requires M = 2; use trace_with_weights for general M",
        ));
    }
    if k == 0 {
        return Err(Error::invalid("sweep needs at least one weight"));
    }
    let weights: Vec<(f64, Vec<f64>)> = (0..k)
        .map(|j| {
            let theta = FRAC_PI_2 * (j + 1) as f64 / (k + 1) as f64;
            let c = theta.cos();
            let s = theta.sin();
            (theta, vec![c * c, s * s])
        })
        .collect();
    trace_entries(inst, &weights, opts)
}

/// General-M sweep over an explicit weight list.
pub fn trace_with_weights(inst: &NetworkInstance, weights: &[Vec<f64>], opts: &SolveOptions) -> Result<RegionTrace> {
    let tagged: Vec<(f64, Vec<f64>)> = weights
        .iter()
        .enumerate()
        .map(|(j, w)| (j as f64, w.clone()))
        .collect();
    trace_entries(inst, &tagged, opts)
}

fn trace_entries(inst: &NetworkInstance, weights: &[(f64, Vec<f64>)], opts: &SolveOptions) -> Result<RegionTrace> {
    let results = par::map_indexed(weights.len(), |j| {
        let (theta, w) = &weights[j];
        let spec = CostSpec::WeightedSum { w: w.clone() };
        (*theta, w.clone(), solve_perfect_csi(inst, &spec, opts))
    });
    let mut entries = vec![];
    let mut failures = vec![];
    for (theta, w, res) in results {
        match res {
            Ok(sol) => {
                let r: Vec<f64> = inst
                    .packet_bits()
                    .iter()
                    .zip(&sol.time)
                    .map(|(li, ti)| li / ti)
                    .collect();
                entries.push(TraceEntry { theta, w, t: sol.time, r, cost: sol.cost });
            }
            Err(e) => failures.push((theta, e.to_string())),
        }
    }
    Ok(RegionTrace {
        entries,
        failures,
        fingerprint: inst.fingerprint(),
    })
}

impl RegionTrace {
    /// CSV for plotting: one row per sweep point (M = 2 only).
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from("theta,w1,w2,T1,T2,R1,R2,cost\n");
        for e in &self.entries {
            if e.w.len() != 2 {
                return Err(Error::invalid("CSV trace format is defined for M = 2"));
            }
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.theta, e.w[0], e.w[1], e.t[0], e.t[1], e.r[0], e.r[1], e.cost
            ));
        }
        Ok(out)
    }

    pub fn t_points(&self) -> Vec<(f64, f64)> {
        self.entries.iter().map(|e| (e.t[0], e.t[1])).collect()
    }

    pub fn r_points(&self) -> Vec<(f64, f64)> {
        self.entries.iter().map(|e| (e.r[0], e.r[1])).collect()
    }
}

/// Which boundary geometry to audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    /// Lower-left boundary of a region convex toward +infinity
    /// (completion times): checked via cross products of consecutive
    /// edges.
    CompletionTime,
    /// Upper-right Pareto boundary of a downward-closed region (rates):
    /// checked by searching all chords for a midpoint outside the traced
    /// polyline (a non-convexity witness).
    Rate,
}

#[derive(Debug, Clone, Serialize)]
pub enum Witness {
    /// Indices of three consecutive points with a wrong-signed turn.
    Triple(usize, usize, usize),
    /// Chord endpoints whose midpoint lies outside the traced region.
    Chord { i: usize, j: usize, midpoint: (f64, f64) },
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub convex: bool,
    pub worst_violation: f64,
    pub witness: Option<Witness>,
}

/// Audits convexity of a traced 2-D boundary. Tolerance is relative to
/// the local edge scale.
pub fn convexity_audit(points: &[(f64, f64)], kind: PointKind) -> Result<AuditReport> {
    if points.len() < 3 {
        return Err(Error::invalid("convexity audit needs at least 3 points"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    match kind {
        PointKind::CompletionTime => {
            let mut worst = 0.0f64;
            let mut witness = None;
            for i in 0..pts.len() - 2 {
                let (a, b, c) = (pts[i], pts[i + 1], pts[i + 2]);
                let e1 = (b.0 - a.0, b.1 - a.1);
                let e2 = (c.0 - b.0, c.1 - b.1);
                let cross = e1.0 * e2.1 - e1.1 * e2.0;
                let scale = (e1.0.hypot(e1.1)) * (e2.0.hypot(e2.1));
                if scale == 0.0 {
                    continue;
                }
                // Convex lower-left boundary: slope nondecreasing, so the
                // normalized cross must not go negative.
                let violation = (-cross / scale).max(0.0);
                if violation > worst {
                    worst = violation;
                    witness = Some(Witness::Triple(i, i + 1, i + 2));
                }
            }
            let convex = worst <= 1e-7;
            Ok(AuditReport {
                convex,
                worst_violation: worst,
                witness: if convex { None } else { witness },
            })
        }
        PointKind::Rate => {
            // Region membership is decided against the traced polyline
            // (a conservative inner approximation of the region).
            let interp = |x: f64| -> Option<f64> {
                if x < pts[0].0 || x > pts[pts.len() - 1].0 {
                    return None;
                }
                for w in pts.windows(2) {
                    if x >= w[0].0 && x <= w[1].0 {
                        let span = w[1].0 - w[0].0;
                        if span == 0.0 {
                            return Some(w[0].1.max(w[1].1));
                        }
                        let u = (x - w[0].0) / span;
                        return Some(w[0].1 + u * (w[1].1 - w[0].1));
                    }
                }
                None
            };
            let yscale = pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max).max(1e-30);
            let mut worst = 0.0f64;
            let mut witness = None;
            for i in 0..pts.len() {
                for j in i + 2..pts.len() {
                    let mx = 0.5 * (pts[i].0 + pts[j].0);
                    let my = 0.5 * (pts[i].1 + pts[j].1);
                    if let Some(by) = interp(mx) {
                        let violation = (my - by) / yscale;
                        if violation > worst {
                            worst = violation;
                            witness = Some(Witness::Chord { i, j, midpoint: (mx, my) });
                        }
                    }
                }
            }
            let convex = worst <= 1e-7;
            Ok(AuditReport {
                convex,
                worst_violation: worst,
                witness: if convex { None } else { witness },
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::brute_force_oracle;
    use crate::testutil::reference_instance;
    use approx::assert_relative_eq;

    fn reference_instance_with_caps() -> NetworkInstance {
        NetworkInstance::new(
            vec![vec![0.42, 0.89], vec![0.63, 0.15]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![10.0, 10.0],
            Some(vec![1000.0, 1000.0]),
        )
        .unwrap()
    }

    #[test]
    fn audit_circle_arc_convex() {
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|k| {
                let a = FRAC_PI_2 * (k as f64 + 0.5) / 20.0;
                (1.0 - a.cos(), 1.0 - a.sin())
            })
            .collect();
        let rep = convexity_audit(&pts, PointKind::CompletionTime).unwrap();
        assert!(rep.convex, "violation {}", rep.worst_violation);
    }

    #[test]
    fn audit_hyperbola_convex() {
        let pts: Vec<(f64, f64)> = (1..40).map(|k| (k as f64 * 0.25, 1.0 / (k as f64 * 0.25))).collect();
        let rep = convexity_audit(&pts, PointKind::CompletionTime).unwrap();
        assert!(rep.convex);
    }

    #[test]
    fn audit_rejects_too_few_points() {
        assert!(convexity_audit(&[(0.0, 0.0), (1.0, 1.0)], PointKind::CompletionTime).is_err());
    }

    #[test]
    fn audit_rate_kind_finds_nonconvex_witness() {
        // Concave-up dip: midpoint of the outer chord lies above the line.
        let pts = vec![(0.0, 1.0), (0.5, 0.2), (1.0, 0.9)];
        let rep = convexity_audit(&pts, PointKind::Rate).unwrap();
        assert!(!rep.convex);
        assert!(matches!(rep.witness, Some(Witness::Chord { .. })));
    }

    #[test]
    fn reference_trace_t_convex_r_nonconvex() {
        let inst = reference_instance_with_caps();
        let trace = trace_completion_region(&inst, 33, &SolveOptions::default()).unwrap();
        assert_eq!(trace.entries.len(), 33);
        let t_audit = convexity_audit(&trace.t_points(), PointKind::CompletionTime).unwrap();
        assert!(t_audit.convex, "T-trace violation {}", t_audit.worst_violation);
        let r_audit = convexity_audit(&trace.r_points(), PointKind::Rate).unwrap();
        assert!(!r_audit.convex, "expected a non-convexity witness in the rate trace");
    }

    #[test]
    fn trace_extreme_points_within_bounds() {
        let inst = reference_instance_with_caps();
        let trace = trace_completion_region(&inst, 33, &SolveOptions::default()).unwrap();
        for e in &trace.entries {
            for i in 0..2 {
                let lower = inst.single_user_time(i);
                assert!(e.t[i] >= lower - 1e-9, "T{i} = {} below single-user bound {lower}", e.t[i]);
                assert!(e.t[i] <= 1000.0 + 1e-6);
            }
        }
    }

    #[test]
    fn trace_definition_consistency_and_weight_optimality() {
        let inst = reference_instance();
        let trace = trace_completion_region(&inst, 9, &SolveOptions::default()).unwrap();
        for e in &trace.entries {
            for i in 0..2 {
                assert_relative_eq!(e.r[i] * e.t[i], 10.0, max_relative = 1e-9);
            }
        }
        // Each entry is optimal for its own weight among all entries.
        for a in &trace.entries {
            let va: f64 = a.w.iter().zip(&a.t).map(|(w, t)| w * t).sum();
            for b in &trace.entries {
                let vb: f64 = a.w.iter().zip(&b.t).map(|(w, t)| w * t).sum();
                assert!(va <= vb * (1.0 + 1e-6), "entry not optimal for its weight");
            }
        }
    }

    #[test]
    fn symmetric_instance_trace_symmetric() {
        let inst = NetworkInstance::new(
            vec![vec![1.0, 0.4], vec![0.4, 1.0]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![10.0, 10.0],
            None,
        )
        .unwrap();
        let trace = trace_completion_region(&inst, 11, &SolveOptions::default()).unwrap();
        let n = trace.entries.len();
        for k in 0..n {
            let a = &trace.entries[k];
            let b = &trace.entries[n - 1 - k];
            assert_relative_eq!(a.t[0], b.t[1], max_relative = 1e-6);
            assert_relative_eq!(a.t[1], b.t[0], max_relative = 1e-6);
        }
    }

    #[test]
    fn extreme_weight_matches_grid_oracle() {
        let inst = reference_instance();
        let w = vec![0.999, 0.001];
        let trace = trace_with_weights(&inst, &[w.clone()], &SolveOptions::default()).unwrap();
        let e = &trace.entries[0];
        let oracle = brute_force_oracle(&inst, &CostSpec::WeightedSum { w }, 200);
        assert_relative_eq!(e.cost, oracle.cost, max_relative = 2e-3);
    }

    #[test]
    fn csv_shape() {
        let inst = reference_instance();
        let trace = trace_completion_region(&inst, 5, &SolveOptions::default()).unwrap();
        let csv = trace.to_csv().unwrap();
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines[0], "theta,w1,w2,T1,T2,R1,R2,cost");
        assert_eq!(lines.len(), 6);
    }
}
