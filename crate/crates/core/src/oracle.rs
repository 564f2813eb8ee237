//! Per-slot optimal constrained randomized policy over the finite codebook.
//!
//! Each slot poses the linear program
//!
//! ```text
//! max_p  sum_i p_i f_i    s.t.  sum_i p_i g_i <= 0,  p in the simplex
//! ```
//!
//! With one linear constraint on top of the simplex the optimum is attained
//! either at a vertex (a single feasible arm) or on an edge binding the
//! constraint (a mixture of exactly two arms with opposite-sign `g`). Direct
//! enumeration of arms and opposite-sign pairs is O(n^2) per slot, which is
//! trivial at codebook sizes, so no LP solver is involved.

use thiserror::Error;

use crate::env::EnvironmentTrace;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("empty arm set")]
    EmptyArms,

    #[error("length mismatch: {f} reward values vs {g} constraint values")]
    LengthMismatch { f: usize, g: usize },

    #[error("no feasible policy at slot {t}: every arm violates the constraint")]
    Infeasible { t: usize },
}

/// Optimal feasible policy for one slot: at most two arms.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePolicy {
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    /// Expected reward under the policy.
    pub value: f64,
    /// Expected constraint under the policy (<= 0).
    pub cost: f64,
}

/// Solve the single-constraint simplex LP for one `(f, g)` row.
///
/// Ties prefer a deterministic single arm, then the lexicographically
/// smallest pair, so results are reproducible.
pub fn solve_optimal_policy(f_row: &[f64], g_row: &[f64]) -> Result<OraclePolicy, OracleError> {
    if f_row.is_empty() {
        return Err(OracleError::EmptyArms);
    }
    if f_row.len() != g_row.len() {
        return Err(OracleError::LengthMismatch { f: f_row.len(), g: g_row.len() });
    }

    // Best single feasible arm.
    let mut best: Option<OraclePolicy> = None;
    for (i, (&f, &g)) in f_row.iter().zip(g_row).enumerate() {
        if g <= 0.0 && best.as_ref().map_or(true, |b| f > b.value) {
            best = Some(OraclePolicy { support: vec![i], weights: vec![1.0], value: f, cost: g });
        }
    }
    let mut best = best.ok_or(OracleError::Infeasible { t: 0 })?;

    // Two-arm mixtures binding the constraint: need opposite strict signs.
    for i in 0..f_row.len() {
        if g_row[i] <= 0.0 {
            continue;
        }
        for j in 0..f_row.len() {
            if g_row[j] >= 0.0 {
                continue;
            }
            // p g_i + (1-p) g_j = 0
            let p = -g_row[j] / (g_row[i] - g_row[j]);
            let value = p * f_row[i] + (1.0 - p) * f_row[j];
            if value > best.value {
                let (lo, hi, p_lo) = if i < j { (i, j, p) } else { (j, i, 1.0 - p) };
                best = OraclePolicy {
                    support: vec![lo, hi],
                    weights: vec![p_lo, 1.0 - p_lo],
                    value,
                    cost: p * g_row[i] + (1.0 - p) * g_row[j],
                };
            }
        }
    }
    Ok(best)
}

/// Oracle expected reward per slot; the dynamic-regret baseline.
pub fn oracle_reward_series(trace: &EnvironmentTrace) -> Result<Vec<f64>, OracleError> {
    (1..=trace.horizon())
        .map(|t| {
            solve_optimal_policy(trace.f_row(t), trace.g_row(t))
                .map(|p| p.value)
                .map_err(|e| match e {
                    OracleError::Infeasible { .. } => OracleError::Infeasible { t },
                    other => other,
                })
        })
        .collect()
}

/// Reward of the best feasible deterministic arm per slot; the comparison
/// baseline for the randomized LP oracle.
pub fn best_feasible_series(trace: &EnvironmentTrace) -> Result<Vec<f64>, OracleError> {
    (1..=trace.horizon())
        .map(|t| {
            let f = trace.f_row(t);
            let g = trace.g_row(t);
            f.iter()
                .zip(g)
                .filter(|(_, &gv)| gv <= 0.0)
                .map(|(&fv, _)| fv)
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
                .ok_or(OracleError::Infeasible { t })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_trace, BeamCodebook, ChannelModel, Drift};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Brute-force grid over all two-arm mixtures, used as the independent
    /// check on the enumeration.
    fn grid_oracle(f: &[f64], g: &[f64], step: f64) -> f64 {
        let n = f.len();
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            for j in i..n {
                let mut p: f64 = 0.0;
                while p <= 1.0 + 1e-12 {
                    let pv = p.min(1.0);
                    if pv * g[i] + (1.0 - pv) * g[j] <= 0.0 {
                        best = best.max(pv * f[i] + (1.0 - pv) * f[j]);
                    }
                    p += step;
                }
            }
        }
        best
    }

    #[test]
    fn all_feasible_picks_argmax() {
        let p = solve_optimal_policy(&[0.2, 0.9, 0.5], &[-0.1, -0.2, -0.3]).unwrap();
        assert_eq!(p.support, vec![1]);
        assert_eq!(p.weights, vec![1.0]);
        assert_eq!(p.value, 0.9);
        assert!(p.cost <= 0.0);
    }

    #[test]
    fn binding_mixture_splits_evenly() {
        let p = solve_optimal_policy(&[1.0, 0.0], &[1.0, -1.0]).unwrap();
        assert_eq!(p.support, vec![0, 1]);
        assert_abs_diff_eq!(p.weights[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.value, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.cost, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mixture_matches_fine_grid() {
        let f = [1.0, 0.9];
        let g = [0.1, -1.0];
        let p = solve_optimal_policy(&f, &g).unwrap();
        assert_abs_diff_eq!(p.weights[0], 1.0 / 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(p.value, 1.0 / 1.1 + (0.1 / 1.1) * 0.9, epsilon = 1e-12);
        let grid = grid_oracle(&f, &g, 1e-6);
        assert_abs_diff_eq!(p.value, grid, epsilon = 1e-6);
    }

    #[test]
    fn infeasible_row_is_error() {
        assert!(matches!(
            solve_optimal_policy(&[1.0, 2.0], &[0.5, 0.1]),
            Err(OracleError::Infeasible { .. })
        ));
        assert!(matches!(solve_optimal_policy(&[], &[]), Err(OracleError::EmptyArms)));
        assert!(matches!(
            solve_optimal_policy(&[1.0], &[0.0, 0.0]),
            Err(OracleError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn five_arm_row_matches_grid() {
        let f = [0.3, 0.8, 0.55, 0.9, 0.1];
        let g = [-0.4, 0.25, -0.05, 0.6, -0.9];
        let p = solve_optimal_policy(&f, &g).unwrap();
        let grid = grid_oracle(&f, &g, 1e-6);
        assert_abs_diff_eq!(p.value, grid, epsilon = 1e-6);
        assert!(p.cost <= 1e-9);
    }

    #[test]
    fn series_follows_trace_structure() {
        let cb = BeamCodebook::uniform(2, 8).unwrap();
        let model = ChannelModel {
            paths: 3,
            interferers: 2,
            drift: Drift::Abrupt { change_times: vec![10] },
            ..ChannelModel::default()
        };
        let trace = generate_trace(&model, &cb, 20, 2).unwrap();
        let series = oracle_reward_series(&trace).unwrap();
        // piecewise constant with a jump only at the change slot
        for t in 2..=20 {
            if t == 10 {
                continue;
            }
            assert_eq!(series[t - 1], series[t - 2], "slot {t}");
        }
        let stationary =
            generate_trace(
                &ChannelModel {
                    drift: Drift::Abrupt { change_times: vec![] },
                    paths: 3,
                    interferers: 2,
                    ..ChannelModel::default()
                },
                &cb,
                20,
                2,
            )
            .unwrap();
        let flat = oracle_reward_series(&stationary).unwrap();
        assert!(flat.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn best_feasible_never_exceeds_lp() {
        let cb = BeamCodebook::uniform(2, 8).unwrap();
        let model = ChannelModel {
            paths: 3,
            interferers: 2,
            drift: Drift::Abrupt { change_times: vec![15] },
            ..ChannelModel::default()
        };
        let trace = generate_trace(&model, &cb, 30, 4).unwrap();
        let lp = oracle_reward_series(&trace).unwrap();
        let det = best_feasible_series(&trace).unwrap();
        for (a, b) in lp.iter().zip(&det) {
            assert!(a >= b);
        }
    }

    fn row_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..10).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
            )
                .prop_map(|(f, mut g)| {
                    g[0] = -g[0].abs() - 0.01; // guarantee a feasible arm
                    (f, g)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_certificate_beats_feasible_mixtures((f, g) in row_strategy(), mix_seed in 0u64..1000) {
            let p = solve_optimal_policy(&f, &g).unwrap();
            prop_assert!(p.cost <= 1e-9);
            let wsum: f64 = p.weights.iter().sum();
            prop_assert!((wsum - 1.0).abs() <= 1e-12);
            prop_assert!(p.weights.iter().all(|w| *w >= 0.0));
            prop_assert!(p.support.len() <= 2);

            // every feasible single arm
            for i in 0..f.len() {
                if g[i] <= 0.0 {
                    prop_assert!(p.value >= f[i] - 1e-9);
                }
            }
            // sampled feasible two-arm mixtures
            let mut s = mix_seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
            let mut unif = || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64) / (1u64 << 53) as f64
            };
            for _ in 0..1000 {
                let i = (unif() * f.len() as f64) as usize % f.len();
                let j = (unif() * f.len() as f64) as usize % f.len();
                let w = unif();
                if w * g[i] + (1.0 - w) * g[j] <= 0.0 {
                    prop_assert!(p.value >= w * f[i] + (1.0 - w) * f[j] - 1e-9);
                }
            }
        }

        #[test]
        fn prop_scale_equivariance((f, g) in row_strategy(), cf in 0.1f64..5.0, cg in 0.1f64..5.0) {
            let base = solve_optimal_policy(&f, &g).unwrap();
            let fs: Vec<f64> = f.iter().map(|v| v * cf).collect();
            let scaled_f = solve_optimal_policy(&fs, &g).unwrap();
            prop_assert_eq!(&scaled_f.support, &base.support);
            prop_assert!((scaled_f.value - cf * base.value).abs() <= 1e-9 * cf.max(1.0));

            let gs: Vec<f64> = g.iter().map(|v| v * cg).collect();
            let scaled_g = solve_optimal_policy(&f, &gs).unwrap();
            prop_assert_eq!(&scaled_g.support, &base.support);
            for (a, b) in scaled_g.weights.iter().zip(&base.weights) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
