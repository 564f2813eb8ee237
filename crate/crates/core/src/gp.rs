//! Gaussian-process posterior inference with incremental Cholesky updates.
//!
//! The surrogate model conditions on observations `(x_i, y_i)` and answers
//! mean/variance queries:
//!
//! ```text
//! mean(x) = k_t(x)^T (K_t + lambda I)^{-1} y_{1:t}
//! var(x)  = k(x, x) - k_t(x)^T (K_t + lambda I)^{-1} k_t(x)
//! ```
//!
//! The factor of `K_t + lambda I` is maintained by appending one Cholesky row
//! per observation (O(t^2) instead of a full O(t^3) refactorization), and the
//! realized information gain of the observed set is accumulated alongside:
//! each observation adds `(1/2) log(1 + var_prev(x) / lambda)`.

use thiserror::Error;

use crate::kernels::{gram, KernelError, KernelSpec};
use crate::linalg::LowerTriangular;

/// Errors from posterior construction and updates.
#[derive(Debug, Error)]
pub enum GpError {
    #[error("invalid regularizer: {0}")]
    InvalidRegularizer(f64),

    #[error("non-finite observation target: {0}")]
    NonFiniteTarget(f64),

    #[error(transparent)]
    Kernel(#[from] KernelError),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// GP posterior over one scalar function, reset-able between restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    spec: KernelSpec,
    regularizer: f64,
    points: Vec<Vec<f64>>,
    targets: Vec<f64>,
    chol: LowerTriangular,
    /// `(K + lambda I)^{-1} targets`, refreshed after every update.
    weights: Vec<f64>,
    info_gain: f64,
    /// Bumped when a round-off fallback rebuilds the factor; lets probe
    /// caches notice that incremental rows are stale.
    refactor_count: u32,
}

impl PosteriorState {
    /// Empty posterior: prior mean 0, prior variance `k(x, x)`.
    pub fn new(spec: KernelSpec, regularizer: f64) -> Result<Self, GpError> {
        if !(regularizer > 0.0) || !regularizer.is_finite() {
            return Err(GpError::InvalidRegularizer(regularizer));
        }
        Ok(Self {
            spec,
            regularizer,
            points: Vec::new(),
            targets: Vec::new(),
            chol: LowerTriangular::new(),
            weights: Vec::new(),
            info_gain: 0.0,
            refactor_count: 0,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn regularizer(&self) -> f64 {
        self.regularizer
    }

    /// Number of observations since the last reset.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Realized information gain of the observed set.
    pub fn info_gain(&self) -> f64 {
        self.info_gain
    }

    /// Condition on one observation `(x, y)`.
    pub fn update(&mut self, x: &[f64], y: f64) -> Result<(), GpError> {
        self.spec.check_dim(x)?;
        if !y.is_finite() {
            return Err(GpError::NonFiniteTarget(y));
        }
        let cross: Vec<f64> =
            self.points.iter().map(|p| self.spec.eval_unchecked(p, x)).collect();
        let diag = self.spec.eval_unchecked(x, x) + self.regularizer;
        self.points.push(x.to_vec());
        self.targets.push(y);
        match self.chol.append(&cross, diag) {
            Some(pivot) => {
                // pivot^2 = lambda + var_prev(x), so the gain increment is
                // (1/2) log(pivot^2 / lambda)
                self.info_gain += 0.5 * (pivot * pivot / self.regularizer).ln();
                self.weights = self.chol.solve(&self.targets);
                Ok(())
            }
            None => self.refactorize(),
        }
    }

    /// Posterior mean at `x`.
    pub fn mean(&self, x: &[f64]) -> Result<f64, GpError> {
        self.spec.check_dim(x)?;
        if self.points.is_empty() {
            return Ok(0.0);
        }
        Ok(self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| self.spec.eval_unchecked(p, x) * w)
            .sum())
    }

    /// Posterior variance at `x`, clamped at 0 against round-off.
    pub fn variance(&self, x: &[f64]) -> Result<f64, GpError> {
        Ok(self.predict(x)?.1)
    }

    /// Posterior mean and variance at `x` with the cross-kernel vector built once.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64), GpError> {
        self.spec.check_dim(x)?;
        let prior_var = self.spec.eval_unchecked(x, x);
        if self.points.is_empty() {
            return Ok((0.0, prior_var.max(0.0)));
        }
        let cross: Vec<f64> =
            self.points.iter().map(|p| self.spec.eval_unchecked(p, x)).collect();
        let mean = cross.iter().zip(&self.weights).map(|(k, w)| k * w).sum();
        let solved = self.chol.forward_solve(&cross);
        let explained: f64 = solved.iter().map(|v| v * v).sum();
        Ok((mean, (prior_var - explained).max(0.0)))
    }

    /// Rebuild the factor from scratch; fallback when a row append loses
    /// positive definiteness to round-off.
    fn refactorize(&mut self) -> Result<(), GpError> {
        let n = self.points.len();
        let gram = gram(&self.spec, &self.points)?;
        let mut shifted = gram.entries().to_vec();
        for i in 0..n {
            shifted[i * n + i] += self.regularizer;
        }
        self.chol = LowerTriangular::factor(&shifted, n).ok_or_else(|| {
            GpError::Numerical("K + lambda I lost positive definiteness".into())
        })?;
        self.info_gain = 0.5 * (self.chol.log_det() - n as f64 * self.regularizer.ln());
        self.weights = self.chol.solve(&self.targets);
        self.refactor_count += 1;
        Ok(())
    }

    fn last_chol_row(&self) -> Option<(&[f64], f64)> {
        let row = self.chol.last_row()?;
        let (pivot, off_diag) = row.split_last()?;
        Some((off_diag, *pivot))
    }
}

/// Incremental mean/variance over a fixed probe set, kept in lockstep with a
/// growing [`PosteriorState`].
///
/// Scoring every arm through [`PosteriorState::predict`] costs a triangular
/// solve per probe per observation. For a fixed probe set the solved vectors
/// `v_j = L^{-1} k_t(x_j)` only ever gain one trailing entry per observation,
/// so this cache maintains them (and the running mean / explained variance
/// per probe) in O(probes * observations) per update. [`ProbeCache::sync`]
/// absorbs one new observation on the fast path and falls back to a full
/// rebuild after resets or factor rebuilds.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCache {
    probes: Vec<Vec<f64>>,
    prior: Vec<f64>,
    v: Vec<Vec<f64>>,
    u: Vec<f64>,
    mean: Vec<f64>,
    explained: Vec<f64>,
    seen_obs: usize,
    seen_refactors: u32,
}

impl ProbeCache {
    pub fn new(state: &PosteriorState, probes: Vec<Vec<f64>>) -> Result<Self, GpError> {
        for p in &probes {
            state.spec.check_dim(p)?;
        }
        let prior =
            probes.iter().map(|p| state.spec.eval_unchecked(p, p)).collect::<Vec<_>>();
        let n = probes.len();
        let mut cache = Self {
            probes,
            prior,
            v: vec![Vec::new(); n],
            u: Vec::new(),
            mean: vec![0.0; n],
            explained: vec![0.0; n],
            seen_obs: 0,
            seen_refactors: state.refactor_count,
        };
        cache.rebuild(state);
        Ok(cache)
    }

    pub fn n_probes(&self) -> usize {
        self.probes.len()
    }

    pub fn probe(&self, index: usize) -> &[f64] {
        &self.probes[index]
    }

    /// Prior variance `k(x_j, x_j)` of a probe.
    pub fn prior_variance(&self, index: usize) -> f64 {
        self.prior[index]
    }

    /// Posterior mean and variance at a probe, clamped at 0 like
    /// [`PosteriorState::predict`].
    pub fn predict(&self, index: usize) -> (f64, f64) {
        (self.mean[index], (self.prior[index] - self.explained[index]).max(0.0))
    }

    /// Catch up with the posterior: one incremental row when exactly one
    /// observation arrived, a rebuild otherwise.
    pub fn sync(&mut self, state: &PosteriorState) {
        let fast = state.refactor_count == self.seen_refactors
            && state.len() == self.seen_obs + 1;
        if fast {
            let (off_diag, pivot) =
                state.last_chol_row().expect("posterior has observations");
            let x = state.points.last().expect("posterior has observations");
            let y = *state.targets.last().expect("posterior has observations");
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            let u_new = (y - dot(off_diag, &self.u)) / pivot;
            self.u.push(u_new);
            for j in 0..self.probes.len() {
                let k = state.spec.eval_unchecked(x, &self.probes[j]);
                let v_new = (k - dot(off_diag, &self.v[j])) / pivot;
                self.mean[j] += v_new * u_new;
                self.explained[j] += v_new * v_new;
                self.v[j].push(v_new);
            }
            self.seen_obs += 1;
        } else {
            self.rebuild(state);
        }
    }

    fn rebuild(&mut self, state: &PosteriorState) {
        self.u = state.chol.forward_solve(&state.targets);
        for j in 0..self.probes.len() {
            let cross: Vec<f64> = state
                .points
                .iter()
                .map(|p| state.spec.eval_unchecked(p, &self.probes[j]))
                .collect();
            let v = state.chol.forward_solve(&cross);
            self.mean[j] = v.iter().zip(&self.u).map(|(a, b)| a * b).sum();
            self.explained[j] = v.iter().map(|a| a * a).sum();
            self.v[j] = v;
        }
        self.seen_obs = state.len();
        self.seen_refactors = state.refactor_count;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::empirical_info_gain;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn se(l: f64, d: usize) -> KernelSpec {
        KernelSpec::squared_exponential(l, d).unwrap()
    }

    /// From-scratch dense solve of the posterior equations via nalgebra;
    /// deliberately independent of `PosteriorState`'s incremental path.
    fn dense_oracle(
        spec: &KernelSpec,
        lambda: f64,
        points: &[Vec<f64>],
        targets: &[f64],
        probe: &[f64],
    ) -> (f64, f64) {
        let n = points.len();
        if n == 0 {
            return (0.0, spec.evaluate(probe, probe).unwrap());
        }
        let k = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            spec.evaluate(&points[i], &points[j]).unwrap()
                + if i == j { lambda } else { 0.0 }
        });
        let kv = nalgebra::DVector::from_fn(n, |i, _| spec.evaluate(&points[i], probe).unwrap());
        let y = nalgebra::DVector::from_column_slice(targets);
        let lu = k.lu();
        let alpha = lu.solve(&y).expect("dense solve");
        let kinv_kv = lu.solve(&kv).expect("dense solve");
        let mean = kv.dot(&alpha);
        let var = spec.evaluate(probe, probe).unwrap() - kv.dot(&kinv_kv);
        (mean, var)
    }

    #[test]
    fn fresh_posterior_is_prior() {
        let p = PosteriorState::new(se(1.0, 2), 0.2).unwrap();
        assert_eq!(p.mean(&[0.3, 0.3]).unwrap(), 0.0);
        assert_eq!(p.variance(&[0.3, 0.3]).unwrap(), 1.0);
        assert_eq!(p.info_gain(), 0.0);
        assert!(p.is_empty());
    }

    #[test]
    fn rejects_bad_regularizer() {
        assert!(PosteriorState::new(se(1.0, 2), 0.0).is_err());
        assert!(PosteriorState::new(se(1.0, 2), -1.0).is_err());
        assert!(PosteriorState::new(se(1.0, 2), f64::NAN).is_err());
    }

    #[test]
    fn rejects_non_finite_target() {
        let mut p = PosteriorState::new(se(1.0, 2), 0.2).unwrap();
        assert!(matches!(p.update(&[0.0, 0.0], f64::NAN), Err(GpError::NonFiniteTarget(_))));
        assert!(matches!(p.update(&[0.0, 0.0], f64::INFINITY), Err(GpError::NonFiniteTarget(_))));
    }

    #[test]
    fn zero_target_keeps_zero_mean() {
        let mut p = PosteriorState::new(se(1.0, 2), 0.2).unwrap();
        p.update(&[0.5, 0.5], 0.0).unwrap();
        assert_abs_diff_eq!(p.mean(&[0.5, 0.5]).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn single_observation_closed_form() {
        // K_1 = [1], k_1(x) = [1], lambda = 1:
        // mean = 1/(1+1) = 0.5, var = 1 - 1/2 = 0.5
        let mut p = PosteriorState::new(se(1.0, 2), 1.0).unwrap();
        let x = [0.2, -0.1];
        p.update(&x, 1.0).unwrap();
        assert_abs_diff_eq!(p.mean(&x).unwrap(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(p.variance(&x).unwrap(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn matches_dense_oracle_after_random_updates() {
        let spec = se(1.0, 3);
        let lambda = 0.2;
        let mut p = PosteriorState::new(spec, lambda).unwrap();
        let mut s = 991u64;
        let mut unif = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / (1u64 << 53) as f64
        };
        let mut points = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| unif() * 2.0 - 1.0).collect();
            let y = unif() * 2.0 - 1.0;
            p.update(&x, y).unwrap();
            points.push(x);
            targets.push(y);
        }
        for _ in 0..5 {
            let probe: Vec<f64> = (0..3).map(|_| unif() * 2.0 - 1.0).collect();
            let (em, ev) = dense_oracle(&spec, lambda, &points, &targets, &probe);
            assert_abs_diff_eq!(p.mean(&probe).unwrap(), em, epsilon = 1e-8);
            assert_abs_diff_eq!(p.variance(&probe).unwrap(), ev.max(0.0), epsilon = 1e-8);
        }
    }

    #[test]
    fn distant_points_leave_mean_near_zero() {
        let mut p = PosteriorState::new(se(1.0, 2), 0.2).unwrap();
        for i in 0..6 {
            p.update(&[100.0 + i as f64, 100.0], 5.0).unwrap();
        }
        let probe = [0.0, 0.0];
        assert!(p.mean(&probe).unwrap().abs() < 1e-6);
        let (em, _) = dense_oracle(&se(1.0, 2), 0.2, p.points(), p.targets(), &probe);
        assert_abs_diff_eq!(p.mean(&probe).unwrap(), em, epsilon = 1e-10);
    }

    #[test]
    fn duplicate_observation_matches_dense_oracle() {
        let spec = se(1.0, 2);
        let lambda = 0.3;
        let mut p = PosteriorState::new(spec, lambda).unwrap();
        let x = [0.4, 0.4];
        p.update(&x, 0.8).unwrap();
        p.update(&x, 0.8).unwrap();
        let (em, ev) = dense_oracle(&spec, lambda, p.points(), p.targets(), &x);
        assert_abs_diff_eq!(p.mean(&x).unwrap(), em, epsilon = 1e-10);
        assert_abs_diff_eq!(p.variance(&x).unwrap(), ev.max(0.0), epsilon = 1e-10);
    }

    #[test]
    fn info_gain_tracks_batch_formula() {
        let spec = se(1.0, 2);
        let lambda = 0.2;
        let mut p = PosteriorState::new(spec, lambda).unwrap();
        let mut s = 5u64;
        let mut unif = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / (1u64 << 53) as f64
        };
        for i in 0..15 {
            p.update(&[unif(), unif()], i as f64 * 0.1).unwrap();
            let batch = empirical_info_gain(&spec, p.points(), lambda).unwrap();
            assert_abs_diff_eq!(p.info_gain(), batch, epsilon = 1e-8);
        }
    }

    #[test]
    fn variance_shrinks_with_observations() {
        let mut p = PosteriorState::new(se(1.0, 2), 0.2).unwrap();
        let probe = [0.25, 0.25];
        let mut prev = p.variance(&probe).unwrap();
        let mut s = 404u64;
        let mut unif = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / (1u64 << 53) as f64
        };
        for _ in 0..25 {
            p.update(&[unif(), unif()], 0.3).unwrap();
            let v = p.variance(&probe).unwrap();
            assert!(v <= prev + 1e-10, "variance grew: {prev} -> {v}");
            prev = v;
        }
    }

    #[test]
    fn reset_equals_fresh_state() {
        let spec = se(1.0, 2);
        let mut p = PosteriorState::new(spec, 0.2).unwrap();
        p.update(&[0.1, 0.2], 1.0).unwrap();
        p.update(&[0.3, 0.1], -1.0).unwrap();
        let reset = PosteriorState::new(spec, 0.2).unwrap();
        p = PosteriorState::new(spec, 0.2).unwrap();
        assert_eq!(p, reset);
    }

    #[test]
    fn probe_cache_tracks_posterior_predictions() {
        let spec = se(1.0, 3);
        let lambda = 0.2;
        let mut s = 2024u64;
        let mut unif = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / (1u64 << 53) as f64
        };
        let probes: Vec<Vec<f64>> =
            (0..7).map(|_| (0..3).map(|_| unif() * 2.0 - 1.0).collect()).collect();
        let mut post = PosteriorState::new(spec, lambda).unwrap();
        let mut cache = ProbeCache::new(&post, probes.clone()).unwrap();
        for (j, p) in probes.iter().enumerate() {
            let (m, v) = cache.predict(j);
            assert_eq!(m, 0.0);
            assert_eq!(v, spec.evaluate(p, p).unwrap());
        }
        for step in 0..30 {
            let x: Vec<f64> = (0..3).map(|_| unif() * 2.0 - 1.0).collect();
            post.update(&x, (step as f64 * 0.37).sin()).unwrap();
            cache.sync(&post);
            for (j, p) in probes.iter().enumerate() {
                let (em, ev) = post.predict(p).unwrap();
                let (cm, cv) = cache.predict(j);
                assert_abs_diff_eq!(cm, em, epsilon = 1e-10);
                assert_abs_diff_eq!(cv, ev, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn probe_cache_rebuilds_after_reset_or_gap() {
        let spec = se(1.0, 2);
        let probes = vec![vec![0.0, 0.0], vec![0.5, -0.5]];
        let mut post = PosteriorState::new(spec, 0.3).unwrap();
        post.update(&[0.1, 0.1], 1.0).unwrap();
        post.update(&[0.4, -0.2], -0.5).unwrap();
        // construction on a non-empty posterior takes the rebuild path
        let mut cache = ProbeCache::new(&post, probes.clone()).unwrap();
        for (j, p) in probes.iter().enumerate() {
            let (em, ev) = post.predict(p).unwrap();
            let (cm, cv) = cache.predict(j);
            assert_abs_diff_eq!(cm, em, epsilon = 1e-12);
            assert_abs_diff_eq!(cv, ev, epsilon = 1e-12);
        }
        // two updates without a sync force the rebuild path again
        post.update(&[0.2, 0.3], 0.25).unwrap();
        post.update(&[-0.1, 0.2], 0.7).unwrap();
        cache.sync(&post);
        for (j, p) in probes.iter().enumerate() {
            let (em, ev) = post.predict(p).unwrap();
            let (cm, cv) = cache.predict(j);
            assert_abs_diff_eq!(cm, em, epsilon = 1e-12);
            assert_abs_diff_eq!(cv, ev, epsilon = 1e-12);
        }
        // reset to a fresh posterior
        post = PosteriorState::new(spec, 0.3).unwrap();
        cache.sync(&post);
        assert_eq!(cache.predict(0), (0.0, 1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_permutation_invariance(
            obs in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 2), -1.0f64..1.0), 2..10),
            rot in 0usize..10,
        ) {
            let spec = se(1.0, 2);
            let mut a = PosteriorState::new(spec, 0.2).unwrap();
            for (x, y) in &obs {
                a.update(x, *y).unwrap();
            }
            let mut permuted = obs.clone();
            permuted.rotate_left(rot % obs.len());
            let mut b = PosteriorState::new(spec, 0.2).unwrap();
            for (x, y) in &permuted {
                b.update(x, *y).unwrap();
            }
            let probe = [0.1, -0.4];
            prop_assert!((a.mean(&probe).unwrap() - b.mean(&probe).unwrap()).abs() < 1e-8);
            prop_assert!((a.variance(&probe).unwrap() - b.variance(&probe).unwrap()).abs() < 1e-8);
        }

        #[test]
        fn prop_variance_bounds(
            obs in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 2), -1.0f64..1.0), 0..12),
            probe in prop::collection::vec(-1.0f64..1.0, 2),
        ) {
            let spec = se(1.0, 2);
            let mut p = PosteriorState::new(spec, 0.2).unwrap();
            for (x, y) in &obs {
                p.update(x, *y).unwrap();
            }
            let v = p.variance(&probe).unwrap();
            let prior = spec.evaluate(&probe, &probe).unwrap();
            prop_assert!(v >= 0.0 && v <= prior + 1e-12);
        }
    }
}
