//! Time-varying environments: a geometric multipath beam-alignment simulator
//! and a synthetic RKHS environment with a controlled variation budget.
//!
//! The simulator follows the standard narrowband model: each user's channel
//! is a sum of `L` planar paths, `h = sum_l alpha_l a(theta_l)`, where
//! `a(theta)` is the half-wavelength ULA steering vector. The reward is the
//! noise-free received signal strength `|<h, x>|` at the target user; the
//! constraint is the worst interference margin `max_j (|<h_j, x>| - xi_j)`
//! over the protected users. Carrier frequency is carried as metadata only:
//! with element spacing expressed in half wavelengths the geometry is
//! frequency-free.
//!
//! A generated [`EnvironmentTrace`] holds the noise-free `f`/`g` matrices for
//! the whole horizon plus constants derived from them (sup-norm bounds, the
//! realized Slater margin, and sup-norm variation totals standing in for the
//! RKHS-norm budgets, which are not computable from samples). The learner
//! only ever sees noisy scalar observations through [`EnvironmentTrace::observe`].

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{BufRead, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::KernelSpec;

/// Maximum regeneration attempts before giving up on the Slater condition.
const SLATER_ATTEMPTS: u64 = 20;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("Slater condition failed at t = {t} after {attempts} attempts")]
    SlaterInfeasible { t: usize, attempts: usize },

    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),

    #[error("trace parse: {0}")]
    Parse(String),
}

/// Half-wavelength ULA steering vector `a(theta)[m] = exp(i pi m sin theta) / sqrt(M)`.
pub fn steering_vector(antennas: usize, angle: f64) -> Vec<Complex64> {
    let scale = 1.0 / (antennas as f64).sqrt();
    (0..antennas)
        .map(|m| Complex64::from_polar(scale, PI * m as f64 * angle.sin()))
        .collect()
}

/// Noise-free received signal strength `|<h, x>|` (modulus of the complex
/// inner product, conjugate-linear in the channel).
pub fn rss(channel: &[Complex64], beam: &[Complex64]) -> f64 {
    assert_eq!(channel.len(), beam.len(), "channel/beam dimension mismatch");
    channel
        .iter()
        .zip(beam)
        .map(|(h, x)| h.conj() * x)
        .sum::<Complex64>()
        .norm()
}

/// Worst interference margin `max_j (|<h_j, x>| - xi_j)` over protected users.
pub fn constraint_value(
    channels: &[Vec<Complex64>],
    beam: &[Complex64],
    thresholds: &[f64],
) -> Result<f64, EnvError> {
    if channels.is_empty() {
        return Err(EnvError::InvalidParameter("no protected users".into()));
    }
    if channels.len() != thresholds.len() {
        return Err(EnvError::InvalidParameter(format!(
            "{} channels but {} thresholds",
            channels.len(),
            thresholds.len()
        )));
    }
    Ok(channels
        .iter()
        .zip(thresholds)
        .map(|(h, xi)| rss(h, beam) - xi)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Finite action set: unit-norm beamforming vectors plus their kernel inputs.
///
/// Kernel inputs are the real/imaginary concatenation of the complex weights,
/// which preserves Euclidean distances and keeps linear-kernel inputs inside
/// the unit ball (steering vectors are unit norm).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCodebook {
    antennas: usize,
    vectors: Vec<Vec<Complex64>>,
    features: Vec<Vec<f64>>,
    angles: Vec<f64>,
}

impl BeamCodebook {
    /// Steering codebook with beam angles uniformly spaced over [-pi/2, pi/2].
    pub fn uniform(antennas: usize, n_beams: usize) -> Result<Self, EnvError> {
        if antennas == 0 {
            return Err(EnvError::InvalidParameter("antenna count must be >= 1".into()));
        }
        if n_beams < 2 {
            return Err(EnvError::InvalidParameter("need at least 2 beams".into()));
        }
        let step = PI / (n_beams - 1) as f64;
        let angles: Vec<f64> = (0..n_beams).map(|i| -FRAC_PI_2 + i as f64 * step).collect();
        let vectors: Vec<Vec<Complex64>> =
            angles.iter().map(|&a| steering_vector(antennas, a)).collect();
        let features = vectors.iter().map(|v| complex_features(v)).collect();
        Ok(Self { antennas, vectors, features, angles })
    }

    /// Codebook from explicit weight vectors; each must be unit norm.
    /// Beam angles are not tracked for hand-built codebooks.
    pub fn from_vectors(vectors: Vec<Vec<Complex64>>) -> Result<Self, EnvError> {
        let antennas = match vectors.first() {
            Some(v) if !v.is_empty() => v.len(),
            _ => return Err(EnvError::InvalidParameter("empty codebook".into())),
        };
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != antennas {
                return Err(EnvError::InvalidParameter(format!(
                    "beam {i} has {} antennas, expected {antennas}",
                    v.len()
                )));
            }
            let norm: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(EnvError::InvalidParameter(format!(
                    "beam {i} has norm {norm}, expected 1"
                )));
            }
        }
        let features = vectors.iter().map(|v| complex_features(v)).collect();
        Ok(Self { antennas, vectors, features, angles: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    /// Dimension of the kernel inputs (`2 * antennas`).
    pub fn feature_dim(&self) -> usize {
        2 * self.antennas
    }

    pub fn vector(&self, arm: usize) -> &[Complex64] {
        &self.vectors[arm]
    }

    pub fn feature(&self, arm: usize) -> &[f64] {
        &self.features[arm]
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }
}

/// `[Re(v); Im(v)]` concatenation used as the kernel input for a beam.
pub fn complex_features(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|c| c.re).chain(v.iter().map(|c| c.im)).collect()
}

/// How the environment moves between time slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Drift {
    /// Redraw gains and angles i.i.d. at each listed slot, frozen otherwise.
    Abrupt { change_times: Vec<usize> },
    /// Gauss-Markov gains `alpha' = c alpha + sqrt(1 - c^2) w` plus Gaussian
    /// angle steps of std `innovation_std` radians per slot. An
    /// `innovation_std` of exactly 0 freezes the whole channel.
    Slow { ar_coefficient: f64, innovation_std: f64 },
}

impl Drift {
    fn validate(&self, horizon: usize) -> Result<(), EnvError> {
        match self {
            Drift::Abrupt { change_times } => {
                for &t in change_times {
                    if t < 2 || t > horizon {
                        return Err(EnvError::InvalidParameter(format!(
                            "change time {t} outside [2, {horizon}]"
                        )));
                    }
                }
                Ok(())
            }
            Drift::Slow { ar_coefficient, innovation_std } => {
                if !(*ar_coefficient > 0.0 && *ar_coefficient < 1.0) {
                    return Err(EnvError::InvalidParameter(format!(
                        "AR coefficient must be in (0, 1), got {ar_coefficient}"
                    )));
                }
                if !(*innovation_std >= 0.0) || !innovation_std.is_finite() {
                    return Err(EnvError::InvalidParameter(format!(
                        "innovation std must be >= 0, got {innovation_std}"
                    )));
                }
                Ok(())
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            Drift::Abrupt { change_times } => format!(
                "abrupt@{}",
                change_times.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
            ),
            Drift::Slow { ar_coefficient, innovation_std } => {
                format!("slow(ar={ar_coefficient},std={innovation_std})")
            }
        }
    }
}

/// Multipath channel configuration for the target user and `interferers`
/// protected users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// NLOS paths per user.
    pub paths: usize,
    /// Metadata only; the geometry is expressed in half wavelengths.
    pub carrier_freq_hz: f64,
    /// Number of protected users (the constraint set).
    pub interferers: usize,
    pub drift: Drift,
    /// Per-user interference thresholds are set to this quantile of the
    /// user's RSS over the codebook at t = 1, so feasible and infeasible
    /// beams both exist.
    pub xi_quantile: f64,
    /// Observation noise std as a fraction of the realized reward bound.
    pub noise_scale: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            paths: 10,
            carrier_freq_hz: 60e9,
            interferers: 2,
            drift: Drift::Abrupt { change_times: vec![100, 300] },
            xi_quantile: 0.6,
            noise_scale: 0.05,
        }
    }
}

impl ChannelModel {
    fn validate(&self, horizon: usize) -> Result<(), EnvError> {
        if self.paths == 0 {
            return Err(EnvError::InvalidParameter("need at least one path".into()));
        }
        if self.interferers == 0 {
            return Err(EnvError::InvalidParameter("need at least one protected user".into()));
        }
        if !(0.0..=1.0).contains(&self.xi_quantile) {
            return Err(EnvError::InvalidParameter(format!(
                "xi quantile must be in [0, 1], got {}",
                self.xi_quantile
            )));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(EnvError::InvalidParameter(format!(
                "noise scale must be >= 0, got {}",
                self.noise_scale
            )));
        }
        self.drift.validate(horizon)
    }
}

/// Functions built directly in the RKHS of a known kernel: weighted sums of
/// kernel sections anchored at a few codebook points, with drifting weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    /// Number of kernel sections per function.
    pub centers: usize,
    pub drift: Drift,
    pub xi_quantile: f64,
    pub noise_scale: f64,
}

impl Default for SyntheticModel {
    fn default() -> Self {
        Self {
            centers: 5,
            drift: Drift::Slow { ar_coefficient: 0.99, innovation_std: 0.01 },
            xi_quantile: 0.6,
            noise_scale: 0.05,
        }
    }
}

/// Ground truth for one run: noise-free reward/constraint matrices over the
/// horizon, observation noise levels, and constants derived from the trace.
/// The learner never sees this directly.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentTrace {
    horizon: usize,
    n_arms: usize,
    f: Vec<f64>,
    g: Vec<f64>,
    noise_std_reward: f64,
    noise_std_constraint: f64,
    reward_bound: f64,
    constraint_bound: f64,
    slater_margin: f64,
    reward_variation: f64,
    constraint_variation: f64,
    meta: BTreeMap<String, String>,
}

impl EnvironmentTrace {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    /// Noise-free reward of `arm` at slot `t` (1-based).
    pub fn f_value(&self, t: usize, arm: usize) -> f64 {
        self.f_row(t)[arm]
    }

    /// Noise-free constraint of `arm` at slot `t` (1-based).
    pub fn g_value(&self, t: usize, arm: usize) -> f64 {
        self.g_row(t)[arm]
    }

    pub fn f_row(&self, t: usize) -> &[f64] {
        assert!(t >= 1 && t <= self.horizon, "slot {t} outside 1..={}", self.horizon);
        &self.f[(t - 1) * self.n_arms..t * self.n_arms]
    }

    pub fn g_row(&self, t: usize) -> &[f64] {
        assert!(t >= 1 && t <= self.horizon, "slot {t} outside 1..={}", self.horizon);
        &self.g[(t - 1) * self.n_arms..t * self.n_arms]
    }

    pub fn noise_std_reward(&self) -> f64 {
        self.noise_std_reward
    }

    pub fn noise_std_constraint(&self) -> f64 {
        self.noise_std_constraint
    }

    /// Sup-norm bound on the reward over the trace (B).
    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    /// Sup-norm bound on the constraint over the trace (G).
    pub fn constraint_bound(&self) -> f64 {
        self.constraint_bound
    }

    /// Realized Slater margin: every slot has an arm with `g <= -margin`.
    pub fn slater_margin(&self) -> f64 {
        self.slater_margin
    }

    /// Total sup-norm variation of the reward across slots (B_f proxy).
    pub fn reward_variation(&self) -> f64 {
        self.reward_variation
    }

    /// Total sup-norm variation of the constraint across slots (B_g proxy).
    pub fn constraint_variation(&self) -> f64 {
        self.constraint_variation
    }

    /// Combined variation budget `max(B_f, B_g)`.
    pub fn variation_budget(&self) -> f64 {
        self.reward_variation.max(self.constraint_variation)
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    /// Noisy observation of `arm` at slot `t`: `(f + n, g + eps)` with
    /// independent Gaussian draws taken from `rng` (reward first).
    pub fn observe<R: Rng + ?Sized>(
        &self,
        t: usize,
        arm: usize,
        rng: &mut R,
    ) -> Result<(f64, f64), EnvError> {
        if t < 1 || t > self.horizon {
            return Err(EnvError::OutOfRange(format!("slot {t} outside 1..={}", self.horizon)));
        }
        if arm >= self.n_arms {
            return Err(EnvError::OutOfRange(format!("arm {arm} outside 0..{}", self.n_arms)));
        }
        let zr: f64 = rng.sample(StandardNormal);
        let zc: f64 = rng.sample(StandardNormal);
        Ok((
            self.f_value(t, arm) + self.noise_std_reward * zr,
            self.g_value(t, arm) + self.noise_std_constraint * zc,
        ))
    }

    /// Write the self-describing text format: a header of `key = value`
    /// lines, free-form `meta` lines, then the `f` and `g` matrices as CSV.
    /// Floats are printed with 17 significant digits so the round-trip is
    /// bit-exact.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "beambandit trace v1")?;
        writeln!(w, "horizon = {}", self.horizon)?;
        writeln!(w, "arms = {}", self.n_arms)?;
        writeln!(w, "noise_std_reward = {}", fmt_f64(self.noise_std_reward))?;
        writeln!(w, "noise_std_constraint = {}", fmt_f64(self.noise_std_constraint))?;
        writeln!(w, "reward_bound = {}", fmt_f64(self.reward_bound))?;
        writeln!(w, "constraint_bound = {}", fmt_f64(self.constraint_bound))?;
        writeln!(w, "slater_margin = {}", fmt_f64(self.slater_margin))?;
        writeln!(w, "reward_variation = {}", fmt_f64(self.reward_variation))?;
        writeln!(w, "constraint_variation = {}", fmt_f64(self.constraint_variation))?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k} = {v}")?;
        }
        writeln!(w, "[f]")?;
        write_matrix(w, &self.f, self.n_arms)?;
        writeln!(w, "[g]")?;
        write_matrix(w, &self.g, self.n_arms)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, EnvError> {
        let mut lines = r.lines();
        let mut next = || -> Result<String, EnvError> {
            lines
                .next()
                .ok_or_else(|| EnvError::Parse("unexpected end of file".into()))?
                .map_err(EnvError::from)
        };
        let magic = next()?;
        if magic != "beambandit trace v1" {
            return Err(EnvError::Parse(format!("unknown header: {magic}")));
        }
        let horizon: usize = parse_kv(&next()?, "horizon")?;
        let n_arms: usize = parse_kv(&next()?, "arms")?;
        let noise_std_reward: f64 = parse_kv(&next()?, "noise_std_reward")?;
        let noise_std_constraint: f64 = parse_kv(&next()?, "noise_std_constraint")?;
        let reward_bound: f64 = parse_kv(&next()?, "reward_bound")?;
        let constraint_bound: f64 = parse_kv(&next()?, "constraint_bound")?;
        let slater_margin: f64 = parse_kv(&next()?, "slater_margin")?;
        let reward_variation: f64 = parse_kv(&next()?, "reward_variation")?;
        let constraint_variation: f64 = parse_kv(&next()?, "constraint_variation")?;

        let mut meta = BTreeMap::new();
        let mut line = next()?;
        while let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest
                .split_once(" = ")
                .ok_or_else(|| EnvError::Parse(format!("malformed meta line: {line}")))?;
            meta.insert(k.to_string(), v.to_string());
            line = next()?;
        }
        if line != "[f]" {
            return Err(EnvError::Parse(format!("expected [f], got {line}")));
        }
        let mut f = Vec::with_capacity(horizon * n_arms);
        for _ in 0..horizon {
            parse_row(&next()?, n_arms, &mut f)?;
        }
        if next()? != "[g]" {
            return Err(EnvError::Parse("expected [g]".into()));
        }
        let mut g = Vec::with_capacity(horizon * n_arms);
        for _ in 0..horizon {
            parse_row(&next()?, n_arms, &mut g)?;
        }
        Ok(Self {
            horizon,
            n_arms,
            f,
            g,
            noise_std_reward,
            noise_std_constraint,
            reward_bound,
            constraint_bound,
            slater_margin,
            reward_variation,
            constraint_variation,
            meta,
        })
    }

    pub fn export_to_path<P: AsRef<Path>>(&self, path: P) -> Result<(), EnvError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        Ok(())
    }

    pub fn import_from_path<P: AsRef<Path>>(path: P) -> Result<Self, EnvError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(file)
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_matrix<W: Write>(w: &mut W, data: &[f64], n_arms: usize) -> std::io::Result<()> {
    for row in data.chunks(n_arms) {
        let mut first = true;
        for v in row {
            if !first {
                write!(w, ",")?;
            }
            write!(w, "{}", fmt_f64(*v))?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn parse_kv<T: std::str::FromStr>(line: &str, key: &str) -> Result<T, EnvError> {
    let (k, v) = line
        .split_once(" = ")
        .ok_or_else(|| EnvError::Parse(format!("malformed header line: {line}")))?;
    if k != key {
        return Err(EnvError::Parse(format!("expected key {key}, got {k}")));
    }
    v.parse().map_err(|_| EnvError::Parse(format!("bad value for {key}: {v}")))
}

fn parse_row(line: &str, n_arms: usize, out: &mut Vec<f64>) -> Result<(), EnvError> {
    let start = out.len();
    for field in line.split(',') {
        out.push(
            field
                .parse()
                .map_err(|_| EnvError::Parse(format!("bad float: {field}")))?,
        );
    }
    if out.len() - start != n_arms {
        return Err(EnvError::Parse(format!(
            "row has {} entries, expected {n_arms}",
            out.len() - start
        )));
    }
    Ok(())
}

/// Per-user multipath state evolved by the drift model.
struct ChannelState {
    angles: Vec<Vec<f64>>,
    gains: Vec<Vec<Complex64>>,
}

impl ChannelState {
    fn draw<R: Rng + ?Sized>(n_ues: usize, paths: usize, rng: &mut R) -> Self {
        let gain_std = (1.0 / (2.0 * paths as f64)).sqrt();
        let mut angles = Vec::with_capacity(n_ues);
        let mut gains = Vec::with_capacity(n_ues);
        for _ in 0..n_ues {
            angles.push((0..paths).map(|_| rng.random_range(-FRAC_PI_2..FRAC_PI_2)).collect());
            gains.push((0..paths).map(|_| complex_gaussian(gain_std, rng)).collect());
        }
        Self { angles, gains }
    }

    fn advance<R: Rng + ?Sized>(&mut self, drift: &Drift, t: usize, paths: usize, rng: &mut R) {
        match drift {
            Drift::Abrupt { change_times } => {
                if change_times.contains(&t) {
                    *self = Self::draw(self.angles.len(), paths, rng);
                }
            }
            Drift::Slow { ar_coefficient, innovation_std } => {
                if *innovation_std == 0.0 {
                    return;
                }
                let c = *ar_coefficient;
                let mix = (1.0 - c * c).sqrt();
                let gain_std = (1.0 / (2.0 * paths as f64)).sqrt();
                for ue in 0..self.angles.len() {
                    for l in 0..paths {
                        self.gains[ue][l] =
                            c * self.gains[ue][l] + mix * complex_gaussian(gain_std, rng);
                        let step: f64 = rng.sample(StandardNormal);
                        self.angles[ue][l] += innovation_std * step;
                    }
                }
            }
        }
    }

    fn channel(&self, ue: usize, antennas: usize) -> Vec<Complex64> {
        let mut h = vec![Complex64::new(0.0, 0.0); antennas];
        for (gain, angle) in self.gains[ue].iter().zip(&self.angles[ue]) {
            for (hm, am) in h.iter_mut().zip(steering_vector(antennas, *angle)) {
                *hm += gain * am;
            }
        }
        h
    }
}

fn complex_gaussian<R: Rng + ?Sized>(std: f64, rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(std * re, std * im)
}

/// Generate the multipath beam-alignment trace.
///
/// Deterministic in `(model, codebook, horizon, seed)`. If a draw violates
/// the Slater condition the generation is retried on a fresh RNG stream, up
/// to 20 attempts.
pub fn generate_trace(
    model: &ChannelModel,
    codebook: &BeamCodebook,
    horizon: usize,
    seed: u64,
) -> Result<EnvironmentTrace, EnvError> {
    if horizon == 0 {
        return Err(EnvError::InvalidParameter("horizon must be >= 1".into()));
    }
    model.validate(horizon)?;

    let mut worst = (0usize, 0.0f64);
    for attempt in 0..SLATER_ATTEMPTS {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(attempt);

        let n_ues = 1 + model.interferers;
        let mut state = ChannelState::draw(n_ues, model.paths, &mut rng);
        let n_arms = codebook.len();
        let mut f = Vec::with_capacity(horizon * n_arms);
        let mut g = Vec::with_capacity(horizon * n_arms);
        let mut thresholds = vec![0.0; model.interferers];

        for t in 1..=horizon {
            if t > 1 {
                state.advance(&model.drift, t, model.paths, &mut rng);
            }
            let target = state.channel(0, codebook.antennas());
            let interferer_channels: Vec<Vec<Complex64>> =
                (1..n_ues).map(|ue| state.channel(ue, codebook.antennas())).collect();
            if t == 1 {
                for (j, h) in interferer_channels.iter().enumerate() {
                    let rss_over_arms: Vec<f64> =
                        (0..n_arms).map(|a| rss(h, codebook.vector(a))).collect();
                    thresholds[j] = quantile(&rss_over_arms, model.xi_quantile);
                }
            }
            for arm in 0..n_arms {
                f.push(rss(&target, codebook.vector(arm)));
                g.push(constraint_value(&interferer_channels, codebook.vector(arm), &thresholds)?);
            }
        }

        match finish_trace(f, g, horizon, n_arms, model.noise_scale, |meta| {
            meta.insert("generator".into(), "channel".into());
            meta.insert("antennas".into(), codebook.antennas().to_string());
            meta.insert("beams".into(), n_arms.to_string());
            meta.insert("paths".into(), model.paths.to_string());
            meta.insert("interferers".into(), model.interferers.to_string());
            meta.insert("carrier_freq_hz".into(), fmt_f64(model.carrier_freq_hz));
            meta.insert("drift".into(), model.drift.describe());
            meta.insert("xi_quantile".into(), fmt_f64(model.xi_quantile));
            meta.insert("seed".into(), seed.to_string());
            meta.insert("attempt".into(), attempt.to_string());
        }) {
            Ok(trace) => return Ok(trace),
            Err(infeasible_at) => worst = (infeasible_at, worst.1),
        }
    }
    Err(EnvError::SlaterInfeasible { t: worst.0, attempts: SLATER_ATTEMPTS as usize })
}

/// Generate a synthetic RKHS trace: `f_t(x) = |sum_i w_i k(c_i, x)|` and the
/// constraint a centered kernel expansion, with weights drifting per the
/// model. The variation budget is controlled by the drift parameters alone.
pub fn generate_synthetic_trace(
    model: &SyntheticModel,
    kernel: &KernelSpec,
    codebook: &BeamCodebook,
    horizon: usize,
    seed: u64,
) -> Result<EnvironmentTrace, EnvError> {
    if horizon == 0 {
        return Err(EnvError::InvalidParameter("horizon must be >= 1".into()));
    }
    if model.centers == 0 {
        return Err(EnvError::InvalidParameter("need at least one center".into()));
    }
    if !(0.0..=1.0).contains(&model.xi_quantile) {
        return Err(EnvError::InvalidParameter("xi quantile must be in [0, 1]".into()));
    }
    model.drift.validate(horizon)?;
    let n_arms = codebook.len();
    if model.centers > n_arms {
        return Err(EnvError::InvalidParameter("more centers than arms".into()));
    }

    // Section values k(center, arm) for every arm/center pair.
    let section = |center: usize, arm: usize| -> Result<f64, EnvError> {
        kernel
            .evaluate(codebook.feature(center), codebook.feature(arm))
            .map_err(|e| EnvError::InvalidParameter(e.to_string()))
    };

    for attempt in 0..SLATER_ATTEMPTS {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(attempt);

        let weight_std = (1.0 / model.centers as f64).sqrt();
        let draw_weights = |rng: &mut ChaCha12Rng| -> Vec<f64> {
            (0..model.centers)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    weight_std * z
                })
                .collect()
        };
        let draw_centers = |rng: &mut ChaCha12Rng| -> Vec<usize> {
            (0..model.centers).map(|_| rng.random_range(0..n_arms)).collect()
        };

        let f_centers = draw_centers(&mut rng);
        let g_centers = draw_centers(&mut rng);
        let mut wf = draw_weights(&mut rng);
        let mut wg = draw_weights(&mut rng);

        let mut f = Vec::with_capacity(horizon * n_arms);
        let mut g = Vec::with_capacity(horizon * n_arms);
        let mut threshold = 0.0;

        for t in 1..=horizon {
            if t > 1 {
                match &model.drift {
                    Drift::Abrupt { change_times } => {
                        if change_times.contains(&t) {
                            wf = draw_weights(&mut rng);
                            wg = draw_weights(&mut rng);
                        }
                    }
                    Drift::Slow { ar_coefficient, innovation_std } => {
                        if *innovation_std > 0.0 {
                            let c = *ar_coefficient;
                            let mix = (1.0 - c * c).sqrt();
                            for w in wf.iter_mut().chain(wg.iter_mut()) {
                                let z: f64 = rng.sample(StandardNormal);
                                *w = c * *w + mix * weight_std * z;
                            }
                        }
                    }
                }
            }
            let mut g_raw = Vec::with_capacity(n_arms);
            for arm in 0..n_arms {
                let fv: f64 = f_centers
                    .iter()
                    .zip(&wf)
                    .map(|(&c, w)| Ok(w * section(c, arm)?))
                    .sum::<Result<f64, EnvError>>()?;
                f.push(fv.abs());
                let gv: f64 = g_centers
                    .iter()
                    .zip(&wg)
                    .map(|(&c, w)| Ok(w * section(c, arm)?))
                    .sum::<Result<f64, EnvError>>()?;
                g_raw.push(gv);
            }
            if t == 1 {
                threshold = quantile(&g_raw, model.xi_quantile);
            }
            g.extend(g_raw.iter().map(|v| v - threshold));
        }

        match finish_trace(f, g, horizon, n_arms, model.noise_scale, |meta| {
            meta.insert("generator".into(), "synthetic".into());
            meta.insert("beams".into(), n_arms.to_string());
            meta.insert("centers".into(), model.centers.to_string());
            meta.insert("drift".into(), model.drift.describe());
            meta.insert("xi_quantile".into(), fmt_f64(model.xi_quantile));
            meta.insert("seed".into(), seed.to_string());
            meta.insert("attempt".into(), attempt.to_string());
        }) {
            Ok(trace) => return Ok(trace),
            Err(_) => continue,
        }
    }
    Err(EnvError::SlaterInfeasible { t: 0, attempts: SLATER_ATTEMPTS as usize })
}

/// Derive bounds/variation/Slater constants and assemble the trace.
/// Returns `Err(t)` with the first infeasible slot when Slater fails.
fn finish_trace(
    f: Vec<f64>,
    g: Vec<f64>,
    horizon: usize,
    n_arms: usize,
    noise_scale: f64,
    fill_meta: impl FnOnce(&mut BTreeMap<String, String>),
) -> Result<EnvironmentTrace, usize> {
    let mut slater = f64::INFINITY;
    let mut infeasible_at = 0;
    for t in 0..horizon {
        let row = &g[t * n_arms..(t + 1) * n_arms];
        let best = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let margin = -best;
        if margin < slater {
            slater = margin;
            infeasible_at = t + 1;
        }
    }
    if !(slater > 0.0) {
        return Err(infeasible_at);
    }

    let reward_bound = f.iter().cloned().fold(0.0f64, f64::max);
    let constraint_bound = g.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    let sup_diff = |m: &[f64], t: usize| -> f64 {
        let a = &m[(t - 1) * n_arms..t * n_arms];
        let b = &m[t * n_arms..(t + 1) * n_arms];
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max)
    };
    let reward_variation: f64 = (1..horizon).map(|t| sup_diff(&f, t)).sum();
    let constraint_variation: f64 = (1..horizon).map(|t| sup_diff(&g, t)).sum();

    let mut meta = BTreeMap::new();
    fill_meta(&mut meta);
    meta.insert("noise_scale".into(), fmt_f64(noise_scale));

    Ok(EnvironmentTrace {
        horizon,
        n_arms,
        f,
        g,
        noise_std_reward: noise_scale * reward_bound,
        noise_std_constraint: noise_scale * reward_bound,
        reward_bound,
        constraint_bound,
        slater_margin: slater,
        reward_variation,
        constraint_variation,
        meta,
    })
}

/// Nearest-rank quantile of an unsorted slice.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}
