//! Experiment execution: per-seed traces and oracle baselines, algorithm
//! runs fanned out over a worker pool, and deterministic CSV/manifest output.
//!
//! Seeding: one master seed per run. Trace generation owns RNG streams 0-19
//! (retry attempts); observation noise draws from stream 100. Every
//! algorithm replays the same trace and the same noise stream, so paired
//! comparisons see identical environments.

use std::fmt::Write as _;
use std::path::Path;

use beambandit::bandit::{
    restart_period, theoretical_se_info_gain, BanditConfig, BanditState, GammaMode,
    RestartSchedule, StepError,
};
use beambandit::env::{generate_synthetic_trace, generate_trace, BeamCodebook, EnvironmentTrace};
use beambandit::kernels::empirical_info_gain;
use beambandit::metrics::{aggregate_seeds, compute_metrics, RunMetrics, SeedSummary};
use beambandit::oracle::{best_feasible_series, oracle_reward_series};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Algorithm, ExperimentConfig, OracleMode, Scenario};
use crate::CliError;

/// RNG stream for observation noise; trace generation uses streams 0-19.
const NOISE_STREAM: u64 = 100;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Worker count from `BEAMBANDIT_WORKERS`, or the rayon default when unset.
fn build_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var("BEAMBANDIT_WORKERS") {
        let n: usize = value
            .parse()
            .map_err(|_| CliError::Config(format!("BEAMBANDIT_WORKERS={value} is not a number")))?;
        if n > 0 {
            builder = builder.num_threads(n);
        }
    }
    builder.build().map_err(|e| CliError::Config(e.to_string()))
}

struct SeedData {
    seed: u64,
    trace: EnvironmentTrace,
    oracle_series: Vec<f64>,
}

struct StepRow {
    t: usize,
    arm: usize,
    f_true: f64,
    g_true: f64,
    r_obs: f64,
    c_obs: f64,
    phi: f64,
    beta: f64,
}

struct RunOutput {
    seed: u64,
    algorithm: Algorithm,
    steps: Vec<StepRow>,
    metrics: RunMetrics,
    resolved: BanditConfig,
}

#[derive(Serialize)]
struct ManifestAlgorithm {
    name: &'static str,
    config: BanditConfig,
}

#[derive(Serialize)]
struct ManifestSeed {
    seed: u64,
    reward_bound: f64,
    constraint_bound: f64,
    slater_margin: f64,
    reward_variation: f64,
    constraint_variation: f64,
    variation_budget: f64,
    noise_std_reward: f64,
    noise_std_constraint: f64,
    trace_attempt: String,
    algorithms: Vec<ManifestAlgorithm>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    gamma_hat: f64,
    gamma_note: &'static str,
    noise_stream: u64,
    feature_dim: usize,
    seeds: Vec<ManifestSeed>,
}

/// Generate the scenario trace for one master seed.
pub fn build_trace(
    cfg: &ExperimentConfig,
    codebook: &BeamCodebook,
    seed: u64,
) -> Result<EnvironmentTrace, CliError> {
    match cfg.scenario {
        Scenario::Abrupt | Scenario::Slow => {
            generate_trace(&cfg.channel_model(), codebook, cfg.horizon, seed).map_err(CliError::from)
        }
        Scenario::Synthetic => {
            let kernel = cfg.kernel.reward_kernel(codebook.feature_dim())?;
            generate_synthetic_trace(&cfg.synthetic_model(), &kernel, codebook, cfg.horizon, seed)
                .map_err(CliError::from)
        }
    }
}

/// The up-front information-gain estimate feeding the restart schedule.
///
/// In realized mode this is the information gain of one full sweep of the
/// codebook (the largest subset available to the schedule before any data
/// exists), maximized over the two kernels.
pub fn gamma_schedule_estimate(
    cfg: &ExperimentConfig,
    codebook: &BeamCodebook,
) -> Result<f64, CliError> {
    let dim = codebook.feature_dim();
    let reward_kernel = cfg.kernel.reward_kernel(dim)?;
    let constraint_kernel = cfg.kernel.constraint_kernel(dim)?;
    match cfg.bandit.gamma_mode {
        GammaMode::Realized => {
            let a = empirical_info_gain(&reward_kernel, codebook.features(), cfg.bandit.regularizer)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let b = empirical_info_gain(
                &constraint_kernel,
                codebook.features(),
                cfg.bandit.regularizer,
            )
            .map_err(|e| CliError::Numerical(e.to_string()))?;
            Ok(a.max(b))
        }
        GammaMode::TheoreticalSe => Ok(theoretical_se_info_gain(cfg.horizon, dim)),
    }
}

/// Resolve the learner configuration for one (trace, algorithm) pair.
pub fn resolve_bandit_config(
    cfg: &ExperimentConfig,
    codebook: &BeamCodebook,
    trace: &EnvironmentTrace,
    gamma_hat: f64,
    algorithm: Algorithm,
) -> Result<BanditConfig, CliError> {
    let b = cfg.bandit.reward_bound.unwrap_or_else(|| trace.reward_bound());
    let g = cfg.bandit.constraint_bound.unwrap_or_else(|| trace.constraint_bound());
    let tau = cfg.bandit.slater_margin.unwrap_or_else(|| trace.slater_margin());
    let rho = cfg.bandit.dual_cap.unwrap_or(4.0 * b / tau);
    let eta = cfg.bandit.dual_step.unwrap_or(rho / (g * (cfg.horizon as f64).sqrt()));
    let noise_level = cfg
        .bandit
        .noise_level
        .unwrap_or_else(|| trace.noise_std_reward().max(trace.noise_std_constraint()).max(1e-12));
    let schedule = match algorithm {
        Algorithm::RestartUnknown => RestartSchedule::UnknownBudget,
        Algorithm::RestartKnown => {
            RestartSchedule::KnownBudget { variation_budget: trace.variation_budget() }
        }
        Algorithm::NoRestart => RestartSchedule::NoRestart,
    };
    let period = match (algorithm, cfg.bandit.restart_period) {
        (Algorithm::NoRestart, _) => cfg.horizon,
        (_, Some(w)) => w,
        (_, None) => restart_period(cfg.horizon, gamma_hat, &schedule)
            .map_err(|e| CliError::Numerical(e.to_string()))?,
    };
    let dim = codebook.feature_dim();
    Ok(BanditConfig {
        horizon: cfg.horizon,
        reward_bound: b,
        constraint_bound: g,
        slater_margin: tau,
        dual_cap: rho,
        dual_step: eta,
        confidence: cfg.bandit.confidence,
        noise_level,
        regularizer: cfg.bandit.regularizer,
        restart_period: period,
        gamma_mode: cfg.bandit.gamma_mode,
        schedule,
        projection: cfg.bandit.projection,
        reward_kernel: cfg.kernel.reward_kernel(dim)?,
        constraint_kernel: cfg.kernel.constraint_kernel(dim)?,
    })
}

fn run_algorithm(
    codebook: &BeamCodebook,
    data: &SeedData,
    config: BanditConfig,
    algorithm: Algorithm,
) -> Result<RunOutput, CliError> {
    let mut state =
        BanditState::new(config.clone(), codebook).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut noise = ChaCha12Rng::seed_from_u64(data.seed);
    noise.set_stream(NOISE_STREAM);
    let horizon = data.trace.horizon();
    let mut steps = Vec::with_capacity(horizon);
    let mut arms = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let out = state
            .step(|arm| data.trace.observe(t, arm, &mut noise))
            .map_err(|e| match e {
                StepError::Observation(inner) => CliError::from(inner),
                other => CliError::Numerical(other.to_string()),
            })?;
        let arm = out.decision.arm_index;
        arms.push(arm);
        steps.push(StepRow {
            t,
            arm,
            f_true: data.trace.f_value(t, arm),
            g_true: data.trace.g_value(t, arm),
            r_obs: out.reward,
            c_obs: out.cost,
            phi: out.decision.dual,
            beta: out.decision.beta_reward,
        });
    }
    let metrics = compute_metrics(&data.trace, &data.oracle_series, &arms)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(RunOutput { seed: data.seed, algorithm, steps, metrics, resolved: config })
}

fn run_csv(run: &RunOutput) -> String {
    let mut text = String::from("t,arm,f_true,g_true,r_obs,c_obs,phi,beta,regret_cum,violation_cum\n");
    for (row, (rc, vc)) in
        run.steps.iter().zip(run.metrics.regret_cum.iter().zip(&run.metrics.violation_cum))
    {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{}",
            row.t,
            row.arm,
            fmt_f64(row.f_true),
            fmt_f64(row.g_true),
            fmt_f64(row.r_obs),
            fmt_f64(row.c_obs),
            fmt_f64(row.phi),
            fmt_f64(row.beta),
            fmt_f64(*rc),
            fmt_f64(*vc),
        );
    }
    text
}

fn aggregate_csv(summary: &SeedSummary) -> String {
    let mut text =
        String::from("t,regret_avg_mean,regret_avg_stderr,violation_avg_mean,violation_avg_stderr\n");
    for t in 0..summary.regret_avg_mean.len() {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            t + 1,
            fmt_f64(summary.regret_avg_mean[t]),
            fmt_f64(summary.regret_avg_stderr[t]),
            fmt_f64(summary.violation_avg_mean[t]),
            fmt_f64(summary.violation_avg_stderr[t]),
        );
    }
    text
}

/// Run the full experiment and write runs, aggregates, and the manifest.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let codebook = BeamCodebook::uniform(cfg.env.antennas, cfg.env.beams)?;
    let gamma_hat = gamma_schedule_estimate(cfg, &codebook)?;
    let pool = build_pool()?;

    let seed_data: Vec<SeedData> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let trace = build_trace(cfg, &codebook, seed)?;
                let oracle_series = match cfg.oracle.mode {
                    OracleMode::RandomizedLp => oracle_reward_series(&trace),
                    OracleMode::BestFeasible => best_feasible_series(&trace),
                }
                .map_err(CliError::from)?;
                Ok(SeedData { seed, trace, oracle_series })
            })
            .collect::<Result<_, CliError>>()
    })?;

    let jobs: Vec<(usize, Algorithm)> = seed_data
        .iter()
        .enumerate()
        .flat_map(|(i, _)| cfg.algorithms.iter().map(move |&a| (i, a)))
        .collect();
    let runs: Vec<RunOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed_idx, algorithm)| {
                let data = &seed_data[seed_idx];
                let config =
                    resolve_bandit_config(cfg, &codebook, &data.trace, gamma_hat, algorithm)?;
                run_algorithm(&codebook, data, config, algorithm)
            })
            .collect::<Result<_, CliError>>()
    })?;

    let out = &cfg.output;
    std::fs::create_dir_all(out.join("runs"))?;
    std::fs::create_dir_all(out.join("aggregate"))?;

    for run in &runs {
        let path = out.join("runs").join(format!("seed{}_{}.csv", run.seed, run.algorithm.slug()));
        std::fs::write(path, run_csv(run))?;
    }
    for &algorithm in &cfg.algorithms {
        let per_algo: Vec<RunMetrics> = runs
            .iter()
            .filter(|r| r.algorithm == algorithm)
            .map(|r| r.metrics.clone())
            .collect();
        let summary =
            aggregate_seeds(&per_algo).map_err(|e| CliError::Numerical(e.to_string()))?;
        let path = out.join("aggregate").join(format!("{}.csv", algorithm.slug()));
        std::fs::write(path, aggregate_csv(&summary))?;
    }

    let manifest = Manifest {
        tool: "beambandit",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        gamma_hat,
        gamma_note: "schedule gain estimate: realized information gain of one full codebook \
                     sweep (theoretical-se mode uses (log T)^(d+1)); in-run confidence widths \
                     use the gain realized since the last restart",
        noise_stream: NOISE_STREAM,
        feature_dim: codebook.feature_dim(),
        seeds: seed_data
            .iter()
            .map(|data| {
                let algorithms = cfg
                    .algorithms
                    .iter()
                    .map(|&a| {
                        let run = runs
                            .iter()
                            .find(|r| r.seed == data.seed && r.algorithm == a)
                            .expect("every job produced a run");
                        ManifestAlgorithm { name: a.slug(), config: run.resolved.clone() }
                    })
                    .collect();
                ManifestSeed {
                    seed: data.seed,
                    reward_bound: data.trace.reward_bound(),
                    constraint_bound: data.trace.constraint_bound(),
                    slater_margin: data.trace.slater_margin(),
                    reward_variation: data.trace.reward_variation(),
                    constraint_variation: data.trace.constraint_variation(),
                    variation_budget: data.trace.variation_budget(),
                    noise_std_reward: data.trace.noise_std_reward(),
                    noise_std_constraint: data.trace.noise_std_constraint(),
                    trace_attempt: data
                        .trace
                        .meta()
                        .get("attempt")
                        .cloned()
                        .unwrap_or_default(),
                    algorithms,
                }
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    std::fs::write(out.join("manifest.json"), json + "\n")?;
    Ok(())
}

/// Inspect a trace file: header summary plus validity checks.
pub fn inspect_trace(path: &Path) -> Result<String, CliError> {
    let trace = EnvironmentTrace::import_from_path(path)?;
    let mut text = String::new();
    let _ = writeln!(text, "horizon: {}", trace.horizon());
    let _ = writeln!(text, "arms: {}", trace.n_arms());
    let _ = writeln!(text, "reward bound: {}", trace.reward_bound());
    let _ = writeln!(text, "constraint bound: {}", trace.constraint_bound());
    let _ = writeln!(text, "slater margin: {}", trace.slater_margin());
    let _ = writeln!(text, "reward variation: {}", trace.reward_variation());
    let _ = writeln!(text, "constraint variation: {}", trace.constraint_variation());
    let _ = writeln!(text, "noise std (reward): {}", trace.noise_std_reward());
    let _ = writeln!(text, "noise std (constraint): {}", trace.noise_std_constraint());
    for (k, v) in trace.meta() {
        let _ = writeln!(text, "meta {k}: {v}");
    }
    let nonneg = (1..=trace.horizon()).all(|t| trace.f_row(t).iter().all(|v| *v >= 0.0));
    let _ = writeln!(text, "check reward non-negative: {}", if nonneg { "ok" } else { "FAIL" });
    let _ = writeln!(
        text,
        "check slater margin positive: {}",
        if trace.slater_margin() > 0.0 { "ok" } else { "FAIL" }
    );
    Ok(text)
}
