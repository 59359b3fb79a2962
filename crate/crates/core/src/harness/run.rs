use rayon::prelude::*;

use crate::averaging::averaging_error;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, FineGrid, ObservableConfig};
use crate::harness::report::{
    AveragingRecord, AveragingReport, ConvergenceReport, EpsilonRecord, HolderRecord,
    HolderScalingReport, MetricRecord, RateRecord, ReportMeta,
};
use crate::harness::stats::{linear_fit, pairwise_sum, MeanStderr};
use crate::models::{ModelSpec, ScalarObservableSpec};
use crate::roughpath::{
    holder_distance, ito_lift, level2_distance, limit_lift, GridRoughPath, PairAreas,
};
use crate::sde::{sample_path_noise, simulate_fast_slow, simulate_limit, NoiseBundle};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "ROUGHSK_THREADS";

/// Metric names in the order they appear in each convergence record.
pub const CONVERGENCE_METRICS: [&str; 6] = [
    "rho_alpha",
    "sup_error",
    "holder_error",
    "level2_error",
    "averaging_error",
    "sup_y",
];

/// Batches used for slope confidence intervals.
pub const SLOPE_BATCHES: usize = 10;

/// Runs `f` on a pool capped by `ROUGHSK_THREADS`, or on the global pool.
pub fn with_worker_pool<R, F>(f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

fn meta(config: &ExperimentConfig) -> ReportMeta {
    ReportMeta {
        config_hash: config.hash(),
        seed: config.seed,
        model: config.model_name.clone(),
        n_paths: config.n_paths,
        horizon: config.horizon,
        alpha: config.alpha,
        version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Path `k` draws from stream `(seed, k)` for every ε.
fn path_noise(
    config: &ExperimentConfig,
    model: &ModelSpec,
    grid: FineGrid,
    k: usize,
) -> NoiseBundle {
    sample_path_noise(grid.steps, model.dim(), grid.dt, config.seed, k as u64)
}

/// Evaluates `job` for every path index in parallel, keeping index order and
/// reporting the lowest failing index.
fn per_path<T, F>(n_paths: usize, epsilon: f64, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = (0..n_paths).into_par_iter().map(&job).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            r.map_err(|source| Error::PathFailed {
                epsilon,
                path: k,
                source: Box::new(source),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct PathOutcome {
    holder: f64,
    level2: f64,
    sup_error: f64,
    averaging: f64,
    sup_y: f64,
}

impl PathOutcome {
    fn metric(&self, name: &str) -> f64 {
        match name {
            "rho_alpha" => self.holder + self.level2,
            "sup_error" => self.sup_error,
            "holder_error" => self.holder,
            "level2_error" => self.level2,
            "averaging_error" => self.averaging,
            "sup_y" => self.sup_y,
            _ => unreachable!("unknown metric {name}"),
        }
    }
}

fn convergence_path(
    config: &ExperimentConfig,
    model: &ModelSpec,
    obs: &ScalarObservableSpec,
    epsilon: f64,
    grid: FineGrid,
    k: usize,
) -> Result<PathOutcome> {
    let noise = path_noise(config, model, grid, k);
    let (xe, ye) = simulate_fast_slow(model, epsilon, &noise, config.scheme)?;
    let xl = simulate_limit(model, &noise)?;
    let rp_e = ito_lift(&xe, config.coarsen)?;
    let rp_l = limit_lift(&xl, model, config.coarsen)?;
    Ok(PathOutcome {
        holder: holder_distance(rp_e.base(), rp_l.base(), config.alpha)?,
        level2: level2_distance(&rp_e, &rp_l, config.alpha)?,
        sup_error: rp_e.base().difference(rp_l.base())?.sup_norm(),
        averaging: averaging_error(&xe, &ye, obs, model)?,
        sup_y: ye.sup_norm(),
    })
}

/// Monte Carlo estimate of `E ρ_α(𝐗^ε, 𝐗)^p` and its companions down the
/// ε ladder. Path `k` uses the same noise stream at every ε.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let model = config.model()?;
    let obs = config.observable.to_spec(model.dim())?;
    let mut per_epsilon = Vec::with_capacity(config.epsilons.len());
    for &epsilon in &config.epsilons {
        let grid = config.fine_grid(epsilon);
        let outcomes = with_worker_pool(|| {
            per_path(config.n_paths, epsilon, |k| {
                convergence_path(config, &model, &obs, epsilon, grid, k)
            })
        })?;
        let mut metrics = Vec::new();
        for name in CONVERGENCE_METRICS {
            for &p in &config.p_moments {
                let xs: Vec<f64> = outcomes
                    .iter()
                    .map(|o| o.metric(name).powi(p as i32))
                    .collect();
                metrics.push(MetricRecord {
                    metric: name.to_string(),
                    p,
                    stats: MeanStderr::from_samples(&xs),
                });
            }
        }
        per_epsilon.push(EpsilonRecord {
            epsilon,
            fine_dt: grid.dt,
            fine_steps: grid.steps,
            coarse_steps: grid.steps / config.coarsen,
            metrics,
        });
    }
    let mut report = ConvergenceReport {
        meta: meta(config),
        per_epsilon,
        rates: Vec::new(),
    };
    if config.epsilons.len() >= 2 {
        let log_eps: Vec<f64> = config.epsilons.iter().map(|e| e.ln()).collect();
        for name in CONVERGENCE_METRICS {
            for &p in &config.p_moments {
                let means = report.series(name, p);
                if means.iter().all(|&m| m > 0.0) {
                    let logs: Vec<f64> = means.iter().map(|m| m.ln()).collect();
                    report.rates.push(RateRecord {
                        metric: name.to_string(),
                        p,
                        slope: linear_fit(&log_eps, &logs).0,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Per-gap moment estimates for one lifted path: entry `g` averages
/// `|X_{s,s+gap}|^p` (level 1) or `|𝕏_{s,s+gap}|^p` (level 2) over all
/// coarse start points `s`.
fn gap_moments(rp: &GridRoughPath, gaps: &[usize], p: u32) -> (Vec<f64>, Vec<f64>) {
    let areas = PairAreas::new(rp);
    let n = rp.steps();
    let mut l1 = Vec::with_capacity(gaps.len());
    let mut l2 = Vec::with_capacity(gaps.len());
    for &g in gaps {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for s in 0..=n - g {
            a.push(rp.base().increment(s, s + g).norm().powi(p as i32));
            b.push(areas.area(s, s + g).norm().powi(p as i32));
        }
        l1.push(pairwise_sum(&a) / a.len() as f64);
        l2.push(pairwise_sum(&b) / b.len() as f64);
    }
    (l1, l2)
}

fn mean_columns(rows: &[Vec<f64>]) -> Vec<f64> {
    (0..rows[0].len())
        .map(|g| {
            let col: Vec<f64> = rows.iter().map(|r| r[g]).collect();
            pairwise_sum(&col) / col.len() as f64
        })
        .collect()
}

fn log_slope(log_gaps: &[f64], moments: &[f64]) -> Result<f64> {
    if moments.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::InsufficientData(
            "a gap moment is zero or non-finite; the log-log fit is undefined".into(),
        ));
    }
    let logs: Vec<f64> = moments.iter().map(|m| m.ln()).collect();
    Ok(linear_fit(log_gaps, &logs).0)
}

/// `slope ± 2·sd/√B` over `B` contiguous path batches; degenerate to a point
/// when fewer than two batches exist.
fn batch_interval(slope: f64, batch_slopes: &[f64]) -> [f64; 2] {
    if batch_slopes.len() < 2 {
        return [slope, slope];
    }
    let s = MeanStderr::from_samples(batch_slopes);
    [slope - 2.0 * s.stderr, slope + 2.0 * s.stderr]
}

/// Log-log regression of gap moments over dyadic gaps `Δ·2^k ≤ T/2`, where
/// `Δ` is the coarse spacing of the lifts.
pub fn holder_scaling_from_lifts(
    lifts: &[GridRoughPath],
    epsilon: f64,
    p: u32,
) -> Result<HolderRecord> {
    let first = lifts
        .first()
        .ok_or_else(|| Error::InsufficientData("no paths".into()))?;
    for rp in lifts {
        first.base().check_same_grid(rp.base())?;
    }
    let n = first.steps();
    let gaps: Vec<usize> = std::iter::successors(Some(1usize), |g| Some(g * 2))
        .take_while(|&g| 2 * g <= n)
        .collect();
    if gaps.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} dyadic gaps on a grid of {n} coarse steps, need 4",
            gaps.len()
        )));
    }
    let spacing = first.base().dt();
    let gap_times: Vec<f64> = gaps.iter().map(|&g| g as f64 * spacing).collect();
    let log_gaps: Vec<f64> = gap_times.iter().map(|t| t.ln()).collect();

    let per_path: Vec<(Vec<f64>, Vec<f64>)> = lifts
        .par_iter()
        .map(|rp| gap_moments(rp, &gaps, p))
        .collect();
    let l1_rows: Vec<Vec<f64>> = per_path.iter().map(|r| r.0.clone()).collect();
    let l2_rows: Vec<Vec<f64>> = per_path.iter().map(|r| r.1.clone()).collect();
    let level1_moments = mean_columns(&l1_rows);
    let level2_moments = mean_columns(&l2_rows);
    let level1_slope = log_slope(&log_gaps, &level1_moments)?;
    let level2_slope = log_slope(&log_gaps, &level2_moments)?;

    let batches = SLOPE_BATCHES.min(lifts.len());
    let width = lifts.len() / batches;
    let mut b1 = Vec::new();
    let mut b2 = Vec::new();
    if batches >= 2 {
        for b in 0..batches {
            let range = b * width..(b + 1) * width;
            if let (Ok(s1), Ok(s2)) = (
                log_slope(&log_gaps, &mean_columns(&l1_rows[range.clone()])),
                log_slope(&log_gaps, &mean_columns(&l2_rows[range])),
            ) {
                b1.push(s1);
                b2.push(s2);
            }
        }
    }
    let pf = p as f64;
    Ok(HolderRecord {
        epsilon,
        p,
        gaps: gap_times,
        level1_moments,
        level2_moments,
        level1_ci: batch_interval(level1_slope, &b1),
        level2_ci: batch_interval(level2_slope, &b2),
        level1_degenerate: (level1_slope - pf / 2.0).abs() > pf / 4.0,
        level2_degenerate: (level2_slope - pf).abs() > pf / 2.0,
        level1_slope,
        level2_slope,
    })
}

/// Hölder scaling of the Itô-lifted fast–slow path `X^ε` for every ε and
/// every configured moment.
pub fn run_holder_scaling(config: &ExperimentConfig) -> Result<HolderScalingReport> {
    config.validate()?;
    let model = config.model()?;
    let mut per_epsilon = Vec::new();
    for &epsilon in &config.epsilons {
        let grid = config.fine_grid(epsilon);
        let lifts = with_worker_pool(|| {
            per_path(config.n_paths, epsilon, |k| {
                let noise = path_noise(config, &model, grid, k);
                let (xe, _) = simulate_fast_slow(&model, epsilon, &noise, config.scheme)?;
                ito_lift(&xe, config.coarsen)
            })
        })?;
        for &p in &config.p_moments {
            per_epsilon.push(with_worker_pool(|| {
                holder_scaling_from_lifts(&lifts, epsilon, p)
            })?);
        }
    }
    Ok(HolderScalingReport {
        meta: meta(config),
        per_epsilon,
    })
}

/// Mean `|∫₀^T f(X^ε, Y^ε) − f̄(X^ε) ds|` per ε.
pub fn run_averaging_validation(
    config: &ExperimentConfig,
    obs: &ScalarObservableSpec,
) -> Result<AveragingReport> {
    config.validate()?;
    let model = config.model()?;
    obs.validate(model.dim())?;
    let mut per_epsilon = Vec::new();
    for &epsilon in &config.epsilons {
        let grid = config.fine_grid(epsilon);
        let errors = with_worker_pool(|| {
            per_path(config.n_paths, epsilon, |k| {
                let noise = path_noise(config, &model, grid, k);
                let (xe, ye) = simulate_fast_slow(&model, epsilon, &noise, config.scheme)?;
                averaging_error(&xe, &ye, obs, &model)
            })
        })?;
        per_epsilon.push(AveragingRecord {
            epsilon,
            stats: MeanStderr::from_samples(&errors),
        });
    }
    let decreasing = per_epsilon
        .windows(2)
        .all(|w| w[1].stats.mean < w[0].stats.mean);
    Ok(AveragingReport {
        meta: meta(config),
        observable: ObservableConfig::from_spec(obs),
        per_epsilon,
        decreasing,
    })
}
