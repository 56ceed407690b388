//! Runs, oracle solves and rate studies, and the files they leave behind.
//!
//! Every command writes under `<out>/<run_id>/`:
//!
//! | file              | written by            |
//! |-------------------|-----------------------|
//! | `trace.csv`       | run (one seed)        |
//! | `trace_seed<N>.csv` | run (several seeds) |
//! | `config.json`     | run, rate-study       |
//! | `oracle.json`     | run, oracle           |
//! | `summary.csv`     | rate-study            |
//! | `rate_study.json` | rate-study            |

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use rtdlab_core::learners::{self, LearnerConfig, LearnerOutput};
use rtdlab_core::oracle::{self, OracleSolution};

use crate::config::{Algo, ExperimentConfig, HarnessError, Resolved};

/// Worker pool sized by `RTDLAB_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var("RTDLAB_THREADS") {
        let n: usize = value
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| HarnessError::Config(format!("RTDLAB_THREADS must be a positive integer, got `{value}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| HarnessError::Config(e.to_string()))
}

pub fn solve_oracle(r: &Resolved) -> Result<OracleSolution, HarnessError> {
    let sol = match r.config.algo {
        Algo::Td => oracle::solve_policy(&r.mdp, &r.policy, &r.set, r.config.tol)?,
        Algo::Q => oracle::solve_optimal(&r.mdp, &r.set, r.config.tol)?,
    };
    info!("oracle converged after {} sweeps (residual {:e})", sol.iterations, sol.residual);
    Ok(sol)
}

/// One learner run with the given seed and inner length.
pub fn run_learner(
    r: &Resolved,
    seed: u64,
    k_inner: usize,
    oracle_q: Option<&[f64]>,
) -> Result<LearnerOutput, HarnessError> {
    let cfg = LearnerConfig { seed, k_inner, ..r.config.learner.clone() };
    let learner = match r.config.algo {
        Algo::Td => learners::robust_td,
        Algo::Q => learners::robust_q,
    };
    let out = learner(&r.mdp, &r.policy, &r.phi, &r.psi, &r.set, &cfg, oracle_q)?;
    info!("seed {seed}, K = {k_inner}: final sup_err {:?}", out.trace.final_sup_err());
    Ok(out)
}

fn run_dir(out: &Path, r: &Resolved) -> Result<PathBuf, HarnessError> {
    let dir = out.join(&r.run_id);
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("harness records serialize");
    text.push('\n');
    write(path, &text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub theta_hat: Vec<f64>,
    pub final_sup_err: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub results: Vec<SeedResult>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub traces: Vec<PathBuf>,
    pub results: Vec<SeedResult>,
}

/// Runs the learner for every seed and writes traces, sidecar and oracle.
pub fn cmd_run(r: &Resolved, out: &Path, with_oracle: bool, wall_time: bool) -> Result<RunReport, HarnessError> {
    let oracle = if with_oracle { Some(solve_oracle(r)?) } else { None };
    let oracle_q = oracle.as_ref().map(|o| o.q.as_slice());
    let seeds = r.seeds();
    let outputs: Vec<LearnerOutput> = thread_pool()?.install(|| {
        seeds
            .par_iter()
            .map(|&seed| run_learner(r, seed, r.config.learner.k_inner, oracle_q))
            .collect::<Result<_, _>>()
    })?;

    let dir = run_dir(out, r)?;
    let mut traces = Vec::new();
    let mut results = Vec::new();
    for (&seed, output) in seeds.iter().zip(&outputs) {
        let name = if seeds.len() == 1 { "trace.csv".to_string() } else { format!("trace_seed{seed}.csv") };
        let path = dir.join(name);
        write(&path, &output.trace.to_csv(wall_time))?;
        traces.push(path);
        results.push(SeedResult {
            seed,
            theta_hat: output.theta_hat.clone(),
            final_sup_err: output.trace.final_sup_err(),
        });
    }
    write_json(
        &dir.join("config.json"),
        &RunRecord { run_id: r.run_id.clone(), config: r.config.clone(), results: results.clone() },
    )?;
    if let Some(o) = &oracle {
        write_json(&dir.join("oracle.json"), o)?;
    }
    Ok(RunReport { dir, traces, results })
}

/// Solves the robust oracle for the configured algorithm and writes it.
pub fn cmd_oracle(r: &Resolved, out: &Path) -> Result<(PathBuf, OracleSolution), HarnessError> {
    let sol = solve_oracle(r)?;
    let path = run_dir(out, r)?.join("oracle.json");
    write_json(&path, &sol)?;
    Ok((path, sol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    #[serde(rename = "K")]
    pub k: usize,
    pub median_err: f64,
    pub q25: f64,
    pub q75: f64,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub run_id: String,
    pub seeds: Vec<u64>,
    pub points: Vec<RatePoint>,
    /// Least-squares slope of `ln median_err` against `ln K`.
    pub slope: f64,
    pub intercept: f64,
}

impl RateStudy {
    /// `K,median_err,q25,q75`, one row per grid point.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("K,median_err,q25,q75\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{}\n", p.k, p.median_err, p.q25, p.q75));
        }
        out
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Ordinary least squares `y = intercept + slope · x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub const MIN_RATE_POINTS: usize = 3;
pub const MIN_RATE_SEEDS: usize = 10;

/// Final sup-norm error for every `(K, seed)` pair, summarised per `K`.
pub fn rate_study(r: &Resolved) -> Result<RateStudy, HarnessError> {
    let grid = &r.config.k_grid;
    let seeds: Vec<u64> =
        if r.config.seeds.is_empty() { (0..MIN_RATE_SEEDS as u64).collect() } else { r.config.seeds.clone() };
    if grid.len() < MIN_RATE_POINTS || seeds.len() < MIN_RATE_SEEDS {
        return Err(HarnessError::Config(format!(
            "rate study needs at least {MIN_RATE_POINTS} K values and {MIN_RATE_SEEDS} seeds (got {} and {})",
            grid.len(),
            seeds.len()
        )));
    }
    if grid.contains(&0) {
        return Err(HarnessError::Config("K values must be positive".into()));
    }
    let oracle = solve_oracle(r)?;
    let jobs: Vec<(usize, u64)> = grid.iter().flat_map(|&k| seeds.iter().map(move |&s| (k, s))).collect();
    let errors: Vec<f64> = thread_pool()?.install(|| {
        jobs.par_iter()
            .map(|&(k, seed)| {
                let out = run_learner(r, seed, k, Some(&oracle.q))?;
                Ok(out.trace.final_sup_err().expect("oracle supplied"))
            })
            .collect::<Result<_, HarnessError>>()
    })?;

    let points: Vec<RatePoint> = grid
        .iter()
        .zip(errors.chunks(seeds.len()))
        .map(|(&k, errs)| {
            let mut sorted = errs.to_vec();
            sorted.sort_by(f64::total_cmp);
            RatePoint {
                k,
                median_err: quantile(&sorted, 0.5),
                q25: quantile(&sorted, 0.25),
                q75: quantile(&sorted, 0.75),
                errors: errs.to_vec(),
            }
        })
        .collect();
    let x: Vec<f64> = points.iter().map(|p| (p.k as f64).ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.median_err.ln()).collect();
    let (slope, intercept) = fit_line(&x, &y);
    Ok(RateStudy { run_id: r.run_id.clone(), seeds, points, slope, intercept })
}

pub fn cmd_rate_study(r: &Resolved, out: &Path) -> Result<(PathBuf, RateStudy), HarnessError> {
    let study = rate_study(r)?;
    let dir = run_dir(out, r)?;
    write(&dir.join("summary.csv"), &study.summary_csv())?;
    write_json(&dir.join("rate_study.json"), &study)?;
    let results = Vec::new();
    write_json(&dir.join("config.json"), &RunRecord { run_id: r.run_id.clone(), config: r.config.clone(), results })?;
    Ok((dir, study))
}
