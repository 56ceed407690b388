//! Command-line surface.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use rtdlab_core::mdp;

use crate::config::{parse_features, parse_random_mdp, parse_uncertainty, Algo, ExperimentConfig, FeatureSpec,
                    HarnessError, Resolved, Source, UncertaintySpec};
use crate::experiment;

#[derive(Debug, Parser)]
#[command(name = "rtdlab", version, about = "Robust TD and robust Q-learning experiments on finite MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a learner and write its trace.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Skip the oracle solve; sup_err is then NaN.
        #[arg(long)]
        no_oracle: bool,
        /// Record wall-clock times in the trace (breaks byte reproducibility).
        #[arg(long)]
        wall_time: bool,
    },
    /// Solve for the exact robust Q-function.
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Final error against K over several seeds, with a log-log slope.
    RateStudy {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write a model as JSON.
    GenMdp {
        /// `random:<S>x<A>:<seed>` or a JSON file to normalise.
        #[arg(long, default_value = "random:5x2:0")]
        mdp: String,
        #[arg(long)]
        gamma: Option<f64>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML experiment file; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub algo: Option<Algo>,
    /// `tv:<δ>` or `w:<δ>:<ℓ>[:<distfile>]`.
    #[arg(long)]
    pub uncertainty: Option<String>,
    /// `random:<S>x<A>:<seed>` or a JSON file.
    #[arg(long)]
    pub mdp: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// `uniform` or a JSON file.
    #[arg(long)]
    pub policy: Option<String>,
    /// `tabular`, `random:<d>:<seed>` or a JSON file of rows.
    #[arg(long)]
    pub features: Option<String>,
    /// Dual features, same forms as `--features`.
    #[arg(long)]
    pub dual_features: Option<String>,
    #[arg(long = "T")]
    pub t_outer: Option<usize>,
    #[arg(long = "K")]
    pub k_inner: Option<usize>,
    #[arg(long)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub b_nu: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated K values for `rate-study`.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub warm_start: bool,
    #[arg(long)]
    pub initial_state: Option<usize>,
    /// Oracle tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output root; each run writes to `<out>/<run_id>/`.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

fn rebase(path: &str, base: &Path) -> String {
    let p = Path::new(path);
    if p.is_absolute() || base.as_os_str().is_empty() {
        path.to_string()
    } else {
        base.join(p).to_string_lossy().into_owned()
    }
}

/// Rewrites file references in a config loaded from `base` so they resolve
/// from the working directory.
fn rebase_paths(cfg: &mut ExperimentConfig, base: &Path) -> Result<(), HarnessError> {
    if let Source::Spec(s) = &cfg.mdp {
        if parse_random_mdp(s)?.is_none() {
            cfg.mdp = Source::Spec(rebase(s, base));
        }
    }
    if let Source::Spec(s) = &cfg.policy {
        if s != "uniform" {
            cfg.policy = Source::Spec(rebase(s, base));
        }
    }
    for spec in [&mut cfg.features, &mut cfg.dual_features] {
        if let FeatureSpec::File(_) = parse_features(spec)? {
            *spec = rebase(spec, base);
        }
    }
    if let UncertaintySpec::Wasserstein { distfile: Some(f), .. } = parse_uncertainty(&cfg.uncertainty)? {
        let head: Vec<&str> = cfg.uncertainty.splitn(4, ':').take(3).collect();
        cfg.uncertainty = format!("{}:{}", head.join(":"), rebase(&f.to_string_lossy(), base));
    }
    Ok(())
}

impl CommonArgs {
    /// Loads the config file (if any) and applies flag overrides.
    pub fn experiment(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let (mut cfg, base) = ExperimentConfig::from_toml_file(path)?;
                rebase_paths(&mut cfg, &base)?;
                cfg
            }
            None => ExperimentConfig::default(),
        };
        if let Some(a) = self.algo {
            cfg.algo = a;
        }
        if let Some(u) = &self.uncertainty {
            cfg.uncertainty = u.clone();
        }
        if let Some(m) = &self.mdp {
            cfg.mdp = Source::Spec(m.clone());
        }
        if self.gamma.is_some() {
            cfg.gamma = self.gamma;
        }
        if let Some(p) = &self.policy {
            cfg.policy = Source::Spec(p.clone());
        }
        if let Some(f) = &self.features {
            cfg.features = f.clone();
        }
        if let Some(f) = &self.dual_features {
            cfg.dual_features = f.clone();
        }
        let l = &mut cfg.learner;
        if let Some(v) = self.t_outer {
            l.t_outer = v;
        }
        if let Some(v) = self.k_inner {
            l.k_inner = v;
        }
        if let Some(v) = self.beta0 {
            l.beta0 = v;
        }
        if let Some(v) = self.c {
            l.c = v;
        }
        if let Some(v) = self.omega {
            l.omega = v;
        }
        if self.b_nu.is_some() {
            l.b_nu = self.b_nu;
        }
        if let Some(v) = self.seed {
            l.seed = v;
        }
        if let Some(v) = self.initial_state {
            l.initial_state = v;
        }
        if self.warm_start {
            l.warm_start = true;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(k) = &self.k_grid {
            cfg.k_grid = k.clone();
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<Resolved, HarnessError> {
        Resolved::new(self.experiment()?, Path::new(""))
    }
}

/// Executes one command, printing a short report on stdout.
pub fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { common, no_oracle, wall_time } => {
            let r = common.resolve()?;
            let report = experiment::cmd_run(&r, &common.out, !no_oracle, wall_time)?;
            println!("run {} -> {}", r.run_id, report.dir.display());
            for res in &report.results {
                match res.final_sup_err {
                    Some(e) => println!("seed {}: final sup_err {e:.6}", res.seed),
                    None => println!("seed {}: done", res.seed),
                }
            }
        }
        Command::Oracle { common } => {
            let r = common.resolve()?;
            let (path, sol) = experiment::cmd_oracle(&r, &common.out)?;
            println!("oracle {} -> {} ({} sweeps, residual {:e})", r.run_id, path.display(), sol.iterations, sol.residual);
        }
        Command::RateStudy { common } => {
            let r = common.resolve()?;
            let (dir, study) = experiment::cmd_rate_study(&r, &common.out)?;
            println!("rate study {} -> {}", r.run_id, dir.display());
            for p in &study.points {
                println!("K={:>8}  median {:.6}  [{:.6}, {:.6}]", p.k, p.median_err, p.q25, p.q75);
            }
            println!("slope {:.4}", study.slope);
        }
        Command::GenMdp { mdp: spec, gamma, out } => {
            let model = match parse_random_mdp(&spec)? {
                Some((ns, na, seed)) => mdp::random_mdp(ns, na, seed),
                None => {
                    let text = std::fs::read_to_string(&spec)
                        .map_err(|e| HarnessError::Config(format!("{spec}: {e}")))?;
                    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{spec}: {e}")))?
                }
            };
            let model = match gamma {
                Some(g) => model.with_gamma(g)?,
                None => model,
            };
            let mut text = serde_json::to_string_pretty(&model).expect("MDP serializes");
            text.push('\n');
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}
