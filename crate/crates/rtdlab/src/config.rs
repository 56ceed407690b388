//! Experiment configuration: a TOML file, CLI overrides, and resolution into
//! concrete model objects.
//!
//! Sources are written as short specs:
//!
//! ```text
//! mdp          random:<S>x<A>:<seed> | <path.json>
//! policy       uniform | <path.json>
//! uncertainty  tv:<δ> | w:<δ>:<ℓ>[:<distfile.json>]
//! features     tabular | random:<d>:<seed> | <path.json>
//! ```
//!
//! Relative paths inside a config file are taken relative to that file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

use rtdlab_core::linear_fa::{self, FeatureError, FeatureKind, FeatureMap};
use rtdlab_core::mdp::{self, Mdp, MdpError, Policy};
use rtdlab_core::uncertainty::{UncertaintyError, UncertaintySet, WassersteinBall};
use rtdlab_core::{LearnerConfig, LearnerError, OracleError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Mixing(MdpError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Learner(LearnerError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Mixing(_) => 3,
            HarnessError::Oracle(OracleError::NonConvergence { .. }) => 4,
            HarnessError::Oracle(_) => 2,
            HarnessError::Learner(LearnerError::MixingAssumptionViolated(_)) => 3,
            HarnessError::Learner(_) => 2,
            HarnessError::Io { .. } => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

impl From<LearnerError> for HarnessError {
    fn from(e: LearnerError) -> Self {
        match e {
            LearnerError::MixingAssumptionViolated(m) => HarnessError::Mixing(m),
            other => HarnessError::Learner(other),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

impl From<MdpError> for HarnessError {
    fn from(e: MdpError) -> Self {
        config_err(e)
    }
}

impl From<FeatureError> for HarnessError {
    fn from(e: FeatureError) -> Self {
        config_err(e)
    }
}

impl From<UncertaintyError> for HarnessError {
    fn from(e: UncertaintyError) -> Self {
        config_err(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    /// Robust TD policy evaluation.
    #[default]
    Td,
    /// Robust Q-learning.
    Q,
}

/// A model given by spec string or written inline in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Spec(String),
    Inline(T),
}

/// Everything needed to reproduce a run, before files are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algo: Algo,
    pub mdp: Source<Mdp>,
    /// Overrides the model's discount when set.
    pub gamma: Option<f64>,
    pub policy: Source<Policy>,
    pub uncertainty: String,
    pub features: String,
    pub dual_features: String,
    pub learner: LearnerConfig,
    /// Seeds for multi-seed runs; empty means `learner.seed` alone.
    pub seeds: Vec<u64>,
    pub k_grid: Vec<usize>,
    pub tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algo: Algo::Td,
            mdp: Source::Spec("random:5x2:0".into()),
            gamma: None,
            policy: Source::Spec("uniform".into()),
            uncertainty: "tv:0.2".into(),
            features: "tabular".into(),
            dual_features: "tabular".into(),
            learner: LearnerConfig::default(),
            seeds: Vec::new(),
            k_grid: vec![2500, 10_000, 40_000],
            tol: rtdlab_core::oracle::DEFAULT_TOL,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_file(path: &Path) -> Result<(Self, PathBuf), HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base))
    }
}

/// Uncertainty set as written in a config, before the distance file is read.
#[derive(Debug, Clone, PartialEq)]
pub enum UncertaintySpec {
    Tv { delta: f64 },
    Wasserstein { delta: f64, ell: f64, distfile: Option<PathBuf> },
}

fn parse_f64(field: &str, what: &str) -> Result<f64, HarnessError> {
    field.parse().map_err(|_| config_err(format!("bad {what} `{field}`")))
}

pub fn parse_uncertainty(spec: &str) -> Result<UncertaintySpec, HarnessError> {
    let parts: Vec<&str> = spec.splitn(4, ':').collect();
    match parts.as_slice() {
        ["tv", d] => Ok(UncertaintySpec::Tv { delta: parse_f64(d, "radius")? }),
        ["w", d, l] => Ok(UncertaintySpec::Wasserstein {
            delta: parse_f64(d, "radius")?,
            ell: parse_f64(l, "exponent")?,
            distfile: None,
        }),
        ["w", d, l, f] => Ok(UncertaintySpec::Wasserstein {
            delta: parse_f64(d, "radius")?,
            ell: parse_f64(l, "exponent")?,
            distfile: Some(PathBuf::from(f)),
        }),
        _ => Err(config_err(format!("bad uncertainty spec `{spec}`; expected tv:<δ> or w:<δ>:<ℓ>[:file]"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSpec {
    Tabular,
    Random { dim: usize, seed: u64 },
    File(PathBuf),
}

pub fn parse_features(spec: &str) -> Result<FeatureSpec, HarnessError> {
    if spec == "tabular" {
        return Ok(FeatureSpec::Tabular);
    }
    if let Some(rest) = spec.strip_prefix("random:") {
        let bad = || config_err(format!("bad feature spec `{spec}`; expected random:<d>:<seed>"));
        let (d, s) = rest.split_once(':').ok_or_else(bad)?;
        return Ok(FeatureSpec::Random { dim: d.parse().map_err(|_| bad())?, seed: s.parse().map_err(|_| bad())? });
    }
    Ok(FeatureSpec::File(PathBuf::from(spec)))
}

/// Parses `random:<S>x<A>:<seed>`; `None` means the spec is a path.
pub fn parse_random_mdp(spec: &str) -> Result<Option<(usize, usize, u64)>, HarnessError> {
    let Some(rest) = spec.strip_prefix("random:") else {
        return Ok(None);
    };
    let bad = || config_err(format!("bad MDP spec `{spec}`; expected random:<S>x<A>:<seed>"));
    let (shape, seed) = rest.split_once(':').ok_or_else(bad)?;
    let (s, a) = shape.split_once('x').ok_or_else(bad)?;
    let (s, a): (usize, usize) = (s.parse().map_err(|_| bad())?, a.parse().map_err(|_| bad())?);
    if s == 0 || a == 0 {
        return Err(bad());
    }
    Ok(Some((s, a, seed.parse().map_err(|_| bad())?)))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

/// Policy files hold either the serialized policy or one row per state.
#[derive(Deserialize)]
#[serde(untagged)]
enum PolicyFile {
    Full(Policy),
    Rows(Vec<Vec<f64>>),
}

/// A config turned into concrete objects.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub mdp: Mdp,
    pub policy: Policy,
    pub set: UncertaintySet,
    pub phi: FeatureMap,
    pub psi: FeatureMap,
    pub run_id: String,
}

impl Resolved {
    pub fn new(config: ExperimentConfig, base_dir: &Path) -> Result<Self, HarnessError> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };

        let mdp = match &config.mdp {
            Source::Inline(m) => m.clone(),
            Source::Spec(s) => match parse_random_mdp(s)? {
                Some((ns, na, seed)) => mdp::random_mdp(ns, na, seed),
                None => read_json(&at(Path::new(s)))?,
            },
        };
        let mdp = match config.gamma {
            Some(g) => mdp.with_gamma(g)?,
            None => mdp,
        };
        let (ns, na) = (mdp.n_states(), mdp.n_actions());

        let policy = match &config.policy {
            Source::Inline(p) => p.clone(),
            Source::Spec(s) if s == "uniform" => Policy::uniform(ns, na),
            Source::Spec(s) => match read_json::<PolicyFile>(&at(Path::new(s)))? {
                PolicyFile::Full(p) => p,
                PolicyFile::Rows(rows) => {
                    let width = rows.first().map_or(0, Vec::len);
                    Policy::new(rows.len(), width, rows.concat())?
                }
            },
        };
        policy.check_compatible(&mdp)?;

        let set = match parse_uncertainty(&config.uncertainty)? {
            UncertaintySpec::Tv { delta } => UncertaintySet::tv(delta)?,
            UncertaintySpec::Wasserstein { delta, ell, distfile: None } => {
                UncertaintySet::Wasserstein(WassersteinBall::line_metric(delta, ell, ns)?)
            }
            UncertaintySpec::Wasserstein { delta, ell, distfile: Some(f) } => {
                let rows: Vec<Vec<f64>> = read_json(&at(&f))?;
                if rows.len() != ns {
                    return Err(config_err(format!("distance matrix has {} rows for {ns} states", rows.len())));
                }
                UncertaintySet::Wasserstein(WassersteinBall::new(delta, ell, ns, rows.concat())?)
            }
        };

        let feature_map = |spec: &str, kind: FeatureKind| -> Result<FeatureMap, HarnessError> {
            let map = match parse_features(spec)? {
                FeatureSpec::Tabular => linear_fa::tabular_features(ns, na, kind),
                FeatureSpec::Random { dim, seed } => {
                    let d = mdp::stationary_distribution(&mdp, &policy).map_err(HarnessError::Mixing)?;
                    linear_fa::random_features(ns * na, dim, seed, &d.d, kind)?
                }
                FeatureSpec::File(p) => {
                    let rows: Vec<Vec<f64>> = read_json(&at(&p))?;
                    FeatureMap::from_rows(&rows, kind)?
                }
            };
            map.check_rows(&mdp)?;
            Ok(map)
        };
        let phi = feature_map(&config.features, FeatureKind::Primal)?;
        let psi = feature_map(&config.dual_features, FeatureKind::Dual)?;

        config.learner.validate()?;
        if !(config.tol > 0.0 && config.tol.is_finite()) {
            return Err(config_err(format!("tolerance must be positive, got {}", config.tol)));
        }
        let run_id = content_hash(&config, &mdp, &policy, &set, &phi, &psi);
        Ok(Resolved { config, mdp, policy, set, phi, psi, run_id })
    }

    /// Seeds to run: the explicit list, else the learner seed.
    pub fn seeds(&self) -> Vec<u64> {
        if self.config.seeds.is_empty() {
            vec![self.config.learner.seed]
        } else {
            self.config.seeds.clone()
        }
    }
}

/// First 16 hex digits of SHA-256 over the resolved inputs, so two configs
/// that read the same files with the same settings share an id.
fn content_hash(
    config: &ExperimentConfig,
    mdp: &Mdp,
    policy: &Policy,
    set: &UncertaintySet,
    phi: &FeatureMap,
    psi: &FeatureMap,
) -> String {
    let doc = serde_json::json!({
        "algo": config.algo,
        "learner": config.learner,
        "seeds": config.seeds,
        "k_grid": config.k_grid,
        "tol": config.tol,
        "mdp": mdp,
        "policy": policy,
        "uncertainty": set,
        "phi": phi.rows(),
        "psi": psi.rows(),
    });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    hex::encode(&digest[..8])
}
