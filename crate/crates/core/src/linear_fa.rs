//! Linear features for the Q-function (primal) and the per-pair dual
//! variables, plus the geometry they induce under a stationary weighting.

use log::warn;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::mdp::{Mdp, Policy};
use crate::rng::{self, Stream};

/// Rows with norm in `(1, 1 + ROW_NORM_SLACK]` are rescaled; larger rows
/// are rejected.
const ROW_NORM_SLACK: f64 = 1e-12;
const JACOBI_TOL: f64 = 1e-12;
/// Smallest acceptable covariance eigenvalue for generated features.
const RANDOM_FEATURE_MIN_MU: f64 = 1e-6;
const RANDOM_FEATURE_ATTEMPTS: u64 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("clip bounds are inverted: lo = {lo}, hi = {hi}")]
    BadBounds { lo: f64, hi: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("feature row {row} has norm {norm} > 1")]
    RowNormTooLarge { row: usize, norm: f64 },
    #[error("weighted feature covariance is singular (min eigenvalue {0})")]
    SingularCovariance(f64),
    #[error("could not draw well-conditioned random features")]
    RandomFeaturesIllConditioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Features `φ(s,a)` of the Q-function.
    Primal,
    /// Features `ψ(s,a)` of the dual variables.
    Dual,
}

/// Row-major `|S||A| × d` matrix with rows of Euclidean norm at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    n_rows: usize,
    dim: usize,
    data: Vec<f64>,
    kind: FeatureKind,
}

impl FeatureMap {
    pub fn new(n_rows: usize, dim: usize, mut data: Vec<f64>, kind: FeatureKind) -> Result<Self, FeatureError> {
        if dim == 0 || data.len() != n_rows * dim {
            return Err(FeatureError::DimensionMismatch(format!(
                "{} entries for a {n_rows} × {dim} feature matrix",
                data.len()
            )));
        }
        for (row, chunk) in data.chunks_mut(dim).enumerate() {
            let norm = linalg::norm2(chunk);
            if !norm.is_finite() || norm > 1.0 + ROW_NORM_SLACK {
                return Err(FeatureError::RowNormTooLarge { row, norm });
            }
            if norm > 1.0 {
                if norm > 1.0 + 4.0 * f64::EPSILON {
                    warn!("feature row {row} has norm {norm}; rescaling to 1");
                }
                chunk.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Ok(FeatureMap { n_rows, dim, data, kind })
    }

    /// Builds from nested rows, e.g. parsed from JSON.
    pub fn from_rows(rows: &[Vec<f64>], kind: FeatureKind) -> Result<Self, FeatureError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(FeatureError::DimensionMismatch("ragged feature rows".into()));
        }
        FeatureMap::new(rows.len(), dim, rows.concat(), kind)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `φ(i)ᵀ w`.
    pub fn dot(&self, i: usize, w: &[f64]) -> f64 {
        linalg::dot(self.row(i), w)
    }

    /// `Φ w` over all rows.
    pub fn apply(&self, w: &[f64]) -> Result<Vec<f64>, FeatureError> {
        self.check_weights(w)?;
        Ok((0..self.n_rows).map(|i| self.dot(i, w)).collect())
    }

    pub fn check_weights(&self, w: &[f64]) -> Result<(), FeatureError> {
        if w.len() != self.dim {
            return Err(FeatureError::DimensionMismatch(format!(
                "weight vector has length {}, features have dimension {}",
                w.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn check_rows(&self, mdp: &Mdp) -> Result<(), FeatureError> {
        if self.n_rows != mdp.n_pairs() {
            return Err(FeatureError::DimensionMismatch(format!(
                "{} feature rows for {} state-action pairs",
                self.n_rows,
                mdp.n_pairs()
            )));
        }
        Ok(())
    }
}

/// One-hot features over state-action pairs.
pub fn tabular_features(n_states: usize, n_actions: usize, kind: FeatureKind) -> FeatureMap {
    let n = n_states * n_actions;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    FeatureMap { n_rows: n, dim: n, data, kind }
}

/// Gaussian rows scaled to unit norm. Seeds `seed, seed + 1, …` are tried
/// until the `d_pi`-weighted covariance has minimum eigenvalue above 1e-6.
pub fn random_features(
    n_rows: usize,
    dim: usize,
    seed: u64,
    d_pi: &[f64],
    kind: FeatureKind,
) -> Result<FeatureMap, FeatureError> {
    let stream = match kind {
        FeatureKind::Primal => Stream::Features,
        FeatureKind::Dual => Stream::DualFeatures,
    };
    for attempt in 0..RANDOM_FEATURE_ATTEMPTS {
        let mut rng = rng::stream(seed.wrapping_add(attempt), stream);
        let mut data: Vec<f64> = (0..n_rows * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for chunk in data.chunks_mut(dim) {
            let norm = linalg::norm2(chunk);
            chunk.iter_mut().for_each(|x| *x /= norm);
        }
        let map = FeatureMap::new(n_rows, dim, data, kind)?;
        if min_eigenvalue(&map, d_pi)? > RANDOM_FEATURE_MIN_MU {
            return Ok(map);
        }
    }
    Err(FeatureError::RandomFeaturesIllConditioned)
}

pub fn clip(x: f64, lo: f64, hi: f64) -> Result<f64, FeatureError> {
    if lo > hi {
        return Err(FeatureError::BadBounds { lo, hi });
    }
    Ok(x.max(lo).min(hi))
}

/// `V(s) = Σ_a π(a|s) · clip(φ(s,a)ᵀθ, ±1/(1−γ))`.
pub fn v_from_theta(mdp: &Mdp, policy: &Policy, phi: &FeatureMap, theta: &[f64]) -> Result<Vec<f64>, FeatureError> {
    phi.check_rows(mdp)?;
    phi.check_weights(theta)?;
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(FeatureError::DimensionMismatch("policy does not match MDP".into()));
    }
    let bound = mdp.value_bound();
    Ok((0..mdp.n_states())
        .map(|s| {
            (0..mdp.n_actions())
                .map(|a| policy.prob(s, a) * phi.dot(mdp.pair(s, a), theta).clamp(-bound, bound))
                .sum()
        })
        .collect())
}

/// `V*(s) = max_a clip(φ(s,a)ᵀθ, ±1/(1−γ))`.
pub fn v_star_from_theta(mdp: &Mdp, phi: &FeatureMap, theta: &[f64]) -> Result<Vec<f64>, FeatureError> {
    phi.check_rows(mdp)?;
    phi.check_weights(theta)?;
    let bound = mdp.value_bound();
    Ok((0..mdp.n_states())
        .map(|s| {
            (0..mdp.n_actions())
                .map(|a| phi.dot(mdp.pair(s, a), theta).clamp(-bound, bound))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

/// `ΦᵀDΦ` under the pair weighting `d_pi`, with its smallest eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGeometry {
    /// Row-major `d × d`.
    pub covariance: Vec<f64>,
    pub dim: usize,
    pub mu: f64,
}

impl WeightedGeometry {
    pub fn new(phi: &FeatureMap, d_pi: &[f64]) -> Result<Self, FeatureError> {
        let covariance = weighted_covariance(phi, d_pi)?;
        let mu = linalg::symmetric_eigenvalues(&covariance, phi.dim, JACOBI_TOL)[0];
        Ok(WeightedGeometry { covariance, dim: phi.dim, mu })
    }

    /// True when `μ` is zero up to eigensolver precision.
    pub fn is_singular(&self) -> bool {
        self.mu <= JACOBI_TOL
    }
}

fn weighted_covariance(phi: &FeatureMap, d_pi: &[f64]) -> Result<Vec<f64>, FeatureError> {
    if d_pi.len() != phi.n_rows {
        return Err(FeatureError::DimensionMismatch(format!(
            "{} weights for {} feature rows",
            d_pi.len(),
            phi.n_rows
        )));
    }
    let d = phi.dim;
    let mut c = vec![0.0; d * d];
    for (i, &w) in d_pi.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = phi.row(i);
        for j in 0..d {
            let wj = w * row[j];
            if wj == 0.0 {
                continue;
            }
            for k in j..d {
                c[j * d + k] += wj * row[k];
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            c[j * d + k] = c[k * d + j];
        }
    }
    Ok(c)
}

/// Smallest eigenvalue `μ` of `ΦᵀDΦ` (cyclic Jacobi).
pub fn min_eigenvalue(phi: &FeatureMap, d_pi: &[f64]) -> Result<f64, FeatureError> {
    Ok(WeightedGeometry::new(phi, d_pi)?.mu)
}

/// Weighted least-squares fit `(ΦᵀDΦ)⁻¹ ΦᵀD f`.
pub fn weighted_fit(f: &[f64], phi: &FeatureMap, d_pi: &[f64]) -> Result<Vec<f64>, FeatureError> {
    if f.len() != phi.n_rows {
        return Err(FeatureError::DimensionMismatch(format!("{} targets for {} rows", f.len(), phi.n_rows)));
    }
    let geometry = WeightedGeometry::new(phi, d_pi)?;
    if geometry.is_singular() {
        return Err(FeatureError::SingularCovariance(geometry.mu));
    }
    let d = phi.dim;
    let mut rhs = vec![0.0; d];
    for (i, (&w, &fi)) in d_pi.iter().zip(f).enumerate() {
        let wf = w * fi;
        rhs.iter_mut().zip(phi.row(i)).for_each(|(r, x)| *r += wf * x);
    }
    linalg::solve_spd(&geometry.covariance, &rhs, d).ok_or(FeatureError::SingularCovariance(geometry.mu))
}

/// `D`-orthogonal projection `Πf = Φ(ΦᵀDΦ)⁻¹ΦᵀD f` onto the span of `Φ`.
pub fn project_weighted(f: &[f64], phi: &FeatureMap, d_pi: &[f64]) -> Result<Vec<f64>, FeatureError> {
    let w = weighted_fit(f, phi, d_pi)?;
    phi.apply(&w)
}

/// Radial projection onto `{ν : ‖ν‖₂ ≤ b_nu}`.
pub fn project_ball(nu: &[f64], b_nu: f64) -> Vec<f64> {
    let mut out = nu.to_vec();
    project_ball_in_place(&mut out, b_nu);
    out
}

pub fn project_ball_in_place(nu: &mut [f64], b_nu: f64) {
    let norm = linalg::norm2(nu);
    if norm > b_nu {
        let scale = b_nu / norm;
        nu.iter_mut().for_each(|x| *x *= scale);
    }
}
