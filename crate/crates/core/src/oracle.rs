//! Tabular ground truth for robust evaluation and control.
//!
//! Both robust Bellman operators solve every inner problem exactly, so their
//! fixed points are the robust values the learners estimate. Solvers run
//! synchronous sweeps from `q = 0`; the sup-norm γ-contraction bounds the
//! number of sweeps needed for any tolerance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::linear_fa::{self, FeatureError, FeatureMap};
use crate::mdp::{Mdp, MdpError, Policy};
use crate::uncertainty::{min_max, DualEvalContext, UncertaintySet};

/// Extra sweeps allowed beyond the contraction bound before giving up.
const SWEEP_MARGIN: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("value iteration did not reach tolerance after {iterations} sweeps (residual {residual})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("uncertainty set covers {set} states but the MDP has {mdp}")]
    StateCountMismatch { set: usize, mdp: usize },
}

/// Converged robust Q-function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    /// Values ordered `s * n_actions + a`.
    pub q: Vec<f64>,
    pub iterations: usize,
    /// `‖T q − q‖∞` of the returned `q`.
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub greedy_policy: Option<Vec<usize>>,
}

fn check_set(mdp: &Mdp, set: &UncertaintySet) -> Result<(), OracleError> {
    match set.n_states() {
        Some(n) if n != mdp.n_states() => Err(OracleError::StateCountMismatch { set: n, mdp: mdp.n_states() }),
        _ => Ok(()),
    }
}

/// `r(s,a) + γ σ_{P0(·|s,a)}(V)` for every pair.
pub fn robust_backup(v: &[f64], mdp: &Mdp, set: &UncertaintySet) -> Vec<f64> {
    let (lo, hi) = min_max(v);
    let mut out = Vec::with_capacity(mdp.n_pairs());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let ctx = DualEvalContext::with_range(v, mdp.row(s, a), lo, hi);
            out.push(mdp.reward(s, a) + mdp.gamma() * set.exact_sigma(&ctx).sigma);
        }
    }
    out
}

/// `V(s) = Σ_a π(a|s) q(s,a)`.
pub fn policy_values(q: &[f64], mdp: &Mdp, policy: &Policy) -> Vec<f64> {
    (0..mdp.n_states())
        .map(|s| (0..mdp.n_actions()).map(|a| policy.prob(s, a) * q[mdp.pair(s, a)]).sum())
        .collect()
}

/// `V(s) = max_a q(s,a)`.
pub fn greedy_values(q: &[f64], mdp: &Mdp) -> Vec<f64> {
    (0..mdp.n_states())
        .map(|s| (0..mdp.n_actions()).map(|a| q[mdp.pair(s, a)]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Maximising action per state; ties go to the smallest action index.
pub fn greedy_policy(q: &[f64], mdp: &Mdp) -> Vec<usize> {
    (0..mdp.n_states())
        .map(|s| {
            (1..mdp.n_actions()).fold(0, |best, a| if q[mdp.pair(s, a)] > q[mdp.pair(s, best)] { a } else { best })
        })
        .collect()
}

/// Robust policy-evaluation operator `T_r^π`.
pub fn robust_bellman_policy(q: &[f64], mdp: &Mdp, policy: &Policy, set: &UncertaintySet) -> Vec<f64> {
    robust_backup(&policy_values(q, mdp, policy), mdp, set)
}

/// Robust optimality operator `T_r^*`.
pub fn robust_bellman_optimal(q: &[f64], mdp: &Mdp, set: &UncertaintySet) -> Vec<f64> {
    robust_backup(&greedy_values(q, mdp), mdp, set)
}

/// Sweeps `q ← T q` from zero until `‖T q − q‖∞ ≤ tol (1 − γ)`, which puts
/// the returned `q` within `tol` of the fixed point.
fn fixed_point(mdp: &Mdp, tol: f64, operator: impl Fn(&[f64]) -> Vec<f64>) -> Result<OracleSolution, OracleError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(OracleError::BadTolerance(tol));
    }
    let gamma = mdp.gamma();
    let target = tol * (1.0 - gamma);
    // ‖T0 − 0‖∞ ≤ max r ≤ 1 and each sweep contracts by γ
    let cap = (target.ln() / gamma.ln()).ceil().max(0.0) as usize + SWEEP_MARGIN;
    let mut q = vec![0.0; mdp.n_pairs()];
    let mut residual = f64::INFINITY;
    for iterations in 0..=cap {
        let next = operator(&q);
        residual = linalg::sup_norm_diff(&next, &q);
        if residual <= target {
            return Ok(OracleSolution { q, iterations, residual, greedy_policy: None });
        }
        q = next;
    }
    Err(OracleError::NonConvergence { iterations: cap, residual })
}

/// Robust Q-function `Q_r^π` of a fixed policy.
pub fn solve_policy(mdp: &Mdp, policy: &Policy, set: &UncertaintySet, tol: f64) -> Result<OracleSolution, OracleError> {
    policy.check_compatible(mdp)?;
    check_set(mdp, set)?;
    fixed_point(mdp, tol, |q| robust_bellman_policy(q, mdp, policy, set))
}

/// Optimal robust Q-function `Q_r^*` and its greedy policy.
pub fn solve_optimal(mdp: &Mdp, set: &UncertaintySet, tol: f64) -> Result<OracleSolution, OracleError> {
    check_set(mdp, set)?;
    let mut sol = fixed_point(mdp, tol, |q| robust_bellman_optimal(q, mdp, set))?;
    sol.greedy_policy = Some(greedy_policy(&sol.q, mdp));
    Ok(sol)
}

/// Inner-loop target weights for a frozen `theta_hat`:
/// `(ΦᵀDΦ)⁻¹ ΦᵀD [r + γ F*]`, where `F*(s,a)` is the exact inner value of the
/// clipped policy value `V_θ̂`.
pub fn theta_star(
    mdp: &Mdp,
    policy: &Policy,
    phi: &FeatureMap,
    d_pi: &[f64],
    theta_hat: &[f64],
    set: &UncertaintySet,
) -> Result<Vec<f64>, OracleError> {
    check_set(mdp, set)?;
    let v = linear_fa::v_from_theta(mdp, policy, phi, theta_hat)?;
    let target = robust_backup(&v, mdp, set);
    Ok(linear_fa::weighted_fit(&target, phi, d_pi)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_fa::{tabular_features, FeatureKind};
    use crate::mdp::random_mdp;

    fn one_state() -> Mdp {
        Mdp::new(1, 1, vec![1.0], vec![1.0], 0.9).unwrap()
    }

    #[test]
    fn degenerate_mdp_value() {
        let mdp = one_state();
        for set in [
            UncertaintySet::tv(0.3).unwrap(),
            UncertaintySet::Wasserstein(crate::WassersteinBall::line_metric(0.3, 1.0, 1).unwrap()),
        ] {
            let sol = solve_policy(&mdp, &Policy::uniform(1, 1), &set, 1e-12).unwrap();
            assert!((sol.q[0] - 10.0).abs() < 1e-10, "{}", sol.q[0]);
        }
    }

    #[test]
    fn zero_q_backs_up_to_reward() {
        let mdp = random_mdp(4, 2, 2);
        let set = UncertaintySet::tv(0.2).unwrap();
        let q0 = vec![0.0; 8];
        assert_eq!(robust_bellman_policy(&q0, &mdp, &Policy::uniform(4, 2), &set), mdp.rewards());
        assert_eq!(robust_bellman_optimal(&q0, &mdp, &set), mdp.rewards());
    }

    #[test]
    fn whole_simplex_tv_ball() {
        // δ = 1: the adversary moves all mass to the worst state
        let mdp = Mdp::new(2, 1, vec![0.5, 0.5, 0.3, 0.7], vec![0.2, 0.9], 0.8).unwrap();
        let set = UncertaintySet::tv(1.0).unwrap();
        let sol = solve_policy(&mdp, &Policy::uniform(2, 1), &set, 1e-12).unwrap();
        // both rows see min V = V(0) = q(0) = 0.2 / (1 − 0.8) = 1
        assert!((sol.q[0] - 1.0).abs() < 1e-11);
        assert!((sol.q[1] - (0.9 + 0.8 * 1.0)).abs() < 1e-11);
    }

    #[test]
    fn greedy_ties_pick_smallest_action() {
        let mdp = random_mdp(2, 3, 0);
        assert_eq!(greedy_policy(&[1.0, 1.0, 0.5, 0.0, 2.0, 2.0], &mdp), vec![0, 1]);
    }

    #[test]
    fn theta_star_tabular_and_zero() {
        let mdp = random_mdp(3, 2, 4);
        let pol = Policy::uniform(3, 2);
        let phi = tabular_features(3, 2, FeatureKind::Primal);
        let d = crate::mdp::stationary_distribution(&mdp, &pol).unwrap().d;
        let set = UncertaintySet::tv(0.2).unwrap();
        let zero = theta_star(&mdp, &pol, &phi, &d, &[0.0; 6], &set).unwrap();
        assert!(linalg::sup_norm_diff(&zero, mdp.rewards()) < 1e-12);
        let theta_hat = [1.0, 2.0, -0.5, 3.0, 0.0, 4.0];
        let ts = theta_star(&mdp, &pol, &phi, &d, &theta_hat, &set).unwrap();
        let v = linear_fa::v_from_theta(&mdp, &pol, &phi, &theta_hat).unwrap();
        assert!(linalg::sup_norm_diff(&ts, &robust_backup(&v, &mdp, &set)) < 1e-10);
    }

    #[test]
    fn rejects_bad_tolerance_and_mismatched_set() {
        let mdp = random_mdp(3, 1, 0);
        let set = UncertaintySet::tv(0.1).unwrap();
        assert_eq!(solve_optimal(&mdp, &set, 0.0), Err(OracleError::BadTolerance(0.0)));
        let w = UncertaintySet::Wasserstein(crate::WassersteinBall::line_metric(0.1, 1.0, 4).unwrap());
        assert!(matches!(solve_optimal(&mdp, &w, 1e-6), Err(OracleError::StateCountMismatch { .. })));
    }
}
