//! Robust TD learning and robust Q-learning with linear function
//! approximation.
//!
//! Both learners share one control flow. An outer loop freezes a target
//! parameter `θ̂_t` and materialises its clipped value `V_θ̂`. The inner loop
//! then runs `K` steps of a two-time-scale scheme on a single trajectory:
//!
//! ```text
//! λ_k   = clip(ψ(S,A)ᵀ ν_k)                               fast, step β_k
//! ν_k+1 = Proj_{‖ν‖ ≤ B_ν}(ν_k + β_k g(λ_k; S', V_θ̂) ψ(S,A))
//! λ̄_k   = clip(ψ(S,A)ᵀ ν̄_k)     ν̄_k = mean of ν_⌊k/2⌋ … ν_k−1
//! TD    = r(S,A) + γ σ̂(λ̄_k; S', V_θ̂) − φ(S,A)ᵀ θ_k           slow, step α_k
//! θ_k+1 = θ_k + α_k TD φ(S,A)
//! ```
//!
//! with `β_k = β₀/√(k+1)` and `α_k = c/(k+1)^ω`. At the end of the inner loop
//! `θ̂_t+1 = θ_t,K`, the trajectory continues from where it stopped, and
//! `θ, ν` restart from zero unless `warm_start` is set.
//!
//! Robust Q-learning differs only in the target value: `V*_θ̂(s) = max_a
//! clip(φ(s,a)ᵀθ̂)` instead of the policy average.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::time::Instant;
use thiserror::Error;

use crate::linalg;
use crate::linear_fa::{self, FeatureError, FeatureMap};
use crate::mdp::{self, Mdp, MdpError, Policy, TrajectoryCursor};
use crate::uncertainty::{min_max, DualEvalContext, UncertaintyError, UncertaintySet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("sampling policy violates the mixing assumption: {0}")]
    MixingAssumptionViolated(MdpError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid learner configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("transition replay ran out after {0} steps")]
    ReplayExhausted(usize),
}

/// Loop lengths, step-size schedules and seeding for one learner run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Outer (target) iterations `T`.
    pub t_outer: usize,
    /// Inner iterations `K` per target.
    pub k_inner: usize,
    /// Fast step scale `β₀`.
    pub beta0: f64,
    /// Slow step scale `c`.
    pub c: f64,
    /// Slow step exponent `ω ∈ (0.5, 1]`.
    pub omega: f64,
    /// Dual ball radius; derived from the dual features when absent.
    pub b_nu: Option<f64>,
    pub warm_start: bool,
    pub seed: u64,
    pub initial_state: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            t_outer: 30,
            k_inner: 20_000,
            beta0: 2.0,
            c: 2.0,
            omega: 0.75,
            b_nu: None,
            warm_start: false,
            seed: 0,
            initial_state: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |msg: &str| Err(LearnerError::InvalidConfig(msg.to_string()));
        if self.k_inner == 0 {
            return bad("K must be at least 1");
        }
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return bad("beta0 must be positive");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("c must be positive");
        }
        if !(self.omega > 0.5 && self.omega <= 1.0) {
            return bad("omega must lie in (0.5, 1]");
        }
        if let Some(b) = self.b_nu {
            if !(b > 0.0 && b.is_finite()) {
                return bad("b_nu must be positive");
            }
        }
        Ok(())
    }

    /// Slow step `α_k = c / (k+1)^ω`.
    pub fn alpha(&self, k: usize) -> f64 {
        self.c / ((k + 1) as f64).powf(self.omega)
    }

    /// Fast step `β_k = β₀ / √(k+1)`.
    pub fn beta(&self, k: usize) -> f64 {
        self.beta0 / ((k + 1) as f64).sqrt()
    }
}

/// Half-tail running mean of vector iterates.
///
/// After `k ≥ 1` pushes of `ν_0 … ν_{k−1}` the average is
/// `(1/⌈k/2⌉) Σ_{l=⌊k/2⌋}^{k−1} ν_l`; before any push it is the initial
/// iterate supplied at construction.
#[derive(Debug, Clone)]
pub struct SuffixAverager {
    dim: usize,
    count: usize,
    total_sum: Vec<f64>,
    half_sum: Vec<f64>,
    /// Iterates `ν_⌊k/2⌋ … ν_{k−1}`, flattened.
    window: VecDeque<f64>,
    average: Vec<f64>,
}

impl SuffixAverager {
    pub fn new(initial: &[f64]) -> Self {
        let dim = initial.len();
        SuffixAverager {
            dim,
            count: 0,
            total_sum: vec![0.0; dim],
            half_sum: vec![0.0; dim],
            window: VecDeque::new(),
            average: initial.to_vec(),
        }
    }

    /// Appends `ν_k` and returns the updated half-tail mean.
    pub fn push(&mut self, nu: &[f64]) -> &[f64] {
        debug_assert_eq!(nu.len(), self.dim);
        self.count += 1;
        self.window.extend(nu);
        self.total_sum.iter_mut().zip(nu).for_each(|(s, x)| *s += x);
        self.half_sum.iter_mut().zip(nu).for_each(|(s, x)| *s += x);
        // window start ⌊k/2⌋ moves by at most one per push
        let target_len = self.count - self.count / 2;
        while self.window.len() / self.dim > target_len {
            for s in self.half_sum.iter_mut() {
                *s -= self.window.pop_front().expect("window holds a full iterate");
            }
        }
        let inv = 1.0 / target_len as f64;
        self.average.iter_mut().zip(&self.half_sum).for_each(|(a, s)| *a = s * inv);
        &self.average
    }

    pub fn current(&self) -> &[f64] {
        &self.average
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `Σ_{l<k} ν_l`.
    pub fn total_sum(&self) -> &[f64] {
        &self.total_sum
    }
}

/// One sampled step `(S, A, S')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

/// Supplier of consecutive transitions along one trajectory.
pub trait TransitionSource {
    fn next_transition(&mut self) -> Option<Transition>;
}

/// Samples from the nominal kernel under a policy, optionally recording.
pub struct SimulatedSource<'a> {
    mdp: &'a Mdp,
    policy: &'a Policy,
    cursor: TrajectoryCursor,
    recorded: Option<Vec<Transition>>,
}

impl<'a> SimulatedSource<'a> {
    pub fn new(mdp: &'a Mdp, policy: &'a Policy, cursor: TrajectoryCursor) -> Self {
        SimulatedSource { mdp, policy, cursor, recorded: None }
    }

    pub fn recording(mut self) -> Self {
        self.recorded = Some(Vec::new());
        self
    }

    pub fn into_recorded(self) -> Vec<Transition> {
        self.recorded.unwrap_or_default()
    }
}

impl TransitionSource for SimulatedSource<'_> {
    fn next_transition(&mut self) -> Option<Transition> {
        let state = self.cursor.state();
        let (action, next_state) = mdp::sample_step(self.mdp, self.policy, &mut self.cursor);
        let tr = Transition { state, action, next_state };
        if let Some(rec) = self.recorded.as_mut() {
            rec.push(tr);
        }
        Some(tr)
    }
}

/// Replays a recorded stream.
pub struct ReplaySource {
    transitions: Vec<Transition>,
    pos: usize,
}

impl ReplaySource {
    pub fn new(transitions: Vec<Transition>) -> Self {
        ReplaySource { transitions, pos: 0 }
    }
}

impl TransitionSource for ReplaySource {
    fn next_transition(&mut self) -> Option<Transition> {
        let tr = self.transitions.get(self.pos).copied();
        self.pos += 1;
        tr
    }
}

/// Diagnostics for one target parameter `θ̂_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub theta: Vec<f64>,
    /// `‖Φθ̂_t − Q_oracle‖∞` when an oracle was supplied.
    pub sup_err: Option<f64>,
    pub theta_norm: f64,
    /// Mean TD error over the inner loop that produced `θ̂_t`.
    pub mean_td: Option<f64>,
    pub wall_ms: f64,
    /// Largest `‖ν‖₂` after any fast update of that inner loop.
    pub max_dual_norm: f64,
    pub max_abs_td: f64,
    pub max_theta_norm: f64,
}

/// Per-outer-iteration records, `T + 1` of them including `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    /// CSV with header `t,sup_err,theta_norm,mean_td,wall_ms`. Missing values
    /// print as `NaN`; wall time prints as `0` unless requested so that
    /// traces stay byte-reproducible.
    pub fn to_csv(&self, include_wall_time: bool) -> String {
        let mut out = String::from("t,sup_err,theta_norm,mean_td,wall_ms\n");
        for r in &self.records {
            let wall = if include_wall_time { r.wall_ms } else { 0.0 };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.t,
                r.sup_err.unwrap_or(f64::NAN),
                r.theta_norm,
                r.mean_td.unwrap_or(f64::NAN),
                wall
            ));
        }
        out
    }

    pub fn final_sup_err(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.sup_err)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerOutput {
    pub theta_hat: Vec<f64>,
    pub trace: RunTrace,
}

/// Which value of the frozen target feeds the inner problem.
#[derive(Debug, Clone, Copy)]
pub enum ValueTarget<'a> {
    /// `V_θ̂(s) = Σ_a π(a|s) clip(φ(s,a)ᵀθ̂)`: policy evaluation.
    Policy(&'a Policy),
    /// `V*_θ̂(s) = max_a clip(φ(s,a)ᵀθ̂)`: control.
    Greedy,
}

/// A validated learner ready to consume transitions.
#[derive(Debug, Clone)]
pub struct RobustLearner<'a> {
    mdp: &'a Mdp,
    phi: &'a FeatureMap,
    psi: &'a FeatureMap,
    set: &'a UncertaintySet,
    config: LearnerConfig,
    target: ValueTarget<'a>,
    b_nu: f64,
    nominal: bool,
}

impl<'a> RobustLearner<'a> {
    /// Checks dimensions, the configuration and the mixing assumption for
    /// `sampling_policy`, and resolves the dual ball radius.
    pub fn new(
        mdp: &'a Mdp,
        sampling_policy: &Policy,
        phi: &'a FeatureMap,
        psi: &'a FeatureMap,
        set: &'a UncertaintySet,
        config: LearnerConfig,
        target: ValueTarget<'a>,
    ) -> Result<Self, LearnerError> {
        config.validate()?;
        set.require_positive_radius()?;
        if config.initial_state >= mdp.n_states() {
            return Err(LearnerError::InvalidConfig(format!(
                "initial state {} out of range",
                config.initial_state
            )));
        }
        if let Some(n) = set.n_states() {
            if n != mdp.n_states() {
                return Err(LearnerError::DimensionMismatch(format!(
                    "uncertainty set covers {n} states, MDP has {}",
                    mdp.n_states()
                )));
            }
        }
        phi.check_rows(mdp)?;
        psi.check_rows(mdp)?;
        if let ValueTarget::Policy(p) = target {
            p.check_compatible(mdp).map_err(|e| LearnerError::DimensionMismatch(e.to_string()))?;
        }
        sampling_policy.check_compatible(mdp).map_err(|e| LearnerError::DimensionMismatch(e.to_string()))?;
        let stationary =
            mdp::stationary_distribution(mdp, sampling_policy).map_err(LearnerError::MixingAssumptionViolated)?;
        let b_nu = match config.b_nu {
            Some(b) => b,
            None => default_dual_radius(mdp, psi, &stationary.d)?,
        };
        Ok(RobustLearner { mdp, phi, psi, set, config, target, b_nu, nominal: false })
    }

    /// Non-robust TD with the same target-network loop: the TD target is
    /// `r + γ V_θ̂(S')`, the zero-radius limit of the robust target.
    pub fn nominal(
        mdp: &'a Mdp,
        sampling_policy: &Policy,
        phi: &'a FeatureMap,
        config: LearnerConfig,
        target: ValueTarget<'a>,
    ) -> Result<Self, LearnerError> {
        static ZERO_BALL: UncertaintySet = UncertaintySet::Tv { delta: 0.0 };
        let config = LearnerConfig { b_nu: Some(1.0), ..config };
        config.validate()?;
        phi.check_rows(mdp)?;
        if config.initial_state >= mdp.n_states() {
            return Err(LearnerError::InvalidConfig(format!("initial state {} out of range", config.initial_state)));
        }
        if let ValueTarget::Policy(p) = target {
            p.check_compatible(mdp).map_err(|e| LearnerError::DimensionMismatch(e.to_string()))?;
        }
        sampling_policy.check_compatible(mdp).map_err(|e| LearnerError::DimensionMismatch(e.to_string()))?;
        mdp::stationary_distribution(mdp, sampling_policy).map_err(LearnerError::MixingAssumptionViolated)?;
        Ok(RobustLearner { mdp, phi, psi: phi, set: &ZERO_BALL, config, target, b_nu: 1.0, nominal: true })
    }

    pub fn dual_radius(&self) -> f64 {
        self.b_nu
    }

    fn target_values(&self, theta_hat: &[f64]) -> Result<Vec<f64>, FeatureError> {
        match self.target {
            ValueTarget::Policy(p) => linear_fa::v_from_theta(self.mdp, p, self.phi, theta_hat),
            ValueTarget::Greedy => linear_fa::v_star_from_theta(self.mdp, self.phi, theta_hat),
        }
    }

    /// Runs all `T` outer iterations on transitions drawn from `source`.
    pub fn run(
        &self,
        source: &mut dyn TransitionSource,
        oracle_q: Option<&[f64]>,
    ) -> Result<LearnerOutput, LearnerError> {
        if let Some(q) = oracle_q {
            if q.len() != self.mdp.n_pairs() {
                return Err(LearnerError::DimensionMismatch(format!(
                    "oracle has {} entries for {} pairs",
                    q.len(),
                    self.mdp.n_pairs()
                )));
            }
        }
        let cfg = &self.config;
        let (mdp, phi, psi, set) = (self.mdp, self.phi, self.psi, self.set);
        let gamma = mdp.gamma();
        let bound = mdp.value_bound();
        let theta0 = vec![0.0; phi.dim()];
        let nu0 = vec![0.0; psi.dim()];

        let sup_err = |theta: &[f64]| -> Result<Option<f64>, LearnerError> {
            Ok(match oracle_q {
                Some(q) => Some(linalg::sup_norm_diff(&phi.apply(theta)?, q)),
                None => None,
            })
        };

        let mut theta_hat = theta0.clone();
        let mut trace = RunTrace::default();
        trace.records.push(TraceRecord {
            t: 0,
            sup_err: sup_err(&theta_hat)?,
            theta_norm: linalg::norm2(&theta_hat),
            theta: theta_hat.clone(),
            mean_td: None,
            wall_ms: 0.0,
            max_dual_norm: 0.0,
            max_abs_td: 0.0,
            max_theta_norm: 0.0,
        });

        let mut theta = theta0.clone();
        let mut nu = nu0.clone();
        let mut steps = 0usize;
        for t in 0..cfg.t_outer {
            let started = Instant::now();
            let v = self.target_values(&theta_hat)?;
            let (v_min, v_max) = min_max(&v);
            let mut averager = SuffixAverager::new(&nu);
            let mut td_sum = 0.0;
            let mut max_dual_norm: f64 = 0.0;
            let mut max_abs_td: f64 = 0.0;
            let mut max_theta_norm = linalg::norm2(&theta);

            for k in 0..cfg.k_inner {
                let tr = source.next_transition().ok_or(LearnerError::ReplayExhausted(steps))?;
                steps += 1;
                let pair = mdp.pair(tr.state, tr.action);
                let ctx = DualEvalContext::with_range(&v, mdp.row(tr.state, tr.action), v_min, v_max);
                let phi_row = phi.row(pair);

                let sigma = if self.nominal {
                    v[tr.next_state]
                } else {
                    let psi_row = psi.row(pair);
                    // slow-scale dual value uses ν̄ over ν_⌊k/2⌋..ν_{k−1}
                    let lambda_bar = set.clip_lambda(linalg::dot(psi_row, averager.current()), bound);
                    averager.push(&nu);

                    // fast scale
                    let lambda = set.clip_lambda(linalg::dot(psi_row, &nu), bound);
                    let g = set.grad_estimate(lambda, tr.next_state, &ctx);
                    let step = cfg.beta(k) * g;
                    nu.iter_mut().zip(psi_row).for_each(|(n, p)| *n += step * p);
                    linear_fa::project_ball_in_place(&mut nu, self.b_nu);
                    max_dual_norm = max_dual_norm.max(linalg::norm2(&nu));

                    set.obj_estimate(lambda_bar, tr.next_state, &ctx)
                };

                // slow scale
                let td = mdp.reward(tr.state, tr.action) + gamma * sigma - linalg::dot(phi_row, &theta);
                let step = cfg.alpha(k) * td;
                theta.iter_mut().zip(phi_row).for_each(|(w, f)| *w += step * f);
                td_sum += td;
                max_abs_td = max_abs_td.max(td.abs());
                max_theta_norm = max_theta_norm.max(linalg::norm2(&theta));
            }

            theta_hat.clone_from(&theta);
            if !cfg.warm_start {
                theta.clone_from(&theta0);
                nu.clone_from(&nu0);
            }
            trace.records.push(TraceRecord {
                t: t + 1,
                sup_err: sup_err(&theta_hat)?,
                theta_norm: linalg::norm2(&theta_hat),
                theta: theta_hat.clone(),
                mean_td: Some(td_sum / cfg.k_inner as f64),
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
                max_dual_norm,
                max_abs_td,
                max_theta_norm,
            });
        }
        Ok(LearnerOutput { theta_hat, trace })
    }
}

/// `1 / ((1 − γ) √μ_ψ)` with `μ_ψ` the smallest eigenvalue of `ΨᵀDΨ`.
pub fn default_dual_radius(mdp: &Mdp, psi: &FeatureMap, d_pi: &[f64]) -> Result<f64, LearnerError> {
    let geometry = linear_fa::WeightedGeometry::new(psi, d_pi)?;
    if geometry.is_singular() {
        return Err(FeatureError::SingularCovariance(geometry.mu).into());
    }
    Ok(mdp.value_bound() / geometry.mu.sqrt())
}

/// Robust policy evaluation of `policy` along one simulated trajectory.
pub fn robust_td(
    mdp: &Mdp,
    policy: &Policy,
    phi: &FeatureMap,
    psi: &FeatureMap,
    set: &UncertaintySet,
    config: &LearnerConfig,
    oracle_q: Option<&[f64]>,
) -> Result<LearnerOutput, LearnerError> {
    let learner = RobustLearner::new(mdp, policy, phi, psi, set, config.clone(), ValueTarget::Policy(policy))?;
    let mut source = SimulatedSource::new(mdp, policy, TrajectoryCursor::new(config.initial_state, config.seed));
    learner.run(&mut source, oracle_q)
}

/// Robust Q-learning from a trajectory of `behavior`.
pub fn robust_q(
    mdp: &Mdp,
    behavior: &Policy,
    phi: &FeatureMap,
    psi: &FeatureMap,
    set: &UncertaintySet,
    config: &LearnerConfig,
    oracle_q: Option<&[f64]>,
) -> Result<LearnerOutput, LearnerError> {
    let learner = RobustLearner::new(mdp, behavior, phi, psi, set, config.clone(), ValueTarget::Greedy)?;
    let mut source = SimulatedSource::new(mdp, behavior, TrajectoryCursor::new(config.initial_state, config.seed));
    learner.run(&mut source, oracle_q)
}

/// Non-robust TD reference for `policy`, sharing seeds and schedules with
/// [`robust_td`].
pub fn nominal_td(
    mdp: &Mdp,
    policy: &Policy,
    phi: &FeatureMap,
    config: &LearnerConfig,
    oracle_q: Option<&[f64]>,
) -> Result<LearnerOutput, LearnerError> {
    let learner = RobustLearner::nominal(mdp, policy, phi, config.clone(), ValueTarget::Policy(policy))?;
    let mut source = SimulatedSource::new(mdp, policy, TrajectoryCursor::new(config.initial_state, config.seed));
    learner.run(&mut source, oracle_q)
}
