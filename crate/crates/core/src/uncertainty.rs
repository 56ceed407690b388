//! Inner worst-case problems over (s,a)-rectangular balls.
//!
//! For a value vector `V` and nominal next-state law `p0`, the inner problem
//! is `σ(V) = min_{q ∈ ball(p0)} qᵀV`. Both supported balls admit a scalar
//! Lagrangian dual `σ(V) = max_λ F(λ)` with `F` concave and piecewise linear,
//! so each ball exposes:
//!
//! - the dual objective `F` and a supergradient `G`,
//! - single-sample unbiased estimators of `G` and `F` from `S' ~ p0`,
//! - an exact maximiser of `F` obtained by enumerating its breakpoints.
//!
//! Total variation (`½‖q − p0‖₁ ≤ δ`):
//!
//! ```text
//! F(λ) = E[min(V(S'), λ)] − δ (λ − min V)        G(λ) = P[V(S') ≥ λ] − δ
//! ```
//!
//! Wasserstein-ℓ over a ground metric `d` (`W_ℓ(p0, q) ≤ δ`):
//!
//! ```text
//! F(λ) = −λ δ^ℓ + E[min_y V(y) + λ d(S', y)^ℓ]     G(λ) = −δ^ℓ + E[d(S', y*_λ(S'))^ℓ]
//! ```
//!
//! The TV objective carries the `+δ·min V` constant so that `max F` equals
//! the primal worst case exactly; without it the dual is only correct up to
//! a shift.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for merging floating-point breakpoints.
const BREAKPOINT_MERGE_RTOL: f64 = 1e-13;
/// Slack used to detect ties among inner minimisers at the optimum.
const ARGMIN_TIE_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UncertaintyError {
    #[error("dual variable must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("radius {0} is outside the admissible range")]
    InvalidRadius(f64),
    #[error("Wasserstein exponent must be at least 1, got {0}")]
    InvalidExponent(f64),
    #[error("invalid distance matrix: {0}")]
    InvalidDistance(String),
    #[error("learning requires a positive radius")]
    ZeroRadius,
}

/// A value vector paired with one nominal next-state distribution.
#[derive(Debug, Clone, Copy)]
pub struct DualEvalContext<'a> {
    v: &'a [f64],
    p0_row: &'a [f64],
    min_v: f64,
    span_v: f64,
}

impl<'a> DualEvalContext<'a> {
    pub fn new(v: &'a [f64], p0_row: &'a [f64]) -> Self {
        debug_assert_eq!(v.len(), p0_row.len());
        let (min_v, max_v) = min_max(v);
        DualEvalContext { v, p0_row, min_v, span_v: max_v - min_v }
    }

    /// Reuses a precomputed `(min, max)` of `v`.
    pub fn with_range(v: &'a [f64], p0_row: &'a [f64], min_v: f64, max_v: f64) -> Self {
        DualEvalContext { v, p0_row, min_v, span_v: max_v - min_v }
    }

    pub fn v(&self) -> &'a [f64] {
        self.v
    }

    pub fn p0_row(&self) -> &'a [f64] {
        self.p0_row
    }

    pub fn min_v(&self) -> f64 {
        self.min_v
    }

    pub fn span_v(&self) -> f64 {
        self.span_v
    }

    /// Nominal expectation `Σ p0 · v`.
    pub fn nominal(&self) -> f64 {
        self.p0_row.iter().zip(self.v).map(|(p, v)| p * v).sum()
    }
}

pub fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Optimal value of the inner problem and a maximiser of its dual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptimum {
    pub sigma: f64,
    pub lambda_star: f64,
}

// ---------------------------------------------------------------------------
// Total variation

pub fn tv_dual_objective(lambda: f64, ctx: &DualEvalContext, delta: f64) -> f64 {
    let expected_min: f64 = ctx.p0_row.iter().zip(ctx.v).map(|(p, v)| p * v.min(lambda)).sum();
    expected_min - delta * (lambda - ctx.min_v)
}

pub fn tv_supergradient(lambda: f64, ctx: &DualEvalContext, delta: f64) -> f64 {
    let upper: f64 = ctx.p0_row.iter().zip(ctx.v).filter(|(_, v)| **v >= lambda).map(|(p, _)| p).sum();
    upper - delta
}

/// `1{V(S') ≥ λ} − δ`.
pub fn tv_grad_estimate(lambda: f64, next_state_value: f64, delta: f64) -> f64 {
    if next_state_value >= lambda {
        1.0 - delta
    } else {
        -delta
    }
}

/// `min(V(S'), λ) − δ (λ − min V)`.
pub fn tv_obj_estimate(lambda: f64, next_state_value: f64, delta: f64, min_v: f64) -> f64 {
    next_state_value.min(lambda) - delta * (lambda - min_v)
}

/// Exact `max_λ F(λ)`.
///
/// `F` has its kinks at the values of `V`, rises with slope `1 − δ` below
/// `min V` and falls with slope `−δ` above `max V`, so the maximum sits on
/// one of the values of `V`. Sorting them lets a single sweep evaluate every
/// breakpoint. Ties go to the smallest `λ`.
pub fn tv_exact_sigma(ctx: &DualEvalContext, delta: f64) -> DualOptimum {
    let n = ctx.v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ctx.v[a].total_cmp(&ctx.v[b]).then(a.cmp(&b)));
    let mut below = 0.0; // Σ p·v over entries strictly left of the sweep
    let mut above: f64 = ctx.p0_row.iter().sum(); // mass at or right of the sweep
    let mut best = DualOptimum { sigma: f64::NEG_INFINITY, lambda_star: ctx.min_v };
    for &i in &order {
        let lambda = ctx.v[i];
        let value = below + lambda * above - delta * (lambda - ctx.min_v);
        if value > best.sigma {
            best = DualOptimum { sigma: value, lambda_star: lambda };
        }
        below += ctx.p0_row[i] * ctx.v[i];
        above -= ctx.p0_row[i];
    }
    best
}

/// Largest single-sample supergradient magnitude, `max(δ, 1 − δ)`.
pub fn tv_gradient_bound(delta: f64) -> f64 {
    delta.max(1.0 - delta)
}

// ---------------------------------------------------------------------------
// Wasserstein-ℓ

/// Wasserstein-ℓ ball of radius `delta` over a normalised ground metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBall", into = "RawBall")]
pub struct WassersteinBall {
    delta: f64,
    ell: f64,
    n: usize,
    dist: Vec<f64>,
    /// `dist^ℓ`, row-major.
    cost: Vec<f64>,
    delta_pow: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBall {
    delta: f64,
    ell: f64,
    n_states: usize,
    dist: Vec<f64>,
}

impl TryFrom<RawBall> for WassersteinBall {
    type Error = UncertaintyError;
    fn try_from(raw: RawBall) -> Result<Self, UncertaintyError> {
        WassersteinBall::new(raw.delta, raw.ell, raw.n_states, raw.dist)
    }
}

impl From<WassersteinBall> for RawBall {
    fn from(b: WassersteinBall) -> Self {
        RawBall { delta: b.delta, ell: b.ell, n_states: b.n, dist: b.dist }
    }
}

impl WassersteinBall {
    /// `dist` is row-major `n × n`: symmetric, zero diagonal, entries in
    /// `[0, 1]`. A zero radius is accepted here for the exact oracles.
    pub fn new(delta: f64, ell: f64, n: usize, dist: Vec<f64>) -> Result<Self, UncertaintyError> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(UncertaintyError::InvalidRadius(delta));
        }
        if !(ell.is_finite() && ell >= 1.0) {
            return Err(UncertaintyError::InvalidExponent(ell));
        }
        if dist.len() != n * n {
            return Err(UncertaintyError::InvalidDistance(format!(
                "expected {} entries, got {}",
                n * n,
                dist.len()
            )));
        }
        for i in 0..n {
            if dist[i * n + i] != 0.0 {
                return Err(UncertaintyError::InvalidDistance(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let d = dist[i * n + j];
                if !(0.0..=1.0).contains(&d) {
                    return Err(UncertaintyError::InvalidDistance(format!("entry ({i}, {j}) = {d} outside [0, 1]")));
                }
                if d != dist[j * n + i] {
                    return Err(UncertaintyError::InvalidDistance(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        let cost = dist.iter().map(|d| d.powf(ell)).collect();
        Ok(WassersteinBall { delta, ell, n, dist, cost, delta_pow: delta.powf(ell) })
    }

    /// Ball over the normalised line metric `|i − j| / (n − 1)`.
    pub fn line_metric(delta: f64, ell: f64, n: usize) -> Result<Self, UncertaintyError> {
        let scale = if n > 1 { (n - 1) as f64 } else { 1.0 };
        let dist = (0..n * n).map(|k| ((k / n) as f64 - (k % n) as f64).abs() / scale).collect();
        WassersteinBall::new(delta, ell, n, dist)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn dist(&self, x: usize, y: usize) -> f64 {
        self.dist[x * self.n + y]
    }

    /// `d(x, y)^ℓ`.
    pub fn cost(&self, x: usize, y: usize) -> f64 {
        self.cost[x * self.n + y]
    }

    /// `δ^ℓ`.
    pub fn budget(&self) -> f64 {
        self.delta_pow
    }

    /// Largest single-sample supergradient magnitude, `1 + δ^ℓ`.
    pub fn gradient_bound(&self) -> f64 {
        1.0 + self.delta_pow
    }

    fn inner(&self, lambda: f64, x: usize, v: &[f64]) -> (usize, f64) {
        let row = &self.cost[x * self.n..(x + 1) * self.n];
        let mut best = (0, v[0] + lambda * row[0]);
        for y in 1..self.n {
            let val = v[y] + lambda * row[y];
            if val < best.1 {
                best = (y, val);
            }
        }
        best
    }

    fn objective(&self, lambda: f64, ctx: &DualEvalContext) -> f64 {
        let expected: f64 = ctx
            .p0_row
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(x, p)| p * self.inner(lambda, x, ctx.v).1)
            .sum();
        expected - lambda * self.delta_pow
    }
}

fn check_lambda(lambda: f64) -> Result<(), UncertaintyError> {
    if lambda < 0.0 {
        Err(UncertaintyError::NegativeLambda(lambda))
    } else {
        Ok(())
    }
}

/// `argmin_y V(y) + λ d(x, y)^ℓ` (smallest index on ties) and its value.
pub fn w_inner_argmin(
    lambda: f64,
    from_state: usize,
    ctx: &DualEvalContext,
    ball: &WassersteinBall,
) -> Result<(usize, f64), UncertaintyError> {
    check_lambda(lambda)?;
    Ok(ball.inner(lambda, from_state, ctx.v))
}

pub fn w_dual_objective(lambda: f64, ctx: &DualEvalContext, ball: &WassersteinBall) -> Result<f64, UncertaintyError> {
    check_lambda(lambda)?;
    Ok(ball.objective(lambda, ctx))
}

pub fn w_supergradient(lambda: f64, ctx: &DualEvalContext, ball: &WassersteinBall) -> Result<f64, UncertaintyError> {
    check_lambda(lambda)?;
    let transport: f64 = ctx
        .p0_row
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(x, p)| p * ball.cost(x, ball.inner(lambda, x, ctx.v).0))
        .sum();
    Ok(transport - ball.delta_pow)
}

/// `−δ^ℓ + d(S', y*)^ℓ` for the sampled next state.
pub fn w_grad_estimate(
    lambda: f64,
    next_state: usize,
    ctx: &DualEvalContext,
    ball: &WassersteinBall,
) -> Result<f64, UncertaintyError> {
    check_lambda(lambda)?;
    let (y, _) = ball.inner(lambda, next_state, ctx.v);
    Ok(ball.cost(next_state, y) - ball.delta_pow)
}

/// `−λ δ^ℓ + V(y*) + λ d(S', y*)^ℓ` for the sampled next state.
pub fn w_obj_estimate(
    lambda: f64,
    next_state: usize,
    ctx: &DualEvalContext,
    ball: &WassersteinBall,
) -> Result<f64, UncertaintyError> {
    check_lambda(lambda)?;
    let (_, value) = ball.inner(lambda, next_state, ctx.v);
    Ok(value - lambda * ball.delta_pow)
}

/// Exact `max_{λ ≥ 0} F(λ)`.
///
/// The maximiser lies in `[0, span(V)/δ^ℓ]`. `F` is concave and piecewise
/// linear with kinks only where some inner argmin switches, i.e. at
/// `(V(y) − V(y')) / (d(x,y')^ℓ − d(x,y)^ℓ)` for a support state `x`. All
/// such points inside the interval plus both ends are enumerated, sorted and
/// searched by bisection on the sign of consecutive differences, which is
/// valid because the sampled sequence of a concave function is unimodal.
///
/// With `δ = 0` the ball is `{p0}` up to zero-distance moves and the limit
/// `λ → ∞` is returned directly.
pub fn w_exact_sigma(ctx: &DualEvalContext, ball: &WassersteinBall) -> DualOptimum {
    let v = ctx.v;
    let n = ball.n;
    if ball.delta_pow == 0.0 {
        let sigma = ctx
            .p0_row
            .iter()
            .enumerate()
            .map(|(x, p)| {
                let reachable = (0..n).filter(|&y| ball.cost(x, y) == 0.0).map(|y| v[y]);
                p * reachable.fold(f64::INFINITY, f64::min)
            })
            .sum();
        return DualOptimum { sigma, lambda_star: f64::INFINITY };
    }
    if ctx.span_v == 0.0 {
        return DualOptimum { sigma: ctx.min_v, lambda_star: 0.0 };
    }
    let lambda_max = ctx.span_v / ball.delta_pow;
    let mut candidates = vec![0.0, lambda_max];
    for x in (0..n).filter(|&x| ctx.p0_row[x] > 0.0) {
        for y in 0..n {
            for y2 in 0..n {
                let denom = ball.cost(x, y2) - ball.cost(x, y);
                if denom > 0.0 {
                    let lambda = (v[y] - v[y2]) / denom;
                    if lambda > 0.0 && lambda < lambda_max {
                        candidates.push(lambda);
                    }
                }
            }
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup_by(|a, b| (*a - *b).abs() <= BREAKPOINT_MERGE_RTOL * a.abs().max(b.abs()));

    let f = |lambda: f64| ball.objective(lambda, ctx);
    let (mut lo, mut hi) = (0, candidates.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if f(candidates[mid]) < f(candidates[mid + 1]) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    // guard against rounding on a plateau
    let start = lo.saturating_sub(1);
    let end = (lo + 1).min(candidates.len() - 1);
    let mut best = DualOptimum { sigma: f64::NEG_INFINITY, lambda_star: 0.0 };
    for &lambda in &candidates[start..=end] {
        let value = f(lambda);
        if value > best.sigma {
            best = DualOptimum { sigma: value, lambda_star: lambda };
        }
    }
    best
}

/// A feasible worst-case distribution with the transport plan that reaches
/// it from `p0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportCertificate {
    /// Row-major `n × n` coupling; row sums equal `p0`, column sums `q`.
    pub plan: Vec<f64>,
    pub q: Vec<f64>,
    /// `Σ plan(x, y) · d(x, y)^ℓ`, at most `δ^ℓ`.
    pub transport_cost: f64,
    /// `qᵀV`.
    pub value: f64,
    pub dual: DualOptimum,
}

/// Builds a primal-feasible `q` whose value matches [`w_exact_sigma`],
/// certifying its optimality by weak duality.
///
/// At the optimal `λ*` each source state `x` ships its mass to inner
/// minimisers of `V(y) + λ* d(x,y)^ℓ`. Using the cheapest minimiser
/// everywhere costs at most `δ^ℓ` and the dearest at least `δ^ℓ` (the one-
/// sided supergradients bracket zero), so one global mixing weight between
/// the two spends exactly the budget when `λ* > 0`.
pub fn w_worst_case(ctx: &DualEvalContext, ball: &WassersteinBall) -> TransportCertificate {
    let n = ball.n;
    let v = ctx.v;
    let dual = w_exact_sigma(ctx, ball);
    let mut targets = Vec::with_capacity(n); // (x, p, y_cheap, y_dear)
    if ball.delta_pow == 0.0 {
        for x in (0..n).filter(|&x| ctx.p0_row[x] > 0.0) {
            let y = (0..n)
                .filter(|&y| ball.cost(x, y) == 0.0)
                .fold(x, |best, y| if v[y] < v[best] { y } else { best });
            targets.push((x, ctx.p0_row[x], y, y));
        }
    } else {
        let lambda = dual.lambda_star;
        for x in (0..n).filter(|&x| ctx.p0_row[x] > 0.0) {
            let (_, h) = ball.inner(lambda, x, v);
            let tol = ARGMIN_TIE_TOL * (1.0 + h.abs());
            let ties: Vec<usize> = (0..n).filter(|&y| v[y] + lambda * ball.cost(x, y) <= h + tol).collect();
            let cheap = ties.iter().copied().fold(ties[0], |b, y| if ball.cost(x, y) < ball.cost(x, b) { y } else { b });
            let dear = ties.iter().copied().fold(ties[0], |b, y| if ball.cost(x, y) > ball.cost(x, b) { y } else { b });
            targets.push((x, ctx.p0_row[x], cheap, dear));
        }
    }
    let cheap_cost: f64 = targets.iter().map(|&(x, p, y, _)| p * ball.cost(x, y)).sum();
    let dear_cost: f64 = targets.iter().map(|&(x, p, _, y)| p * ball.cost(x, y)).sum();
    let weight = if dual.lambda_star > 0.0 && dual.lambda_star.is_finite() && dear_cost > cheap_cost {
        ((ball.delta_pow - cheap_cost) / (dear_cost - cheap_cost)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut plan = vec![0.0; n * n];
    for &(x, p, cheap, dear) in &targets {
        plan[x * n + cheap] += p * (1.0 - weight);
        plan[x * n + dear] += p * weight;
    }
    let mut q = vec![0.0; n];
    let mut transport_cost = 0.0;
    for x in 0..n {
        for y in 0..n {
            q[y] += plan[x * n + y];
            transport_cost += plan[x * n + y] * ball.cost(x, y);
        }
    }
    let value = q.iter().zip(v).map(|(a, b)| a * b).sum();
    TransportCertificate { plan, q, transport_cost, value, dual }
}

// ---------------------------------------------------------------------------
// Tagged set used by learners and the oracle

/// Per-(s,a) uncertainty ball shape shared by every state-action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UncertaintySet {
    Tv { delta: f64 },
    Wasserstein(WassersteinBall),
}

impl UncertaintySet {
    /// TV ball with `0 ≤ δ ≤ 1`; learners additionally need `δ > 0`.
    pub fn tv(delta: f64) -> Result<Self, UncertaintyError> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(UncertaintyError::InvalidRadius(delta));
        }
        Ok(UncertaintySet::Tv { delta })
    }

    pub fn delta(&self) -> f64 {
        match self {
            UncertaintySet::Tv { delta } => *delta,
            UncertaintySet::Wasserstein(b) => b.delta,
        }
    }

    pub fn require_positive_radius(&self) -> Result<(), UncertaintyError> {
        if self.delta() > 0.0 {
            Ok(())
        } else {
            Err(UncertaintyError::ZeroRadius)
        }
    }

    /// Number of states the set is defined over, when it fixes one.
    pub fn n_states(&self) -> Option<usize> {
        match self {
            UncertaintySet::Tv { .. } => None,
            UncertaintySet::Wasserstein(b) => Some(b.n),
        }
    }

    pub fn exact_sigma(&self, ctx: &DualEvalContext) -> DualOptimum {
        match self {
            UncertaintySet::Tv { delta } => tv_exact_sigma(ctx, *delta),
            UncertaintySet::Wasserstein(b) => w_exact_sigma(ctx, b),
        }
    }

    /// Maps a raw dual parameter into the dual domain: `[−B, B]` for TV with
    /// `B = 1/(1−γ)`, `[0, ∞)` for Wasserstein.
    pub fn clip_lambda(&self, lambda: f64, value_bound: f64) -> f64 {
        match self {
            UncertaintySet::Tv { .. } => lambda.clamp(-value_bound, value_bound),
            UncertaintySet::Wasserstein(_) => lambda.max(0.0),
        }
    }

    /// Supergradient estimate from one sampled next state; `lambda` must
    /// already lie in the dual domain.
    pub fn grad_estimate(&self, lambda: f64, next_state: usize, ctx: &DualEvalContext) -> f64 {
        match self {
            UncertaintySet::Tv { delta } => tv_grad_estimate(lambda, ctx.v[next_state], *delta),
            UncertaintySet::Wasserstein(b) => {
                let (y, _) = b.inner(lambda, next_state, ctx.v);
                b.cost(next_state, y) - b.delta_pow
            }
        }
    }

    /// Dual-objective estimate from one sampled next state; `lambda` must
    /// already lie in the dual domain.
    pub fn obj_estimate(&self, lambda: f64, next_state: usize, ctx: &DualEvalContext) -> f64 {
        match self {
            UncertaintySet::Tv { delta } => tv_obj_estimate(lambda, ctx.v[next_state], *delta, ctx.min_v),
            UncertaintySet::Wasserstein(b) => b.inner(lambda, next_state, ctx.v).1 - lambda * b.delta_pow,
        }
    }

    pub fn gradient_bound(&self) -> f64 {
        match self {
            UncertaintySet::Tv { delta } => tv_gradient_bound(*delta),
            UncertaintySet::Wasserstein(b) => b.gradient_bound(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tv_objective_examples() {
        let (v, p) = ([1.0, 2.0], [0.5, 0.5]);
        let ctx = DualEvalContext::new(&v, &p);
        assert!(close(tv_dual_objective(2.0, &ctx, 0.25), 1.25, 1e-15));
        assert!(close(tv_dual_objective(1.0, &ctx, 0.25), 1.0, 1e-15));
        // below min V every min() saturates at λ
        assert!(close(tv_dual_objective(0.0, &ctx, 0.25), 0.0 + 0.25, 1e-15));
        let flat = [3.0, 3.0];
        let ctx = DualEvalContext::new(&flat, &p);
        assert!(close(tv_dual_objective(3.0, &ctx, 0.7), 3.0, 1e-15));
    }

    #[test]
    fn tv_supergradient_examples() {
        let (v, p) = ([1.0, 2.0], [0.5, 0.5]);
        let ctx = DualEvalContext::new(&v, &p);
        assert!(close(tv_supergradient(0.5, &ctx, 0.25), 0.75, 1e-15));
        assert!(close(tv_supergradient(2.5, &ctx, 0.25), -0.25, 1e-15));
        assert!(close(tv_supergradient(1.5, &ctx, 0.25), 0.25, 1e-15));
        let h = 1e-5;
        let fd = (tv_dual_objective(1.5 + h, &ctx, 0.25) - tv_dual_objective(1.5 - h, &ctx, 0.25)) / (2.0 * h);
        assert!(close(fd, 0.25, 1e-6));
    }

    #[test]
    fn tv_estimator_examples() {
        assert!(close(tv_grad_estimate(0.7, 0.4, 0.1), -0.1, 1e-15));
        assert!(close(tv_grad_estimate(0.7, 0.7, 0.1), 0.9, 1e-15));
        assert!(close(tv_obj_estimate(0.5, 0.3, 0.2, 0.0), 0.2, 1e-15));
        assert!(close(tv_obj_estimate(0.9, 0.3, 0.0, 0.0), 0.3, 1e-15));
    }

    #[test]
    fn tv_exact_examples() {
        let (v, p) = ([1.0, 2.0], [0.5, 0.5]);
        let ctx = DualEvalContext::new(&v, &p);
        let opt = tv_exact_sigma(&ctx, 0.25);
        assert!(close(opt.sigma, 1.25, 1e-15));
        assert_eq!(opt.lambda_star, 2.0);
        assert!(close(tv_exact_sigma(&ctx, 1.0).sigma, 1.0, 1e-15));
        assert!(close(tv_exact_sigma(&ctx, 0.0).sigma, 1.5, 1e-15));
        let flat = [0.4; 3];
        let p3 = [0.2, 0.3, 0.5];
        let ctx = DualEvalContext::new(&flat, &p3);
        assert!(close(tv_exact_sigma(&ctx, 0.6).sigma, 0.4, 1e-15));
    }

    fn two_state_ball(delta: f64) -> WassersteinBall {
        WassersteinBall::new(delta, 1.0, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn w_inner_examples() {
        let ball = two_state_ball(0.3);
        let v = [0.0, 1.0];
        let p = [0.0, 1.0];
        let ctx = DualEvalContext::new(&v, &p);
        assert_eq!(w_inner_argmin(0.5, 1, &ctx, &ball).unwrap(), (0, 0.5));
        assert_eq!(w_inner_argmin(0.0, 1, &ctx, &ball).unwrap(), (0, 0.0));
        assert_eq!(w_inner_argmin(10.0, 1, &ctx, &ball).unwrap(), (1, 1.0));
        // tie at λ = 1 resolves to the smaller index
        assert_eq!(w_inner_argmin(1.0, 1, &ctx, &ball).unwrap().0, 0);
        assert_eq!(w_inner_argmin(-1.0, 1, &ctx, &ball), Err(UncertaintyError::NegativeLambda(-1.0)));
        let ties = [2.0, 2.0];
        let ctx = DualEvalContext::new(&ties, &p);
        assert_eq!(w_inner_argmin(0.0, 1, &ctx, &ball).unwrap().0, 0);
    }

    #[test]
    fn w_objective_examples() {
        let ball = two_state_ball(0.3);
        let v = [0.0, 1.0];
        let p = [0.0, 1.0];
        let ctx = DualEvalContext::new(&v, &p);
        assert!(close(w_dual_objective(0.0, &ctx, &ball).unwrap(), 0.0, 1e-15));
        assert!(close(w_dual_objective(1.0, &ctx, &ball).unwrap(), 0.7, 1e-15));
        assert!(w_dual_objective(-0.1, &ctx, &ball).is_err());
        let flat = [0.5, 0.5];
        let ctx = DualEvalContext::new(&flat, &p);
        assert!(close(w_dual_objective(2.0, &ctx, &ball).unwrap(), 0.5 - 0.6, 1e-15));
        assert!(close(w_exact_sigma(&ctx, &ball).sigma, 0.5, 1e-15));
    }

    #[test]
    fn w_supergradient_examples() {
        let ball = two_state_ball(0.3);
        let v = [0.0, 1.0];
        let p = [0.4, 0.6];
        let ctx = DualEvalContext::new(&v, &p);
        assert!(close(w_supergradient(5.0, &ctx, &ball).unwrap(), -0.3, 1e-15));
        let p = [1.0, 0.0];
        let ctx = DualEvalContext::new(&v, &p);
        assert!(close(w_supergradient(0.0, &ctx, &ball).unwrap(), -0.3, 1e-15));
    }

    #[test]
    fn w_estimator_examples() {
        let ball = two_state_ball(0.3);
        let v = [0.0, 1.0];
        let p = [0.0, 1.0];
        let ctx = DualEvalContext::new(&v, &p);
        assert!(close(w_grad_estimate(0.5, 1, &ctx, &ball).unwrap(), 0.7, 1e-15));
        assert!(close(w_grad_estimate(5.0, 1, &ctx, &ball).unwrap(), -0.3, 1e-15));
        assert!(close(w_obj_estimate(1.0, 1, &ctx, &ball).unwrap(), 0.7, 1e-15));
        assert!(close(w_obj_estimate(0.0, 1, &ctx, &ball).unwrap(), 0.0, 1e-15));
    }

    #[test]
    fn w_exact_examples() {
        let ball = two_state_ball(0.3);
        let v = [0.0, 1.0];
        let p = [0.0, 1.0];
        let ctx = DualEvalContext::new(&v, &p);
        let opt = w_exact_sigma(&ctx, &ball);
        assert!(close(opt.sigma, 0.7, 1e-15));
        assert!(close(opt.lambda_star, 1.0, 1e-15));
        let zero = two_state_ball(0.0);
        let p = [0.25, 0.75];
        let ctx = DualEvalContext::new(&v, &p);
        assert!(close(w_exact_sigma(&ctx, &zero).sigma, 0.75, 1e-15));
        let whole = two_state_ball(1.0);
        assert!(close(w_exact_sigma(&ctx, &whole).sigma, 0.0, 1e-15));
    }

    #[test]
    fn w_certificate_two_state() {
        let ball = two_state_ball(0.3);
        let v = [0.0, 1.0];
        let p = [0.0, 1.0];
        let ctx = DualEvalContext::new(&v, &p);
        let cert = w_worst_case(&ctx, &ball);
        assert!(close(cert.q[0], 0.3, 1e-12) && close(cert.q[1], 0.7, 1e-12));
        assert!(close(cert.value, 0.7, 1e-12));
        assert!(cert.transport_cost <= 0.3 + 1e-12);
    }

    #[test]
    fn ball_validation() {
        assert!(WassersteinBall::new(0.1, 0.5, 1, vec![0.0]).is_err());
        assert!(WassersteinBall::new(-0.1, 1.0, 1, vec![0.0]).is_err());
        assert!(WassersteinBall::new(0.1, 1.0, 2, vec![0.0, 0.5, 0.4, 0.0]).is_err());
        assert!(WassersteinBall::new(0.1, 1.0, 2, vec![0.1, 0.5, 0.5, 0.0]).is_err());
        assert!(WassersteinBall::new(0.1, 1.0, 2, vec![0.0, 1.5, 1.5, 0.0]).is_err());
        let line = WassersteinBall::line_metric(0.1, 2.0, 3).unwrap();
        assert_eq!(line.dist(0, 2), 1.0);
        assert_eq!(line.cost(0, 1), 0.25);
        assert!(UncertaintySet::tv(1.5).is_err());
        assert_eq!(UncertaintySet::tv(0.0).unwrap().require_positive_radius(), Err(UncertaintyError::ZeroRadius));
    }

    #[test]
    fn serde_roundtrip_of_set() {
        let set = UncertaintySet::Wasserstein(WassersteinBall::line_metric(0.2, 2.0, 3).unwrap());
        let json = serde_json::to_string(&set).unwrap();
        let back: UncertaintySet = serde_json::from_str(&json).unwrap();
        assert_eq!(set, back);
    }
}
