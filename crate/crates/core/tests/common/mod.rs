//! Independent oracles and instance generators shared by integration tests.
//!
//! Nothing here calls the library's solvers; each oracle computes its answer
//! from first principles so agreement is meaningful.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtdlab_core::uncertainty::WassersteinBall;
use rtdlab_core::{Mdp, Policy};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random probability vector; with `sparse` some entries are forced to zero
/// (at least one entry stays positive).
pub fn simplex(rng: &mut ChaCha8Rng, n: usize, sparse: bool) -> Vec<f64> {
    let keep = rng.random_range(0..n);
    let mut p: Vec<f64> = (0..n)
        .map(|i| {
            if sparse && i != keep && rng.random_bool(0.4) {
                0.0
            } else {
                -(1.0 - rng.random::<f64>()).ln()
            }
        })
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

pub fn values(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Euclidean distances of random points in the unit square, scaled into
/// `[0, 1]`.
pub fn random_metric(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
            d[i * n + j] = (dx * dx + dy * dy).sqrt() / 2f64.sqrt();
        }
    }
    d
}

/// Worst case over the TV ball by moving mass: strip `δ` of probability from
/// the highest-valued states downward and deposit it on a minimiser of `v`.
pub fn tv_primal(v: &[f64], p0: &[f64], delta: f64) -> f64 {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    let mut q = p0.to_vec();
    let mut budget = delta;
    let mut moved = 0.0;
    for &i in &order {
        let take = q[i].min(budget);
        q[i] -= take;
        budget -= take;
        moved += take;
        if budget <= 0.0 {
            break;
        }
    }
    let sink = (0..v.len()).fold(0, |b, i| if v[i] < v[b] { i } else { b });
    q[sink] += moved;
    q.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// A random member of the Wasserstein ball around `p0`: a random coupling
/// shrunk toward the identity until its cost fits the budget.
pub fn random_feasible_q(rng: &mut ChaCha8Rng, p0: &[f64], ball: &WassersteinBall) -> Vec<f64> {
    let n = p0.len();
    let mut plan = vec![0.0; n * n];
    for x in 0..n {
        let row = simplex(rng, n, true);
        for y in 0..n {
            plan[x * n + y] = p0[x] * row[y];
        }
    }
    let cost: f64 = (0..n * n).map(|i| plan[i] * ball.cost(i / n, i % n)).sum();
    let budget = ball.budget();
    // t ∈ [0, 1] with t·cost ≤ budget; bias toward the boundary
    let cap = if cost > 0.0 { (budget / cost).min(1.0) } else { 1.0 };
    let t = cap * if rng.random_bool(0.5) { 1.0 } else { rng.random::<f64>() };
    let mut q = vec![0.0; n];
    for x in 0..n {
        for y in 0..n {
            let stay = if x == y { p0[x] } else { 0.0 };
            q[y] += t * plan[x * n + y] + (1.0 - t) * stay;
        }
    }
    q
}

/// Pair-chain matrix `M((s,a),(s',a')) = P0(s'|s,a) π(a'|s')`, built directly.
pub fn pair_chain(mdp: &Mdp, policy: &Policy) -> DMatrix<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n = ns * na;
    DMatrix::from_fn(n, n, |i, j| {
        let (s, a) = (i / na, i % na);
        let (s2, a2) = (j / na, j % na);
        mdp.row(s, a)[s2] * policy.prob(s2, a2)
    })
}

/// Stationary law from `(I − Mᵀ + 𝟙𝟙ᵀ) d = 𝟙`.
pub fn stationary(mdp: &Mdp, policy: &Policy) -> Vec<f64> {
    let m = pair_chain(mdp, policy);
    let n = m.nrows();
    let a = DMatrix::identity(n, n) - m.transpose() + DMatrix::from_element(n, n, 1.0);
    let d = a.lu().solve(&DVector::from_element(n, 1.0)).expect("irreducible chain");
    d.iter().copied().collect()
}

/// Nominal `Q^π = (I − γ M)⁻¹ r`.
pub fn nominal_q(mdp: &Mdp, policy: &Policy) -> Vec<f64> {
    let m = pair_chain(mdp, policy);
    let n = m.nrows();
    let a = DMatrix::identity(n, n) - m * mdp.gamma();
    let q = a.lu().solve(&DVector::from_row_slice(mdp.rewards())).expect("nonsingular");
    q.iter().copied().collect()
}

/// Nominal optimal Q by plain value iteration with a generous sweep count.
pub fn nominal_optimal_q(mdp: &Mdp) -> Vec<f64> {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut q = vec![0.0; ns * na];
    for _ in 0..2000 {
        let v: Vec<f64> = (0..ns).map(|s| (0..na).map(|a| q[s * na + a]).fold(f64::NEG_INFINITY, f64::max)).collect();
        q = (0..ns * na)
            .map(|i| mdp.rewards()[i] + g * mdp.row(i / na, i % na).iter().zip(&v).map(|(p, x)| p * x).sum::<f64>())
            .collect();
    }
    q
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dual_kinks_w(v: &[f64], p0: &[f64], ball: &WassersteinBall) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0];
    for x in (0..n).filter(|&x| p0[x] > 0.0) {
        for y in 0..n {
            for y2 in 0..n {
                let denom = ball.cost(x, y2) - ball.cost(x, y);
                if denom > 0.0 {
                    out.push((v[y] - v[y2]) / denom);
                }
            }
        }
    }
    out
}

/// Sample mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
