//! Finite nominal MDPs, policies, trajectory sampling and the stationary
//! distribution of the state-action chain a policy induces.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

use crate::linalg;
use crate::rng::{self, Stream};

const ROW_SUM_TOL: f64 = 1e-12;
/// Above this many state-action pairs the stationary distribution is found
/// by power iteration instead of a dense solve.
const DENSE_SOLVE_LIMIT: usize = 2000;
const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("transition row ({state}, {action}) is not a probability distribution")]
    RowNotStochastic { state: usize, action: usize },
    #[error("reward at ({state}, {action}) lies outside [0, 1]")]
    RewardOutOfRange { state: usize, action: usize },
    #[error("discount must lie in (0, 1), got {0}")]
    GammaOutOfRange(f64),
    #[error("policy row for state {0} is not a probability distribution")]
    PolicyRowNotStochastic(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("induced chain has {0} closed classes")]
    NotIrreducible(usize),
    #[error("induced chain is periodic with period {0}")]
    Periodic(usize),
    #[error("state index {0} out of range")]
    StateOutOfRange(usize),
}

/// Nominal model: kernel `p0`, reward `r` and discount `gamma`.
///
/// `p0` is row-major with one row of length `n_states` per `(s, a)` pair,
/// pairs ordered `s * n_actions + a`; `r` uses the same pair order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp", into = "RawMdp")]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    p0: Vec<f64>,
    r: Vec<f64>,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct RawMdp {
    n_states: usize,
    n_actions: usize,
    p0: Vec<f64>,
    r: Vec<f64>,
    gamma: f64,
}

impl TryFrom<RawMdp> for Mdp {
    type Error = MdpError;
    fn try_from(raw: RawMdp) -> Result<Self, MdpError> {
        Mdp::new(raw.n_states, raw.n_actions, raw.p0, raw.r, raw.gamma)
    }
}

impl From<Mdp> for RawMdp {
    fn from(m: Mdp) -> Self {
        RawMdp { n_states: m.n_states, n_actions: m.n_actions, p0: m.p0, r: m.r, gamma: m.gamma }
    }
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p0: Vec<f64>,
        r: Vec<f64>,
        gamma: f64,
    ) -> Result<Self, MdpError> {
        let mdp = Mdp { n_states, n_actions, p0, r, gamma };
        validate_mdp(&mdp)?;
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn pair(&self, state: usize, action: usize) -> usize {
        state * self.n_actions + action
    }

    /// Next-state distribution `P0(· | s, a)`.
    pub fn row(&self, state: usize, action: usize) -> &[f64] {
        let i = self.pair(state, action) * self.n_states;
        &self.p0[i..i + self.n_states]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.r[self.pair(state, action)]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.r
    }

    pub fn kernel(&self) -> &[f64] {
        &self.p0
    }

    /// Same model under a different discount.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self, MdpError> {
        self.gamma = gamma;
        validate_mdp(&self)?;
        Ok(self)
    }

    /// Largest attainable `|Q|` under this discount, `1 / (1 − γ)`.
    pub fn value_bound(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }
}

/// Checks every structural invariant of `mdp`.
pub fn validate_mdp(mdp: &Mdp) -> Result<(), MdpError> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if ns == 0 || na == 0 {
        return Err(MdpError::DimensionMismatch("MDP needs at least one state and one action".into()));
    }
    if mdp.p0.len() != ns * na * ns {
        return Err(MdpError::DimensionMismatch(format!(
            "p0 has {} entries, expected {}",
            mdp.p0.len(),
            ns * na * ns
        )));
    }
    if mdp.r.len() != ns * na {
        return Err(MdpError::DimensionMismatch(format!(
            "r has {} entries, expected {}",
            mdp.r.len(),
            ns * na
        )));
    }
    for s in 0..ns {
        for a in 0..na {
            if !is_distribution(mdp.row(s, a)) {
                return Err(MdpError::RowNotStochastic { state: s, action: a });
            }
            let r = mdp.reward(s, a);
            if !(0.0..=1.0).contains(&r) {
                return Err(MdpError::RewardOutOfRange { state: s, action: a });
            }
        }
    }
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        return Err(MdpError::GammaOutOfRange(mdp.gamma));
    }
    Ok(())
}

fn is_distribution(row: &[f64]) -> bool {
    row.iter().all(|p| p.is_finite() && *p >= 0.0)
        && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL
}

/// Stochastic policy `π(a | s)`, stored row-major by state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy", into = "RawPolicy")]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TryFrom<RawPolicy> for Policy {
    type Error = MdpError;
    fn try_from(raw: RawPolicy) -> Result<Self, MdpError> {
        Policy::new(raw.n_states, raw.n_actions, raw.probs)
    }
}

impl From<Policy> for RawPolicy {
    fn from(p: Policy) -> Self {
        RawPolicy { n_states: p.n_states, n_actions: p.n_actions, probs: p.probs }
    }
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self, MdpError> {
        if probs.len() != n_states * n_actions {
            return Err(MdpError::DimensionMismatch(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for s in 0..n_states {
            if !is_distribution(&probs[s * n_actions..(s + 1) * n_actions]) {
                return Err(MdpError::PolicyRowNotStochastic(s));
            }
        }
        Ok(Policy { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Policy { n_states, n_actions, probs: vec![p; n_states * n_actions] }
    }

    /// Puts all mass on `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self, MdpError> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(MdpError::DimensionMismatch(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Policy { n_states: actions.len(), n_actions, probs })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn probs(&self, state: usize) -> &[f64] {
        &self.probs[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.n_actions + action]
    }

    pub fn check_compatible(&self, mdp: &Mdp) -> Result<(), MdpError> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(MdpError::DimensionMismatch(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states, self.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(())
    }
}

/// Stationary law of the state-action chain `(s, a) → (s', a')`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    /// Probability of each pair, ordered `s * n_actions + a`.
    pub d: Vec<f64>,
    /// Set when the chain has one aperiodic recurrent class.
    pub mixing_ok: bool,
}

/// Recurrence structure of the support graph of the pair chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainStructure {
    /// Pairs of each closed communicating class, ascending.
    pub closed_classes: Vec<Vec<usize>>,
    /// Period of each closed class.
    pub periods: Vec<usize>,
}

/// Row-major transition matrix of the pair chain:
/// `M[(s,a),(s',a')] = P0(s'|s,a) · π(a'|s')`.
pub fn pair_chain_matrix(mdp: &Mdp, policy: &Policy) -> Vec<f64> {
    let n = mdp.n_pairs();
    let na = mdp.n_actions;
    let mut m = vec![0.0; n * n];
    for s in 0..mdp.n_states {
        for a in 0..na {
            let i = mdp.pair(s, a);
            for (s2, &p) in mdp.row(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    m[i * n + s2 * na + a2] = p * policy.prob(s2, a2);
                }
            }
        }
    }
    m
}

/// Strongly connected components and their periods on the chain's support
/// graph; probabilities play no role beyond being nonzero.
pub fn chain_structure(mdp: &Mdp, policy: &Policy) -> ChainStructure {
    let n = mdp.n_pairs();
    let na = mdp.n_actions;
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * 2);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..mdp.n_states {
        for a in 0..na {
            let i = mdp.pair(s, a);
            for (s2, &p) in mdp.row(s, a).iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    if policy.prob(s2, a2) > 0.0 {
                        let j = s2 * na + a2;
                        succ[i].push(j);
                        graph.add_edge(nodes[i], nodes[j], ());
                    }
                }
            }
        }
    }
    let mut component = vec![usize::MAX; n];
    let sccs = tarjan_scc(&graph);
    for (c, scc) in sccs.iter().enumerate() {
        for node in scc {
            component[node.index()] = c;
        }
    }
    let mut closed_classes = Vec::new();
    for (c, scc) in sccs.iter().enumerate() {
        let members: Vec<usize> = scc.iter().map(|x| x.index()).collect();
        let closed = members.iter().all(|&i| succ[i].iter().all(|&j| component[j] == c));
        if !closed {
            continue;
        }
        let mut members = members;
        members.sort_unstable();
        closed_classes.push(members);
    }
    closed_classes.sort();
    let periods = closed_classes.iter().map(|cls| class_period(cls, &succ)).collect();
    ChainStructure { closed_classes, periods }
}

/// gcd over in-class edges `u → v` of `level(u) + 1 − level(v)`, with BFS
/// levels from the smallest member.
fn class_period(members: &[usize], succ: &[Vec<usize>]) -> usize {
    let root = members[0];
    let mut level = std::collections::HashMap::with_capacity(members.len());
    level.insert(root, 0i64);
    let mut queue = VecDeque::from([root]);
    let mut g: i64 = 0;
    while let Some(u) = queue.pop_front() {
        let lu = level[&u];
        for &v in &succ[u] {
            match level.get(&v) {
                Some(&lv) => g = gcd(g, (lu + 1 - lv).abs()),
                None => {
                    level.insert(v, lu + 1);
                    queue.push_back(v);
                }
            }
        }
    }
    g.max(1) as usize
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Stationary distribution of the pair chain, requiring one aperiodic
/// recurrent class.
pub fn stationary_distribution(mdp: &Mdp, policy: &Policy) -> Result<StationaryDistribution, MdpError> {
    policy.check_compatible(mdp)?;
    let structure = chain_structure(mdp, policy);
    if structure.closed_classes.len() != 1 {
        return Err(MdpError::NotIrreducible(structure.closed_classes.len()));
    }
    if structure.periods[0] != 1 {
        return Err(MdpError::Periodic(structure.periods[0]));
    }
    Ok(StationaryDistribution { d: solve_stationary(mdp, policy), mixing_ok: true })
}

/// Like [`stationary_distribution`] but accepts periodic chains, reporting
/// them through `mixing_ok = false`. Multiple closed classes still fail
/// since the stationary law is then not unique.
pub fn stationary_distribution_unchecked(
    mdp: &Mdp,
    policy: &Policy,
) -> Result<StationaryDistribution, MdpError> {
    policy.check_compatible(mdp)?;
    let structure = chain_structure(mdp, policy);
    if structure.closed_classes.len() != 1 {
        return Err(MdpError::NotIrreducible(structure.closed_classes.len()));
    }
    Ok(StationaryDistribution {
        d: solve_stationary(mdp, policy),
        mixing_ok: structure.periods[0] == 1,
    })
}

fn solve_stationary(mdp: &Mdp, policy: &Policy) -> Vec<f64> {
    let n = mdp.n_pairs();
    let m = pair_chain_matrix(mdp, policy);
    let d = if n <= DENSE_SOLVE_LIMIT {
        dense_stationary(&m, n)
    } else {
        None
    };
    let mut d = d.unwrap_or_else(|| power_stationary(&m, n));
    for x in d.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let total: f64 = d.iter().sum();
    d.iter_mut().for_each(|x| *x /= total);
    d
}

/// Solves `(Mᵀ − I) d = 0` with the last equation replaced by `Σ d = 1`.
fn dense_stationary(m: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = m[j * n + i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1) * n + j] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    linalg::solve(&a, &b, n)
}

/// Power iteration on the lazy chain `(I + M) / 2`, which shares the
/// stationary law and is aperiodic.
fn power_stationary(m: &[f64], n: usize) -> Vec<f64> {
    let mut d = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..POWER_MAX_ITERS {
        next.iter_mut().zip(&d).for_each(|(x, y)| *x = 0.5 * y);
        for i in 0..n {
            let di = 0.5 * d[i];
            if di == 0.0 {
                continue;
            }
            for j in 0..n {
                next[j] += di * m[i * n + j];
            }
        }
        let change = linalg::sup_norm_diff(&next, &d);
        std::mem::swap(&mut d, &mut next);
        if change < POWER_TOL {
            break;
        }
    }
    d
}

/// Current position of a single sampled trajectory plus its generator.
#[derive(Debug, Clone)]
pub struct TrajectoryCursor {
    state: usize,
    rng: ChaCha8Rng,
}

impl TrajectoryCursor {
    pub fn new(initial_state: usize, seed: u64) -> Self {
        TrajectoryCursor { state: initial_state, rng: rng::stream(seed, Stream::Trajectory) }
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

/// Draws `A ~ π(·|s)` and `S' ~ P0(·|s, A)` and moves the cursor to `S'`.
pub fn sample_step(mdp: &Mdp, policy: &Policy, cursor: &mut TrajectoryCursor) -> (usize, usize) {
    let s = cursor.state;
    let action = rng::sample_index(policy.probs(s), cursor.rng.random::<f64>());
    let next = rng::sample_index(mdp.row(s, action), cursor.rng.random::<f64>());
    cursor.state = next;
    (action, next)
}

/// Random model with Dirichlet(1) kernel rows, Uniform[0,1] rewards and
/// γ = 0.9 (see [`Mdp::with_gamma`]).
pub fn random_mdp(n_states: usize, n_actions: usize, seed: u64) -> Mdp {
    assert!(n_states >= 1 && n_actions >= 1, "random_mdp needs at least one state and action");
    let mut rng = rng::stream(seed, Stream::MdpGenerator);
    let mut p0 = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = row.iter().sum();
        p0.extend(row.iter().map(|x: &f64| x / total));
    }
    let r = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    Mdp::new(n_states, n_actions, p0, r, 0.9).expect("generator output satisfies MDP invariants")
}
