//! Tabular MDP data model and exact (known-kernel) solvers.
//!
//! Rewards are stored per transition `r(s, a, s')` and kernels as dense
//! row-major tables indexed `(s * A + a) * S + s'`. Every argmax in this crate
//! breaks ties toward the lowest action index.

use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance used when validating that kernel rows sum to one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A finite, discounted MDP with a known kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    reward: Vec<f64>,
    kernel: Vec<f64>,
    initial_state: usize,
    bounded_rewards: bool,
}

/// State-value vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFn(pub Vec<f64>);

/// Stationary deterministic policy, one action per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy(pub Vec<usize>);

/// Output of one value-iteration call.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub value: ValueFn,
    pub policy: Policy,
    pub iterations: usize,
    /// Sup-norm change of the final sweep.
    pub residual: f64,
    /// False when the iteration cap was hit before `residual <= tol`.
    pub converged: bool,
}

impl ValueFn {
    pub fn zeros(n: usize) -> Self {
        ValueFn(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sup_dist(&self, other: &ValueFn) -> f64 {
        sup_dist(&self.0, &other.0)
    }
}

impl std::ops::Index<usize> for ValueFn {
    type Output = f64;
    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

impl Policy {
    pub fn constant(n_states: usize, action: usize) -> Self {
        Policy(vec![action; n_states])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }
}

pub(crate) fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl TabularMdp {
    /// Builds an MDP whose rewards must lie in `[0, 1]`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        reward: Vec<f64>,
        kernel: Vec<f64>,
    ) -> Result<Self> {
        Self::build(n_states, n_actions, gamma, reward, kernel, true)
    }

    /// Builds an MDP that may carry arbitrary finite rewards (used by the
    /// analytic examples, which need negative rewards).
    pub fn new_unbounded(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        reward: Vec<f64>,
        kernel: Vec<f64>,
    ) -> Result<Self> {
        Self::build(n_states, n_actions, gamma, reward, kernel, false)
    }

    fn build(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        reward: Vec<f64>,
        kernel: Vec<f64>,
        bounded_rewards: bool,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("state and action counts must be positive".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma must lie in (0,1), got {gamma}")));
        }
        let len = n_states * n_actions * n_states;
        if reward.len() != len || kernel.len() != len {
            return Err(Error::InvalidMdp(format!(
                "expected tables of length {len}, got reward {} and kernel {}",
                reward.len(),
                kernel.len()
            )));
        }
        for (i, &r) in reward.iter().enumerate() {
            if !r.is_finite() || (bounded_rewards && !(0.0..=1.0).contains(&r)) {
                let (sa, next) = (i / n_states, i % n_states);
                return Err(Error::InvalidMdp(format!(
                    "reward at (s={}, a={}, s'={}) is {r}",
                    sa / n_actions,
                    sa % n_actions,
                    next
                )));
            }
        }
        for (sa, row) in kernel.chunks(n_states).enumerate() {
            check_row(row).map_err(|msg| {
                Error::InvalidMdp(format!(
                    "kernel row (s={}, a={}): {msg}",
                    sa / n_actions,
                    sa % n_actions
                ))
            })?;
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            gamma,
            reward,
            kernel,
            initial_state: 0,
            bounded_rewards,
        })
    }

    pub fn with_initial_state(mut self, s: usize) -> Result<Self> {
        if s >= self.n_states {
            return Err(Error::InvalidMdp(format!("initial state {s} out of range")));
        }
        self.initial_state = s;
        Ok(self)
    }

    /// Same states, actions, rewards and discount under a different kernel.
    pub fn with_kernel(&self, kernel: Vec<f64>) -> Result<Self> {
        let mdp = Self::build(
            self.n_states,
            self.n_actions,
            self.gamma,
            self.reward.clone(),
            kernel,
            self.bounded_rewards,
        )?;
        Ok(TabularMdp { initial_state: self.initial_state, ..mdp })
    }

    /// Same model under another discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mdp = Self::build(
            self.n_states,
            self.n_actions,
            gamma,
            self.reward.clone(),
            self.kernel.clone(),
            self.bounded_rewards,
        )?;
        Ok(TabularMdp { initial_state: self.initial_state, ..mdp })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn bounded_rewards(&self) -> bool {
        self.bounded_rewards
    }

    /// Full reward table, indexed `(s * A + a) * S + s'`.
    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Full kernel table, indexed `(s * A + a) * S + s'`.
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.kernel[start..start + self.n_states]
    }

    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.reward[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.kernel[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn is_valid_policy(&self, policy: &Policy) -> bool {
        policy.len() == self.n_states && policy.0.iter().all(|&a| a < self.n_actions)
    }

    /// `sum_{s'} P(s'|s,a) [r(s,a,s') + gamma V(s')]`.
    pub fn q_value(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        one_step_target(self.row(s, a), self.reward_row(s, a), self.gamma, v)
    }

    /// Applies the optimal Bellman operator once.
    pub fn bellman_optimal(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| self.q_value(s, a, v))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// Greedy policy with respect to `v`.
    pub fn greedy_policy(&self, v: &[f64]) -> Policy {
        let mut q = vec![0.0; self.n_actions];
        Policy(
            (0..self.n_states)
                .map(|s| {
                    for (a, slot) in q.iter_mut().enumerate() {
                        *slot = self.q_value(s, a, v);
                    }
                    argmax(&q)
                })
                .collect(),
        )
    }
}

pub(crate) fn check_row(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("invalid probability {p}"));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL {
        return Err(format!("row sums to {total}"));
    }
    Ok(())
}

#[inline]
pub(crate) fn one_step_target(row: &[f64], rewards: &[f64], gamma: f64, v: &[f64]) -> f64 {
    row.iter()
        .zip(rewards)
        .zip(v)
        .map(|((p, r), vn)| p * (r + gamma * vn))
        .sum()
}

/// Value iteration on the known kernel.
///
/// Stops once a sweep changes the value by at most `tol` in sup-norm. The
/// returned policy is greedy with respect to the returned value.
pub fn exact_value_iteration(
    mdp: &TabularMdp,
    tol: f64,
    max_iter: usize,
    warm_start: Option<&ValueFn>,
) -> Result<PlanResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let mut v = match warm_start {
        Some(w) if w.len() == mdp.n_states => w.0.clone(),
        Some(w) => {
            return Err(Error::InvalidArgument(format!(
                "warm start has length {}, expected {}",
                w.len(),
                mdp.n_states
            )))
        }
        None => vec![0.0; mdp.n_states],
    };
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iter {
        let next = mdp.bellman_optimal(&v);
        residual = sup_dist(&next, &v);
        v = next;
        iterations += 1;
        if residual <= tol {
            break;
        }
    }
    let policy = mdp.greedy_policy(&v);
    Ok(PlanResult {
        value: ValueFn(v),
        policy,
        iterations,
        residual,
        converged: residual <= tol,
    })
}

/// Expected one-step reward and transition matrix induced by `policy`.
pub fn policy_system(mdp: &TabularMdp, policy: &Policy) -> (Vec<f64>, Vec<f64>) {
    let n = mdp.n_states;
    let mut r_pi = vec![0.0; n];
    let mut p_pi = vec![0.0; n * n];
    for s in 0..n {
        let a = policy.action(s);
        let row = mdp.row(s, a);
        r_pi[s] = row.iter().zip(mdp.reward_row(s, a)).map(|(p, r)| p * r).sum();
        p_pi[s * n..(s + 1) * n].copy_from_slice(row);
    }
    (r_pi, p_pi)
}

/// Solves `(I - gamma P^pi) V = r^pi` exactly.
pub fn exact_policy_evaluation(mdp: &TabularMdp, policy: &Policy) -> Result<ValueFn> {
    if !mdp.is_valid_policy(policy) {
        return Err(Error::InvalidArgument(format!(
            "policy {:?} invalid for mdp with {} states and {} actions",
            policy.0, mdp.n_states, mdp.n_actions
        )));
    }
    let n = mdp.n_states;
    let (r_pi, p_pi) = policy_system(mdp, policy);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = if i == j { 1.0 } else { 0.0 } - mdp.gamma * p_pi[i * n + j];
        }
    }
    Ok(ValueFn(solve_linear(a, r_pi, n)?))
}

/// Gaussian elimination with partial pivoting on a dense `n x n` system.
pub fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(Error::InvalidArgument("singular linear system".into()));
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|j| a[row * n + j] * x[j]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    Ok(x)
}

/// Draws `s' ~ P(.|s,a)` by inverse-CDF lookup and returns `(s', r(s,a,s'))`.
pub fn sample_transition<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    s: usize,
    a: usize,
    rng: &mut R,
) -> (usize, f64) {
    let next = sample_index(mdp.row(s, a), rng);
    (next, mdp.reward(s, a, next))
}

pub(crate) fn sample_index<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}
