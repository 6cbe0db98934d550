//! Quantile Bayesian-risk planning.
//!
//! A planning call fixes, for every `(s, a)`, a finite set of candidate
//! transition rows and a quantile level. The backup at `(s, a)` is the left
//! quantile of the one-step targets `sum_{s'} P(s') [r(s,a,s') + gamma V(s')]`
//! over that set. Two backends exist:
//!
//! * [`SampledBackupSet`]: Monte Carlo rows drawn once from a Dirichlet
//!   posterior, quantile taken as the `ceil(n * alpha)`-th order statistic.
//! * [`AtomBackupSet`]: rows with explicit probabilities (finite mixture
//!   posteriors), quantile taken exactly over the weighted atoms.
//!
//! Both operators are monotone and translation-equivariant, hence
//! `gamma`-contractions, so value iteration converges for any start.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{argmax, sup_dist, Policy, PlanResult, TabularMdp, ValueFn};
use crate::posterior::DirichletPosterior;
use crate::risk::{atom_quantile, mc_budget, order_index, select_order_statistic, DEFAULT_BUDGET_CAP};

/// Settings shared by every quantile planning call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    /// Coefficient of the Monte Carlo budget rule.
    pub c_samples: f64,
    pub budget_cap: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig { c_samples: 150.0, budget_cap: DEFAULT_BUDGET_CAP, tol: 1e-8, max_iter: 10_000 }
    }
}

/// A source of per-pair quantile backups.
pub trait QuantileBackup {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn gamma(&self) -> f64;

    /// `rho^alpha(s, a)` of the one-step targets under `v`, reward included.
    fn backup(&self, s: usize, a: usize, v: &[f64], scratch: &mut Vec<f64>) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PairSamples {
    start: usize,
    len: usize,
    alpha: f64,
    order: usize,
}

/// Posterior rows drawn once per planning call and held fixed while
/// iterating.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledBackupSet {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    pairs: Vec<PairSamples>,
    /// Sampled rows, concatenated; row `j` of pair `p` lives at
    /// `(pairs[p].start + j) * n_states`.
    rows: Vec<f64>,
    /// `sum_{s'} P_j(s') r(s, a, s')` for every stored row.
    expected_reward: Vec<f64>,
}

fn check_alphas(alphas: &[f64], pairs: usize) -> Result<()> {
    if alphas.len() != pairs {
        return Err(Error::InvalidArgument(format!(
            "expected {pairs} quantile levels, got {}",
            alphas.len()
        )));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::InvalidArgument(format!("quantile level {a} outside (0,1)")));
    }
    Ok(())
}

impl SampledBackupSet {
    /// Draws `n_{s,a} = mc_budget(alpha(s,a))` rows for every pair, in
    /// state-major order.
    pub fn draw<R: Rng + ?Sized>(
        post: &DirichletPosterior,
        alphas: &[f64],
        reward: &[f64],
        gamma: f64,
        config: &PlannerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let pairs = post.n_states() * post.n_actions();
        check_alphas(alphas, pairs)?;
        let sizes = alphas
            .iter()
            .map(|&a| mc_budget(a, config.c_samples, config.budget_cap))
            .collect::<Result<Vec<_>>>()?;
        Self::draw_sized(post, alphas, &sizes, reward, gamma, rng)
    }

    /// Draws an explicit number of rows per pair. Pairs with size zero get no
    /// samples and must not be backed up.
    pub fn draw_sized<R: Rng + ?Sized>(
        post: &DirichletPosterior,
        alphas: &[f64],
        sizes: &[usize],
        reward: &[f64],
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (ns, na) = (post.n_states(), post.n_actions());
        check_alphas(alphas, ns * na)?;
        if sizes.len() != ns * na || reward.len() != ns * na * ns {
            return Err(Error::InvalidArgument("sample sizes or rewards have the wrong shape".into()));
        }
        let total: usize = sizes.iter().sum();
        let mut rows = vec![0.0; total * ns];
        let mut expected_reward = vec![0.0; total];
        let mut pairs = Vec::with_capacity(ns * na);
        let mut start = 0;
        for s in 0..ns {
            for a in 0..na {
                let p = s * na + a;
                let len = sizes[p];
                let r_row = &reward[p * ns..(p + 1) * ns];
                for j in start..start + len {
                    let row = &mut rows[j * ns..(j + 1) * ns];
                    post.sample_row_into(s, a, rng, row);
                    expected_reward[j] = row.iter().zip(r_row).map(|(x, r)| x * r).sum();
                }
                let order = if len == 0 { 0 } else { order_index(alphas[p], len) };
                pairs.push(PairSamples { start, len, alpha: alphas[p], order });
                start += len;
            }
        }
        Ok(SampledBackupSet { n_states: ns, n_actions: na, gamma, pairs, rows, expected_reward })
    }

    /// Builds a set from explicit rows, `rows[s * A + a]` holding the rows for
    /// that pair.
    pub fn from_rows(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        reward: &[f64],
        rows_per_pair: &[Vec<Vec<f64>>],
        alphas: &[f64],
    ) -> Result<Self> {
        check_alphas(alphas, n_states * n_actions)?;
        if rows_per_pair.len() != n_states * n_actions || reward.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidArgument("rows or rewards have the wrong shape".into()));
        }
        let mut rows = Vec::new();
        let mut expected_reward = Vec::new();
        let mut pairs = Vec::new();
        let mut start = 0;
        for (p, pair_rows) in rows_per_pair.iter().enumerate() {
            let r_row = &reward[p * n_states..(p + 1) * n_states];
            for row in pair_rows {
                crate::mdp::check_row(row).map_err(Error::InvalidArgument)?;
                if row.len() != n_states {
                    return Err(Error::InvalidArgument("row has the wrong length".into()));
                }
                rows.extend_from_slice(row);
                expected_reward.push(row.iter().zip(r_row).map(|(x, r)| x * r).sum());
            }
            let len = pair_rows.len();
            let order = if len == 0 { 0 } else { order_index(alphas[p], len) };
            pairs.push(PairSamples { start, len, alpha: alphas[p], order });
            start += len;
        }
        Ok(SampledBackupSet { n_states, n_actions, gamma, pairs, rows, expected_reward })
    }

    /// Same rows, different quantile levels.
    pub fn with_alphas(&self, alphas: &[f64]) -> Result<Self> {
        check_alphas(alphas, self.pairs.len())?;
        let mut out = self.clone();
        for (pair, &alpha) in out.pairs.iter_mut().zip(alphas) {
            pair.alpha = alpha;
            pair.order = if pair.len == 0 { 0 } else { order_index(alpha, pair.len) };
        }
        Ok(out)
    }

    pub fn n_samples(&self, s: usize, a: usize) -> usize {
        self.pairs[s * self.n_actions + a].len
    }

    pub fn order_index(&self, s: usize, a: usize) -> usize {
        self.pairs[s * self.n_actions + a].order
    }

    pub fn alpha(&self, s: usize, a: usize) -> f64 {
        self.pairs[s * self.n_actions + a].alpha
    }

    pub fn sample_row(&self, s: usize, a: usize, j: usize) -> &[f64] {
        let pair = &self.pairs[s * self.n_actions + a];
        assert!(j < pair.len);
        let i = pair.start + j;
        &self.rows[i * self.n_states..(i + 1) * self.n_states]
    }
}

impl QuantileBackup for SampledBackupSet {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn backup(&self, s: usize, a: usize, v: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let pair = &self.pairs[s * self.n_actions + a];
        assert!(pair.len > 0, "no samples drawn for (s={s}, a={a})");
        let ns = self.n_states;
        let rows = &self.rows[pair.start * ns..(pair.start + pair.len) * ns];
        let rewards = &self.expected_reward[pair.start..pair.start + pair.len];
        scratch.clear();
        scratch.extend(rows.chunks_exact(ns).zip(rewards).map(|(row, r)| {
            let ev: f64 = row.iter().zip(v).map(|(p, x)| p * x).sum();
            r + self.gamma * ev
        }));
        select_order_statistic(scratch, pair.order)
    }
}

/// Weighted candidate rows with exact quantiles, for posteriors that are
/// finite mixtures of kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomBackupSet {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    reward: Vec<f64>,
    /// `atoms[s * A + a]`: `(row, probability)` pairs.
    atoms: Vec<Vec<(Vec<f64>, f64)>>,
    alphas: Vec<f64>,
}

impl AtomBackupSet {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        reward: Vec<f64>,
        atoms: Vec<Vec<(Vec<f64>, f64)>>,
        alphas: Vec<f64>,
    ) -> Result<Self> {
        check_alphas(&alphas, n_states * n_actions)?;
        if atoms.len() != n_states * n_actions || reward.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidArgument("atoms or rewards have the wrong shape".into()));
        }
        for pair in &atoms {
            let mass: f64 = pair.iter().map(|(_, p)| p).sum();
            if pair.is_empty() || (mass - 1.0).abs() > 1e-12 || pair.iter().any(|(_, p)| *p < 0.0) {
                return Err(Error::InvalidArgument(format!("atom probabilities sum to {mass}")));
            }
            for (row, _) in pair {
                crate::mdp::check_row(row).map_err(Error::InvalidArgument)?;
            }
        }
        Ok(AtomBackupSet { n_states, n_actions, gamma, reward, atoms, alphas })
    }
}

impl QuantileBackup for AtomBackupSet {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn backup(&self, s: usize, a: usize, v: &[f64], _scratch: &mut Vec<f64>) -> f64 {
        let p = s * self.n_actions + a;
        let r_row = &self.reward[p * self.n_states..(p + 1) * self.n_states];
        let mut targets: Vec<(f64, f64)> = self.atoms[p]
            .iter()
            .map(|(row, prob)| (crate::mdp::one_step_target(row, r_row, self.gamma, v), *prob))
            .collect();
        atom_quantile(&mut targets, self.alphas[p]).expect("atoms validated at construction")
    }
}

/// One application of the optimal quantile Bellman operator.
pub fn optimal_operator<B: QuantileBackup + ?Sized>(backups: &B, v: &[f64]) -> Vec<f64> {
    let mut scratch = Vec::new();
    (0..backups.n_states())
        .map(|s| {
            (0..backups.n_actions())
                .map(|a| backups.backup(s, a, v, &mut scratch))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// One application of the quantile Bellman operator of a fixed policy.
pub fn policy_operator<B: QuantileBackup + ?Sized>(backups: &B, policy: &Policy, v: &[f64]) -> Vec<f64> {
    let mut scratch = Vec::new();
    (0..backups.n_states())
        .map(|s| backups.backup(s, policy.action(s), v, &mut scratch))
        .collect()
}

fn initial_value(n: usize, warm_start: Option<&ValueFn>) -> Result<Vec<f64>> {
    match warm_start {
        Some(w) if w.len() == n => Ok(w.0.clone()),
        Some(w) => Err(Error::InvalidArgument(format!(
            "warm start has length {}, expected {n}",
            w.len()
        ))),
        None => Ok(vec![0.0; n]),
    }
}

/// Value iteration on a fixed backup set. The policy is greedy with respect
/// to the Q table of the last completed sweep.
pub fn solve_optimal<B: QuantileBackup + ?Sized>(
    backups: &B,
    tol: f64,
    max_iter: usize,
    warm_start: Option<&ValueFn>,
) -> Result<PlanResult> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidArgument("tol and max_iter must be positive".into()));
    }
    let (ns, na) = (backups.n_states(), backups.n_actions());
    let mut v = initial_value(ns, warm_start)?;
    let mut next = vec![0.0; ns];
    let mut q = vec![0.0; ns * na];
    let mut scratch = Vec::new();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iter {
        for s in 0..ns {
            let qs = &mut q[s * na..(s + 1) * na];
            for (a, slot) in qs.iter_mut().enumerate() {
                *slot = backups.backup(s, a, &v, &mut scratch);
            }
            next[s] = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        residual = sup_dist(&next, &v);
        std::mem::swap(&mut v, &mut next);
        iterations += 1;
        if residual <= tol {
            break;
        }
    }
    let policy = Policy((0..ns).map(|s| argmax(&q[s * na..(s + 1) * na])).collect());
    Ok(PlanResult { value: ValueFn(v), policy, iterations, residual, converged: residual <= tol })
}

/// Result of evaluating a fixed policy under a quantile operator.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub value: ValueFn,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Fixed point of the policy quantile operator on a fixed backup set.
pub fn solve_policy<B: QuantileBackup + ?Sized>(
    backups: &B,
    policy: &Policy,
    tol: f64,
    max_iter: usize,
    warm_start: Option<&ValueFn>,
) -> Result<EvalResult> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidArgument("tol and max_iter must be positive".into()));
    }
    let ns = backups.n_states();
    if policy.len() != ns || policy.0.iter().any(|&a| a >= backups.n_actions()) {
        return Err(Error::InvalidArgument(format!("invalid policy {:?}", policy.0)));
    }
    let mut v = initial_value(ns, warm_start)?;
    let mut next = vec![0.0; ns];
    let mut scratch = Vec::new();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iter {
        for (s, slot) in next.iter_mut().enumerate() {
            *slot = backups.backup(s, policy.action(s), &v, &mut scratch);
        }
        residual = sup_dist(&next, &v);
        std::mem::swap(&mut v, &mut next);
        iterations += 1;
        if residual <= tol {
            break;
        }
    }
    Ok(EvalResult { value: ValueFn(v), iterations, residual, converged: residual <= tol })
}

/// Approximate quantile BR-MDP planning under a Dirichlet posterior.
///
/// `alphas` holds one level per pair (index `s * A + a`). Samples are drawn
/// from `rng` once at entry and reused in every sweep.
#[allow(clippy::too_many_arguments)]
pub fn brmdp_value_iteration<R: Rng + ?Sized>(
    post: &DirichletPosterior,
    alphas: &[f64],
    reward: &[f64],
    gamma: f64,
    config: &PlannerConfig,
    warm_start: Option<&ValueFn>,
    rng: &mut R,
) -> Result<PlanResult> {
    let backups = SampledBackupSet::draw(post, alphas, reward, gamma, config, rng)?;
    solve_optimal(&backups, config.tol, config.max_iter, warm_start)
}

/// Quantile BR-MDP value of a fixed policy. Only the pairs the policy visits
/// are sampled.
pub fn brmdp_policy_evaluation<R: Rng + ?Sized>(
    post: &DirichletPosterior,
    alphas: &[f64],
    policy: &Policy,
    reward: &[f64],
    gamma: f64,
    config: &PlannerConfig,
    rng: &mut R,
) -> Result<EvalResult> {
    let (ns, na) = (post.n_states(), post.n_actions());
    check_alphas(alphas, ns * na)?;
    if policy.len() != ns || policy.0.iter().any(|&a| a >= na) {
        return Err(Error::InvalidArgument(format!("invalid policy {:?}", policy.0)));
    }
    let mut sizes = vec![0; ns * na];
    for s in 0..ns {
        let p = s * na + policy.action(s);
        sizes[p] = mc_budget(alphas[p], config.c_samples, config.budget_cap)?;
    }
    let backups = SampledBackupSet::draw_sized(post, alphas, &sizes, reward, gamma, rng)?;
    solve_policy(&backups, policy, config.tol, config.max_iter, None)
}

/// A point-mass backup set: every pair holds the single row of `mdp`.
pub fn point_mass_backups(mdp: &TabularMdp, alpha: f64) -> Result<SampledBackupSet> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let rows: Vec<Vec<Vec<f64>>> = (0..ns)
        .flat_map(|s| (0..na).map(move |a| (s, a)))
        .map(|(s, a)| vec![mdp.row(s, a).to_vec()])
        .collect();
    SampledBackupSet::from_rows(ns, na, mdp.gamma(), mdp.rewards(), &rows, &vec![alpha; ns * na])
}
