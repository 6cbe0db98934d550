//! Post-hoc metrics over run logs: true and robust regret, moving-average
//! reward, state occupancy, the posterior quantile value diagnostic, and
//! seed aggregation.

use std::collections::HashMap;

use rand::Rng;

use crate::brmdp::{solve_optimal, solve_policy, PlannerConfig, SampledBackupSet};
use crate::error::{Error, Result};
use crate::mdp::{exact_policy_evaluation, exact_value_iteration, Policy, TabularMdp, ValueFn};
use crate::online::RunLog;
use crate::posterior::DirichletPosterior;
use crate::risk::empirical_quantile;

/// z-value of the two-sided 95% normal interval.
pub const CI_Z: f64 = 1.96;

fn check_dims(env: &TabularMdp, log: &RunLog) -> Result<()> {
    if env.n_states() != log.n_states || env.n_actions() != log.n_actions {
        return Err(Error::InvalidArgument("run log and environment dimensions differ".into()));
    }
    Ok(())
}

/// Cumulative sum of a per-step series.
pub fn cumulative(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Per-step true regret `V*(s_t) - V^{pi_k}(s_t)` under the true kernel.
pub fn true_regret_steps(env: &TabularMdp, log: &RunLog) -> Result<Vec<f64>> {
    check_dims(env, log)?;
    let optimal = exact_value_iteration(env, 1e-10, 100_000, None)?;
    let mut cache: HashMap<&Policy, ValueFn> = HashMap::new();
    for plan in &log.plans {
        if !cache.contains_key(&plan.policy) {
            cache.insert(&plan.policy, exact_policy_evaluation(env, &plan.policy)?);
        }
    }
    Ok(log
        .steps
        .iter()
        .map(|step| {
            let v_pi = &cache[&log.plan_for(step).policy];
            optimal.value[step.state] - v_pi[step.state]
        })
        .collect())
}

/// Cumulative true regret after each step.
pub fn true_regret_series(env: &TabularMdp, log: &RunLog) -> Result<Vec<f64>> {
    Ok(cumulative(&true_regret_steps(env, log)?))
}

/// Robust regret against the floor-level quantile benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustRegret {
    /// Per-step gaps as computed, possibly slightly negative from sampling.
    pub steps: Vec<f64>,
    pub cumulative_raw: Vec<f64>,
    /// Cumulative sum of gaps clipped at zero.
    pub cumulative_clipped: Vec<f64>,
    /// Pseudo-episodes whose benchmark or evaluation hit the iteration cap.
    pub nonconverged_episodes: usize,
}

/// Per pseudo-episode, rebuilds the posterior from the log, draws one sample
/// set at level `alpha_floor`, and on that shared set computes the optimal
/// quantile value and the value of the played policy.
pub fn robust_regret_series<R: Rng + ?Sized>(
    env: &TabularMdp,
    log: &RunLog,
    alpha_floor: f64,
    planner: &PlannerConfig,
    rng: &mut R,
) -> Result<RobustRegret> {
    check_dims(env, log)?;
    let alphas = vec![alpha_floor; env.n_states() * env.n_actions()];
    let mut gaps: Vec<Vec<f64>> = Vec::with_capacity(log.n_episodes());
    let mut nonconverged = 0;
    let mut warm: Option<ValueFn> = None;
    log.replay_posteriors(|plan, post| {
        let set = SampledBackupSet::draw(post, &alphas, env.rewards(), env.gamma(), planner, rng)?;
        let best = solve_optimal(&set, planner.tol, planner.max_iter, warm.as_ref())?;
        let played = solve_policy(&set, &plan.policy, planner.tol, planner.max_iter, Some(&best.value))?;
        if !best.converged || !played.converged {
            nonconverged += 1;
        }
        gaps.push(best.value.0.iter().zip(&played.value.0).map(|(b, p)| b - p).collect());
        warm = Some(best.value);
        Ok(())
    })?;
    let steps: Vec<f64> = log
        .steps
        .iter()
        .map(|st| gaps[(st.k - 1) as usize][st.state])
        .collect();
    let clipped: Vec<f64> = steps.iter().map(|g| g.max(0.0)).collect();
    Ok(RobustRegret {
        cumulative_raw: cumulative(&steps),
        cumulative_clipped: cumulative(&clipped),
        steps,
        nonconverged_episodes: nonconverged,
    })
}

/// Trailing `w`-step average; entry `i` covers steps `i+1 ..= i+w`, so the
/// first value belongs to step `t = w`.
pub fn moving_average_reward(rewards: &[f64], w: usize) -> Result<Vec<f64>> {
    if w == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    if rewards.len() < w {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(rewards.len() - w + 1);
    let mut sum: f64 = rewards[..w].iter().sum();
    out.push(sum / w as f64);
    for t in w..rewards.len() {
        sum += rewards[t] - rewards[t - w];
        out.push(sum / w as f64);
    }
    Ok(out)
}

/// Fraction of steps spent in each state (counting `s_t` for every step).
pub fn occupancy(log: &RunLog) -> Vec<f64> {
    let mut counts = vec![0u64; log.n_states];
    for step in &log.steps {
        counts[step.state] += 1;
    }
    let total = log.steps.len().max(1) as f64;
    counts.iter().map(|&c| c as f64 / total).collect()
}

/// Values `V^pi_P(s0)` for `m` kernels `P` drawn from the posterior.
pub fn posterior_policy_values<R: Rng + ?Sized>(
    post: &DirichletPosterior,
    policy: &Policy,
    env: &TabularMdp,
    m: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one kernel draw".into()));
    }
    let s0 = env.initial_state();
    (0..m)
        .map(|_| {
            let sampled = env.with_kernel(post.sample_full_kernel(rng))?;
            Ok(exact_policy_evaluation(&sampled, policy)?[s0])
        })
        .collect()
}

/// Empirical posterior `alpha`-quantile of the policy's value at the start
/// state over `m` kernel draws.
pub fn posterior_quantile_value<R: Rng + ?Sized>(
    post: &DirichletPosterior,
    policy: &Policy,
    env: &TabularMdp,
    alpha: f64,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    empirical_quantile(&posterior_policy_values(post, policy, env, m, rng)?, alpha)
}

/// The quantile value diagnostic at `t = every, 2 every, ...`, each using the
/// posterior and policy of the pseudo-episode containing `t`.
pub fn quantile_value_series<R: Rng + ?Sized>(
    env: &TabularMdp,
    log: &RunLog,
    every: u64,
    alpha: f64,
    m: usize,
    rng: &mut R,
) -> Result<Vec<(u64, f64)>> {
    check_dims(env, log)?;
    if every == 0 {
        return Err(Error::InvalidArgument("diagnostic cadence must be at least 1".into()));
    }
    let mut post = DirichletPosterior::new_uniform_prior(log.n_states, log.n_actions)?;
    let mut episode_post = post.clone();
    let mut out = Vec::new();
    for step in &log.steps {
        if step.restart {
            episode_post = post.clone();
        }
        if step.t % every == 0 {
            let policy = &log.plan_for(step).policy;
            out.push((step.t, posterior_quantile_value(&episode_post, policy, env, alpha, m, rng)?));
        }
        post.observe(step.state, step.action, step.next_state);
    }
    Ok(out)
}

/// Pointwise mean with a normal-approximation 95% half-width
/// `1.96 sd / sqrt(n)`; the half-width is `None` for a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mean: Vec<f64>,
    pub half_width: Option<Vec<f64>>,
    pub n_runs: usize,
}

pub fn aggregate(runs: &[Vec<f64>]) -> Result<Aggregate> {
    let first = runs.first().ok_or_else(|| Error::InvalidArgument("no runs to aggregate".into()))?;
    let len = first.len();
    if runs.iter().any(|r| r.len() != len) {
        return Err(Error::InvalidArgument("runs have different lengths".into()));
    }
    let n = runs.len() as f64;
    let mean: Vec<f64> = (0..len).map(|i| runs.iter().map(|r| r[i]).sum::<f64>() / n).collect();
    let half_width = (runs.len() > 1).then(|| {
        (0..len)
            .map(|i| {
                let var = runs.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0);
                CI_Z * var.sqrt() / n.sqrt()
            })
            .collect()
    });
    Ok(Aggregate { mean, half_width, n_runs: runs.len() })
}

/// Per-state level whose nested quantile value lower-bounds the posterior
/// `alpha`-quantile value: `1 - (1 - alpha)^(1/S)`.
pub fn alpha_bar(alpha: f64, n_states: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || n_states == 0 {
        return Err(Error::InvalidArgument(format!("need alpha in (0,1) and S >= 1, got {alpha} and {n_states}")));
    }
    Ok(-((-alpha).ln_1p() / n_states as f64).exp_m1())
}
