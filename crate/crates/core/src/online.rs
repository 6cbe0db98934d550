//! Pseudo-episodic online interaction.
//!
//! The stream is cut into pseudo-episodes by an independent restart process:
//! `X_1 = 0` and `X_{t+1} ~ Bernoulli(gamma)`, where `X_t = 0` opens a new
//! pseudo-episode. At each opening the agent refreshes its posterior (the
//! counts observed strictly before that step), plans once, and then acts
//! greedily until the next opening.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::brmdp::{brmdp_value_iteration, PlannerConfig};
use crate::error::{Error, Result};
use crate::mdp::{exact_value_iteration, sample_transition, PlanResult, Policy, TabularMdp, ValueFn};
use crate::posterior::DirichletPosterior;
use crate::schedule::{compute_schedule, ScheduleParams};

/// Stream labels for the independent random sources of one run.
pub const STREAM_RESTART: u64 = 1;
pub const STREAM_ENV: u64 = 2;
pub const STREAM_PLANNING: u64 = 3;
pub const STREAM_PSRL: u64 = 4;

/// Independent generator for `label` derived from the run seed.
pub fn stream_rng(seed: u64, label: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label);
    rng
}

/// Agent strategies.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentKind {
    /// Adaptive quantile schedule.
    AqBrmdp(ScheduleParams),
    /// Continuing posterior sampling.
    Psrl,
    /// Constant quantile level at every pair.
    FixedBrmdp(f64),
    /// Ignores the data and plays a given policy; used to study the
    /// restart process in isolation.
    FixedPolicy(Policy),
}

impl AgentKind {
    /// Short label used in file names and CSV rows.
    pub fn label(&self) -> String {
        match self {
            AgentKind::AqBrmdp(_) => "aq_brmdp".into(),
            AgentKind::Psrl => "psrl".into(),
            AgentKind::FixedBrmdp(alpha) => format!("brmdp_{alpha}"),
            AgentKind::FixedPolicy(_) => "fixed_policy".into(),
        }
    }

    fn validate(&self, env: &TabularMdp) -> Result<()> {
        match self {
            AgentKind::FixedBrmdp(alpha) if !(*alpha > 0.0 && *alpha < 1.0) => {
                Err(Error::InvalidArgument(format!("fixed quantile level {alpha} outside (0,1)")))
            }
            AgentKind::FixedPolicy(p) if !env.is_valid_policy(p) => {
                Err(Error::InvalidArgument(format!("policy {:?} does not fit the environment", p.0)))
            }
            _ => Ok(()),
        }
    }
}

/// Settings for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub horizon: u64,
    pub planner: PlannerConfig,
    pub seed: u64,
}

/// One interaction step. `restart` is true when `X_t = 0`, i.e. the step
/// opens pseudo-episode `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub t: u64,
    pub k: u64,
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: f64,
    pub restart: bool,
}

/// Planner output recorded at the opening of a pseudo-episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanSnapshot {
    pub k: u64,
    pub t_k: u64,
    pub policy: Policy,
    pub value: ValueFn,
    /// Per-pair levels for quantile planners.
    pub alphas: Option<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Complete record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub agent: String,
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub steps: Vec<Step>,
    pub plans: Vec<PlanSnapshot>,
}

impl RunLog {
    pub fn n_episodes(&self) -> usize {
        self.plans.len()
    }

    /// Realized pseudo-episode lengths; the last one is truncated at the
    /// horizon.
    pub fn episode_lengths(&self) -> Vec<u64> {
        let mut lengths = vec![0u64; self.plans.len()];
        for step in &self.steps {
            lengths[(step.k - 1) as usize] += 1;
        }
        lengths
    }

    /// Plan in force at `step`.
    pub fn plan_for(&self, step: &Step) -> &PlanSnapshot {
        &self.plans[(step.k - 1) as usize]
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Posterior counts in force at the opening of each pseudo-episode,
    /// rebuilt by replaying the log. Calls `visit(k, posterior)` in order.
    pub fn replay_posteriors<F>(&self, mut visit: F) -> Result<()>
    where
        F: FnMut(&PlanSnapshot, &DirichletPosterior) -> Result<()>,
    {
        let mut post = DirichletPosterior::new_uniform_prior(self.n_states, self.n_actions)?;
        for step in &self.steps {
            if step.restart {
                visit(self.plan_for(step), &post)?;
            }
            post.observe(step.state, step.action, step.next_state);
        }
        Ok(())
    }
}

/// Continuing posterior sampling: one kernel drawn from the posterior, then
/// exact value iteration in the sampled model (rewards stay per transition,
/// so expected rewards follow the sampled rows).
pub fn psrl_plan<R: Rng + ?Sized>(
    post: &DirichletPosterior,
    env: &TabularMdp,
    tol: f64,
    max_iter: usize,
    warm_start: Option<&ValueFn>,
    rng: &mut R,
) -> Result<PlanResult> {
    if post.n_states() != env.n_states() || post.n_actions() != env.n_actions() {
        return Err(Error::InvalidArgument("posterior and environment dimensions differ".into()));
    }
    let sampled = env.with_kernel(post.sample_full_kernel(rng))?;
    exact_value_iteration(&sampled, tol, max_iter, warm_start)
}

/// Runs one agent for `config.horizon` steps from the environment's initial
/// state. Deterministic given `config.seed`.
pub fn run_episode_stream(env: &TabularMdp, agent: &AgentKind, config: &RunConfig) -> Result<RunLog> {
    if config.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    agent.validate(env)?;
    let (ns, na) = (env.n_states(), env.n_actions());
    let gamma = env.gamma();
    let mut restart_rng = stream_rng(config.seed, STREAM_RESTART);
    let mut env_rng = stream_rng(config.seed, STREAM_ENV);
    let mut plan_rng = stream_rng(config.seed, STREAM_PLANNING);
    let mut psrl_rng = stream_rng(config.seed, STREAM_PSRL);

    let mut post = DirichletPosterior::new_uniform_prior(ns, na)?;
    let mut steps = Vec::with_capacity(config.horizon as usize);
    let mut plans: Vec<PlanSnapshot> = Vec::new();
    let mut state = env.initial_state();
    let mut k = 0u64;
    let mut opens_episode = true;
    let mut policy = Policy::constant(ns, 0);
    let mut warm: Option<ValueFn> = None;

    for t in 1..=config.horizon {
        if opens_episode {
            k += 1;
            let (plan, alphas) = match agent {
                AgentKind::AqBrmdp(params) => {
                    let alphas = compute_schedule(params, k, &post.visit_counts()).alphas;
                    let plan = brmdp_value_iteration(
                        &post,
                        &alphas,
                        env.rewards(),
                        gamma,
                        &config.planner,
                        warm.as_ref(),
                        &mut plan_rng,
                    )?;
                    (plan, Some(alphas))
                }
                AgentKind::FixedBrmdp(alpha) => {
                    let alphas = vec![*alpha; ns * na];
                    let plan = brmdp_value_iteration(
                        &post,
                        &alphas,
                        env.rewards(),
                        gamma,
                        &config.planner,
                        warm.as_ref(),
                        &mut plan_rng,
                    )?;
                    (plan, Some(alphas))
                }
                AgentKind::Psrl => {
                    let plan = psrl_plan(
                        &post,
                        env,
                        config.planner.tol,
                        config.planner.max_iter,
                        warm.as_ref(),
                        &mut psrl_rng,
                    )?;
                    (plan, None)
                }
                AgentKind::FixedPolicy(p) => {
                    let plan = PlanResult {
                        value: ValueFn::zeros(ns),
                        policy: p.clone(),
                        iterations: 0,
                        residual: 0.0,
                        converged: true,
                    };
                    (plan, None)
                }
            };
            policy = plan.policy.clone();
            warm = Some(plan.value.clone());
            plans.push(PlanSnapshot {
                k,
                t_k: t,
                policy: plan.policy,
                value: plan.value,
                alphas,
                iterations: plan.iterations,
                residual: plan.residual,
                converged: plan.converged,
            });
        }
        let action = policy.action(state);
        let (next_state, reward) = sample_transition(env, state, action, &mut env_rng);
        post.observe(state, action, next_state);
        steps.push(Step { t, k, state, action, next_state, reward, restart: opens_episode });
        state = next_state;
        if t < config.horizon {
            opens_episode = restart_rng.random::<f64>() >= gamma;
        }
    }
    Ok(RunLog { agent: agent.label(), seed: config.seed, n_states: ns, n_actions: na, steps, plans })
}
