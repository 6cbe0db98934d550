//! Numerical checks of the analytic results behind quantile planning.
//!
//! * Two-kernel examples solved exactly with the atom backend: lower-tail
//!   planning avoids downside exposure, and a fixed lower-tail rule can trap
//!   itself by never taking an informative action.
//! * Asymptotic normality of the quantile policy value around the true value,
//!   checked by simulation.
//! * The nested-quantile lower bound on the posterior quantile value,
//!   checked by Monte Carlo coverage.

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::brmdp::{brmdp_policy_evaluation, solve_optimal, solve_policy, AtomBackupSet, PlannerConfig, SampledBackupSet};
use crate::error::{Error, Result};
use crate::mdp::{
    exact_policy_evaluation, exact_value_iteration, sample_transition, solve_linear, Policy, TabularMdp, ValueFn,
};
use crate::metrics::alpha_bar;
use crate::online::stream_rng;
use crate::posterior::DirichletPosterior;
use crate::risk::std_normal_quantile;

/// Tolerance for the exact (non-sampled) checks.
pub const EXACT_TOL: f64 = 1e-9;

/// A posterior supported on finitely many full kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicPosterior {
    n_states: usize,
    n_actions: usize,
    atoms: Vec<(Vec<f64>, f64)>,
}

impl AtomicPosterior {
    pub fn new(n_states: usize, n_actions: usize, atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let len = n_states * n_actions * n_states;
        if atoms.is_empty() || atoms.iter().any(|(k, p)| k.len() != len || !(*p >= 0.0)) {
            return Err(Error::InvalidArgument("atoms must be full kernels with nonnegative weights".into()));
        }
        let mass: f64 = atoms.iter().map(|(_, p)| p).sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("atom weights sum to {mass}")));
        }
        for (kernel, _) in &atoms {
            for row in kernel.chunks(n_states) {
                crate::mdp::check_row(row).map_err(Error::InvalidArgument)?;
            }
        }
        Ok(AtomicPosterior { n_states, n_actions, atoms })
    }

    pub fn atoms(&self) -> &[(Vec<f64>, f64)] {
        &self.atoms
    }

    pub fn mean_kernel(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.atoms[0].0.len()];
        for (kernel, p) in &self.atoms {
            for (m, k) in mean.iter_mut().zip(kernel) {
                *m += p * k;
            }
        }
        mean
    }

    /// Exact quantile backups at a common level `alpha`. Atoms with zero
    /// weight are dropped.
    pub fn backup_set(&self, reward: &[f64], gamma: f64, alpha: f64) -> Result<AtomBackupSet> {
        let (ns, na) = (self.n_states, self.n_actions);
        let per_pair = (0..ns * na)
            .map(|p| {
                self.atoms
                    .iter()
                    .filter(|(_, w)| *w > 0.0)
                    .map(|(k, w)| (k[p * ns..(p + 1) * ns].to_vec(), *w))
                    .collect()
            })
            .collect();
        AtomBackupSet::new(ns, na, gamma, reward.to_vec(), per_pair, vec![alpha; ns * na])
    }

    /// Bayes update after observing `(s, a, next)`.
    pub fn update(&self, s: usize, a: usize, next: usize) -> Result<Self> {
        let ns = self.n_states;
        let idx = (s * self.n_actions + a) * ns + next;
        let evidence: f64 = self.atoms.iter().map(|(k, w)| w * k[idx]).sum();
        if !(evidence > 0.0) {
            return Err(Error::Precondition(format!("observation ({s},{a},{next}) has zero likelihood")));
        }
        let atoms = self
            .atoms
            .iter()
            .map(|(k, w)| (k.clone(), w * k[idx] / evidence))
            .collect();
        Ok(AtomicPosterior { atoms, ..self.clone() })
    }
}

/// A two-kernel analytic example: posterior, per-transition rewards, and
/// state names.
#[derive(Debug, Clone)]
pub struct ExampleModel {
    pub posterior: AtomicPosterior,
    pub reward: Vec<f64>,
    pub gamma: f64,
    pub labels: Vec<&'static str>,
}

impl ExampleModel {
    /// The MDP of atom `i`.
    pub fn atom_mdp(&self, i: usize) -> Result<TabularMdp> {
        let ns = self.labels.len();
        TabularMdp::new_unbounded(
            ns,
            self.posterior.n_actions,
            self.gamma,
            self.reward.clone(),
            self.posterior.atoms[i].0.clone(),
        )
    }

    pub fn mean_mdp(&self) -> Result<TabularMdp> {
        let ns = self.labels.len();
        TabularMdp::new_unbounded(ns, self.posterior.n_actions, self.gamma, self.reward.clone(), self.posterior.mean_kernel())
    }
}

pub const SAFE: usize = 0;
pub const RISKY: usize = 1;

fn check_common(gamma: f64, c: f64, mu: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) || !(mu > 0.0 && mu < 1.0) || !(c > 0.0 && c < gamma) {
        return Err(Error::Precondition(format!(
            "need 0 < gamma < 1, 0 < mu < 1 and 0 < c < gamma, got gamma={gamma}, mu={mu}, c={c}"
        )));
    }
    Ok(())
}

/// Three states `s0, g, b`; actions safe and risky. Safe earns `c` and stays
/// at `s0`; risky earns 0 and moves to `g` (good kernel, weight `mu`) or `b`
/// (bad kernel). `g` pays 1 forever, `b` pays `-loss` forever.
pub fn build_example_robust_necessity(gamma: f64, c: f64, loss: f64, mu: f64) -> Result<ExampleModel> {
    check_common(gamma, c, mu)?;
    let mut violated = Vec::new();
    if !(loss > 0.0) {
        violated.push("L > 0 violated".to_string());
    }
    if !(gamma * (1.0 - loss) / 2.0 < c) {
        violated.push("γ(1−L)/2 < c violated".to_string());
    }
    if !(c < gamma * (mu - (1.0 - mu) * loss)) {
        violated.push("c < γ(μ−(1−μ)L) violated".to_string());
    }
    if !(mu > 0.5) {
        violated.push("μ > 1/2 violated".to_string());
    }
    if !violated.is_empty() {
        return Err(Error::Precondition(violated.join("; ")));
    }
    let (ns, na) = (3, 2);
    let (s0, g, b) = (0, 1, 2);
    let idx = |s: usize, a: usize, n: usize| (s * na + a) * ns + n;
    let mut reward = vec![0.0; ns * na * ns];
    let mut base = vec![0.0; ns * na * ns];
    for a in 0..na {
        base[idx(g, a, g)] = 1.0;
        base[idx(b, a, b)] = 1.0;
        reward[idx(g, a, g)] = 1.0;
        reward[idx(b, a, b)] = -loss;
    }
    base[idx(s0, SAFE, s0)] = 1.0;
    reward[idx(s0, SAFE, s0)] = c;
    let mut good = base.clone();
    good[idx(s0, RISKY, g)] = 1.0;
    let mut bad = base;
    bad[idx(s0, RISKY, b)] = 1.0;
    Ok(ExampleModel {
        posterior: AtomicPosterior::new(ns, na, vec![(good, mu), (bad, 1.0 - mu)])?,
        reward,
        gamma,
        labels: vec!["s0", "g", "b"],
    })
}

/// Optimal value by policy iteration with exact evaluation.
pub fn optimal_value_exact(mdp: &TabularMdp) -> Result<(ValueFn, Policy)> {
    let start = exact_value_iteration(mdp, 1e-6, 100_000, None)?;
    let mut policy = start.policy;
    for _ in 0..1000 {
        let v = exact_policy_evaluation(mdp, &policy)?;
        let mut improved = policy.clone();
        for s in 0..mdp.n_states() {
            let current = mdp.q_value(s, policy.action(s), &v.0);
            for a in 0..mdp.n_actions() {
                if mdp.q_value(s, a, &v.0) > current + 1e-12 {
                    improved.0[s] = a;
                }
            }
        }
        if improved == policy {
            return Ok((v, policy));
        }
        policy = improved;
    }
    Err(Error::Verification("policy iteration did not stabilize".into()))
}

/// One row of the machine-readable theory report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub check: String,
    pub item: String,
    pub value: f64,
    pub expected: String,
    pub passed: bool,
}

impl ReportRow {
    fn new(check: &str, item: impl Into<String>, value: f64, expected: impl Into<String>, passed: bool) -> Self {
        ReportRow { check: check.into(), item: item.into(), value, expected: expected.into(), passed }
    }
}

pub const REPORT_HEADER: &str = "check,item,value,expected,passed";

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.check,
            r.item.replace(',', ";"),
            crate::experiment::fmt_float(r.value),
            r.expected.replace(',', ";"),
            u8::from(r.passed)
        ));
    }
    out
}

/// Outcome of the downside-exposure check.
#[derive(Debug, Clone)]
pub struct ExposureReport {
    pub quantile_value_s0: f64,
    pub mean_planner_value_s0: f64,
    pub quantile_action_s0: usize,
    pub mean_action_s0: usize,
    /// `(threshold, exposure of mean planner, exposure of quantile planner)`.
    pub exposures: Vec<(f64, f64, f64)>,
    pub rows: Vec<ReportRow>,
}

impl ExposureReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

/// Posterior mass of kernels under which `policy` loses at least `threshold`
/// from the start state.
fn downside_exposure(model: &ExampleModel, policy: &Policy, threshold: f64) -> Result<f64> {
    let mut mass = 0.0;
    for (i, (_, w)) in model.posterior.atoms.iter().enumerate() {
        let mdp = model.atom_mdp(i)?;
        let (best, _) = optimal_value_exact(&mdp)?;
        let played = exact_policy_evaluation(&mdp, policy)?;
        if best[0] - played[0] >= threshold - EXACT_TOL {
            mass += w;
        }
    }
    Ok(mass)
}

/// Exact check that lower-tail planning picks the safe action with value
/// `c / (1 - gamma)` while mean-kernel planning takes the risky action and
/// carries `1 - mu` downside exposure across the admissible thresholds.
pub fn verify_prop_ec1(gamma: f64, c: f64, loss: f64, mu: f64, alpha: f64) -> Result<ExposureReport> {
    if !(alpha > 0.0 && alpha <= 1.0 - mu) {
        return Err(Error::Precondition(format!("need 0 < alpha <= 1 - mu, got alpha={alpha}, mu={mu}")));
    }
    let model = build_example_robust_necessity(gamma, c, loss, mu)?;
    let set = model.posterior.backup_set(&model.reward, gamma, alpha)?;
    let quantile = solve_optimal(&set, 1e-13, 100_000, None)?;
    let (mean_value, mean_policy) = optimal_value_exact(&model.mean_mdp()?)?;

    let expected_q = c / (1.0 - gamma);
    let expected_mean = gamma * (mu - (1.0 - mu) * loss) / (1.0 - gamma);
    let check = "exposure";
    let mut rows = vec![
        ReportRow::new(check, "quantile_value_s0", quantile.value[0], format!("{expected_q}"),
            (quantile.value[0] - expected_q).abs() <= EXACT_TOL),
        ReportRow::new(check, "mean_planner_value_s0", mean_value[0], format!("{expected_mean}"),
            (mean_value[0] - expected_mean).abs() <= EXACT_TOL),
        ReportRow::new(check, "quantile_action_s0", quantile.policy.action(0) as f64, "0 (safe)",
            quantile.policy.action(0) == SAFE),
        ReportRow::new(check, "mean_action_s0", mean_policy.action(0) as f64, "1 (risky)",
            mean_policy.action(0) == RISKY),
    ];

    let lo = (gamma - c) / (1.0 - gamma);
    let hi = (c + gamma * loss) / (1.0 - gamma);
    let mut grid = vec![lo + 1e-6];
    grid.extend((1..10).map(|i| lo + (hi - lo) * i as f64 / 10.0));
    grid.push(hi);
    let mut exposures = Vec::new();
    for threshold in grid {
        let mean_exp = downside_exposure(&model, &mean_policy, threshold)?;
        let q_exp = downside_exposure(&model, &quantile.policy, threshold)?;
        rows.push(ReportRow::new(check, format!("mean_exposure@{threshold}"), mean_exp,
            format!("{}", 1.0 - mu), (mean_exp - (1.0 - mu)).abs() <= 1e-12));
        rows.push(ReportRow::new(check, format!("quantile_exposure@{threshold}"), q_exp, "0", q_exp == 0.0));
        exposures.push((threshold, mean_exp, q_exp));
    }
    Ok(ExposureReport {
        quantile_value_s0: quantile.value[0],
        mean_planner_value_s0: mean_value[0],
        quantile_action_s0: quantile.policy.action(0),
        mean_action_s0: mean_policy.action(0),
        exposures,
        rows,
    })
}

pub const PROBE: usize = 1;
pub const COMMIT: usize = 2;

/// Five states `s0, y_G, y_B, g, b`; actions safe, probe, commit. Safe earns
/// `c` and stays. Probing from `s0` earns 0 and reveals the kernel by moving
/// to `y_G` or `y_B`; committing from either `y` earns 0 and moves to `g`
/// (good kernel) or `b` (bad). `g` pays 1 forever, `b` pays 0. Unlisted
/// state-action combinations behave like the safe action.
pub fn build_example_probing(gamma: f64, c: f64, mu: f64) -> Result<ExampleModel> {
    check_common(gamma, c, mu)?;
    let (ns, na) = (5, 3);
    let (s0, yg, yb, g, b) = (0, 1, 2, 3, 4);
    let idx = |s: usize, a: usize, n: usize| (s * na + a) * ns + n;
    let mut reward = vec![0.0; ns * na * ns];
    let mut base = vec![0.0; ns * na * ns];
    for a in 0..na {
        for s in [s0, yg, yb] {
            base[idx(s, a, s)] = 1.0;
            reward[idx(s, a, s)] = c;
        }
        base[idx(g, a, g)] = 1.0;
        reward[idx(g, a, g)] = 1.0;
        base[idx(b, a, b)] = 1.0;
    }
    let clear = |k: &mut Vec<f64>, s: usize, a: usize| {
        for n in 0..ns {
            k[idx(s, a, n)] = 0.0;
        }
    };
    for s in [s0, yg, yb] {
        let a = if s == s0 { PROBE } else { COMMIT };
        clear(&mut base, s, a);
        reward[idx(s, a, s)] = 0.0;
    }
    let mut good = base.clone();
    let mut bad = base;
    good[idx(s0, PROBE, yg)] = 1.0;
    bad[idx(s0, PROBE, yb)] = 1.0;
    for y in [yg, yb] {
        good[idx(y, COMMIT, g)] = 1.0;
        bad[idx(y, COMMIT, b)] = 1.0;
    }
    Ok(ExampleModel {
        posterior: AtomicPosterior::new(ns, na, vec![(good, mu), (bad, 1.0 - mu)])?,
        reward,
        gamma,
        labels: vec!["s0", "y_G", "y_B", "g", "b"],
    })
}

/// Outcome of simulating the re-planning loop on the probing example under
/// the good kernel.
#[derive(Debug, Clone)]
pub struct TrapReport {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub step_regret: Vec<f64>,
    pub total_regret: f64,
    pub closed_form_regret: f64,
    /// First step at which the agent probed, if ever.
    pub first_probe: Option<usize>,
    /// Whether the lower-tail hypothesis `alpha <= 1 - mu` holds.
    pub lower_tail: bool,
    pub rows: Vec<ReportRow>,
}

impl TrapReport {
    pub fn trap_holds(&self) -> bool {
        self.first_probe.is_none() && self.states.iter().all(|&s| s == 0)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

/// Re-plans with the exact quantile planner after every transition, updating
/// the two-atom posterior by Bayes' rule, for `horizon` steps from `s0`.
///
/// When `alpha <= 1 - mu` the check asserts the trap (always safe, never
/// leaves `s0`, regret `T (gamma^2 - c) / (1 - gamma)`). Otherwise it asserts
/// the opposite: the agent probes at the first step.
pub fn verify_prop_ec2(gamma: f64, c: f64, mu: f64, alpha: f64, horizon: usize) -> Result<TrapReport> {
    if !(c < gamma * gamma) {
        return Err(Error::Precondition(format!("need c < gamma^2, got c={c}, gamma={gamma}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Precondition(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let model = build_example_probing(gamma, c, mu)?;
    let truth = model.atom_mdp(0)?;
    let (v_star, _) = optimal_value_exact(&truth)?;
    let mut posterior = model.posterior.clone();
    let mut rng = stream_rng(0, 0);
    let (mut states, mut actions, mut step_regret) = (Vec::new(), Vec::new(), Vec::new());
    let mut state = 0;
    for _ in 0..horizon {
        let set = posterior.backup_set(&model.reward, gamma, alpha)?;
        let plan = solve_optimal(&set, 1e-13, 100_000, None)?;
        let v_pi = exact_policy_evaluation(&truth, &plan.policy)?;
        let action = plan.policy.action(state);
        step_regret.push(v_star[state] - v_pi[state]);
        states.push(state);
        actions.push(action);
        let (next, _) = sample_transition(&truth, state, action, &mut rng);
        posterior = posterior.update(state, action, next)?;
        state = next;
    }
    let total_regret: f64 = step_regret.iter().sum();
    let closed_form_regret = horizon as f64 * (gamma * gamma - c) / (1.0 - gamma);
    let first_probe = states.iter().zip(&actions).position(|(&s, &a)| s == 0 && a == PROBE);
    let lower_tail = alpha <= 1.0 - mu;
    let check = "trap";
    let trap = first_probe.is_none() && states.iter().all(|&s| s == 0) && actions.iter().all(|&a| a == SAFE);
    let rows = if lower_tail {
        let per_step = (gamma * gamma - c) / (1.0 - gamma);
        vec![
            ReportRow::new(check, "always_safe_at_s0", f64::from(u8::from(trap)), "1", trap),
            ReportRow::new(check, "per_step_regret_max_dev",
                step_regret.iter().map(|r| (r - per_step).abs()).fold(0.0, f64::max), "0",
                step_regret.iter().all(|r| (r - per_step).abs() <= EXACT_TOL)),
            ReportRow::new(check, "total_regret", total_regret, format!("{closed_form_regret}"),
                (total_regret - closed_form_regret).abs() <= EXACT_TOL * horizon.max(1) as f64),
        ]
    } else {
        vec![ReportRow::new(check, "probes_at_first_step", f64::from(u8::from(first_probe == Some(0))), "1",
            first_probe == Some(0))]
    };
    Ok(TrapReport { states, actions, step_regret, total_regret, closed_form_regret, first_probe, lower_tail, rows })
}

/// Per-`(N, alpha)` simulation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticRow {
    pub n: usize,
    pub alpha: f64,
    pub mean_gap: Vec<f64>,
    pub sd_gap: Vec<f64>,
    /// Leading-order mean shift, averaged over replications.
    pub predicted: Vec<f64>,
    pub reps: usize,
}

impl AsymptoticRow {
    pub fn std_error(&self) -> Vec<f64> {
        self.sd_gap.iter().map(|sd| sd / (self.reps as f64).sqrt()).collect()
    }

    pub fn t_stats(&self) -> Vec<f64> {
        self.mean_gap.iter().zip(self.std_error()).map(|(m, se)| m / se).collect()
    }
}

#[derive(Debug, Clone)]
pub struct AsymptoticReport {
    pub rows: Vec<AsymptoticRow>,
    pub checks: Vec<ReportRow>,
}

impl AsymptoticReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|r| r.passed)
    }

    pub fn row(&self, n: usize, alpha: f64) -> Option<&AsymptoticRow> {
        self.rows.iter().find(|r| r.n == n && r.alpha == alpha)
    }
}

fn mean_and_sd(samples: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|i| samples.iter().map(|x| x[i]).sum::<f64>() / n).collect();
    let sd = (0..dim)
        .map(|i| (samples.iter().map(|x| (x[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
        .collect();
    (mean, sd)
}

/// Settings for the asymptotic-normality simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticStudy {
    pub alphas: Vec<f64>,
    pub n_list: Vec<usize>,
    pub reps: usize,
    /// Posterior rows drawn per pair for the quantile evaluation.
    pub n_samples: usize,
    pub tol: f64,
    pub seed: u64,
}

struct RepOutcome {
    gaps: Vec<Vec<f64>>,
    predicted: Vec<Vec<f64>>,
}

fn asymptotic_rep(
    mdp: &TabularMdp,
    policy: &Policy,
    v_pi: &ValueFn,
    study: &AsymptoticStudy,
    n: usize,
    rep: usize,
) -> Result<RepOutcome> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let seed = study.seed.wrapping_mul(1_000_003).wrapping_add(n as u64);
    let mut rng = stream_rng(seed, rep as u64);
    let mut post = DirichletPosterior::new_uniform_prior(ns, na)?;
    let mut state = mdp.initial_state();
    for _ in 0..n {
        let a = policy.action(state);
        let (next, _) = sample_transition(mdp, state, a, &mut rng);
        post.observe(state, a, next);
        state = next;
    }
    let freq: Vec<f64> = (0..ns).map(|s| post.visit_count(s, policy.action(s)) as f64 / n as f64).collect();
    if let Some(s) = freq.iter().position(|&f| f == 0.0) {
        return Err(Error::Precondition(format!(
            "state {s} never visited in {n} on-policy steps; every state needs a positive visit frequency"
        )));
    }
    let mut sizes = vec![0; ns * na];
    for s in 0..ns {
        sizes[s * na + policy.action(s)] = study.n_samples;
    }
    let base = SampledBackupSet::draw_sized(&post, &vec![0.5; ns * na], &sizes, mdp.rewards(), gamma, &mut rng)?;

    // Leading-order shift (I - gamma P_pi)^{-1} gamma z sigma / sqrt(N).
    let (_, p_pi) = crate::mdp::policy_system(mdp, policy);
    let sigma: Vec<f64> = (0..ns)
        .map(|s| {
            let row = mdp.row(s, policy.action(s));
            let m: f64 = row.iter().zip(&v_pi.0).map(|(p, v)| p * v).sum();
            let var: f64 = row.iter().zip(&v_pi.0).map(|(p, v)| p * (v - m).powi(2)).sum();
            (var / freq[s]).sqrt()
        })
        .collect();
    let mut system = vec![0.0; ns * ns];
    for i in 0..ns {
        for j in 0..ns {
            system[i * ns + j] = f64::from(u8::from(i == j)) - gamma * p_pi[i * ns + j];
        }
    }
    let mut gaps = Vec::new();
    let mut predicted = Vec::new();
    for &alpha in &study.alphas {
        let set = base.with_alphas(&vec![alpha; ns * na])?;
        let eval = solve_policy(&set, policy, study.tol, 1_000_000, Some(v_pi))?;
        gaps.push(eval.value.0.iter().zip(&v_pi.0).map(|(v, t)| v - t).collect());
        let z = std_normal_quantile(alpha)?;
        let rhs: Vec<f64> = sigma.iter().map(|sg| gamma * z * sg / (n as f64).sqrt()).collect();
        predicted.push(solve_linear(system.clone(), rhs, ns)?);
    }
    Ok(RepOutcome { gaps, predicted })
}

/// Simulates the gap between the quantile policy value under the posterior
/// from an on-policy trajectory of length `N` and the true policy value.
///
/// Checks, per level: lower levels give negative mean gaps, upper levels
/// positive, the median level a gap within 3 standard errors of zero; the
/// magnitude shrinks like `1/sqrt(N)` (ratio window `[0.7, 1.5]` times
/// `sqrt(N_1/N_2)`); at the largest `N` the leading-order prediction lies
/// within 3 standard errors of the empirical mean; the gap spread at the
/// extreme levels agrees within 25%.
pub fn verify_theorem1(mdp: &TabularMdp, policy: &Policy, study: &AsymptoticStudy) -> Result<AsymptoticReport> {
    if !mdp.is_valid_policy(policy) {
        return Err(Error::InvalidArgument("policy does not fit the MDP".into()));
    }
    if study.reps < 2 || study.n_list.is_empty() || study.alphas.is_empty() {
        return Err(Error::InvalidArgument("need at least 2 replications, one N and one level".into()));
    }
    if study.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("N values must be strictly increasing".into()));
    }
    let ns = mdp.n_states();
    let v_pi = exact_policy_evaluation(mdp, policy)?;
    let mut rows = Vec::new();
    for &n in &study.n_list {
        let outcomes: Vec<RepOutcome> = (0..study.reps)
            .into_par_iter()
            .map(|rep| asymptotic_rep(mdp, policy, &v_pi, study, n, rep))
            .collect::<Result<_>>()?;
        for (ai, &alpha) in study.alphas.iter().enumerate() {
            let gaps: Vec<Vec<f64>> = outcomes.iter().map(|o| o.gaps[ai].clone()).collect();
            let preds: Vec<Vec<f64>> = outcomes.iter().map(|o| o.predicted[ai].clone()).collect();
            let (mean_gap, sd_gap) = mean_and_sd(&gaps, ns);
            let (predicted, _) = mean_and_sd(&preds, ns);
            rows.push(AsymptoticRow { n, alpha, mean_gap, sd_gap, predicted, reps: study.reps });
        }
    }

    let check = "asymptotic";
    let mut checks = Vec::new();
    for row in &rows {
        let t = row.t_stats();
        let label = format!("N={} alpha={}", row.n, row.alpha);
        if row.alpha < 0.5 {
            checks.push(ReportRow::new(check, format!("{label} max_gap"),
                row.mean_gap.iter().copied().fold(f64::NEG_INFINITY, f64::max), "< 0",
                row.mean_gap.iter().all(|g| *g < 0.0)));
        } else if row.alpha > 0.5 {
            checks.push(ReportRow::new(check, format!("{label} min_gap"),
                row.mean_gap.iter().copied().fold(f64::INFINITY, f64::min), "> 0",
                row.mean_gap.iter().all(|g| *g > 0.0)));
        } else {
            let worst = t.iter().map(|x| x.abs()).fold(0.0, f64::max);
            checks.push(ReportRow::new(check, format!("{label} max_abs_t"), worst, "< 3", worst < 3.0));
        }
    }
    let magnitude = |r: &AsymptoticRow| r.mean_gap.iter().map(|g| g.abs()).sum::<f64>() / ns as f64;
    for &alpha in study.alphas.iter().filter(|a| **a != 0.5) {
        for w in study.n_list.windows(2) {
            let (lo, hi) = (study_row(&rows, w[0], alpha), study_row(&rows, w[1], alpha));
            let ratio = magnitude(hi) / magnitude(lo);
            let target = (w[0] as f64 / w[1] as f64).sqrt();
            checks.push(ReportRow::new(check, format!("alpha={alpha} ratio N={}->{}", w[0], w[1]), ratio,
                format!("[{}; {}]", 0.7 * target, 1.5 * target),
                ratio >= 0.7 * target && ratio <= 1.5 * target));
        }
    }
    let n_max = *study.n_list.last().expect("nonempty");
    for &alpha in &study.alphas {
        let row = study_row(&rows, n_max, alpha);
        let worst = row
            .mean_gap
            .iter()
            .zip(&row.predicted)
            .zip(row.std_error())
            .map(|((m, p), se)| (m - p).abs() / se)
            .fold(0.0, f64::max);
        checks.push(ReportRow::new(check, format!("N={n_max} alpha={alpha} prediction_z"), worst, "< 3", worst < 3.0));
    }
    let lo_alpha = study.alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_alpha = study.alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo_alpha < hi_alpha {
        let (a, b) = (study_row(&rows, n_max, lo_alpha), study_row(&rows, n_max, hi_alpha));
        let worst = a.sd_gap.iter().zip(&b.sd_gap).map(|(x, y)| (x / y - 1.0).abs()).fold(0.0, f64::max);
        checks.push(ReportRow::new(check, format!("N={n_max} sd_ratio alpha={lo_alpha}/{hi_alpha} max_dev"),
            worst, "<= 0.25", worst <= 0.25));
    }
    Ok(AsymptoticReport { rows, checks })
}

fn study_row(rows: &[AsymptoticRow], n: usize, alpha: f64) -> &AsymptoticRow {
    rows.iter().find(|r| r.n == n && r.alpha == alpha).expect("row computed for every (N, alpha)")
}

/// The fixed 3-state ergodic chain used for the asymptotic study: rewards
/// depend only on the state, action 0 has near-uniform rows.
pub fn asymptotic_test_mdp(gamma: f64) -> Result<TabularMdp> {
    let (ns, na) = (3, 2);
    let rows0 = [[0.4, 0.3, 0.3], [0.3, 0.4, 0.3], [0.3, 0.3, 0.4]];
    let rows1 = [[0.1, 0.8, 0.1], [0.1, 0.1, 0.8], [0.8, 0.1, 0.1]];
    let state_reward = [0.0, 0.5, 1.0];
    let mut kernel = Vec::with_capacity(ns * na * ns);
    let mut reward = Vec::with_capacity(ns * na * ns);
    for s in 0..ns {
        for rows in [&rows0, &rows1] {
            kernel.extend_from_slice(&rows[s]);
            reward.extend_from_slice(&[state_reward[s]; 3]);
        }
    }
    TabularMdp::new(ns, na, gamma, reward, kernel)
}

/// Coverage of the nested lower bound.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub alpha: f64,
    pub alpha_bar: f64,
    pub lower_bound: ValueFn,
    pub coverage: f64,
    pub threshold: f64,
    pub m_outer: usize,
    pub rows: Vec<ReportRow>,
}

impl CoverageReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

/// Posterior from a trajectory of `n_traj` uniformly random actions.
pub fn trajectory_posterior<R: Rng + ?Sized>(mdp: &TabularMdp, n_traj: usize, rng: &mut R) -> Result<DirichletPosterior> {
    let mut post = DirichletPosterior::new_uniform_prior(mdp.n_states(), mdp.n_actions())?;
    let actions: Vec<usize> = (0..mdp.n_actions()).collect();
    let mut state = mdp.initial_state();
    for _ in 0..n_traj {
        let a = *actions.choose(rng).expect("at least one action");
        let (next, _) = sample_transition(mdp, state, a, rng);
        post.observe(state, a, next);
        state = next;
    }
    Ok(post)
}

/// Draws `m_outer` kernels from `post` and measures how often the true
/// policy value dominates the nested quantile value at level
/// `1 - (1 - alpha)^(1/S)` simultaneously at every state. Passes when the
/// coverage is at least `1 - alpha - 3 sqrt(alpha (1 - alpha) / M)`.
pub fn verify_prop1<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    post: &DirichletPosterior,
    alpha: f64,
    m_outer: usize,
    planner: &PlannerConfig,
    rng: &mut R,
) -> Result<CoverageReport> {
    if m_outer == 0 {
        return Err(Error::InvalidArgument("need at least one outer kernel".into()));
    }
    let ns = mdp.n_states();
    let level = alpha_bar(alpha, ns)?;
    let alphas = vec![level; ns * mdp.n_actions()];
    let eval = brmdp_policy_evaluation(post, &alphas, policy, mdp.rewards(), mdp.gamma(), planner, rng)?;
    let bound = eval.value;
    let mut covered = 0usize;
    for _ in 0..m_outer {
        let sampled = mdp.with_kernel(post.sample_full_kernel(rng))?;
        let v = exact_policy_evaluation(&sampled, policy)?;
        if v.0.iter().zip(&bound.0).all(|(x, b)| x >= b) {
            covered += 1;
        }
    }
    let coverage = covered as f64 / m_outer as f64;
    let threshold = 1.0 - alpha - 3.0 * (alpha * (1.0 - alpha) / m_outer as f64).sqrt();
    let rows = vec![
        ReportRow::new("coverage", "alpha_bar", level, format!("1-(1-{alpha})^(1/{ns})"), true),
        ReportRow::new("coverage", "simultaneous_coverage", coverage, format!(">= {threshold}"), coverage >= threshold),
        ReportRow::new("coverage", "evaluation_converged", f64::from(u8::from(eval.converged)), "1", eval.converged),
    ];
    Ok(CoverageReport { alpha, alpha_bar: level, lower_bound: bound, coverage, threshold, m_outer, rows })
}

/// A random MDP with Dirichlet(1) rows, uniform rewards and a uniformly
/// random policy.
pub fn random_instance<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<(TabularMdp, Policy)> {
    let kernel = DirichletPosterior::new_uniform_prior(n_states, n_actions)?.sample_full_kernel(rng);
    let reward = (0..n_states * n_actions * n_states).map(|_| rng.random::<f64>()).collect();
    let mdp = TabularMdp::new(n_states, n_actions, gamma, reward, kernel)?;
    let policy = Policy((0..n_states).map(|_| rng.random_range(0..n_actions)).collect());
    Ok((mdp, policy))
}
