//! Experiment orchestration: configuration, seeded runs over a worker pool,
//! per-run CSV output, seed aggregation, and the delta-sensitivity sweep.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brmdp::PlannerConfig;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::metrics::{
    aggregate, moving_average_reward, occupancy, quantile_value_series, robust_regret_series, true_regret_series,
};
use crate::online::{run_episode_stream, stream_rng, AgentKind, RunConfig, RunLog};
use crate::schedule::ScheduleParams;

/// Stream labels for metric-side randomness, disjoint from the run streams.
pub const STREAM_ROBUST: u64 = 5;
pub const STREAM_DIAGNOSTIC: u64 = 6;

pub const STEPS_HEADER: &str = "run_id,t,k,state,action,next_state,reward,restart";
pub const PLANS_HEADER: &str = "run_id,k,t_k,iterations,converged,policy";
pub const METRICS_HEADER: &str =
    "run_id,t,cum_true_regret,cum_robust_regret_raw,cum_robust_regret_clipped,moving_avg_reward";
pub const QUANTILE_HEADER: &str = "run_id,t,v_q_hat";
pub const OCCUPANCY_HEADER: &str = "run_id,state,mass";
pub const AGGREGATE_HEADER: &str = "algo,t,metric,mean,ci_half_width,n_runs";
pub const MANIFEST_HEADER: &str = "run_id,algo,seed_index,run_seed,status,nonconverged_plans,message";
pub const SWEEP_HEADER: &str = "delta,final_regret_mean,ci_half_width,n_runs,reduction_pct";

/// Formats a float with 9 significant digits, `%g` style.
pub fn fmt_float(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    let fixed = format!("{v:.decimals$}");
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

/// Everything needed to reproduce an experiment. Serializes to a flat
/// `key = value` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub theta: f64,
    pub algos: Vec<String>,
    pub horizon: u64,
    pub gamma: f64,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub delta: f64,
    pub alpha_floor: f64,
    pub c_samples: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub window: usize,
    pub diag_every: u64,
    pub diag_m: usize,
    /// Level of the posterior quantile value diagnostic.
    pub diag_alpha: f64,
    /// Whether to compute robust regret (doubles the planning work).
    pub robust_regret: bool,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: "riverswim-6".into(),
            theta: 0.7,
            algos: vec!["aq".into(), "psrl".into()],
            horizon: 2000,
            gamma: 0.9,
            n_seeds: 20,
            base_seed: 0,
            delta: 5.0,
            alpha_floor: 0.2,
            c_samples: 150.0,
            tol: 1e-8,
            max_iter: 10_000,
            window: 100,
            diag_every: 200,
            diag_m: 147,
            diag_alpha: 0.1,
            robust_regret: true,
            out_dir: PathBuf::from("results"),
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err("file", e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        EnvSpec::parse(&self.env, self.theta).map_err(|e| config_err("env", e.to_string()))
    }

    pub fn schedule(&self) -> Result<ScheduleParams> {
        ScheduleParams::new(self.delta, self.alpha_floor).map_err(|e| config_err("delta/alpha_floor", e.to_string()))
    }

    pub fn planner(&self) -> PlannerConfig {
        PlannerConfig { c_samples: self.c_samples, tol: self.tol, max_iter: self.max_iter, ..PlannerConfig::default() }
    }

    /// Parses one algorithm name: `aq`, `psrl`, or `brmdp-<alpha>`.
    pub fn parse_algo(&self, name: &str) -> Result<AgentKind> {
        match name {
            "aq" | "aq_brmdp" | "aq-brmdp" => Ok(AgentKind::AqBrmdp(self.schedule()?)),
            "psrl" => Ok(AgentKind::Psrl),
            _ => {
                let level = name
                    .strip_prefix("brmdp-")
                    .or_else(|| name.strip_prefix("brmdp_"))
                    .ok_or_else(|| config_err("algos", format!("unknown algorithm `{name}`")))?;
                let alpha: f64 = level
                    .parse()
                    .map_err(|_| config_err("algos", format!("bad quantile level in `{name}`")))?;
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(config_err("algos", format!("quantile level in `{name}` must lie in (0,1)")));
                }
                Ok(AgentKind::FixedBrmdp(alpha))
            }
        }
    }

    pub fn agents(&self) -> Result<Vec<AgentKind>> {
        self.algos.iter().map(|a| self.parse_algo(a)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.env_spec()?;
        self.schedule()?;
        if self.algos.is_empty() {
            return Err(config_err("algos", "at least one algorithm required"));
        }
        self.agents()?;
        let checks: [(&str, bool, &str); 10] = [
            ("horizon", self.horizon >= 1, "must be at least 1"),
            ("gamma", self.gamma > 0.0 && self.gamma < 1.0, "must lie in (0,1)"),
            ("n_seeds", self.n_seeds >= 1, "must be at least 1"),
            ("c_samples", self.c_samples > 0.0, "must be positive"),
            ("tol", self.tol > 0.0, "must be positive"),
            ("max_iter", self.max_iter >= 1, "must be at least 1"),
            ("window", self.window >= 1, "must be at least 1"),
            ("diag_every", self.diag_every >= 1, "must be at least 1"),
            ("diag_m", self.diag_m >= 1, "must be at least 1"),
            ("diag_alpha", self.diag_alpha > 0.0 && self.diag_alpha < 1.0, "must lie in (0,1)"),
        ];
        for (field, ok, message) in checks {
            if !ok {
                return Err(config_err(field, message));
            }
        }
        if self.n_seeds > 10_000 {
            return Err(config_err("n_seeds", "at most 10000 seeds keep run seeds collision-free"));
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<TabularMdp> {
        self.env_spec()?.build(self.gamma)
    }
}

/// `base_seed * 10^6 + algo_index * 10^4 + seed_index`.
pub fn run_seed(base_seed: u64, algo_index: usize, seed_index: usize) -> u64 {
    base_seed * 1_000_000 + algo_index as u64 * 10_000 + seed_index as u64
}

/// Metrics computed for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run_id: String,
    pub algo: String,
    pub seed_index: usize,
    pub run_seed: u64,
    pub log: RunLog,
    pub cum_true_regret: Vec<f64>,
    pub cum_robust_regret_raw: Option<Vec<f64>>,
    pub cum_robust_regret_clipped: Option<Vec<f64>>,
    /// Entry `i` belongs to step `t = window + i`.
    pub moving_avg_reward: Vec<f64>,
    pub quantile_values: Vec<(u64, f64)>,
    pub occupancy: Vec<f64>,
    pub nonconverged_plans: usize,
}

impl RunOutcome {
    pub fn final_true_regret(&self) -> f64 {
        *self.cum_true_regret.last().expect("runs have at least one step")
    }

    pub fn quantile_value_at(&self, t: u64) -> Option<f64> {
        self.quantile_values.iter().find(|(tt, _)| *tt == t).map(|(_, v)| *v)
    }
}

/// Runs one (algorithm, seed) pair and computes its metrics.
pub fn execute_run(
    config: &ExperimentConfig,
    env: &TabularMdp,
    agent: &AgentKind,
    algo_index: usize,
    seed_index: usize,
) -> Result<RunOutcome> {
    let seed = run_seed(config.base_seed, algo_index, seed_index);
    let planner = config.planner();
    let log = run_episode_stream(env, agent, &RunConfig { horizon: config.horizon, planner, seed })?;
    let cum_true_regret = true_regret_series(env, &log)?;
    let robust = if config.robust_regret {
        let mut rng = stream_rng(seed, STREAM_ROBUST);
        Some(robust_regret_series(env, &log, config.alpha_floor, &planner, &mut rng)?)
    } else {
        None
    };
    let moving_avg_reward = moving_average_reward(&log.rewards(), config.window)?;
    let mut rng = stream_rng(seed, STREAM_DIAGNOSTIC);
    let quantile_values = quantile_value_series(env, &log, config.diag_every, config.diag_alpha, config.diag_m, &mut rng)?;
    let nonconverged_plans =
        log.plans.iter().filter(|p| !p.converged).count() + robust.as_ref().map_or(0, |r| r.nonconverged_episodes);
    let algo = agent.label();
    Ok(RunOutcome {
        run_id: format!("{algo}_seed{seed_index}"),
        algo,
        seed_index,
        run_seed: seed,
        occupancy: occupancy(&log),
        log,
        cum_true_regret,
        cum_robust_regret_raw: robust.as_ref().map(|r| r.cumulative_raw.clone()),
        cum_robust_regret_clipped: robust.map(|r| r.cumulative_clipped),
        moving_avg_reward,
        quantile_values,
        nonconverged_plans,
    })
}

/// Result of one (algorithm, seed) task: metrics or the failure message.
pub type TaskResult = (String, usize, u64, Result<RunOutcome>);

/// Runs every (algorithm, seed) pair on a pool of `jobs` workers. Results
/// come back in (algorithm, seed) order regardless of scheduling.
pub fn execute_all(config: &ExperimentConfig, jobs: usize) -> Result<Vec<TaskResult>> {
    config.validate()?;
    let env = config.build_env()?;
    let agents = config.agents()?;
    let tasks: Vec<(usize, &AgentKind, usize)> = agents
        .iter()
        .enumerate()
        .flat_map(|(ai, agent)| (0..config.n_seeds).map(move |si| (ai, agent, si)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .map(|&(ai, agent, si)| {
                let outcome = execute_run(config, &env, agent, ai, si);
                (agent.label(), si, run_seed(config.base_seed, ai, si), outcome)
            })
            .collect()
    }))
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// Writes the per-run CSV files into `dir`, assembling them in a sibling
/// temporary directory that is renamed into place.
pub fn write_run(dir: &Path, run: &RunOutcome, window: usize) -> Result<()> {
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let id = &run.run_id;

    let mut steps = format!("{STEPS_HEADER}\n");
    for s in &run.log.steps {
        steps.push_str(&format!(
            "{id},{},{},{},{},{},{},{}\n",
            s.t,
            s.k,
            s.state,
            s.action,
            s.next_state,
            fmt_float(s.reward),
            u8::from(s.restart)
        ));
    }
    fs::write(tmp.join("steps.csv"), steps)?;

    let mut plans = format!("{PLANS_HEADER}\n");
    for p in &run.log.plans {
        let policy: Vec<String> = p.policy.0.iter().map(|a| a.to_string()).collect();
        plans.push_str(&format!(
            "{id},{},{},{},{},{}\n",
            p.k,
            p.t_k,
            p.iterations,
            u8::from(p.converged),
            policy.join(";")
        ));
    }
    fs::write(tmp.join("plans.csv"), plans)?;

    let mut metrics = format!("{METRICS_HEADER}\n");
    for (i, regret) in run.cum_true_regret.iter().enumerate() {
        let t = i + 1;
        let ma = (t >= window).then(|| run.moving_avg_reward[t - window]);
        metrics.push_str(&format!(
            "{id},{t},{},{},{},{}\n",
            fmt_float(*regret),
            opt_cell(run.cum_robust_regret_raw.as_ref().map(|r| r[i])),
            opt_cell(run.cum_robust_regret_clipped.as_ref().map(|r| r[i])),
            opt_cell(ma)
        ));
    }
    fs::write(tmp.join("metrics.csv"), metrics)?;

    let mut quantile = format!("{QUANTILE_HEADER}\n");
    for (t, v) in &run.quantile_values {
        quantile.push_str(&format!("{id},{t},{}\n", fmt_float(*v)));
    }
    fs::write(tmp.join("quantile_value.csv"), quantile)?;

    let mut occ = format!("{OCCUPANCY_HEADER}\n");
    for (s, m) in run.occupancy.iter().enumerate() {
        occ.push_str(&format!("{id},{s},{}\n", fmt_float(*m)));
    }
    fs::write(tmp.join("occupancy.csv"), occ)?;

    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

/// Builds `aggregate.csv` from the successful runs.
pub fn aggregate_csv(runs: &[&RunOutcome], algos: &[String], window: usize) -> Result<String> {
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for algo in algos {
        let group: Vec<&&RunOutcome> = runs.iter().filter(|r| &r.algo == algo).collect();
        if group.is_empty() {
            continue;
        }
        let mut emit = |metric: &str, times: Vec<u64>, series: Vec<Vec<f64>>| -> Result<()> {
            let agg = aggregate(&series)?;
            for (i, t) in times.iter().enumerate() {
                let ci = agg.half_width.as_ref().map(|h| fmt_float(h[i])).unwrap_or_default();
                out.push_str(&format!("{algo},{t},{metric},{},{ci},{}\n", fmt_float(agg.mean[i]), agg.n_runs));
            }
            Ok(())
        };
        let horizon = group[0].cum_true_regret.len() as u64;
        let all_t: Vec<u64> = (1..=horizon).collect();
        emit("cum_true_regret", all_t.clone(), group.iter().map(|r| r.cum_true_regret.clone()).collect())?;
        if group.iter().all(|r| r.cum_robust_regret_raw.is_some()) {
            emit("cum_robust_regret_raw", all_t.clone(),
                group.iter().map(|r| r.cum_robust_regret_raw.clone().expect("checked")).collect())?;
            emit("cum_robust_regret_clipped", all_t,
                group.iter().map(|r| r.cum_robust_regret_clipped.clone().expect("checked")).collect())?;
        }
        let ma_t: Vec<u64> = (window as u64..=horizon).collect();
        if !ma_t.is_empty() {
            emit("moving_avg_reward", ma_t, group.iter().map(|r| r.moving_avg_reward.clone()).collect())?;
        }
        let q_t: Vec<u64> = group[0].quantile_values.iter().map(|(t, _)| *t).collect();
        if !q_t.is_empty() {
            emit("v_q_hat", q_t, group.iter().map(|r| r.quantile_values.iter().map(|(_, v)| *v).collect()).collect())?;
        }
    }
    Ok(out)
}

/// Summary of a finished experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub out_dir: PathBuf,
    pub succeeded: usize,
    pub failed: Vec<(String, String)>,
}

/// Runs the experiment and writes `runs/<run_id>/*.csv`, `aggregate.csv`,
/// `manifest.csv` and `config.echo` under the output directory.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentSummary> {
    let results = execute_all(config, jobs)?;
    let out = &config.out_dir;
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    write_atomic(&out.join("config.echo"), &config.to_toml())?;

    let mut manifest = format!("{MANIFEST_HEADER}\n");
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (algo, seed_index, seed, result) in &results {
        let run_id = format!("{algo}_seed{seed_index}");
        let written = result.as_ref().map_err(|e| e.to_string()).and_then(|run| {
            write_run(&runs_dir.join(&run.run_id), run, config.window).map_err(|e| e.to_string())?;
            Ok(run)
        });
        match written {
            Ok(run) => {
                manifest.push_str(&format!("{run_id},{algo},{seed_index},{seed},ok,{},\n", run.nonconverged_plans));
                ok.push(run);
            }
            Err(message) => {
                let clean = message.replace([',', '\n'], " ");
                manifest.push_str(&format!("{run_id},{algo},{seed_index},{seed},failed,,{clean}\n"));
                failed.push((run_id, message));
            }
        }
    }
    write_atomic(&out.join("manifest.csv"), &manifest)?;
    let labels: Vec<String> = config.agents()?.iter().map(|a| a.label()).collect();
    write_atomic(&out.join("aggregate.csv"), &aggregate_csv(&ok, &labels, config.window)?)?;
    Ok(ExperimentSummary { out_dir: out.clone(), succeeded: ok.len(), failed })
}

/// One row of the delta-sensitivity table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub final_regret_mean: f64,
    pub ci_half_width: Option<f64>,
    pub n_runs: usize,
    /// Reduction of the mean final regret relative to the first delta, in %.
    pub reduction_pct: f64,
}

/// Runs the adaptive agent for each `delta` on the same seeds and tabulates
/// the final cumulative true regret.
pub fn sweep_delta(config: &ExperimentConfig, deltas: &[f64], jobs: usize) -> Result<Vec<SweepRow>> {
    if deltas.is_empty() {
        return Err(config_err("deltas", "at least one value required"));
    }
    let mut rows: Vec<SweepRow> = Vec::new();
    for &delta in deltas {
        let cfg = ExperimentConfig { delta, algos: vec!["aq".into()], robust_regret: false, ..config.clone() };
        let results = execute_all(&cfg, jobs)?;
        let finals: Vec<Vec<f64>> = results
            .into_iter()
            .map(|(_, _, _, r)| r.map(|run| vec![run.final_true_regret()]))
            .collect::<Result<_>>()?;
        let agg = aggregate(&finals)?;
        let mean = agg.mean[0];
        let reduction_pct = rows.first().map_or(0.0, |base| 100.0 * (base.final_regret_mean - mean) / base.final_regret_mean);
        rows.push(SweepRow {
            delta,
            final_regret_mean: mean,
            ci_half_width: agg.half_width.map(|h| h[0]),
            n_runs: agg.n_runs,
            reduction_pct,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.2}\n",
            fmt_float(r.delta),
            fmt_float(r.final_regret_mean),
            opt_cell(r.ci_half_width),
            r.n_runs,
            r.reduction_pct
        ));
    }
    out
}
