//! Command-line front end: experiment runs, the delta sweep and the
//! numerical theory checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aqbrmdp::brmdp::PlannerConfig;
use aqbrmdp::experiment::{fmt_float, run_experiment, sweep_csv, sweep_delta, ExperimentConfig};
use aqbrmdp::metrics::alpha_bar;
use aqbrmdp::online::stream_rng;
use aqbrmdp::theory::{
    asymptotic_test_mdp, random_instance, report_csv, trajectory_posterior, verify_prop1, verify_prop_ec1,
    verify_prop_ec2, verify_theorem1, AsymptoticStudy, ReportRow,
};
use aqbrmdp::{Policy, Result};

const OUT_ENV: &str = "AQBRMDP_OUT";

#[derive(Parser)]
#[command(name = "aqbrmdp", version, about = "Adaptive-quantile Bayesian risk-aware RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) pair and write per-run and aggregate CSVs.
    Run(ExperimentArgs),
    /// Run the adaptive agent for several delta values and tabulate final regret.
    SweepDelta {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated delta values; reductions are relative to the first.
        #[arg(long, value_delimiter = ',', required = true)]
        deltas: Vec<f64>,
    },
    /// Numerical checks of the analytic guarantees.
    #[command(subcommand)]
    Verify(VerifyCommand),
}

/// Flags shared by `run` and `sweep-delta`; each overrides the config file.
#[derive(Args)]
struct ExperimentArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// riverswim-N, frozenlake, frozenlake-risky or custom:<path>.
    #[arg(long)]
    env: Option<String>,
    /// Success probability of the risky FrozenLake shortcut.
    #[arg(long)]
    theta: Option<f64>,
    /// aq, psrl or brmdp-<alpha>; repeatable.
    #[arg(long = "algo")]
    algos: Vec<String>,
    #[arg(long = "T")]
    horizon: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha_floor: Option<f64>,
    #[arg(long)]
    c_samples: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Moving-average reward window.
    #[arg(long)]
    window: Option<usize>,
    /// Cadence of the posterior quantile value diagnostic.
    #[arg(long)]
    diag_every: Option<u64>,
    /// Kernels drawn per quantile value estimate.
    #[arg(long = "diag-M")]
    diag_m: Option<usize>,
    /// Skip the robust regret computation.
    #[arg(long)]
    no_robust: bool,
    /// Output directory; the AQBRMDP_OUT environment variable takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: number of processors).
    #[arg(long)]
    jobs: Option<usize>,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => { $(if let Some(v) = &self.$flag { cfg.$field = v.clone(); })* };
        }
        set!(env => env, theta => theta, horizon => horizon, gamma => gamma, seeds => n_seeds,
            base_seed => base_seed, delta => delta, alpha_floor => alpha_floor, c_samples => c_samples,
            tol => tol, max_iter => max_iter, window => window, diag_every => diag_every, diag_m => diag_m,
            out => out_dir);
        if !self.algos.is_empty() {
            cfg.algos = self.algos.clone();
        }
        if self.no_robust {
            cfg.robust_regret = false;
        }
        if let Some(dir) = std::env::var_os(OUT_ENV) {
            cfg.out_dir = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn jobs(&self) -> usize {
        self.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Asymptotic normality of the quantile value gap.
    Thm1 {
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long = "alpha", value_delimiter = ',', default_values_t = [0.1, 0.5, 0.9])]
        alphas: Vec<f64>,
        #[arg(long = "N", value_delimiter = ',', default_values_t = [2500, 10000])]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        /// Posterior rows drawn per pair.
        #[arg(long, default_value_t = 4000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simultaneous coverage of the nested quantile lower bound.
    Prop1 {
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        /// Length of the random-action trajectory behind the posterior.
        #[arg(long, default_value_t = 200)]
        traj: usize,
        #[arg(long = "M", default_value_t = 10_000)]
        m_outer: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact downside-exposure example.
    Ec1 {
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 0.3)]
        c: f64,
        #[arg(long = "L", default_value_t = 1.0)]
        loss: f64,
        #[arg(long, default_value_t = 0.7)]
        mu: f64,
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact self-confirming trap example.
    Ec2 {
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 0.5)]
        c: f64,
        #[arg(long, default_value_t = 0.7)]
        mu: f64,
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        #[arg(long = "T", default_value_t = 100)]
        horizon: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_rows(rows: &[ReportRow]) {
    for r in rows {
        let mark = if r.passed { "ok  " } else { "FAIL" };
        println!("  [{mark}] {} = {} (expected {})", r.item, fmt_float(r.value), r.expected);
    }
}

fn write_report(out: &Option<PathBuf>, rows: &[ReportRow]) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("theory_report.csv"), report_csv(rows))?;
    }
    Ok(())
}

fn verify(cmd: &VerifyCommand) -> Result<bool> {
    let (rows, out) = match cmd {
        VerifyCommand::Ec1 { gamma, c, loss, mu, alpha, out } => {
            let report = verify_prop_ec1(*gamma, *c, *loss, *mu, *alpha)?;
            println!("V_quantile(s0)={}", fmt_float(report.quantile_value_s0));
            println!("V_mean_planner(s0)={}", fmt_float(report.mean_planner_value_s0));
            if let Some((threshold, mean_exp, q_exp)) = report.exposures.first() {
                println!("exposure@{}: mean={} quantile={}", fmt_float(*threshold), fmt_float(*mean_exp), fmt_float(*q_exp));
            }
            (report.rows, out)
        }
        VerifyCommand::Ec2 { gamma, c, mu, alpha, horizon, out } => {
            let report = verify_prop_ec2(*gamma, *c, *mu, *alpha, *horizon)?;
            println!("R_T={:.1}", report.total_regret);
            println!("closed_form={:.1}", report.closed_form_regret);
            match report.first_probe {
                Some(t) => println!("first probe at t={t}"),
                None => println!("never probed"),
            }
            (report.rows, out)
        }
        VerifyCommand::Prop1 { alpha, states, actions, gamma, traj, m_outer, seed, out } => {
            println!("ᾱ={}", fmt_float(alpha_bar(*alpha, *states)?));
            let mut rng = stream_rng(*seed, 0);
            let (mdp, policy) = random_instance(*states, *actions, *gamma, &mut rng)?;
            let post = trajectory_posterior(&mdp, *traj, &mut rng)?;
            let report = verify_prop1(&mdp, &policy, &post, *alpha, *m_outer, &PlannerConfig::default(), &mut rng)?;
            println!("coverage={} threshold={}", fmt_float(report.coverage), fmt_float(report.threshold));
            (report.rows, out)
        }
        VerifyCommand::Thm1 { gamma, alphas, n_list, reps, samples, seed, out } => {
            let mdp = asymptotic_test_mdp(*gamma)?;
            let policy = Policy::constant(mdp.n_states(), 0);
            let study = AsymptoticStudy {
                alphas: alphas.clone(),
                n_list: n_list.clone(),
                reps: *reps,
                n_samples: *samples,
                tol: 1e-10,
                seed: *seed,
            };
            let report = verify_theorem1(&mdp, &policy, &study)?;
            for row in &report.rows {
                let fmt = |v: &[f64]| v.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(" ");
                println!("N={} alpha={} mean_gap=[{}] predicted=[{}]", row.n, row.alpha, fmt(&row.mean_gap), fmt(&row.predicted));
            }
            (report.checks, out)
        }
    };
    print_rows(&rows);
    write_report(out, &rows)?;
    Ok(rows.iter().all(|r| r.passed))
}

fn write_table(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let summary = run_experiment(&cfg, args.jobs())?;
            println!("{} runs written to {}", summary.succeeded, summary.out_dir.display());
            for (id, message) in &summary.failed {
                eprintln!("run {id} failed: {message}");
            }
            Ok(summary.failed.is_empty())
        }
        Command::SweepDelta { exp, deltas } => {
            let cfg = exp.config()?;
            let rows = sweep_delta(&cfg, &deltas, exp.jobs())?;
            let table = sweep_csv(&rows);
            print!("{table}");
            write_table(&cfg.out_dir, "delta_sweep.csv", &table)?;
            fs::write(cfg.out_dir.join("config.echo"), cfg.to_toml())?;
            Ok(true)
        }
        Command::Verify(cmd) => verify(&cmd),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
