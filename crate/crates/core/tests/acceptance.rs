//! Acceptance suite: exact oracles, statistical properties and scaled-down
//! replications. Criteria run one after another, each printing one PASS/FAIL
//! line; the process fails if any criterion fails. Command-line arguments
//! that are not flags select criteria by substring.

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;

use aqbrmdp::brmdp::{
    optimal_operator, point_mass_backups, policy_operator, solve_optimal, solve_policy, PlannerConfig,
    SampledBackupSet, brmdp_value_iteration,
};
use aqbrmdp::envs::EnvSpec;
use aqbrmdp::experiment::{execute_all, ExperimentConfig, RunOutcome};
use aqbrmdp::mdp::exact_value_iteration;
use aqbrmdp::online::{run_episode_stream, stream_rng, AgentKind, RunConfig};
use aqbrmdp::schedule::ScheduleParams;
use aqbrmdp::theory::{
    asymptotic_test_mdp, random_instance, trajectory_posterior, verify_prop1, verify_prop_ec1, verify_prop_ec2,
    verify_theorem1, AsymptoticStudy,
};
use aqbrmdp::{DirichletPosterior, Policy, TabularMdp};

fn report(criterion: u32, name: &str, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("criterion {criterion} [{name}]: {verdict} ({detail})");
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn criterion_1_exact_oracles() -> bool {
    let start = Instant::now();
    let ec1 = verify_prop_ec1(0.9, 0.3, 1.0, 0.7, 0.2).unwrap();
    let ec2 = verify_prop_ec2(0.9, 0.5, 0.7, 0.2, 100).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let (threshold, mean_exp, q_exp) = ec1.exposures[0];
    let ok = ec1.passed()
        && ec2.passed()
        && (ec1.quantile_value_s0 - 3.0).abs() <= 1e-9
        && (ec1.mean_planner_value_s0 - 3.6).abs() <= 1e-9
        && ec1.exposures.iter().all(|&(_, m, q)| (m - 0.3).abs() <= 1e-9 && q == 0.0)
        && (ec2.total_regret - 310.0).abs() <= 1e-9
        && ec2.trap_holds()
        && elapsed < 1.0;
    report(
        1,
        "exact oracles",
        ok,
        &format!(
            "V_q(s0)={} V_mean(s0)={} exposures@{threshold:.6}=({mean_exp}, {q_exp}) R_100={} in {elapsed:.3}s",
            ec1.quantile_value_s0, ec1.mean_planner_value_s0, ec2.total_regret
        ),
    );
    ok
}

fn criterion_2_asymptotic_normality() -> bool {
    let start = Instant::now();
    let mdp = asymptotic_test_mdp(0.9).unwrap();
    let policy = Policy::constant(3, 0);
    let study = AsymptoticStudy {
        alphas: vec![0.1, 0.5, 0.9],
        n_list: vec![2500, 10_000],
        reps: 200,
        n_samples: 4000,
        tol: 1e-10,
        seed: 7,
    };
    let result = verify_theorem1(&mdp, &policy, &study).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    for c in &result.checks {
        println!("  {} = {} (expected {}) {}", c.item, c.value, c.expected, if c.passed { "ok" } else { "FAIL" });
    }
    let ok = result.passed() && elapsed < 300.0;
    report(2, "asymptotic normality", ok, &format!("{} checks in {elapsed:.1}s", result.checks.len()));
    ok
}

fn criterion_3_nested_lower_bound_coverage() -> bool {
    let start = Instant::now();
    let planner = PlannerConfig::default();
    let mut passed = 0;
    let mut coverages = Vec::new();
    for instance in 0..10u64 {
        let mut rng = stream_rng(1000 + instance, 0);
        let (mdp, policy) = random_instance(3, 2, 0.9, &mut rng).unwrap();
        let post = trajectory_posterior(&mdp, 200, &mut rng).unwrap();
        let cov = verify_prop1(&mdp, &policy, &post, 0.2, 10_000, &planner, &mut rng).unwrap();
        if cov.coverage >= 0.8 - 0.012 && cov.passed() {
            passed += 1;
        }
        coverages.push(cov.coverage);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let min = coverages.iter().copied().fold(f64::INFINITY, f64::min);
    let ok = passed == 10 && elapsed < 120.0;
    report(3, "nested lower bound coverage", ok, &format!("{passed}/10 instances, min coverage {min:.4}, {elapsed:.1}s"));
    ok
}

fn random_posterior<R: Rng>(ns: usize, na: usize, rng: &mut R) -> DirichletPosterior {
    let mut post = DirichletPosterior::new_uniform_prior(ns, na).unwrap();
    for s in 0..ns {
        for a in 0..na {
            for _ in 0..rng.random_range(0..30) {
                post.observe(s, a, rng.random_range(0..ns));
            }
        }
    }
    post
}

fn random_rewards<R: Rng>(ns: usize, na: usize, rng: &mut R) -> Vec<f64> {
    (0..ns * na * ns).map(|_| rng.random::<f64>()).collect()
}

fn criterion_4_solver_properties() -> bool {
    let gamma = 0.9;
    let (ns, na) = (4, 3);
    let mut rng = stream_rng(44, 0);

    // Contraction of both operators on 500 random (V, U) pairs.
    let mut contraction_ok = true;
    for _ in 0..500 {
        let post = random_posterior(ns, na, &mut rng);
        let reward = random_rewards(ns, na, &mut rng);
        let alphas: Vec<f64> = (0..ns * na).map(|_| rng.random_range(0.05..0.95)).collect();
        let sizes: Vec<usize> = (0..ns * na).map(|_| rng.random_range(5..60)).collect();
        let set = SampledBackupSet::draw_sized(&post, &alphas, &sizes, &reward, gamma, &mut rng).unwrap();
        let v: Vec<f64> = (0..ns).map(|_| rng.random_range(-5.0..15.0)).collect();
        let u: Vec<f64> = (0..ns).map(|_| rng.random_range(-5.0..15.0)).collect();
        let dist = v.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let policy = Policy((0..ns).map(|_| rng.random_range(0..na)).collect());
        let sup = |x: Vec<f64>, y: Vec<f64>| x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let d_opt = sup(optimal_operator(&set, &v), optimal_operator(&set, &u));
        let d_pol = sup(policy_operator(&set, &policy, &v), policy_operator(&set, &policy, &u));
        contraction_ok &= d_opt <= gamma * dist + 1e-12 && d_pol <= gamma * dist + 1e-12;
    }

    // Monotonicity in the level on 100 posteriors with shared samples, plus
    // value bounds for rewards in [0, 1].
    let (tol, max_iter) = (1e-10, 100_000);
    let slack = 2.0 * tol / (1.0 - gamma);
    let mut monotone_ok = true;
    let mut bounds_ok = true;
    for _ in 0..100 {
        let post = random_posterior(ns, na, &mut rng);
        let reward = random_rewards(ns, na, &mut rng);
        let levels = [0.1, 0.3, 0.5, 0.7, 0.9];
        let base = SampledBackupSet::draw_sized(&post, &vec![0.5; ns * na], &vec![80; ns * na], &reward, gamma, &mut rng)
            .unwrap();
        let mut previous: Option<Vec<f64>> = None;
        for &alpha in &levels {
            let set = base.with_alphas(&vec![alpha; ns * na]).unwrap();
            let plan = solve_optimal(&set, tol, max_iter, None).unwrap();
            bounds_ok &= plan.converged && plan.value.0.iter().all(|&x| x >= -slack && x <= 1.0 / (1.0 - gamma) + slack);
            if let Some(prev) = &previous {
                monotone_ok &= prev.iter().zip(&plan.value.0).all(|(lo, hi)| *lo <= hi + slack);
            }
            previous = Some(plan.value.0);
        }
    }

    // Bit-identical repeats of a planning call and of a learning run.
    let env = EnvSpec::RiverSwim(6).build(0.9).unwrap();
    let post = random_posterior(6, 2, &mut rng);
    let plan = |seed| {
        brmdp_value_iteration(&post, &[0.3; 12], env.rewards(), 0.9, &PlannerConfig::default(), None, &mut stream_rng(seed, 3))
            .unwrap()
    };
    let run = || {
        let cfg = RunConfig { horizon: 500, planner: PlannerConfig::default(), seed: 9 };
        run_episode_stream(&env, &AgentKind::AqBrmdp(ScheduleParams::new(5.0, 0.2).unwrap()), &cfg).unwrap()
    };
    let (a, b) = (plan(5), plan(5));
    let deterministic = a.value.0.iter().zip(&b.value.0).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.policy == b.policy
        && run() == run();

    // Point-mass posterior equals exact value iteration.
    let mut point_mass_ok = true;
    for _ in 0..20 {
        let (mdp, _) = random_instance(5, 3, 0.9, &mut rng).unwrap();
        let exact = exact_value_iteration(&mdp, 1e-12, 100_000, None).unwrap();
        for alpha in [0.1, 0.5, 0.9] {
            let set = point_mass_backups(&mdp, alpha).unwrap();
            let plan = solve_optimal(&set, 1e-12, 100_000, None).unwrap();
            let eval = solve_policy(&set, &exact.policy, 1e-12, 100_000, None).unwrap();
            point_mass_ok &= plan.value.sup_dist(&exact.value) <= 1e-6 && eval.value.sup_dist(&exact.value) <= 1e-6;
        }
    }

    let ok = contraction_ok && monotone_ok && bounds_ok && deterministic && point_mass_ok;
    report(
        4,
        "solver properties",
        ok,
        &format!(
            "contraction={contraction_ok} monotone={monotone_ok} bounds={bounds_ok} deterministic={deterministic} point_mass={point_mass_ok}"
        ),
    );
    ok
}

fn riverswim_config() -> ExperimentConfig {
    ExperimentConfig {
        env: "riverswim-6".into(),
        algos: vec!["aq".into(), "psrl".into(), "brmdp-0.1".into()],
        horizon: 2000,
        gamma: 0.9,
        n_seeds: 20,
        base_seed: 0,
        delta: 5.0,
        alpha_floor: 0.2,
        c_samples: 150.0,
        diag_every: 2000,
        diag_m: 20,
        robust_regret: false,
        ..ExperimentConfig::default()
    }
}

/// The RiverSwim-6 runs shared by criteria 5 and 8.
fn riverswim_runs() -> &'static Vec<RunOutcome> {
    static RUNS: OnceLock<Vec<RunOutcome>> = OnceLock::new();
    RUNS.get_or_init(|| {
        execute_all(&riverswim_config(), 1).unwrap().into_iter().map(|(_, _, _, r)| r.unwrap()).collect()
    })
}

fn group<'a>(runs: &'a [RunOutcome], algo: &str) -> Vec<&'a RunOutcome> {
    runs.iter().filter(|r| r.algo == algo).collect()
}

fn criterion_5_riverswim_replication() -> bool {
    let start = Instant::now();
    let runs = riverswim_runs();
    let final_regret = |algo: &str| mean(&group(runs, algo).iter().map(|r| r.final_true_regret()).collect::<Vec<_>>());
    // The chain's leftmost state, where every run starts.
    let left_mass = |algo: &str| mean(&group(runs, algo).iter().map(|r| r.occupancy[0]).collect::<Vec<_>>());
    let (aq, psrl) = (final_regret("aq_brmdp"), final_regret("psrl"));
    let (occ_low, occ_aq) = (left_mass("brmdp_0.1"), left_mass("aq_brmdp"));
    let ok = aq < psrl && occ_low > occ_aq;
    report(
        5,
        "RiverSwim-6 replication",
        ok,
        &format!(
            "regret aq={aq:.2} psrl={psrl:.2} (brmdp-0.1 {:.2}); leftmost occupancy brmdp-0.1={occ_low:.3} aq={occ_aq:.3}; {:.1}s",
            final_regret("brmdp_0.1"),
            start.elapsed().as_secs_f64()
        ),
    );
    ok
}

fn criterion_6_frozenlake_risky_replication() -> bool {
    let start = Instant::now();
    let config = ExperimentConfig {
        env: "frozenlake-risky".into(),
        theta: 0.7,
        algos: vec!["aq".into(), "brmdp-0.1".into(), "brmdp-0.3".into(), "brmdp-0.5".into(), "psrl".into()],
        horizon: 4500,
        gamma: 0.8,
        n_seeds: 20,
        base_seed: 0,
        delta: 10.0,
        alpha_floor: 0.2,
        c_samples: 250.0,
        diag_every: 4000,
        diag_m: 147,
        diag_alpha: 0.1,
        robust_regret: false,
        ..ExperimentConfig::default()
    };
    let runs: Vec<RunOutcome> =
        execute_all(&config, 1).unwrap().into_iter().map(|(_, _, _, r)| r.unwrap()).collect();
    let final_regret = |algo: &str| mean(&group(&runs, algo).iter().map(|r| r.final_true_regret()).collect::<Vec<_>>());
    let quantile_value =
        |algo: &str| mean(&group(&runs, algo).iter().map(|r| r.quantile_value_at(4000).unwrap()).collect::<Vec<_>>());
    let psrl = final_regret("psrl");
    let others: Vec<(&str, f64)> =
        ["aq_brmdp", "brmdp_0.1", "brmdp_0.3", "brmdp_0.5"].iter().map(|a| (*a, final_regret(a))).collect();
    let (vq_aq, vq_psrl) = (quantile_value("aq_brmdp"), quantile_value("psrl"));
    let ok = others.iter().all(|(_, r)| *r < psrl) && vq_aq >= vq_psrl;
    let table: Vec<String> = others.iter().map(|(a, r)| format!("{a}={r:.2}")).collect();
    report(
        6,
        "FrozenLake-risky replication",
        ok,
        &format!(
            "regret {} psrl={psrl:.2}; V_q(t=4000) aq={vq_aq:.4} psrl={vq_psrl:.4}; {:.1}s",
            table.join(" "),
            start.elapsed().as_secs_f64()
        ),
    );
    ok
}

fn criterion_7_pseudo_episode_statistics() -> bool {
    let gamma = 0.9;
    let horizon: u64 = 100_000;
    let env: TabularMdp = EnvSpec::RiverSwim(6).build(gamma).unwrap();
    let t = horizon as f64;
    let expected_rate = 1.0 / t + (t - 1.0) * (1.0 - gamma) / t;
    let se = ((t - 1.0) * gamma * (1.0 - gamma)).sqrt() / t;
    let mut ok = true;
    let mut details = Vec::new();
    for seed in 0..5 {
        let cfg = RunConfig { horizon, planner: PlannerConfig::default(), seed };
        let log = run_episode_stream(&env, &AgentKind::FixedPolicy(Policy::constant(6, 1)), &cfg).unwrap();
        let k = log.n_episodes() as f64;
        let rate = k / t;
        let lengths = log.episode_lengths();
        let mean_len = lengths.iter().sum::<u64>() as f64 / lengths.len() as f64;
        let z = (rate - expected_rate) / se;
        let len_dev = (mean_len - 1.0 / (1.0 - gamma)).abs() / (1.0 / (1.0 - gamma));
        ok &= z.abs() <= 3.0 && len_dev <= 0.03;
        details.push(format!("z={z:.2} len={mean_len:.3}"));
    }
    report(7, "pseudo-episode statistics", ok, &details.join("; "));
    ok
}

fn criterion_8_sublinear_regret() -> bool {
    let runs = riverswim_runs();
    let aq = group(runs, "aq_brmdp");
    let r1000 = mean(&aq.iter().map(|r| r.cum_true_regret[999]).collect::<Vec<_>>());
    let r2000 = mean(&aq.iter().map(|r| r.cum_true_regret[1999]).collect::<Vec<_>>());
    let ratio = r2000 / r1000;
    let ok = ratio < 1.9;
    report(8, "sublinear regret", ok, &format!("R(1000)={r1000:.2} R(2000)={r2000:.2} ratio={ratio:.3}"));
    ok
}

type Criterion = (&'static str, fn() -> bool);

fn main() -> std::process::ExitCode {
    let criteria: [Criterion; 8] = [
        ("criterion_1_exact_oracles", criterion_1_exact_oracles),
        ("criterion_2_asymptotic_normality", criterion_2_asymptotic_normality),
        ("criterion_3_nested_lower_bound_coverage", criterion_3_nested_lower_bound_coverage),
        ("criterion_4_solver_properties", criterion_4_solver_properties),
        ("criterion_5_riverswim_replication", criterion_5_riverswim_replication),
        ("criterion_6_frozenlake_risky_replication", criterion_6_frozenlake_risky_replication),
        ("criterion_7_pseudo_episode_statistics", criterion_7_pseudo_episode_statistics),
        ("criterion_8_sublinear_regret", criterion_8_sublinear_regret),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        if !check() {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        std::process::ExitCode::FAILURE
    }
}
