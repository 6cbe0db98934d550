//! Randomized invariants of the posterior, the quantile operators and the
//! learning loop.

use proptest::prelude::*;
use rand::Rng as _;

use aqbrmdp::brmdp::{optimal_operator, point_mass_backups, policy_operator, solve_optimal, SampledBackupSet};
use aqbrmdp::envs::EnvSpec;
use aqbrmdp::mdp::exact_value_iteration;
use aqbrmdp::online::{run_episode_stream, stream_rng, AgentKind, RunConfig};
use aqbrmdp::theory::random_instance;
use aqbrmdp::{DirichletPosterior, Policy};

fn sup(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn backup_set(seed: u64, ns: usize, na: usize, gamma: f64, alpha: f64) -> SampledBackupSet {
    let mut rng = stream_rng(seed, 0);
    let mut post = DirichletPosterior::new_uniform_prior(ns, na).unwrap();
    for _ in 0..rng.random_range(0..200) {
        post.observe(rng.random_range(0..ns), rng.random_range(0..na), rng.random_range(0..ns));
    }
    let reward: Vec<f64> = (0..ns * na * ns).map(|_| rng.random::<f64>()).collect();
    let sizes: Vec<usize> = (0..ns * na).map(|_| rng.random_range(1..40)).collect();
    SampledBackupSet::draw_sized(&post, &vec![alpha; ns * na], &sizes, &reward, gamma, &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_update_is_order_free(
        ns in 2usize..5, na in 1usize..4,
        obs in prop::collection::vec((0usize..5, 0usize..4, 0usize..5), 0..60),
        seed in any::<u64>(),
    ) {
        let obs: Vec<_> = obs.into_iter().map(|(s, a, n)| (s % ns, a % na, n % ns)).collect();
        let mut forward = DirichletPosterior::new_uniform_prior(ns, na).unwrap();
        for &(s, a, n) in &obs {
            forward.observe(s, a, n);
        }
        let mut shuffled = obs.clone();
        let mut rng = stream_rng(seed, 0);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let mut backward = DirichletPosterior::new_uniform_prior(ns, na).unwrap();
        for &(s, a, n) in &shuffled {
            backward.observe(s, a, n);
        }
        prop_assert_eq!(&forward, &backward);
        for s in 0..ns {
            for a in 0..na {
                let seen = obs.iter().filter(|o| o.0 == s && o.1 == a).count() as u64;
                prop_assert_eq!(forward.visit_count(s, a), seen);
                for n in 0..ns {
                    let c = obs.iter().filter(|o| **o == (s, a, n)).count() as f64;
                    prop_assert_eq!(forward.param(s, a, n), 1.0 + c);
                }
            }
        }
    }

    #[test]
    fn sampled_rows_lie_on_the_simplex(ns in 1usize..7, counts in prop::collection::vec(0u64..50, 7), seed in any::<u64>()) {
        let mut post = DirichletPosterior::new_uniform_prior(ns, 1).unwrap();
        for (n, &c) in counts.iter().take(ns).enumerate() {
            for _ in 0..c {
                post.observe(0, 0, n);
            }
        }
        let row = post.sample_kernel_row(0, 0, &mut stream_rng(seed, 0));
        prop_assert!(row.iter().all(|p| *p >= 0.0));
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn operators_contract(seed in any::<u64>(), alpha in 0.01f64..0.99, gamma in 0.1f64..0.99,
                          v in prop::collection::vec(-20.0f64..20.0, 3), u in prop::collection::vec(-20.0f64..20.0, 3)) {
        let set = backup_set(seed, 3, 2, gamma, alpha);
        let policy = Policy(vec![1, 0, 1]);
        let d = sup(&v, &u);
        prop_assert!(sup(&optimal_operator(&set, &v), &optimal_operator(&set, &u)) <= gamma * d + 1e-12);
        prop_assert!(sup(&policy_operator(&set, &policy, &v), &policy_operator(&set, &policy, &u)) <= gamma * d + 1e-12);
    }

    #[test]
    fn operators_are_monotone_in_level_and_value(seed in any::<u64>(), lo in 0.01f64..0.99, hi in 0.01f64..0.99,
                                                v in prop::collection::vec(-5.0f64..5.0, 3), bump in 0.0f64..3.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let base = backup_set(seed, 3, 2, 0.9, 0.5);
        let low = base.with_alphas(&[lo; 6]).unwrap();
        let high = base.with_alphas(&[hi; 6]).unwrap();
        let raised: Vec<f64> = v.iter().map(|x| x + bump).collect();
        for ((a, b), c) in optimal_operator(&low, &v).iter().zip(optimal_operator(&high, &v)).zip(optimal_operator(&low, &raised)) {
            prop_assert!(*a <= b);
            prop_assert!(*a <= c);
        }
    }

    #[test]
    fn optimal_values_respect_reward_bounds(seed in any::<u64>(), alpha in 0.01f64..0.99) {
        let set = backup_set(seed, 3, 2, 0.8, alpha);
        let plan = solve_optimal(&set, 1e-10, 100_000, None).unwrap();
        prop_assert!(plan.converged);
        prop_assert!(plan.value.0.iter().all(|&x| (-1e-8..=5.0 + 1e-8).contains(&x)));
    }

    #[test]
    fn point_mass_posterior_matches_exact_planning(seed in any::<u64>(), alpha in 0.01f64..0.99) {
        let (mdp, _) = random_instance(4, 2, 0.85, &mut stream_rng(seed, 0)).unwrap();
        let exact = exact_value_iteration(&mdp, 1e-12, 100_000, None).unwrap();
        let plan = solve_optimal(&point_mass_backups(&mdp, alpha).unwrap(), 1e-12, 100_000, None).unwrap();
        prop_assert!(plan.value.sup_dist(&exact.value) <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn learning_runs_are_reproducible(seed in 0u64..1_000_000) {
        let env = EnvSpec::RiverSwim(4).build(0.9).unwrap();
        let config = RunConfig { horizon: 150, planner: Default::default(), seed };
        let a = run_episode_stream(&env, &AgentKind::Psrl, &config).unwrap();
        let b = run_episode_stream(&env, &AgentKind::Psrl, &config).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.steps[0].restart);
        prop_assert_eq!(a.steps.len(), 150);
        prop_assert_eq!(a.n_episodes(), a.plans.len());
        prop_assert_eq!(a.episode_lengths().iter().sum::<u64>(), 150);
    }
}

#[test]
fn dirichlet_sample_mean_matches_posterior_mean() {
    let mut post = DirichletPosterior::new_uniform_prior(3, 1).unwrap();
    for (n, c) in [(0, 4), (1, 1), (2, 9)] {
        for _ in 0..c {
            post.observe(0, 0, n);
        }
    }
    let mut rng = stream_rng(11, 0);
    let m = 20_000;
    let mut acc = [0.0; 3];
    for _ in 0..m {
        for (slot, p) in acc.iter_mut().zip(post.sample_kernel_row(0, 0, &mut rng)) {
            *slot += p / m as f64;
        }
    }
    // Parameters (5, 2, 10) over 17: means and a 5 sigma Monte Carlo band.
    for (i, phi) in [5.0f64, 2.0, 10.0].iter().enumerate() {
        let mean = phi / 17.0;
        let sd = (mean * (1.0 - mean) / 18.0).sqrt();
        assert!((acc[i] - mean).abs() < 5.0 * sd / (m as f64).sqrt(), "component {i}: {} vs {mean}", acc[i]);
        assert!((post.mean_row(0, 0)[i] - mean).abs() < 1e-15);
    }
}
