//! Adaptive per-pair quantile schedule.
//!
//! Early on every level sits near the robustness floor; as episodes accumulate
//! the levels rise toward 1, fastest at under-visited pairs.

use crate::error::{Error, Result};

/// Sensitivity `delta` and robustness floor `alpha_floor`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScheduleParams {
    pub delta: f64,
    pub alpha_floor: f64,
}

impl ScheduleParams {
    pub fn new(delta: f64, alpha_floor: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
        }
        if !(alpha_floor > 0.0 && alpha_floor < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha floor must lie in (0,1), got {alpha_floor}")));
        }
        Ok(ScheduleParams { delta, alpha_floor })
    }
}

/// Quantile levels for one pseudo-episode, indexed `s * A + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSchedule {
    pub alphas: Vec<f64>,
    pub episode_index: u64,
}

/// `ln(2k) / sqrt(k)`.
pub fn scale_factor(k: u64) -> f64 {
    assert!(k >= 1, "episode index starts at 1");
    let k = k as f64;
    (2.0 * k).ln() / k.sqrt()
}

/// Visit counts floored at one, divided by their mean.
pub fn relative_counts(visit_counts: &[u64]) -> Vec<f64> {
    if visit_counts.is_empty() {
        return Vec::new();
    }
    let floored: Vec<f64> = visit_counts.iter().map(|&n| n.max(1) as f64).collect();
    let mean = floored.iter().sum::<f64>() / floored.len() as f64;
    floored.iter().map(|n| n / mean).collect()
}

/// `alpha(s,a) = max(1 - delta * r(s,a) * g_k, alpha_floor)`.
pub fn compute_schedule(params: &ScheduleParams, k: u64, visit_counts: &[u64]) -> QuantileSchedule {
    let g = scale_factor(k);
    let alphas = relative_counts(visit_counts)
        .into_iter()
        .map(|r| (1.0 - params.delta * r * g).max(params.alpha_floor))
        .collect();
    QuantileSchedule { alphas, episode_index: k }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scale_factor_values() {
        assert!((scale_factor(1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((scale_factor(4) - 1.039_720_770_839_917_9).abs() < 1e-15);
        assert!((scale_factor(10_000) - 0.099_034_875_525_361_28).abs() < 1e-15);
        assert!(scale_factor(10_000) < 0.1);
    }

    #[test]
    fn relative_count_examples() {
        assert_eq!(relative_counts(&[3, 3, 3]), vec![1.0; 3]);
        let r = relative_counts(&[4, 0, 2, 2]);
        let expected = [16.0 / 9.0, 4.0 / 9.0, 8.0 / 9.0, 8.0 / 9.0];
        for (x, y) in r.iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn schedule_examples() {
        let params = ScheduleParams::new(1.0, 0.2).unwrap();
        let sched = compute_schedule(&params, 1, &[4, 0, 2, 2]);
        assert!((sched.alphas[1] - 0.691_934_586_417_802_1).abs() < 1e-12);
        assert_eq!(sched.alphas[0], 0.2);
        assert_eq!(sched.episode_index, 1);

        let tiny = ScheduleParams::new(1e-9, 0.2).unwrap();
        for a in compute_schedule(&tiny, 1, &[4, 0, 2, 2]).alphas {
            assert!(a < 1.0 && a > 1.0 - 1e-8);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ScheduleParams::new(0.0, 0.2).is_err());
        assert!(ScheduleParams::new(1.0, 1.0).is_err());
        assert!(ScheduleParams::new(1.0, 0.0).is_err());
    }

    fn counts_strategy() -> impl Strategy<Value = Vec<u64>> {
        prop::collection::vec(0u64..500, 1..24)
    }

    proptest! {
        #[test]
        fn levels_in_range(counts in counts_strategy(), k in 1u64..100_000,
                           delta in 0.01f64..50.0, floor in 0.01f64..0.99) {
            let params = ScheduleParams::new(delta, floor).unwrap();
            for a in compute_schedule(&params, k, &counts).alphas {
                prop_assert!(a >= floor && a < 1.0);
            }
        }

        #[test]
        fn mean_ratio_is_one(counts in counts_strategy()) {
            let r = relative_counts(&counts);
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-12);
        }

        #[test]
        fn own_count_never_raises_level(counts in counts_strategy(), idx in any::<prop::sample::Index>(),
                                        extra in 1u64..200, k in 1u64..1000, delta in 0.01f64..20.0) {
            let params = ScheduleParams::new(delta, 0.05).unwrap();
            let i = idx.index(counts.len());
            let mut more = counts.clone();
            more[i] += extra;
            let before = compute_schedule(&params, k, &counts).alphas[i];
            let after = compute_schedule(&params, k, &more).alphas[i];
            prop_assert!(after <= before + 1e-15);
        }

        #[test]
        fn larger_delta_never_raises(counts in counts_strategy(), k in 1u64..1000,
                                     d1 in 0.01f64..20.0, d2 in 0.01f64..20.0) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let a_lo = compute_schedule(&ScheduleParams::new(lo, 0.2).unwrap(), k, &counts).alphas;
            let a_hi = compute_schedule(&ScheduleParams::new(hi, 0.2).unwrap(), k, &counts).alphas;
            for (x, y) in a_lo.iter().zip(&a_hi) {
                prop_assert!(y <= x);
            }
        }

        #[test]
        fn levels_approach_one(counts in counts_strategy()) {
            let params = ScheduleParams::new(5.0, 0.2).unwrap();
            let far = compute_schedule(&params, 1u64 << 60, &counts).alphas;
            let near = compute_schedule(&params, 1000, &counts).alphas;
            for (f, n) in far.iter().zip(&near) {
                prop_assert!(f >= n);
                prop_assert!(*f > 0.99);
            }
        }
    }
}
