//! Independent Dirichlet posteriors over every transition row.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};

use crate::error::{Error, Result};

/// Product of independent Dirichlet posteriors, one per `(s, a)` row.
///
/// Parameters are always `prior + counts`; only the counts change after
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPosterior {
    n_states: usize,
    n_actions: usize,
    prior: Vec<f64>,
    counts: Vec<u64>,
}

impl DirichletPosterior {
    /// Uniform prior `phi_0(s, a, s') = 1`.
    pub fn new_uniform_prior(n_states: usize, n_actions: usize) -> Result<Self> {
        Self::with_prior(n_states, n_actions, vec![1.0; n_states * n_actions * n_states])
    }

    pub fn with_prior(n_states: usize, n_actions: usize, prior: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("posterior dimensions must be positive".into()));
        }
        let len = n_states * n_actions * n_states;
        if prior.len() != len {
            return Err(Error::InvalidArgument(format!(
                "prior has length {}, expected {len}",
                prior.len()
            )));
        }
        if prior.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidArgument("prior parameters must be positive".into()));
        }
        Ok(DirichletPosterior { n_states, n_actions, prior, counts: vec![0; len] })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn offset(&self, s: usize, a: usize) -> usize {
        (s * self.n_actions + a) * self.n_states
    }

    fn check(&self, s: usize, a: usize) {
        assert!(
            s < self.n_states && a < self.n_actions,
            "(s={s}, a={a}) out of range for {}x{} posterior",
            self.n_states,
            self.n_actions
        );
    }

    /// Records one observed transition `(s, a, s')`.
    pub fn observe(&mut self, s: usize, a: usize, next: usize) {
        self.check(s, a);
        assert!(next < self.n_states, "successor {next} out of range");
        let i = self.offset(s, a) + next;
        self.counts[i] += 1;
    }

    /// Adds a whole count table (same layout as [`Self::counts`]).
    pub fn add_counts(&mut self, counts: &[u64]) -> Result<()> {
        if counts.len() != self.counts.len() {
            return Err(Error::InvalidArgument("count table has the wrong shape".into()));
        }
        for (c, d) in self.counts.iter_mut().zip(counts) {
            *c += d;
        }
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, s: usize, a: usize, next: usize) -> u64 {
        self.counts[self.offset(s, a) + next]
    }

    /// `N(s, a)`.
    pub fn visit_count(&self, s: usize, a: usize) -> u64 {
        let o = self.offset(s, a);
        self.counts[o..o + self.n_states].iter().sum()
    }

    /// Visit counts for every pair, indexed `s * A + a`.
    pub fn visit_counts(&self) -> Vec<u64> {
        self.counts.chunks(self.n_states).map(|row| row.iter().sum()).collect()
    }

    pub fn param(&self, s: usize, a: usize, next: usize) -> f64 {
        let i = self.offset(s, a) + next;
        self.prior[i] + self.counts[i] as f64
    }

    /// `phi(s, a, .)`.
    pub fn params(&self, s: usize, a: usize) -> Vec<f64> {
        (0..self.n_states).map(|n| self.param(s, a, n)).collect()
    }

    /// Row concentration `phi_0(s, a) = sum_{s'} phi(s, a, s')`.
    pub fn concentration(&self, s: usize, a: usize) -> f64 {
        (0..self.n_states).map(|n| self.param(s, a, n)).sum()
    }

    pub fn mean_row(&self, s: usize, a: usize) -> Vec<f64> {
        let total = self.concentration(s, a);
        self.params(s, a).into_iter().map(|p| p / total).collect()
    }

    /// Posterior-mean kernel, indexed like [`crate::TabularMdp::kernel`].
    pub fn mean_kernel(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.counts.len());
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                out.extend(self.mean_row(s, a));
            }
        }
        out
    }

    /// Draws `P_{s,a} ~ Dir(phi(s,a))` into `out`.
    pub fn sample_row_into<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R, out: &mut [f64]) {
        self.check(s, a);
        let o = self.offset(s, a);
        let mut total = 0.0;
        for (n, slot) in out.iter_mut().enumerate().take(self.n_states) {
            let g = gamma_variate(self.prior[o + n] + self.counts[o + n] as f64, rng);
            *slot = g;
            total += g;
        }
        if total > 0.0 && total.is_finite() {
            for slot in out.iter_mut().take(self.n_states) {
                *slot /= total;
            }
        } else {
            // All variates underflowed; fall back to the mode of the largest parameter.
            let best = (0..self.n_states)
                .max_by(|&i, &j| self.param(s, a, i).total_cmp(&self.param(s, a, j)))
                .unwrap_or(0);
            for (n, slot) in out.iter_mut().enumerate().take(self.n_states) {
                *slot = if n == best { 1.0 } else { 0.0 };
            }
        }
    }

    pub fn sample_kernel_row<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Vec<f64> {
        let mut row = vec![0.0; self.n_states];
        self.sample_row_into(s, a, rng, &mut row);
        row
    }

    /// Samples every row independently; the result has shape `(S*A, S)`
    /// flattened row-major.
    pub fn sample_full_kernel<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut kernel = vec![0.0; self.counts.len()];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let o = self.offset(s, a);
                self.sample_row_into(s, a, rng, &mut kernel[o..o + self.n_states]);
            }
        }
        kernel
    }

    /// Plain-text snapshot: header `s,a,next_state,count`, one line per
    /// nonzero count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,a,next_state,count\n");
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for n in 0..self.n_states {
                    let c = self.count(s, a, n);
                    if c > 0 {
                        out.push_str(&format!("{s},{a},{n},{c}\n"));
                    }
                }
            }
        }
        out
    }

    /// Rebuilds a uniform-prior posterior from [`Self::to_csv`] output.
    pub fn from_csv(text: &str, n_states: usize, n_actions: usize) -> Result<Self> {
        let mut post = Self::new_uniform_prior(n_states, n_actions)?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if i == 0 || line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(parse_err(format!("expected 4 fields, found {}", fields.len())));
            }
            let idx: Vec<u64> = fields
                .iter()
                .map(|f| f.trim().parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(e.to_string()))?;
            let (s, a, n) = (idx[0] as usize, idx[1] as usize, idx[2] as usize);
            if s >= n_states || a >= n_actions || n >= n_states {
                return Err(parse_err(format!("index ({s},{a},{n}) out of range")));
            }
            let o = post.offset(s, a) + n;
            post.counts[o] += idx[3];
        }
        Ok(post)
    }
}

/// `Gamma(shape, 1)` variate; shape one takes the exponential shortcut.
#[inline]
pub(crate) fn gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape == 1.0 {
        Exp1.sample(rng)
    } else {
        Gamma::new(shape, 1.0)
            .expect("Dirichlet parameters are positive and finite")
            .sample(rng)
    }
}
