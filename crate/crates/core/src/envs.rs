//! Benchmark environments as [`TabularMdp`] instances.
//!
//! * RiverSwim-n: a chain where the rewarding right end is only reached by
//!   sustained exploration against a drift.
//! * FrozenLake 4x4: slippery grid with sticky holes, optionally with a risky
//!   shortcut at `(2, Down)` that drops into a hole with probability `theta`.
//! * Custom models read from a plain-text transition list.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

pub const RIVERSWIM_LEFT: usize = 0;
pub const RIVERSWIM_RIGHT: usize = 1;

pub const LEFT: usize = 0;
pub const DOWN: usize = 1;
pub const RIGHT: usize = 2;
pub const UP: usize = 3;

pub const FROZENLAKE_SIDE: usize = 4;
pub const FROZENLAKE_HOLES: [usize; 4] = [5, 7, 11, 12];
pub const FROZENLAKE_GOAL: usize = 15;
/// Probability that a move out of a hole succeeds.
pub const HOLE_ESCAPE: f64 = 0.2;
/// The state-action pair carrying the risky shortcut.
pub const RISKY_PAIR: (usize, usize) = (2, DOWN);

/// Which environment to build.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    RiverSwim(usize),
    FrozenLakeRisky(f64),
    FrozenLake,
    Custom(PathBuf),
}

impl EnvSpec {
    pub fn build(&self, gamma: f64) -> Result<TabularMdp> {
        match self {
            EnvSpec::RiverSwim(n) => build_riverswim(*n, gamma),
            EnvSpec::FrozenLakeRisky(theta) => build_frozenlake(*theta, true, gamma),
            EnvSpec::FrozenLake => build_frozenlake(0.0, false, gamma),
            EnvSpec::Custom(path) => load_custom(path),
        }
    }

    /// Parses `riverswim-<n>`, `frozenlake`, `frozenlake-risky` or
    /// `custom:<path>`; `theta` applies to the risky lake only.
    pub fn parse(name: &str, theta: f64) -> Result<Self> {
        let spec = name.parse::<EnvSpec>()?;
        Ok(match spec {
            EnvSpec::FrozenLakeRisky(_) => {
                if !(0.0..=1.0).contains(&theta) {
                    return Err(Error::InvalidArgument(format!("theta must lie in [0,1], got {theta}")));
                }
                EnvSpec::FrozenLakeRisky(theta)
            }
            other => other,
        })
    }
}

impl FromStr for EnvSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(n) = s.strip_prefix("riverswim-") {
            let n = n
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad chain length in `{s}`")))?;
            if n < 2 {
                return Err(Error::InvalidArgument("riverswim needs at least 2 states".into()));
            }
            return Ok(EnvSpec::RiverSwim(n));
        }
        if let Some(path) = s.strip_prefix("custom:") {
            return Ok(EnvSpec::Custom(PathBuf::from(path)));
        }
        match s {
            "frozenlake" => Ok(EnvSpec::FrozenLake),
            "frozenlake-risky" => Ok(EnvSpec::FrozenLakeRisky(0.7)),
            _ => Err(Error::InvalidArgument(format!(
                "unknown environment `{s}` (expected riverswim-<n>, frozenlake, frozenlake-risky or custom:<path>)"
            ))),
        }
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvSpec::RiverSwim(n) => write!(f, "riverswim-{n}"),
            EnvSpec::FrozenLakeRisky(_) => write!(f, "frozenlake-risky"),
            EnvSpec::FrozenLake => write!(f, "frozenlake"),
            EnvSpec::Custom(p) => write!(f, "custom:{}", p.display()),
        }
    }
}

/// RiverSwim with `n` states (index 0 is the left bank and start state).
pub fn build_riverswim(n: usize, gamma: f64) -> Result<TabularMdp> {
    if n < 2 {
        return Err(Error::InvalidMdp(format!("riverswim needs n >= 2, got {n}")));
    }
    let (ns, na) = (n, 2);
    let mut kernel = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na * ns];
    let idx = |s: usize, a: usize, next: usize| (s * na + a) * ns + next;
    for s in 0..n {
        kernel[idx(s, RIVERSWIM_LEFT, s.saturating_sub(1))] = 1.0;
        if s == 0 {
            kernel[idx(0, RIVERSWIM_RIGHT, 1)] = 0.60;
            kernel[idx(0, RIVERSWIM_RIGHT, 0)] = 0.40;
        } else if s == n - 1 {
            kernel[idx(s, RIVERSWIM_RIGHT, s)] = 0.60;
            kernel[idx(s, RIVERSWIM_RIGHT, s - 1)] = 0.40;
        } else {
            kernel[idx(s, RIVERSWIM_RIGHT, s + 1)] = 0.35;
            kernel[idx(s, RIVERSWIM_RIGHT, s)] = 0.60;
            kernel[idx(s, RIVERSWIM_RIGHT, s - 1)] = 0.05;
        }
    }
    for next in 0..ns {
        reward[idx(0, RIVERSWIM_LEFT, next)] = 0.005;
    }
    reward[idx(n - 1, RIVERSWIM_RIGHT, n - 1)] = 1.0;
    TabularMdp::new(ns, na, gamma, reward, kernel)
}

/// Cell reached by moving `dir` from `s`, staying put at the border.
fn step(s: usize, dir: usize) -> usize {
    let (row, col) = (s / FROZENLAKE_SIDE, s % FROZENLAKE_SIDE);
    let last = FROZENLAKE_SIDE - 1;
    match dir {
        LEFT if col > 0 => s - 1,
        RIGHT if col < last => s + 1,
        UP if row > 0 => s - FROZENLAKE_SIDE,
        DOWN if row < last => s + FROZENLAKE_SIDE,
        _ => s,
    }
}

fn perpendicular(dir: usize) -> [usize; 2] {
    match dir {
        LEFT | RIGHT => [UP, DOWN],
        _ => [LEFT, RIGHT],
    }
}

pub fn is_hole(s: usize) -> bool {
    FROZENLAKE_HOLES.contains(&s)
}

/// States the goal resets to: every cell that is neither a hole nor the goal.
pub fn reset_states() -> Vec<usize> {
    (0..FROZENLAKE_SIDE * FROZENLAKE_SIDE)
        .filter(|&s| !is_hole(s) && s != FROZENLAKE_GOAL)
        .collect()
}

/// 4x4 FrozenLake with actions Left, Down, Right, Up.
pub fn build_frozenlake(theta: f64, risky: bool, gamma: f64) -> Result<TabularMdp> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidMdp(format!("theta must lie in [0,1], got {theta}")));
    }
    let ns = FROZENLAKE_SIDE * FROZENLAKE_SIDE;
    let na = 4;
    let mut kernel = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na * ns];
    let resets = reset_states();
    for s in 0..ns {
        for a in 0..na {
            let row = &mut kernel[(s * na + a) * ns..(s * na + a + 1) * ns];
            if s == FROZENLAKE_GOAL {
                for &r in &resets {
                    row[r] = 1.0 / resets.len() as f64;
                }
            } else if is_hole(s) {
                row[step(s, a)] += HOLE_ESCAPE;
                row[s] += 1.0 - HOLE_ESCAPE;
            } else {
                row[step(s, a)] += 0.5;
                for p in perpendicular(a) {
                    row[step(s, p)] += 0.25;
                }
            }
            reward[(s * na + a) * ns + FROZENLAKE_GOAL] = 1.0;
        }
    }
    if risky {
        let (s, a) = RISKY_PAIR;
        let row = &mut kernel[(s * na + a) * ns..(s * na + a + 1) * ns];
        row.fill(0.0);
        row[10] = 1.0 - theta;
        row[5] = theta;
    }
    TabularMdp::new(ns, na, gamma, reward, kernel)
}

/// Reads a model from text: a header `S A gamma`, then one line
/// `s a s' prob reward` per transition. Blank lines and `#` comments are
/// skipped. Rows must sum to one within 1e-9 and are renormalized.
pub fn parse_custom(text: &str) -> Result<TabularMdp> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::Parse { line: hline, message: "header must be `S A gamma`".into() });
    }
    let parse_err = |line: usize, what: &str| Error::Parse { line, message: format!("bad {what}") };
    let ns: usize = fields[0].parse().map_err(|_| parse_err(hline, "state count"))?;
    let na: usize = fields[1].parse().map_err(|_| parse_err(hline, "action count"))?;
    let gamma: f64 = fields[2].parse().map_err(|_| parse_err(hline, "discount"))?;
    if ns == 0 || na == 0 {
        return Err(Error::Parse { line: hline, message: "state and action counts must be positive".into() });
    }
    let mut kernel = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na * ns];
    for (line, l) in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 5 {
            return Err(Error::Parse { line, message: "expected `s a s' prob reward`".into() });
        }
        let s: usize = f[0].parse().map_err(|_| parse_err(line, "state"))?;
        let a: usize = f[1].parse().map_err(|_| parse_err(line, "action"))?;
        let next: usize = f[2].parse().map_err(|_| parse_err(line, "successor"))?;
        let p: f64 = f[3].parse().map_err(|_| parse_err(line, "probability"))?;
        let r: f64 = f[4].parse().map_err(|_| parse_err(line, "reward"))?;
        if s >= ns || a >= na || next >= ns {
            return Err(Error::Parse { line, message: "index out of range".into() });
        }
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::Parse { line, message: format!("invalid probability {p}") });
        }
        let i = (s * na + a) * ns + next;
        kernel[i] += p;
        reward[i] = r;
    }
    for (sa, row) in kernel.chunks_mut(ns).enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMdp(format!(
                "row (s={}, a={}) sums to {total}",
                sa / na,
                sa % na
            )));
        }
        row.iter_mut().for_each(|p| *p /= total);
    }
    let bounded = reward.iter().all(|r| (0.0..=1.0).contains(r));
    if bounded {
        TabularMdp::new(ns, na, gamma, reward, kernel)
    } else {
        TabularMdp::new_unbounded(ns, na, gamma, reward, kernel)
    }
}

pub fn load_custom(path: &Path) -> Result<TabularMdp> {
    parse_custom(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::exact_value_iteration;

    #[test]
    fn riverswim_rows() {
        let mdp = build_riverswim(6, 0.9).unwrap();
        assert_eq!(mdp.row(2, RIVERSWIM_RIGHT), &[0.0, 0.05, 0.60, 0.35, 0.0, 0.0]);
        assert_eq!(mdp.row(0, RIVERSWIM_RIGHT), &[0.40, 0.60, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(mdp.row(5, RIVERSWIM_RIGHT), &[0.0, 0.0, 0.0, 0.0, 0.40, 0.60]);
        assert_eq!(mdp.row(0, RIVERSWIM_LEFT), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(mdp.row(3, RIVERSWIM_LEFT)[2], 1.0);
        assert_eq!(mdp.initial_state(), 0);
        assert!(build_riverswim(1, 0.9).is_err());
    }

    #[test]
    fn riverswim_reward_support() {
        let n = 6;
        let mdp = build_riverswim(n, 0.9).unwrap();
        for s in 0..n {
            for a in 0..2 {
                for next in 0..n {
                    let r = mdp.reward(s, a, next);
                    let expected = if s == 0 && a == RIVERSWIM_LEFT {
                        0.005
                    } else if s == n - 1 && a == RIVERSWIM_RIGHT && next == n - 1 {
                        1.0
                    } else {
                        0.0
                    };
                    assert_eq!(r, expected);
                }
            }
        }
    }

    #[test]
    fn riverswim_optimal_goes_right() {
        let mdp = build_riverswim(6, 0.9).unwrap();
        let plan = exact_value_iteration(&mdp, 1e-10, 10_000, None).unwrap();
        assert_eq!(plan.policy.0, vec![RIVERSWIM_RIGHT; 6]);
    }

    #[test]
    fn frozenlake_rows() {
        let mdp = build_frozenlake(0.7, true, 0.8).unwrap();
        let row = mdp.row(2, DOWN);
        assert_eq!(row[10], 1.0 - 0.7);
        assert_eq!(row[5], 0.7);
        assert_eq!(row.iter().filter(|p| **p > 0.0).count(), 2);
        assert_eq!(mdp.prob(0, LEFT, 0), 0.75);
        assert_eq!(mdp.prob(0, LEFT, 4), 0.25);
        for a in 0..4 {
            let goal = mdp.row(FROZENLAKE_GOAL, a);
            assert_eq!(goal.iter().filter(|p| **p > 0.0).count(), 11);
            for &s in &reset_states() {
                assert_eq!(goal[s], 1.0 / 11.0);
            }
        }
        // Hole 5 moving Right reaches 6 with the escape probability.
        assert_eq!(mdp.prob(5, RIGHT, 6), HOLE_ESCAPE);
        assert_eq!(mdp.prob(5, RIGHT, 5), 1.0 - HOLE_ESCAPE);
        // Hole 12 moving Left is clamped, so it stays with certainty.
        assert_eq!(mdp.prob(12, LEFT, 12), 1.0);
        let plain = build_frozenlake(0.7, false, 0.8).unwrap();
        assert_eq!(plain.prob(2, DOWN, 6), 0.5);
        assert_eq!(plain.prob(2, DOWN, 1), 0.25);
        assert_eq!(plain.prob(2, DOWN, 3), 0.25);
    }

    #[test]
    fn frozenlake_reward_depends_only_on_successor() {
        let mdp = build_frozenlake(0.7, true, 0.8).unwrap();
        for s in 0..16 {
            for a in 0..4 {
                for next in 0..16 {
                    let expected = if next == FROZENLAKE_GOAL { 1.0 } else { 0.0 };
                    assert_eq!(mdp.reward(s, a, next), expected);
                }
            }
        }
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("riverswim-6".parse::<EnvSpec>().unwrap(), EnvSpec::RiverSwim(6));
        assert_eq!(EnvSpec::parse("frozenlake-risky", 0.4).unwrap(), EnvSpec::FrozenLakeRisky(0.4));
        assert!(EnvSpec::parse("frozenlake-risky", 1.5).is_err());
        assert!("riverswim-1".parse::<EnvSpec>().is_err());
        assert!("taxi".parse::<EnvSpec>().is_err());
    }

    #[test]
    fn custom_round_trip() {
        let text = "# two-state toggle\n2 1 0.5\n0 0 1 1.0 1.0\n1 0 0 0.6 0\n1 0 1 0.4 0\n";
        let mdp = parse_custom(text).unwrap();
        assert_eq!(mdp.n_states(), 2);
        assert_eq!(mdp.prob(1, 0, 0), 0.6);
        assert_eq!(mdp.reward(0, 0, 1), 1.0);
        let bad = "2 1 0.5\n0 0 1 1.0 1.0\n1 0 0 0.6 0\n1 0 1 0.3 0\n";
        assert!(matches!(parse_custom(bad), Err(Error::InvalidMdp(_))));
        assert!(matches!(parse_custom("2 1\n"), Err(Error::Parse { line: 1, .. })));
        let near = "1 1 0.5\n0 0 0 0.9999999999 0.5\n";
        assert_eq!(parse_custom(near).unwrap().prob(0, 0, 0), 1.0);
    }
}
