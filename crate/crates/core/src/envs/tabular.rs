//! Finite MDPs: construction, validation, sampling, and a plain-text loader.

use std::fmt::Write as _;
use std::path::Path;

use super::EnvError;
use crate::numcore::Rng;

const ROW_TOL: f64 = 1e-12;

/// Finite discounted MDP `(S, A, R, T, gamma, rho0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    // T(s' | s, a) at [(s * n_actions + a) * n_states + s']
    transition: Vec<f64>,
    // R(s, a) at [s * n_actions + a]
    reward: Vec<f64>,
    initial: Vec<f64>,
    gamma: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial: Vec<f64>,
        gamma: f64,
    ) -> Result<Self, EnvError> {
        if n_states == 0 || n_actions == 0 {
            return Err(EnvError::Invalid("an MDP needs at least one state and one action".into()));
        }
        let sa = n_states * n_actions;
        if transition.len() != sa * n_states || reward.len() != sa || initial.len() != n_states {
            return Err(EnvError::Invalid("table sizes do not match state/action counts".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(EnvError::Invalid(format!("discount {gamma} outside (0, 1)")));
        }
        for (row, probs) in transition.chunks(n_states).enumerate() {
            check_distribution(probs).map_err(|msg| {
                EnvError::Invalid(format!(
                    "transition row (s={}, a={}): {msg}",
                    row / n_actions,
                    row % n_actions
                ))
            })?;
        }
        check_distribution(&initial).map_err(|msg| EnvError::Invalid(format!("initial distribution: {msg}")))?;
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(EnvError::Invalid("non-finite reward".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            initial,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self, EnvError> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(EnvError::Invalid(format!("discount {gamma} outside (0, 1)")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// `T(. | s, a)`.
    pub fn next_distribution(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reset(&self, rng: &mut Rng) -> usize {
        rng.categorical(&self.initial)
    }

    /// Samples `s' ~ T(. | s, a)`; returns `(s', R(s, a))`. Tabular MDPs
    /// never terminate.
    pub fn step(&self, s: usize, a: usize, rng: &mut Rng) -> Result<(usize, f64), EnvError> {
        if s >= self.n_states {
            return Err(EnvError::InvalidState(s));
        }
        if a >= self.n_actions {
            return Err(EnvError::InvalidAction(a));
        }
        Ok((rng.categorical(self.next_distribution(s, a)), self.reward(s, a)))
    }

    /// Parses the plain-text table format.
    ///
    /// ```text
    /// # comment
    /// states 2
    /// actions 1
    /// gamma 0.9
    /// initial 1 0
    /// 0 0 1 1.0 1.0      # s a s' prob reward
    /// 1 0 0 1.0 0.0
    /// ```
    ///
    /// Every `(s, a)` must list its successors; rows for the same `(s, a)`
    /// must agree on the reward.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut n_states = None;
        let mut n_actions = None;
        let mut gamma = None;
        let mut initial = None;
        let mut rows = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| EnvError::Parse {
                line: lineno + 1,
                message: what.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("not a number: {s}")));
            let idx = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("not an index: {s}")));
            match fields[0] {
                "states" if fields.len() == 2 => n_states = Some(idx(fields[1])?),
                "actions" if fields.len() == 2 => n_actions = Some(idx(fields[1])?),
                "gamma" if fields.len() == 2 => gamma = Some(num(fields[1])?),
                "initial" => initial = Some(fields[1..].iter().map(|f| num(f)).collect::<Result<Vec<_>, _>>()?),
                _ if fields.len() == 5 => rows.push((
                    lineno + 1,
                    idx(fields[0])?,
                    idx(fields[1])?,
                    idx(fields[2])?,
                    num(fields[3])?,
                    num(fields[4])?,
                )),
                _ => return Err(bad("expected `s a s' prob reward` or a header line")),
            }
        }
        let missing = |what: &str| EnvError::Invalid(format!("missing `{what}` header"));
        let ns = n_states.ok_or_else(|| missing("states"))?;
        let na = n_actions.ok_or_else(|| missing("actions"))?;
        let gamma = gamma.ok_or_else(|| missing("gamma"))?;
        let initial = initial.ok_or_else(|| missing("initial"))?;
        let mut transition = vec![0.0; ns * na * ns];
        let mut reward: Vec<Option<f64>> = vec![None; ns * na];
        for (line, s, a, s2, p, r) in rows {
            if s >= ns || s2 >= ns || a >= na {
                return Err(EnvError::Parse {
                    line,
                    message: "index out of range".into(),
                });
            }
            transition[(s * na + a) * ns + s2] += p;
            match reward[s * na + a] {
                Some(prev) if prev != r => {
                    return Err(EnvError::Parse {
                        line,
                        message: format!("reward for (s={s}, a={a}) disagrees with an earlier row"),
                    })
                }
                _ => reward[s * na + a] = Some(r),
            }
        }
        let reward = reward
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| EnvError::Invalid(format!("no rows for (s={}, a={})", i / na, i % na))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(ns, na, transition, reward, initial, gamma)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Inverse of [`TabularMdp::parse`]; zero-probability rows are omitted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let (ns, na) = (self.n_states, self.n_actions);
        writeln!(out, "states {ns}").unwrap();
        writeln!(out, "actions {na}").unwrap();
        writeln!(out, "gamma {}", self.gamma).unwrap();
        let init: Vec<String> = self.initial.iter().map(|p| p.to_string()).collect();
        writeln!(out, "initial {}", init.join(" ")).unwrap();
        for s in 0..ns {
            for a in 0..na {
                for (s2, &p) in self.next_distribution(s, a).iter().enumerate() {
                    if p > 0.0 {
                        writeln!(out, "{s} {a} {s2} {p} {}", self.reward(s, a)).unwrap();
                    }
                }
            }
        }
        out
    }
}

fn check_distribution(p: &[f64]) -> Result<(), String> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err("negative or non-finite probability".into());
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(format!("sums to {total}, not 1"));
    }
    Ok(())
}

fn normalized_uniform(rng: &mut Rng, n: usize) -> Vec<f64> {
    // uniform draws in (0, 1] keep every entry strictly positive
    let raw: Vec<f64> = (0..n).map(|_| 1.0 - rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // push the rounding residue into the largest entry so the row sums to 1
    let residue = 1.0 - p.iter().sum::<f64>();
    let imax = (0..n).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap();
    p[imax] += residue;
    p
}

/// Random MDP with full-support normalized-uniform transition rows, rewards
/// uniform in `[0, reward_scale]`, and discount 0.99.
pub fn random_mdp(rng: &mut Rng, n_states: usize, n_actions: usize, reward_scale: f64) -> TabularMdp {
    assert!(n_states >= 1 && n_actions >= 1);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(normalized_uniform(rng, n_states));
    }
    let reward = (0..n_states * n_actions).map(|_| reward_scale * rng.uniform()).collect();
    let initial = normalized_uniform(rng, n_states);
    TabularMdp::new(n_states, n_actions, transition, reward, initial, 0.99).expect("constructed MDP is valid")
}
