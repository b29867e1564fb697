//! Environments and the replay buffer.

mod buffer;
mod continuous;
mod tabular;

pub use buffer::{Batch, ReplayBuffer, Transition};
pub use continuous::{wrap_angle, Pendulum, PointMass};
pub use tabular::{random_mdp, TabularMdp};

use thiserror::Error;

use crate::numcore::Rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error("state index {0} out of range")]
    InvalidState(usize),
    #[error("action index {0} out of range")]
    InvalidAction(usize),
    #[error("action has {got} components, environment expects {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
}

/// A tabular MDP exposed through the continuous-control interface.
///
/// Observations are one-hot state vectors. The single action coordinate in
/// `[-1, 1]` is split into `n_actions` equal bins.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularEnv {
    pub mdp: TabularMdp,
    pub horizon: usize,
}

impl TabularEnv {
    pub fn action_bin(&self, a: f64) -> usize {
        let n = self.mdp.n_actions();
        let a = if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) };
        (((a + 1.0) / 2.0 * n as f64).floor() as usize).min(n - 1)
    }

    /// Lower and upper edges of action bin `k` in `[-1, 1]`.
    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let n = self.mdp.n_actions() as f64;
        (-1.0 + 2.0 * k as f64 / n, -1.0 + 2.0 * (k + 1) as f64 / n)
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.mdp.n_states()];
        v[s] = 1.0;
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Genuine termination; none of the built-in environments terminate.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    PointMass(PointMass),
    Pendulum(Pendulum),
    Tabular(TabularEnv),
}

impl Env {
    pub fn name(&self) -> &'static str {
        match self {
            Env::PointMass(_) => "point-mass",
            Env::Pendulum(_) => "pendulum",
            Env::Tabular(_) => "tabular",
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Env::PointMass(_) => 4,
            Env::Pendulum(_) => 3,
            Env::Tabular(t) => t.mdp.n_states(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            Env::PointMass(_) => 2,
            Env::Pendulum(_) | Env::Tabular(_) => 1,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Env::PointMass(e) => e.horizon,
            Env::Pendulum(e) => e.horizon,
            Env::Tabular(e) => e.horizon,
        }
    }

    /// Internal state drawn from the initial distribution.
    pub fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Env::PointMass(e) => e.reset(rng),
            Env::Pendulum(e) => e.reset(rng),
            Env::Tabular(e) => vec![e.mdp.reset(rng) as f64],
        }
    }

    pub fn observe(&self, state: &[f64]) -> Vec<f64> {
        match self {
            Env::PointMass(_) => state.to_vec(),
            Env::Pendulum(_) => Pendulum::observe(state),
            Env::Tabular(e) => e.one_hot(state[0] as usize),
        }
    }

    pub fn step(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> Result<StepOutcome, EnvError> {
        if action.len() != self.action_dim() {
            return Err(EnvError::ActionDim {
                expected: self.action_dim(),
                got: action.len(),
            });
        }
        let (state, reward) = match self {
            Env::PointMass(e) => e.step(state, action),
            Env::Pendulum(e) => e.step(state, action),
            Env::Tabular(e) => {
                let s = state[0];
                if s < 0.0 || s.fract() != 0.0 {
                    return Err(EnvError::Invalid(format!("tabular state {s} is not an index")));
                }
                let (next, r) = e.mdp.step(s as usize, e.action_bin(action[0]), rng)?;
                (vec![next as f64], r)
            }
        };
        Ok(StepOutcome {
            state,
            reward,
            done: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_bins_partition_the_box() {
        let env = TabularEnv {
            mdp: random_mdp(&mut Rng::new(0), 2, 3, 1.0),
            horizon: 10,
        };
        assert_eq!(env.action_bin(-1.0), 0);
        assert_eq!(env.action_bin(-0.34), 0);
        assert_eq!(env.action_bin(0.0), 1);
        assert_eq!(env.action_bin(0.34), 2);
        assert_eq!(env.action_bin(1.0), 2);
        assert_eq!(env.bin_edges(1), (-1.0 + 2.0 / 3.0, -1.0 + 4.0 / 3.0));
    }

    #[test]
    fn continuous_states_stay_finite() {
        let mut rng = Rng::new(3);
        for env in [Env::PointMass(PointMass::default()), Env::Pendulum(Pendulum::default())] {
            for _ in 0..20 {
                let mut s = env.reset(&mut rng);
                for _ in 0..env.horizon() {
                    let a: Vec<f64> = (0..env.action_dim()).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
                    let out = env.step(&s, &a, &mut rng).unwrap();
                    assert!(out.state.iter().all(|x| x.is_finite()) && out.reward.is_finite());
                    assert!(!out.done);
                    s = out.state;
                }
            }
        }
    }

    #[test]
    fn wrong_action_dimension() {
        let env = Env::Pendulum(Pendulum::default());
        let s = env.reset(&mut Rng::new(0));
        assert!(matches!(
            env.step(&s, &[0.0, 0.0], &mut Rng::new(0)),
            Err(EnvError::ActionDim { expected: 1, got: 2 })
        ));
    }
}
