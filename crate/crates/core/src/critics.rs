//! Twin Q networks with target copies, confidence bounds, and the weighted
//! temporal-difference loss.

use crate::numcore::{Matrix, Mlp, Param, Rng, Tape, TensorError, Var};

/// Mean, spread and the two confidence bounds of a pair of Q estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn q_bounds(q1: f64, q2: f64, beta_ub: f64, beta_lb: f64) -> Bounds {
    debug_assert!(beta_ub >= 0.0 && beta_lb >= 0.0);
    let mean = 0.5 * (q1 + q2);
    let std = 0.5 * (q1 - q2).abs();
    // anchored on min/max so that beta = 1 reproduces them bit for bit
    Bounds {
        mean,
        std,
        lower: q1.min(q2) + (1.0 - beta_lb) * std,
        upper: q1.max(q2) + (beta_ub - 1.0) * std,
    }
}

/// Which confidence bound an actor objective maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct CriticPair {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub beta_ub: f64,
    pub beta_lb: f64,
    pub tau: f64,
}

impl CriticPair {
    /// Two identically shaped, independently initialized critics over
    /// `[obs, action]`; targets start as exact copies.
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize], beta_ub: f64, beta_lb: f64, tau: f64, rng: &mut Rng) -> Self {
        let mut widths = vec![obs_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let q1 = Mlp::new(&widths, rng);
        let q2 = Mlp::new(&widths, rng);
        Self {
            q1_target: q1.fresh_copy(),
            q2_target: q2.fresh_copy(),
            q1,
            q2,
            beta_ub,
            beta_lb,
            tau,
        }
    }

    /// Both online critics attached to the graph.
    pub fn forward(&self, tape: &mut Tape, obs: Var, action: Var) -> (Var, Var) {
        let sa = tape.concat(&[obs, action]);
        (self.q1.forward(tape, sa), self.q2.forward(tape, sa))
    }

    /// A confidence bound of the online critics with their weights frozen;
    /// gradients still reach `action`.
    pub fn bound_frozen(&self, tape: &mut Tape, obs: Var, action: Var, which: Bound) -> Var {
        let sa = tape.concat(&[obs, action]);
        let q1 = self.q1.forward_frozen(tape, sa);
        let q2 = self.q2.forward_frozen(tape, sa);
        bound_on_tape(tape, q1, q2, self.beta_ub, self.beta_lb, which)
    }

    /// `min(Q'1, Q'2)` at the given state-action rows.
    pub fn target_min(&self, obs: &Matrix, action: &Matrix) -> Matrix {
        let sa = ndarray::concatenate(ndarray::Axis(1), &[obs.view(), action.view()]).unwrap();
        let a = self.q1_target.eval(&sa);
        let b = self.q2_target.eval(&sa);
        ndarray::Zip::from(&a).and(&b).map_collect(|&x, &y| x.min(y))
    }

    pub fn soft_update(&mut self) {
        self.q1_target.soft_update_from(&self.q1, self.tau);
        self.q2_target.soft_update_from(&self.q2, self.tau);
    }

    pub fn online_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.q1.params_mut();
        v.extend(self.q2.params_mut());
        v
    }
}

/// Elementwise `mu -/+ beta * sigma` from two Q columns on the tape.
pub fn bound_on_tape(tape: &mut Tape, q1: Var, q2: Var, beta_ub: f64, beta_lb: f64, which: Bound) -> Var {
    let sum = tape.add(q1, q2);
    let mean = tape.scale(sum, 0.5);
    let diff = tape.sub(q1, q2);
    let spread = tape.abs(diff);
    let (sign, beta) = match which {
        Bound::Lower => (-1.0, beta_lb),
        Bound::Upper => (1.0, beta_ub),
    };
    let shift = tape.scale(spread, 0.5 * sign * beta);
    tape.add(mean, shift)
}

/// `r + gamma * (1 - done) * (min_i Q'_i(s', a') - alpha * log pi(a' | s'))`.
pub fn bellman_target(rewards: &Matrix, dones: &Matrix, next_min_q: &Matrix, next_log_prob: &Matrix, alpha: f64, gamma: f64) -> Matrix {
    let mut out = rewards.clone();
    ndarray::Zip::from(&mut out)
        .and(dones)
        .and(next_min_q)
        .and(next_log_prob)
        .for_each(|o, &d, &q, &lp| *o += gamma * (1.0 - d) * (q - alpha * lp));
    out
}

/// `sum_b w_b (Q(s_b, a_b) - target_b)^2` with detached targets and weights.
pub fn critic_loss_corrected(tape: &mut Tape, q: Var, targets: &Matrix, weights: &[f64]) -> Result<Var, TensorError> {
    let n = tape.shape(q).0;
    for (what, got) in [("targets", targets.nrows()), ("weights", weights.len())] {
        if got != n {
            return Err(TensorError::LengthMismatch { what, expected: n, got });
        }
    }
    let t = tape.constant(targets.clone());
    let w = tape.column(weights);
    let err = tape.sub(q, t);
    let sq = tape.square(err);
    let weighted = tape.mul(sq, w);
    Ok(tape.sum(weighted))
}
