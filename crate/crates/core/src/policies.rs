//! Squashed-Gaussian actors, a softmax-tabular actor for exact checks, and
//! the distribution-corrected actor objectives.

use std::f64::consts::{LN_2, PI};

use crate::critics::{Bound, CriticPair};
use crate::numcore::{Matrix, Mlp, Param, Rng, Tape, TensorError, Var};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `tanh(mean + exp(log_std) * eps)` with a state-conditioned mean and
/// log-std. Actions lie in `(-1, 1)^d`.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    net: Mlp,
    action_dim: usize,
    pub alpha: f64,
}

/// Reparameterized draw recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample {
    pub action: Var,
    /// `[batch, 1]` log-density of `action`, squash correction included.
    pub log_prob: Var,
    pub pre_squash: Var,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize], alpha: f64, rng: &mut Rng) -> Self {
        let mut widths = vec![obs_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * action_dim);
        Self {
            net: Mlp::new(&widths, rng),
            action_dim,
            alpha,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_width()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    /// `(mean, clamped log_std)`, each `[batch, action_dim]`.
    pub fn head(&self, tape: &mut Tape, obs: Var, attach: bool) -> (Var, Var) {
        let out = if attach {
            self.net.forward(tape, obs)
        } else {
            self.net.forward_frozen(tape, obs)
        };
        let mean = tape.columns(out, 0, self.action_dim);
        let raw = tape.columns(out, self.action_dim, self.action_dim);
        (mean, tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX))
    }

    /// Reparameterized sample with externally supplied noise `eps`
    /// (`[batch, action_dim]`).
    pub fn sample(&self, tape: &mut Tape, obs: Var, eps: &Matrix, attach: bool) -> PolicySample {
        let (mean, log_std) = self.head(tape, obs, attach);
        let e = tape.constant(eps.clone());
        let std = tape.exp(log_std);
        let noise = tape.mul(std, e);
        let pre_squash = tape.add(mean, noise);
        let action = tape.tanh(pre_squash);

        // Gaussian part: sum_j (-eps^2/2 - log_std - ln(2 pi)/2)
        let half_eps_sq = eps.mapv(|x| -0.5 * x * x - 0.5 * (2.0 * PI).ln());
        let c = tape.constant(half_eps_sq);
        let gauss = tape.sub(c, log_std);
        // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
        let minus_two_u = tape.scale(pre_squash, -2.0);
        let sp = tape.softplus(minus_two_u);
        let u_plus_sp = tape.add(pre_squash, sp);
        let ln2_minus = tape.scale(u_plus_sp, -2.0);
        let log_det = tape.offset(ln2_minus, 2.0 * LN_2);
        let per_dim = tape.sub(gauss, log_det);
        let log_prob = tape.sum_cols(per_dim);
        PolicySample {
            action,
            log_prob,
            pre_squash,
        }
    }

    /// Sampled actions and log-probs without keeping a graph.
    pub fn sample_detached(&self, obs: &Matrix, rng: &mut Rng) -> (Matrix, Matrix) {
        let eps = self.noise(obs.nrows(), rng);
        let mut tape = Tape::new();
        let o = tape.constant(obs.clone());
        let s = self.sample(&mut tape, o, &eps, false);
        (tape.value(s.action).clone(), tape.value(s.log_prob).clone())
    }

    pub fn noise(&self, rows: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_shape_vec((rows, self.action_dim), rng.gaussian_sample(rows * self.action_dim)).unwrap()
    }

    /// `tanh(mean)` for a single observation.
    pub fn mean_action(&self, obs: &[f64]) -> Vec<f64> {
        let x = Matrix::from_shape_vec((1, obs.len()), obs.to_vec()).unwrap();
        let out = self.net.eval(&x);
        (0..self.action_dim).map(|j| out[[0, j]].tanh()).collect()
    }

    /// Mean and clamped log-std for a single observation.
    pub fn distribution(&self, obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x = Matrix::from_shape_vec((1, obs.len()), obs.to_vec()).unwrap();
        let out = self.net.eval(&x);
        let d = self.action_dim;
        let mean = (0..d).map(|j| out[[0, j]]).collect();
        let log_std = (0..d).map(|j| out[[0, d + j]].clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        (mean, log_std)
    }

    /// A stochastic action for a single observation.
    pub fn act(&self, obs: &[f64], rng: &mut Rng) -> Vec<f64> {
        let (mean, log_std) = self.distribution(obs);
        mean.iter()
            .zip(&log_std)
            .map(|(m, ls)| (m + ls.exp() * rng.normal()).tanh())
            .collect()
    }

    pub fn named_arrays(&self, prefix: &str) -> Vec<(String, Matrix)> {
        self.net
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("{prefix}.{}.{}", i / 2, if i % 2 == 0 { "weight" } else { "bias" }), p.value.clone()))
            .collect()
    }

    /// Loads weights written by [`GaussianPolicy::named_arrays`].
    pub fn load_named_arrays(&mut self, prefix: &str, arrays: &[(String, Matrix)]) -> Result<(), TensorError> {
        let expected = self.named_arrays(prefix);
        for (p, (name, current)) in self.net.params_mut().into_iter().zip(expected) {
            let found = arrays.iter().find(|(n, _)| *n == name).map(|(_, m)| m).ok_or(TensorError::LengthMismatch {
                what: "checkpoint entries",
                expected: 1,
                got: 0,
            })?;
            if found.dim() != current.dim() {
                return Err(TensorError::ShapeMismatch {
                    op: "checkpoint",
                    lhs: current.dim(),
                    rhs: found.dim(),
                });
            }
            p.value = found.clone();
        }
        Ok(())
    }
}

fn check_weights(tape: &Tape, obs: Var, weights: &[f64]) -> Result<(), TensorError> {
    let n = tape.shape(obs).0;
    if weights.len() != n {
        return Err(TensorError::LengthMismatch {
            what: "weights",
            expected: n,
            got: weights.len(),
        });
    }
    Ok(())
}

/// `sum_b w_b (Q_bound(s_b, f(s_b, eps_b)) - alpha log f(s_b, eps_b))`, to be
/// maximized. Only the policy's own parameters receive gradients; critic
/// weights enter as constants.
pub fn policy_objective(
    tape: &mut Tape,
    policy: &GaussianPolicy,
    critics: &CriticPair,
    obs: &Matrix,
    eps: &Matrix,
    weights: &[f64],
    bound: Bound,
) -> Result<Var, TensorError> {
    let o = tape.constant(obs.clone());
    check_weights(tape, o, weights)?;
    let s = policy.sample(tape, o, eps, true);
    let q = critics.bound_frozen(tape, o, s.action, bound);
    let ent = tape.scale(s.log_prob, -policy.alpha);
    let per_sample = tape.add(q, ent);
    let w = tape.column(weights);
    let weighted = tape.mul(per_sample, w);
    Ok(tape.sum(weighted))
}

/// Target-policy objective against the lower bound.
pub fn target_policy_objective(
    tape: &mut Tape,
    policy: &GaussianPolicy,
    critics: &CriticPair,
    obs: &Matrix,
    eps: &Matrix,
    weights: &[f64],
) -> Result<Var, TensorError> {
    policy_objective(tape, policy, critics, obs, eps, weights, Bound::Lower)
}

/// Exploration-policy objective against the upper bound. Nothing ties the
/// exploration parameters to the target policy.
pub fn explore_policy_objective(
    tape: &mut Tape,
    policy: &GaussianPolicy,
    critics: &CriticPair,
    obs: &Matrix,
    eps: &Matrix,
    weights: &[f64],
) -> Result<Var, TensorError> {
    policy_objective(tape, policy, critics, obs, eps, weights, Bound::Upper)
}

/// Tabular policy `pi(a | s) = softmax(logits[s])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub logits: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn new(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Self {
        assert_eq!(logits.len(), n_states * n_actions);
        Self {
            n_states,
            n_actions,
            logits,
        }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self::new(n_states, n_actions, vec![0.0; n_states * n_actions])
    }

    pub fn random(n_states: usize, n_actions: usize, scale: f64, rng: &mut Rng) -> Self {
        Self::new(n_states, n_actions, (0..n_states * n_actions).map(|_| scale * rng.normal()).collect())
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        let row = &self.logits[s * self.n_actions..(s + 1) * self.n_actions];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    pub fn log_probs(&self, s: usize) -> Vec<f64> {
        let row = &self.logits[s * self.n_actions..(s + 1) * self.n_actions];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row.iter().map(|l| l - lse).collect()
    }

    /// Full `pi(a | s)` table, row-major over states.
    pub fn table(&self) -> Vec<f64> {
        (0..self.n_states).flat_map(|s| self.probs(s)).collect()
    }

    pub fn sample(&self, s: usize, rng: &mut Rng) -> usize {
        rng.categorical(&self.probs(s))
    }
}

/// Softmax-policy analogue of the actor objective at one state:
/// `sum_a pi(a|s) (Q(s,a) - alpha log pi(a|s))`, and its exact gradient with
/// respect to the logits of `s`.
pub fn softmax_state_objective(policy: &SoftmaxPolicy, s: usize, q_row: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let p = policy.probs(s);
    let lp = policy.log_probs(s);
    let adv: Vec<f64> = q_row.iter().zip(&lp).map(|(q, l)| q - alpha * l).collect();
    let value: f64 = p.iter().zip(&adv).map(|(p, a)| p * a).sum();
    // d/dlogit_b: pi_b (adv_b - value); the -alpha terms cancel.
    let grad = p.iter().zip(&adv).map(|(p, a)| p * (a - value)).collect();
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;
    use ndarray::array;

    fn policy_with_zero_head(obs_dim: usize) -> GaussianPolicy {
        let mut rng = Rng::new(0);
        let mut p = GaussianPolicy::new(obs_dim, 1, &[4], 0.2, &mut rng);
        for param in p.params_mut() {
            param.value.fill(0.0);
        }
        p
    }

    #[test]
    fn zero_noise_gives_tanh_mean() {
        let mut rng = Rng::new(5);
        let p = GaussianPolicy::new(3, 2, &[8], 0.2, &mut rng);
        let obs = array![[0.3, -0.1, 0.7]];
        let mut tape = Tape::new();
        let o = tape.constant(obs.clone());
        let s = p.sample(&mut tape, o, &Matrix::zeros((1, 2)), true);
        let expected = p.mean_action(&[0.3, -0.1, 0.7]);
        for j in 0..2 {
            assert!((tape.value(s.action)[[0, j]] - expected[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn standard_normal_log_prob_at_zero() {
        let p = policy_with_zero_head(2);
        let mut tape = Tape::new();
        let o = tape.constant(array![[1.0, 2.0]]);
        let s = p.sample(&mut tape, o, &Matrix::zeros((1, 1)), true);
        let lp = tape.value(s.log_prob)[[0, 0]];
        assert!((lp + 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!((lp + 0.91894).abs() < 1e-5);
    }

    #[test]
    fn log_prob_matches_change_of_variables() {
        let mut rng = Rng::new(8);
        let p = GaussianPolicy::new(2, 1, &[8], 0.2, &mut rng);
        let obs = [0.4, -0.9];
        let (mean, log_std) = p.distribution(&obs);
        let eps = 1.3;
        let u = mean[0] + log_std[0].exp() * eps;
        let direct = -0.5 * eps * eps - log_std[0] - 0.5 * (2.0 * PI).ln() - (1.0 - u.tanh().powi(2)).ln();
        let mut tape = Tape::new();
        let o = tape.constant(array![[0.4, -0.9]]);
        let s = p.sample(&mut tape, o, &array![[eps]], true);
        assert!((tape.value(s.log_prob)[[0, 0]] - direct).abs() < 1e-10);
    }

    #[test]
    fn saturated_actions_keep_finite_log_prob() {
        let p = policy_with_zero_head(1);
        let mut tape = Tape::new();
        let o = tape.constant(array![[0.0]]);
        // u = 40 saturates tanh in f64 but the stable form stays finite
        let s = p.sample(&mut tape, o, &array![[40.0]], true);
        let total = tape.sum(s.log_prob);
        assert!(tape.scalar(total).unwrap().is_finite());
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let mut rng = Rng::new(13);
        let policy = GaussianPolicy::new(3, 2, &[6, 6], 0.2, &mut rng);
        let obs = Matrix::from_shape_simple_fn((5, 3), || rng.normal());
        let eps = Matrix::from_shape_simple_fn((5, 2), || rng.normal());
        let mut params = policy.net().params().to_vec();
        let mut shadow = policy.clone();
        let err = grad_check(
            |ps| {
                for (dst, src) in shadow.params_mut().into_iter().zip(ps) {
                    *dst = src.clone();
                }
                let mut t = Tape::new();
                let o = t.constant(obs.clone());
                let s = shadow.sample(&mut t, o, &eps, true);
                let l = t.mean(s.log_prob);
                Ok((t.scalar(l)?, t.backward(l)?))
            },
            &mut params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn objective_gradient_zero_for_constant_critic() {
        let mut rng = Rng::new(2);
        let mut policy = GaussianPolicy::new(2, 1, &[4], 0.0, &mut rng);
        policy.alpha = 0.0;
        let mut critics = CriticPair::new(2, 1, &[4], 2.0, 2.5, 0.005, &mut rng);
        for net in [&mut critics.q1, &mut critics.q2] {
            for p in net.params_mut() {
                p.value.fill(0.0);
            }
            let last = net.params_mut().into_iter().last().unwrap();
            last.value.fill(1.5);
        }
        let mut tape = Tape::new();
        let obs = array![[0.2, 0.1]];
        let eps = array![[0.4]];
        let j = target_policy_objective(&mut tape, &policy, &critics, &obs, &eps, &[1.0]).unwrap();
        assert!((tape.scalar(j).unwrap() - 1.5).abs() < 1e-12);
        let g = tape.backward(j).unwrap();
        for p in policy.net().params() {
            assert!(g.get(p.id()).map_or(true, |m| m.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn objectives_touch_only_own_parameters() {
        let mut rng = Rng::new(3);
        let target = GaussianPolicy::new(3, 1, &[8], 0.2, &mut rng);
        let explore = GaussianPolicy::new(3, 1, &[8], 0.2, &mut rng);
        let critics = CriticPair::new(3, 1, &[8], 2.0, 2.5, 0.005, &mut rng);
        let obs = Matrix::from_shape_simple_fn((4, 3), || rng.normal());
        let eps = Matrix::from_shape_simple_fn((4, 1), || rng.normal());
        let mut tape = Tape::new();
        let j = explore_policy_objective(&mut tape, &explore, &critics, &obs, &eps, &[0.25; 4]).unwrap();
        let g = tape.backward(j).unwrap();
        let mut own: Vec<_> = explore.net().params().iter().map(|p| p.id()).collect();
        own.sort();
        assert_eq!(g.param_ids().collect::<Vec<_>>(), own);
        assert!(target.net().params().iter().all(|p| !g.contains(p.id())));
    }

    #[test]
    fn bounds_coincide_without_spread() {
        let mut rng = Rng::new(4);
        let policy = GaussianPolicy::new(2, 1, &[8], 0.2, &mut rng);
        let mut critics = CriticPair::new(2, 1, &[8], 2.0, 2.0, 0.005, &mut rng);
        critics.q2 = critics.q1.clone();
        let obs = Matrix::from_shape_simple_fn((3, 2), || rng.normal());
        let eps = Matrix::from_shape_simple_fn((3, 1), || rng.normal());
        let w = [0.5, 0.3, 0.2];
        let mut tape = Tape::new();
        let a = target_policy_objective(&mut tape, &policy, &critics, &obs, &eps, &w).unwrap();
        let b = explore_policy_objective(&mut tape, &policy, &critics, &obs, &eps, &w).unwrap();
        assert_eq!(tape.scalar(a).unwrap(), tape.scalar(b).unwrap());
    }

    #[test]
    fn one_hot_weights_select_first_state() {
        let mut rng = Rng::new(6);
        let policy = GaussianPolicy::new(2, 1, &[8], 0.2, &mut rng);
        let critics = CriticPair::new(2, 1, &[8], 2.0, 2.5, 0.005, &mut rng);
        let mut obs = Matrix::from_shape_simple_fn((3, 2), || rng.normal());
        let eps = Matrix::from_shape_simple_fn((3, 1), || rng.normal());
        let w = [1.0, 0.0, 0.0];
        let mut tape = Tape::new();
        let a = explore_policy_objective(&mut tape, &policy, &critics, &obs, &eps, &w).unwrap();
        obs[[1, 0]] += 3.0;
        obs[[2, 1]] -= 1.0;
        let b = explore_policy_objective(&mut tape, &policy, &critics, &obs, &eps, &w).unwrap();
        assert_eq!(tape.scalar(a).unwrap(), tape.scalar(b).unwrap());
    }

    #[test]
    fn softmax_gradient_worked_example() {
        let p = SoftmaxPolicy::uniform(1, 2);
        let (_, g) = softmax_state_objective(&p, 0, &[1.0, 0.0], 0.0);
        assert!((g[0] - 0.25).abs() < 1e-15 && (g[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = Rng::new(10);
        let p = SoftmaxPolicy::random(2, 3, 1.0, &mut rng);
        let q = [0.3, -1.0, 2.0];
        let (_, g) = softmax_state_objective(&p, 1, &q, 0.3);
        for b in 0..3 {
            let h = 1e-6;
            let mut plus = p.clone();
            plus.logits[3 + b] += h;
            let mut minus = p.clone();
            minus.logits[3 + b] -= h;
            let fd = (softmax_state_objective(&plus, 1, &q, 0.3).0 - softmax_state_objective(&minus, 1, &q, 0.3).0) / (2.0 * h);
            assert!((fd - g[b]).abs() < 1e-8, "{fd} vs {}", g[b]);
        }
    }
}
