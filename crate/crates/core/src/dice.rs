//! Distribution-correction ratio estimation.
//!
//! A ν network (with a slowly tracking target copy ν') and a ζ network are
//! trained by block-coordinate gradient descent-ascent on three losses:
//!
//! ```text
//! L_λ = λ (1 - E_D[ζ])
//! L_ν = E_D[ζ |Bν - ν|] + α_ν E_D[g(ν)]
//! L_ζ = α_ζ E_D[g(ζ)] - E_D[ζ (|Bν - ν| - λ)]
//! ```
//!
//! with `Bν(s, a) = α_R r + γ ν'(s', a')`, `a' ~ π_T(s')`, and
//! `g(x) = |x|^m / m`. Each loss sees every other variable as a constant.
//! There is no initial-state term. ζ is kept nonnegative by squaring the raw
//! network output.
//!
//! Per-batch weights come from self-normalization with a temperature:
//! `w_b = ζ_b^(1/T) / Σ ζ^(1/T)`.

use thiserror::Error;

use crate::numcore::{column, Adam, Matrix, Mlp, Param, Rng, Tape, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct DiceConfig {
    pub alpha_nu: f64,
    pub alpha_zeta: f64,
    pub alpha_r: f64,
    /// Regularizer exponent `m` in `g(x) = |x|^m / m`.
    pub exponent: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub lr: f64,
}

impl Default for DiceConfig {
    fn default() -> Self {
        Self {
            alpha_nu: 1.0,
            alpha_zeta: 1.0,
            alpha_r: 1.0,
            exponent: 1.5,
            gamma: 0.99,
            temperature: 3.0,
            lr: 1e-4,
        }
    }
}

impl DiceConfig {
    pub fn validate(&self) -> Result<(), DiceError> {
        let bad = |what: &str, v: f64| Err(DiceError::Config(format!("{what} = {v}")));
        if !(self.alpha_nu > 0.0) {
            return bad("alpha_nu must be > 0", self.alpha_nu);
        }
        if !(self.alpha_zeta > 0.0) {
            return bad("alpha_zeta must be > 0", self.alpha_zeta);
        }
        if !(self.exponent > 1.0) {
            return bad("regularizer exponent must be > 1", self.exponent);
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)", self.gamma);
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be > 0", self.temperature);
        }
        if !(self.lr >= 0.0) || !self.alpha_r.is_finite() {
            return bad("learning rate must be >= 0", self.lr);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiceError {
    #[error("invalid DICE configuration: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("{loss}: {source}")]
    Numeric {
        loss: &'static str,
        #[source]
        source: TensorError,
    },
}

/// Feature rows for `(s, a)` and `(s', a')` with `a' ~ π_T(s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceBatch {
    pub sa: Matrix,
    pub next_sa: Matrix,
    pub rewards: Matrix,
}

impl DiceBatch {
    pub fn len(&self) -> usize {
        self.sa.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss values and multiplier state after one update, all measured before
/// the parameter step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiceDiagnostics {
    pub loss_nu: f64,
    pub loss_zeta: f64,
    pub loss_lambda: f64,
    pub lambda: f64,
    pub mean_zeta: f64,
}

#[derive(Debug, Clone)]
pub struct DiceState {
    pub nu: Mlp,
    pub nu_target: Mlp,
    pub zeta: Mlp,
    pub lambda: Param,
    pub config: DiceConfig,
    opt_nu: Adam,
    opt_zeta: Adam,
    opt_lambda: Adam,
}

impl DiceState {
    pub fn new(input_dim: usize, hidden: &[usize], config: DiceConfig, rng: &mut Rng) -> Result<Self, DiceError> {
        config.validate()?;
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let nu = Mlp::new(&widths, rng);
        let zeta = Mlp::new(&widths, rng);
        Ok(Self {
            nu_target: nu.fresh_copy(),
            nu,
            zeta,
            lambda: Param::new(Matrix::zeros((1, 1))),
            opt_nu: Adam::new(config.lr),
            opt_zeta: Adam::new(config.lr),
            opt_lambda: Adam::new(config.lr),
            config,
        })
    }

    pub fn lambda_value(&self) -> f64 {
        self.lambda.value[[0, 0]]
    }

    /// `ζ(s, a) = ζ_raw(s, a)^2` for each feature row.
    pub fn zeta_values(&self, sa: &Matrix) -> Vec<f64> {
        self.zeta.eval(sa).iter().map(|z| z * z).collect()
    }

    pub fn zeta_on_tape(&self, tape: &mut Tape, sa: Var) -> Var {
        let raw = self.zeta.forward(tape, sa);
        tape.square(raw)
    }

    /// Self-normalized weights at the configured temperature.
    pub fn weights(&self, sa: &Matrix) -> Vec<f64> {
        normalize_zeta(&self.zeta_values(sa), self.config.temperature)
    }

    pub fn soft_update_target(&mut self, tau: f64) {
        self.nu_target.soft_update_from(&self.nu, tau);
    }

    /// One Adam step on ν, ζ and λ in that order. All three losses are
    /// evaluated at the same pre-update values.
    pub fn update(&mut self, batch: &DiceBatch) -> Result<DiceDiagnostics, DiceError> {
        if batch.is_empty() {
            return Err(DiceError::EmptyBatch);
        }
        let cfg = self.config.clone();
        let next_nu = self.nu_target.eval(&batch.next_sa);
        let target = bellman_nu(&batch.rewards, &next_nu, cfg.alpha_r, cfg.gamma);
        let zeta_now = self.zeta_values(&batch.sa);
        let lambda = self.lambda_value();
        let numeric = |loss| move |source| DiceError::Numeric { loss, source };

        let mut tape = Tape::new();
        let sa = tape.constant(batch.sa.clone());
        let nu = self.nu.forward(&mut tape, sa);
        let abs_residual: Vec<f64> = tape.value(nu).iter().zip(target.iter()).map(|(n, t)| (t - n).abs()).collect();
        let l_nu = loss_nu(&mut tape, nu, &target, &zeta_now, cfg.alpha_nu, cfg.exponent).map_err(numeric("loss_nu"))?;
        let loss_nu_value = tape.scalar(l_nu).map_err(numeric("loss_nu"))?;
        let g_nu = tape.backward(l_nu).map_err(numeric("loss_nu"))?;

        let mut tape = Tape::new();
        let sa = tape.constant(batch.sa.clone());
        let zeta = self.zeta_on_tape(&mut tape, sa);
        let l_zeta = loss_zeta(&mut tape, zeta, &abs_residual, lambda, cfg.alpha_zeta, cfg.exponent).map_err(numeric("loss_zeta"))?;
        let loss_zeta_value = tape.scalar(l_zeta).map_err(numeric("loss_zeta"))?;
        let g_zeta = tape.backward(l_zeta).map_err(numeric("loss_zeta"))?;

        let mut tape = Tape::new();
        let lam = tape.param(&self.lambda);
        let l_lambda = loss_lambda(&mut tape, lam, &zeta_now);
        let loss_lambda_value = tape.scalar(l_lambda).map_err(numeric("loss_lambda"))?;
        let g_lambda = tape.backward(l_lambda).map_err(numeric("loss_lambda"))?;

        self.opt_nu.step(&mut self.nu.params_mut(), &g_nu).map_err(numeric("loss_nu"))?;
        self.opt_zeta.step(&mut self.zeta.params_mut(), &g_zeta).map_err(numeric("loss_zeta"))?;
        self.opt_lambda.step(&mut [&mut self.lambda], &g_lambda).map_err(numeric("loss_lambda"))?;

        Ok(DiceDiagnostics {
            loss_nu: loss_nu_value,
            loss_zeta: loss_zeta_value,
            loss_lambda: loss_lambda_value,
            lambda,
            mean_zeta: zeta_now.iter().sum::<f64>() / zeta_now.len() as f64,
        })
    }
}

/// `α_R r + γ ν'(s', a')`.
pub fn bellman_nu(rewards: &Matrix, next_nu: &Matrix, alpha_r: f64, gamma: f64) -> Matrix {
    let mut out = rewards * alpha_r;
    out.zip_mut_with(next_nu, |o, &n| *o += gamma * n);
    out
}

/// `g(x) = |x|^m / m` on the tape.
fn regularizer(tape: &mut Tape, x: Var, m: f64) -> Var {
    let a = tape.abs(x);
    let p = tape.pow(a, m);
    tape.scale(p, 1.0 / m)
}

/// `λ (1 - mean ζ)` with ζ constant.
pub fn loss_lambda(tape: &mut Tape, lambda: Var, zeta: &[f64]) -> Var {
    let mean = zeta.iter().sum::<f64>() / zeta.len() as f64;
    tape.scale(lambda, 1.0 - mean)
}

/// `mean(ζ |target - ν|) + α_ν mean(g(ν))` with ζ and the target constant.
pub fn loss_nu(tape: &mut Tape, nu: Var, target: &Matrix, zeta: &[f64], alpha_nu: f64, m: f64) -> Result<Var, TensorError> {
    let n = tape.shape(nu).0;
    for (what, got) in [("bellman targets", target.nrows()), ("zeta values", zeta.len())] {
        if got != n {
            return Err(TensorError::LengthMismatch { what, expected: n, got });
        }
    }
    let t = tape.constant(target.clone());
    let z = tape.column(zeta);
    let resid = tape.sub(t, nu);
    let abs = tape.abs(resid);
    let weighted = tape.mul(z, abs);
    let fit = tape.mean(weighted);
    let g = regularizer(tape, nu, m);
    let reg_mean = tape.mean(g);
    let reg = tape.scale(reg_mean, alpha_nu);
    Ok(tape.add(fit, reg))
}

/// `α_ζ mean(g(ζ)) - mean(ζ (|δ| - λ))` with `|δ|` and λ constant.
pub fn loss_zeta(tape: &mut Tape, zeta: Var, abs_residual: &[f64], lambda: f64, alpha_zeta: f64, m: f64) -> Result<Var, TensorError> {
    let n = tape.shape(zeta).0;
    if abs_residual.len() != n {
        return Err(TensorError::LengthMismatch {
            what: "bellman residuals",
            expected: n,
            got: abs_residual.len(),
        });
    }
    let shifted: Vec<f64> = abs_residual.iter().map(|d| d - lambda).collect();
    let c = tape.column(&shifted);
    let g = regularizer(tape, zeta, m);
    let reg_mean = tape.mean(g);
    let reg = tape.scale(reg_mean, alpha_zeta);
    let gain = tape.mul(zeta, c);
    let gain_mean = tape.mean(gain);
    Ok(tape.sub(reg, gain_mean))
}

/// `ζ^(1/T) / Σ ζ^(1/T)`; an all-zero batch falls back to uniform weights.
pub fn normalize_zeta(zeta: &[f64], temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    let n = zeta.len();
    // log-space keeps large ratios and tiny temperatures finite
    let logs: Vec<f64> = zeta
        .iter()
        .map(|&z| if z > 0.0 { z.ln() / temperature } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![1.0 / n as f64; n];
    }
    let e: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// `Σ_b w_b r_b`.
pub fn dual_estimate(weights: &[f64], rewards: &[f64]) -> f64 {
    assert_eq!(weights.len(), rewards.len());
    weights.iter().zip(rewards).map(|(w, r)| w * r).sum()
}

/// `[n, 1]` column of batch rewards, convenience for tests and tooling.
pub fn reward_column(rewards: &[f64]) -> Matrix {
    column(rewards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;
    use ndarray::array;

    #[test]
    fn bellman_nu_examples() {
        let b = bellman_nu(&array![[1.0]], &array![[0.0]], 1.0, 0.99);
        assert_eq!(b[[0, 0]], 1.0);
        let b = bellman_nu(&array![[0.0]], &array![[10.0]], 1.0, 0.99);
        assert!((b[[0, 0]] - 9.9).abs() < 1e-12);
        let b = bellman_nu(&array![[3.0]], &array![[0.0]], 2.0, 0.99);
        assert_eq!(b[[0, 0]], 6.0);
    }

    #[test]
    fn loss_lambda_examples() {
        let mut tape = Tape::new();
        let p = Param::new(array![[7.0]]);
        let lam = tape.param(&p);
        let l = loss_lambda(&mut tape, lam, &[0.5, 1.5]);
        assert_eq!(tape.scalar(l).unwrap(), 0.0);
        let p2 = Param::new(array![[2.0]]);
        let lam2 = tape.param(&p2);
        let l2 = loss_lambda(&mut tape, lam2, &[0.5]);
        assert_eq!(tape.scalar(l2).unwrap(), 1.0);
        let g = tape.backward(l2).unwrap();
        assert_eq!(g.get(p2.id()).unwrap()[[0, 0]], 0.5);
    }

    #[test]
    fn loss_nu_worked_value() {
        let mut tape = Tape::new();
        let nu = tape.constant(array![[0.5]]);
        let l = loss_nu(&mut tape, nu, &array![[1.0]], &[1.0], 1.0, 1.5).unwrap();
        // 0.5 + (1/1.5) * 0.5^1.5
        let expected = 0.5 + 0.5f64.powf(1.5) / 1.5;
        assert!((tape.scalar(l).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.735702260395516).abs() < 1e-14);
    }

    #[test]
    fn loss_nu_zero_case() {
        let mut tape = Tape::new();
        let nu = tape.constant(Matrix::zeros((3, 1)));
        let l = loss_nu(&mut tape, nu, &column(&[1.0, -2.0, 3.0]), &[0.0; 3], 1.0, 1.5).unwrap();
        assert_eq!(tape.scalar(l).unwrap(), 0.0);
    }

    #[test]
    fn loss_zeta_quadratic_first_order_condition() {
        // m = 2, α_ζ = 1, |δ| = 1, λ = 0: L(ζ) = ζ²/2 - ζ, minimized at ζ = 1
        for (z, expected_grad) in [(1.0, 0.0), (0.25, -0.75), (2.0, 1.0)] {
            let p = Param::new(array![[z]]);
            let mut tape = Tape::new();
            let zv = tape.param(&p);
            let l = loss_zeta(&mut tape, zv, &[1.0], 0.0, 1.0, 2.0).unwrap();
            let g = tape.backward(l).unwrap().get(p.id()).unwrap()[[0, 0]];
            assert!((g - expected_grad).abs() < 1e-12);
        }
    }

    #[test]
    fn large_lambda_pushes_zeta_down() {
        let p = Param::new(column(&[0.3, 1.2, 2.0]));
        let mut tape = Tape::new();
        let zv = tape.param(&p);
        let l = loss_zeta(&mut tape, zv, &[0.1, 0.5, 0.2], 1.0, 1.0, 1.5).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(p.id()).unwrap().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn normalization_examples() {
        let w = normalize_zeta(&[1.0, 1.0, 1.0], 3.0);
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let w = normalize_zeta(&[4.0, 1.0], 1.0);
        assert!((w[0] - 0.8).abs() < 1e-15 && (w[1] - 0.2).abs() < 1e-15);
        let w = normalize_zeta(&[4.0, 1.0], 2.0);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(normalize_zeta(&[0.0, 0.0], 3.0), vec![0.5, 0.5]);
        assert_eq!(normalize_zeta(&[0.0, 2.0], 3.0), vec![0.0, 1.0]);
    }

    #[test]
    fn dual_estimate_examples() {
        assert_eq!(dual_estimate(&[0.5, 0.5], &[1.0, 3.0]), 2.0);
        let r = [0.2, 0.4, 0.9];
        let u = [1.0 / 3.0; 3];
        assert!((dual_estimate(&u, &r) - 0.5).abs() < 1e-15);
    }

    fn toy_state(rng: &mut Rng) -> (DiceState, DiceBatch) {
        let state = DiceState::new(3, &[16, 16], DiceConfig::default(), rng).unwrap();
        let batch = DiceBatch {
            sa: Matrix::from_shape_simple_fn((8, 3), || rng.normal()),
            next_sa: Matrix::from_shape_simple_fn((8, 3), || rng.normal()),
            rewards: Matrix::from_shape_simple_fn((8, 1), || rng.uniform()),
        };
        (state, batch)
    }

    #[test]
    fn stop_gradient_contract() {
        let mut rng = Rng::new(4);
        let (state, batch) = toy_state(&mut rng);
        let ids = |m: &Mlp| m.params().iter().map(|p| p.id()).collect::<Vec<_>>();
        let target = bellman_nu(&batch.rewards, &state.nu_target.eval(&batch.next_sa), 1.0, 0.99);
        let zeta_now = state.zeta_values(&batch.sa);

        let mut tape = Tape::new();
        let sa = tape.constant(batch.sa.clone());
        let nu = state.nu.forward(&mut tape, sa);
        let l = loss_nu(&mut tape, nu, &target, &zeta_now, 1.0, 1.5).unwrap();
        let g = tape.backward(l).unwrap();
        let mut want = ids(&state.nu);
        want.sort();
        assert_eq!(g.param_ids().collect::<Vec<_>>(), want);

        let mut tape = Tape::new();
        let sa = tape.constant(batch.sa.clone());
        let z = state.zeta_on_tape(&mut tape, sa);
        let l = loss_zeta(&mut tape, z, &[0.5; 8], 0.1, 1.0, 1.5).unwrap();
        let g = tape.backward(l).unwrap();
        let mut want = ids(&state.zeta);
        want.sort();
        assert_eq!(g.param_ids().collect::<Vec<_>>(), want);

        let mut tape = Tape::new();
        let lam = tape.param(&state.lambda);
        let l = loss_lambda(&mut tape, lam, &zeta_now);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.param_ids().collect::<Vec<_>>(), vec![state.lambda.id()]);
    }

    #[test]
    fn zeta_loss_gradient_through_squaring() {
        let mut rng = Rng::new(9);
        let (state, batch) = toy_state(&mut rng);
        let residual: Vec<f64> = (0..8).map(|_| rng.uniform()).collect();
        let mut params = state.zeta.params().to_vec();
        let mut shadow = state.zeta.clone();
        let err = grad_check(
            |ps| {
                for (dst, src) in shadow.params_mut().into_iter().zip(ps) {
                    *dst = src.clone();
                }
                let mut tape = Tape::new();
                let sa = tape.constant(batch.sa.clone());
                let raw = shadow.forward(&mut tape, sa);
                let z = tape.square(raw);
                let l = loss_zeta(&mut tape, z, &residual, 0.2, 1.0, 1.5)?;
                Ok((tape.scalar(l)?, tape.backward(l)?))
            },
            &mut params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_learning_rate_leaves_state() {
        let mut rng = Rng::new(5);
        let (mut state, batch) = toy_state(&mut rng);
        state.config.lr = 0.0;
        state.opt_nu = Adam::new(0.0);
        state.opt_zeta = Adam::new(0.0);
        state.opt_lambda = Adam::new(0.0);
        let before = (state.nu.params().to_vec(), state.zeta.params().to_vec(), state.lambda.clone());
        state.update(&batch).unwrap();
        assert_eq!(before.0, state.nu.params().to_vec());
        assert_eq!(before.1, state.zeta.params().to_vec());
        assert_eq!(before.2, state.lambda);
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut rng = Rng::new(6);
            let (mut state, batch) = toy_state(&mut rng);
            for _ in 0..5 {
                state.update(&batch).unwrap();
            }
            (
                state.nu.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>(),
                state.zeta.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>(),
                state.lambda_value(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_unregularized_config() {
        let cfg = DiceConfig {
            alpha_zeta: 0.0,
            ..DiceConfig::default()
        };
        assert!(DiceState::new(2, &[4], cfg, &mut Rng::new(0)).is_err());
    }
}
