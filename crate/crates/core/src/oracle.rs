//! Exact tabular quantities used as ground truth: discounted occupancy,
//! correction ratio, policy value, policy gradient, and a full-expectation
//! saddle-point solver for the ratio-estimation Lagrangian.
//!
//! Tables are `[n_states, n_actions]` matrices; policies are row-stochastic
//! tables of the same shape.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::envs::TabularMdp;
use crate::numcore::Matrix;
use crate::policies::{softmax_state_objective, SoftmaxPolicy};

const POLICY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("policy table is {got:?}, MDP needs {expected:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
    #[error("policy row for state {0} is not a distribution")]
    InvalidPolicy(usize),
    #[error("d_pi > 0 where d_D = 0 at (s={state}, a={action})")]
    Coverage { state: usize, action: usize },
    #[error("data distribution must be strictly positive, (s={state}, a={action}) is not")]
    Support { state: usize, action: usize },
    #[error("saddle solver did not converge: fixed-point residual {residual:.3e} > {tolerance:.1e}")]
    NotConverged { residual: f64, tolerance: f64, zeta: Matrix },
}

/// Exact occupancy, ratio and value of a policy against a data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactQuantities {
    pub d_pi: Matrix,
    pub zeta_star: Matrix,
    pub mu_pi: f64,
    pub d_d: Matrix,
}

impl ExactQuantities {
    pub fn compute(mdp: &TabularMdp, policy: &Matrix, d_d: &Matrix) -> Result<Self, OracleError> {
        let d_pi = stationary_distribution(mdp, policy)?;
        let zeta_star = exact_ratio(&d_pi, d_d)?;
        Ok(Self {
            mu_pi: value_under(mdp, &d_pi),
            d_pi,
            zeta_star,
            d_d: d_d.clone(),
        })
    }
}

fn check_policy(mdp: &TabularMdp, policy: &Matrix) -> Result<(), OracleError> {
    let expected = (mdp.n_states(), mdp.n_actions());
    if policy.dim() != expected {
        return Err(OracleError::Shape { expected, got: policy.dim() });
    }
    for (s, row) in policy.rows().into_iter().enumerate() {
        if row.iter().any(|&p| !(p >= 0.0)) || (row.sum() - 1.0).abs() > POLICY_TOL {
            return Err(OracleError::InvalidPolicy(s));
        }
    }
    Ok(())
}

/// `P[(s,a), (s',a')] = T(s'|s,a) π(a'|s')`.
pub fn transition_matrix(mdp: &TabularMdp, policy: &Matrix) -> DMatrix<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    DMatrix::from_fn(ns * na, ns * na, |i, j| {
        let (s, a) = (i / na, i % na);
        let (s2, a2) = (j / na, j % na);
        mdp.next_distribution(s, a)[s2] * policy[[s2, a2]]
    })
}

fn initial_pairs(mdp: &TabularMdp, policy: &Matrix) -> DVector<f64> {
    let na = mdp.n_actions();
    DVector::from_fn(mdp.n_states() * na, |i, _| mdp.initial()[i / na] * policy[[i / na, i % na]])
}

fn to_table(v: &DVector<f64>, ns: usize, na: usize) -> Matrix {
    Matrix::from_shape_fn((ns, na), |(s, a)| v[s * na + a])
}

fn to_vector(m: &Matrix) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.iter().copied())
}

/// Solves `d = (1-γ) ρ0 π + γ P^T d` by LU decomposition.
pub fn stationary_distribution(mdp: &TabularMdp, policy: &Matrix) -> Result<Matrix, OracleError> {
    check_policy(mdp, policy)?;
    let gamma = mdp.gamma();
    let p = transition_matrix(mdp, policy);
    let n = p.nrows();
    let system = DMatrix::identity(n, n) - p.transpose() * gamma;
    let rhs = initial_pairs(mdp, policy) * (1.0 - gamma);
    // I - γP^T is strictly diagonally dominant by columns for γ < 1
    let d = system.lu().solve(&rhs).expect("occupancy system is nonsingular for gamma < 1");
    Ok(to_table(&d, mdp.n_states(), mdp.n_actions()))
}

/// Max-norm residual of the occupancy fixed-point equation at `d`.
pub fn occupancy_residual(mdp: &TabularMdp, policy: &Matrix, d: &Matrix) -> f64 {
    let gamma = mdp.gamma();
    let dv = to_vector(d);
    let implied = initial_pairs(mdp, policy) * (1.0 - gamma) + transition_matrix(mdp, policy).transpose() * &dv * gamma;
    (implied - dv).amax()
}

fn value_under(mdp: &TabularMdp, d_pi: &Matrix) -> f64 {
    d_pi.iter().zip(mdp.rewards()).map(|(d, r)| d * r).sum()
}

/// Normalized per-step value `Σ d^π(s,a) R(s,a)`.
pub fn policy_value(mdp: &TabularMdp, policy: &Matrix) -> Result<f64, OracleError> {
    Ok(value_under(mdp, &stationary_distribution(mdp, policy)?))
}

/// Elementwise `d^π / d^D`; pairs outside both supports get 0.
pub fn exact_ratio(d_pi: &Matrix, d_d: &Matrix) -> Result<Matrix, OracleError> {
    if d_pi.dim() != d_d.dim() {
        return Err(OracleError::Shape { expected: d_pi.dim(), got: d_d.dim() });
    }
    let mut out = Matrix::zeros(d_pi.dim());
    for ((s, a), z) in out.indexed_iter_mut() {
        let (p, q) = (d_pi[[s, a]], d_d[[s, a]]);
        if q > 0.0 {
            *z = p / q;
        } else if p > 0.0 {
            return Err(OracleError::Coverage { state: s, action: a });
        }
    }
    Ok(out)
}

/// `Σ d^D |ζ - ζ*|`.
pub fn weighted_l1(d_d: &Matrix, zeta: &Matrix, zeta_star: &Matrix) -> f64 {
    ndarray::Zip::from(d_d)
        .and(zeta)
        .and(zeta_star)
        .fold(0.0, |acc, &w, &z, &zs| acc + w * (z - zs).abs())
}

/// Gradient over logits of `Σ_s d^π(s) Σ_a π(a|s) (Q(s,a) - α log π(a|s))`
/// with the state occupancy of the current policy held fixed.
pub fn exact_policy_gradient(mdp: &TabularMdp, policy: &SoftmaxPolicy, q_lb: &Matrix, alpha: f64) -> Result<Matrix, OracleError> {
    let table = policy_table(policy);
    let d_pi = stationary_distribution(mdp, &table)?;
    let d_state = d_pi.sum_axis(ndarray::Axis(1));
    Ok(weighted_policy_gradient(policy, q_lb, alpha, |s| d_state[s]))
}

/// Same objective as [`exact_policy_gradient`] with arbitrary state weights.
pub fn weighted_policy_gradient(policy: &SoftmaxPolicy, q_lb: &Matrix, alpha: f64, weight: impl Fn(usize) -> f64) -> Matrix {
    let mut grad = Matrix::zeros((policy.n_states, policy.n_actions));
    for s in 0..policy.n_states {
        let q_row: Vec<f64> = q_lb.row(s).to_vec();
        let (_, g) = softmax_state_objective(policy, s, &q_row, alpha);
        let w = weight(s);
        for (a, v) in g.into_iter().enumerate() {
            grad[[s, a]] = w * v;
        }
    }
    grad
}

pub fn policy_table(policy: &SoftmaxPolicy) -> Matrix {
    Matrix::from_shape_fn((policy.n_states, policy.n_actions), |(s, a)| policy.probs(s)[a])
}

/// Budget and step schedule of [`saddle_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleConfig {
    pub iterations: usize,
    /// Step size at iteration `t` is `step / sqrt(t)`.
    pub step: f64,
    /// Fraction of final iterates averaged.
    pub average_fraction: f64,
    /// Largest accepted occupancy residual of the averaged `ζ d^D`.
    pub tolerance: f64,
    /// Include the multiplier `λ` enforcing `E_{d^D}[ζ] = 1`. Redundant for
    /// the signed Lagrangian; with `|e|` every `ζ ≥ ζ*` is a maximizer
    /// without it.
    pub normalize: bool,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        Self {
            iterations: 200_000,
            step: 10.0,
            average_fraction: 0.1,
            tolerance: 1e-3,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleSolution {
    pub zeta: Matrix,
    pub nu: Matrix,
    /// Max-norm occupancy residual of `ζ d^D`.
    pub residual: f64,
}

/// Full-expectation gradient descent (ν) / ascent (ζ ≥ 0) on
///
/// ```text
/// L(ζ, ν) = (1-γ) E_{ρ0 π}[ν] + E_{d^D}[ζ · e],   e = R + γ P ν - ν
/// ```
///
/// or, with `abs_mode`, the same Lagrangian with `|e|` in place of `e`.
/// Unregularized, with the initial-state term, plus `λ (1 - E_{d^D}[ζ])` when
/// `config.normalize` is set. Updates are simultaneous extragradient steps
/// with size `step / sqrt(t)`; the returned ζ averages the final window.
pub fn saddle_solve(
    mdp: &TabularMdp,
    policy: &Matrix,
    d_d: &Matrix,
    abs_mode: bool,
    config: &SaddleConfig,
) -> Result<SaddleSolution, OracleError> {
    check_policy(mdp, policy)?;
    if d_d.dim() != policy.dim() {
        return Err(OracleError::Shape { expected: policy.dim(), got: d_d.dim() });
    }
    if let Some(((s, a), _)) = d_d.indexed_iter().find(|(_, &w)| !(w > 0.0)) {
        return Err(OracleError::Support { state: s, action: a });
    }
    let (ns, na) = policy.dim();
    let n = ns * na;
    let gamma = mdp.gamma();
    let p = transition_matrix(mdp, policy);
    let pt = p.transpose();
    let start = initial_pairs(mdp, policy) * (1.0 - gamma);
    let rewards = DVector::from_column_slice(mdp.rewards());
    let dd = to_vector(d_d);

    // (∂L/∂ν, ∂L/∂ζ, ∂L/∂λ)
    let grads = |nu: &DVector<f64>, zeta: &DVector<f64>, lambda: f64| {
        let e = &rewards + &p * nu * gamma - nu;
        let (mass, mut grad_zeta) = if abs_mode {
            let sign = e.map(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 });
            (dd.component_mul(zeta).component_mul(&sign), dd.component_mul(&e.abs()))
        } else {
            (dd.component_mul(zeta), dd.component_mul(&e))
        };
        let grad_lambda = if config.normalize {
            grad_zeta -= &dd * lambda;
            1.0 - dd.dot(zeta)
        } else {
            0.0
        };
        (&start + &pt * &mass * gamma - &mass, grad_zeta, grad_lambda)
    };
    let project = |z: &mut f64| {
        if *z < 0.0 {
            *z = 0.0
        }
    };

    let mut nu = DVector::<f64>::zeros(n);
    let mut zeta = DVector::<f64>::zeros(n);
    let mut lambda = 0.0;
    let window = ((config.iterations as f64 * config.average_fraction).ceil() as usize).clamp(1, config.iterations.max(1));
    let mut zeta_avg = DVector::<f64>::zeros(n);
    let mut nu_avg = DVector::<f64>::zeros(n);

    for t in 1..=config.iterations {
        let eta = config.step / (t as f64).sqrt();
        // extragradient: both players step from the same point twice
        let (g_nu, g_zeta, g_lambda) = grads(&nu, &zeta, lambda);
        let nu_half = &nu - g_nu * eta;
        let mut zeta_half = &zeta + g_zeta * eta;
        zeta_half.apply(project);
        let (g_nu, g_zeta, g_lambda) = grads(&nu_half, &zeta_half, lambda - g_lambda * eta);
        nu -= g_nu * eta;
        zeta += g_zeta * eta;
        lambda -= g_lambda * eta;
        zeta.apply(project);
        if t > config.iterations - window {
            zeta_avg += &zeta;
            nu_avg += &nu;
        }
    }
    zeta_avg /= window as f64;
    nu_avg /= window as f64;

    let zeta = to_table(&zeta_avg, ns, na);
    let d_implied = Matrix::from_shape_fn((ns, na), |(s, a)| zeta[[s, a]] * d_d[[s, a]]);
    let residual = occupancy_residual(mdp, policy, &d_implied);
    if !(residual <= config.tolerance) {
        return Err(OracleError::NotConverged {
            residual,
            tolerance: config.tolerance,
            zeta,
        });
    }
    Ok(SaddleSolution {
        zeta,
        nu: to_table(&nu_avg, ns, na),
        residual,
    })
}
