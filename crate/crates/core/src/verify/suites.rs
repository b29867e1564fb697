use crate::critics::{bellman_target, critic_loss_corrected, q_bounds, CriticPair};
use crate::dice::{bellman_nu, dual_estimate, loss_lambda, loss_nu, loss_zeta, normalize_zeta, DiceConfig, DiceState};
use crate::envs::random_mdp;
use crate::numcore::{grad_check, Matrix, Param, Rng, Tape, TensorError, Var};
use crate::oracle::{exact_policy_gradient, policy_table, saddle_solve, weighted_l1, ExactQuantities, SaddleConfig};
use crate::policies::{explore_policy_objective, softmax_state_objective, target_policy_objective, GaussianPolicy, SoftmaxPolicy};

use super::fixtures::{train_tabular_dice, TabularDiceFixture};
use super::{Check, Relation, Report};

const FD_STEP: f64 = 1e-5;
const GRAD_TOLERANCE: f64 = 1e-4;

fn failed(name: &str, err: impl std::fmt::Display) -> Check {
    Check::new(format!("{name} ({err})"), f64::NAN, Relation::Below, 0.0)
}

/// Finite-difference check of `loss` over the parameters `params_of` exposes.
fn fd_check<N: Clone>(
    name: &str,
    net: &N,
    params_of: impl Fn(&mut N) -> Vec<&mut Param>,
    loss: impl Fn(&mut Tape, &N) -> Result<Var, TensorError>,
) -> Check {
    let mut shadow = net.clone();
    let mut params: Vec<Param> = params_of(&mut shadow).into_iter().map(|p| p.clone()).collect();
    let result = grad_check(
        |ps| {
            for (dst, src) in params_of(&mut shadow).into_iter().zip(ps) {
                *dst = src.clone();
            }
            let mut tape = Tape::new();
            let l = loss(&mut tape, &shadow)?;
            Ok((tape.scalar(l)?, tape.backward(l)?))
        },
        &mut params,
        FD_STEP,
    );
    match result {
        Ok(err) => Check::new(format!("{name}: max relative gradient error"), err, Relation::Below, GRAD_TOLERANCE),
        Err(e) => failed(name, e),
    }
}

/// Autodiff against central finite differences for every loss the trainer
/// differentiates, on one random 8-sample batch with [16, 16] networks.
pub fn grad_suite() -> Report {
    let mut rng = Rng::new(11);
    let (n, od, ad, hidden) = (8, 3, 2, [16, 16]);
    let obs = Matrix::from_shape_simple_fn((n, od), || rng.normal());
    let actions = Matrix::from_shape_simple_fn((n, ad), || rng.uniform_range(-0.9, 0.9));
    let next_obs = Matrix::from_shape_simple_fn((n, od), || rng.normal());
    let rewards = Matrix::from_shape_simple_fn((n, 1), || rng.normal());
    let dones = Matrix::zeros((n, 1));
    let eps = Matrix::from_shape_simple_fn((n, ad), || rng.normal());
    let raw: Vec<f64> = (0..n).map(|_| 0.2 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let uniform = vec![1.0 / n as f64; n];

    let policy = GaussianPolicy::new(od, ad, &hidden, 0.2, &mut rng);
    let critics = CriticPair::new(od, ad, &hidden, 2.0, 2.5, 0.005, &mut rng);
    let (next_a, next_logp) = policy.sample_detached(&next_obs, &mut rng);
    let targets = bellman_target(&rewards, &dones, &critics.target_min(&next_obs, &next_a), &next_logp, 0.2, 0.99);

    let mut report = Report::default();
    let critic_loss = |w: &[f64]| {
        let (obs, actions, targets, w) = (&obs, &actions, &targets, w.to_vec());
        move |tape: &mut Tape, c: &CriticPair| {
            let o = tape.constant(obs.clone());
            let a = tape.constant(actions.clone());
            let (q1, q2) = c.forward(tape, o, a);
            let l1 = critic_loss_corrected(tape, q1, targets, &w)?;
            let l2 = critic_loss_corrected(tape, q2, targets, &w)?;
            Ok(tape.add(l1, l2))
        }
    };
    report.push(fd_check("critic loss", &critics, |c| c.online_params_mut(), critic_loss(&uniform)));
    report.push(fd_check(
        "target policy objective",
        &policy,
        |p| p.params_mut(),
        |tape, p| target_policy_objective(tape, p, &critics, &obs, &eps, &weights),
    ));
    report.push(fd_check(
        "exploration policy objective",
        &policy,
        |p| p.params_mut(),
        |tape, p| explore_policy_objective(tape, p, &critics, &obs, &eps, &weights),
    ));
    report.push(fd_check("corrected critic loss", &critics, |c| c.online_params_mut(), critic_loss(&weights)));

    let config = DiceConfig::default();
    let dice = match DiceState::new(od + ad, &hidden, config.clone(), &mut rng) {
        Ok(d) => d,
        Err(e) => {
            report.push(failed("DICE losses", e));
            return report;
        }
    };
    let sa = ndarray::concatenate(ndarray::Axis(1), &[obs.view(), actions.view()]).unwrap();
    let next_sa = ndarray::concatenate(ndarray::Axis(1), &[next_obs.view(), next_a.view()]).unwrap();
    let zeta = dice.zeta_values(&sa);
    let nu_target = bellman_nu(&rewards, &dice.nu_target.eval(&next_sa), config.alpha_r, config.gamma);
    let abs_residual: Vec<f64> = nu_target.iter().zip(dice.nu.eval(&sa).iter()).map(|(b, v)| (b - v).abs()).collect();
    let lambda = Param::new(Matrix::from_elem((1, 1), 0.3));

    report.push(fd_check(
        "lambda loss",
        &lambda,
        |p| vec![p],
        |tape, p| {
            let l = tape.param(p);
            Ok(loss_lambda(tape, l, &zeta))
        },
    ));
    report.push(fd_check(
        "nu loss",
        &dice.nu,
        |net| net.params_mut(),
        |tape, net| {
            let x = tape.constant(sa.clone());
            let v = net.forward(tape, x);
            loss_nu(tape, v, &nu_target, &zeta, config.alpha_nu, config.exponent)
        },
    ));
    report.push(fd_check(
        "zeta loss",
        &dice.zeta,
        |net| net.params_mut(),
        |tape, net| {
            let x = tape.constant(sa.clone());
            let raw = net.forward(tape, x);
            let z = tape.square(raw);
            loss_zeta(tape, z, &abs_residual, 0.3, config.alpha_zeta, config.exponent)
        },
    ));
    report
}

/// Everything the tabular DICE suite measured, for callers that want more
/// than pass/fail.
#[derive(Debug, Clone)]
pub struct TabularDiceOutcome {
    pub report: Report,
    pub weighted_l1: f64,
    /// The same error for the constant ratio ζ ≡ 1.
    pub trivial_l1: f64,
    pub dual_estimate: f64,
    pub true_value: f64,
}

/// DICE on logged data from a seeded 5-state/2-action MDP: 50k transitions,
/// 20k updates of batch 256 with [64, 64] networks.
pub fn tabular_dice_suite() -> TabularDiceOutcome {
    let fixture = TabularDiceFixture::new(0, 5, 2, 50_000, 100);
    let mut report = Report::default();
    let dice = match train_tabular_dice(&fixture, DiceConfig::default(), &[64, 64], 20_000, 256, 0.005, 0, |_, _, _| {}) {
        Ok(d) => d,
        Err(e) => {
            report.push(failed("tabular DICE training", e));
            return TabularDiceOutcome {
                report,
                weighted_l1: f64::NAN,
                trivial_l1: f64::NAN,
                dual_estimate: f64::NAN,
                true_value: fixture.exact.mu_pi,
            };
        }
    };
    let table = fixture.zeta_table(&dice);
    let exact = &fixture.exact;
    let l1 = weighted_l1(&exact.d_d, &table, &exact.zeta_star);
    let trivial = weighted_l1(&exact.d_d, &Matrix::ones(table.dim()), &exact.zeta_star);
    let weights = normalize_zeta(&fixture.zeta_per_sample(&table), 1.0);
    let estimate = dual_estimate(&weights, &fixture.rewards());
    let relative = (estimate - exact.mu_pi).abs() / exact.mu_pi.abs();
    report.push(Check::new("ratio weighted L1 error", l1, Relation::Below, 0.1));
    report.push(Check::new("full-buffer dual estimate relative error", relative, Relation::Below, 0.05));
    TabularDiceOutcome {
        report,
        weighted_l1: l1,
        trivial_l1: trivial,
        dual_estimate: estimate,
        true_value: exact.mu_pi,
    }
}

/// Monte-Carlo mean of the ζ*-weighted policy-gradient estimator over 10^5
/// draws from a full-support data distribution, against the exact gradient.
pub fn prop1_suite() -> Report {
    let mut rng = Rng::new(21);
    let (ns, na, alpha, draws) = (4, 3, 0.2, 100_000);
    let mdp = random_mdp(&mut rng, ns, na, 1.0);
    let policy = SoftmaxPolicy::random(ns, na, 1.0, &mut rng);
    let q_lb = Matrix::from_shape_simple_fn((ns, na), || 2.0 * rng.normal());
    let mut d_d = Matrix::from_shape_simple_fn((ns, na), || 0.2 + rng.uniform());
    d_d /= d_d.sum();

    let mut report = Report::default();
    let exact = match ExactQuantities::compute(&mdp, &policy_table(&policy), &d_d)
        .and_then(|q| Ok((q.zeta_star.clone(), exact_policy_gradient(&mdp, &policy, &q_lb, alpha)?)))
    {
        Ok(x) => x,
        Err(e) => {
            report.push(failed("exact gradient", e));
            return report;
        }
    };
    let (zeta_star, truth) = exact;
    let per_state: Vec<Vec<f64>> = (0..ns)
        .map(|s| softmax_state_objective(&policy, s, q_lb.row(s).as_slice().unwrap(), alpha).1)
        .collect();
    let flat_dd: Vec<f64> = d_d.iter().copied().collect();
    let mut sum = Matrix::zeros((ns, na));
    let mut sum_sq = Matrix::zeros((ns, na));
    for _ in 0..draws {
        let k = rng.categorical(&flat_dd);
        let (s, a) = (k / na, k % na);
        let w = zeta_star[[s, a]];
        // a draw only touches the logits of its own state
        for (b, g) in per_state[s].iter().enumerate() {
            let x = w * g;
            sum[[s, b]] += x;
            sum_sq[[s, b]] += x * x;
        }
    }
    let n = draws as f64;
    let mean = &sum / n;
    let var = (&sum_sq / n - &mean * &mean) * (n / (n - 1.0));
    let se = var.mapv(|v| (v / n).sqrt());
    let dot = (&mean * &truth).sum();
    let cosine = dot / ((&mean * &mean).sum().sqrt() * (&truth * &truth).sum().sqrt());
    let worst_z = ndarray::Zip::from(&mean)
        .and(&truth)
        .and(&se)
        .fold(0.0f64, |acc, &m, &t, &e| acc.max((m - t).abs() / e));
    report.push(Check::new("weighted estimator cosine to exact gradient", cosine, Relation::Above, 0.999));
    report.push(Check::new("largest per-coordinate deviation in standard errors", worst_z, Relation::AtMost, 3.0));
    report
}

/// Saddle-point solutions with and without the absolute value on three
/// seeded fixtures, against each other and the exact ratio.
pub fn theorem1_suite() -> Report {
    let mut report = Report::default();
    for seed in [7, 8, 9] {
        let mut rng = Rng::new(seed);
        let mdp = match random_mdp(&mut rng, 3, 2, 1.0).with_gamma(0.9) {
            Ok(m) => m,
            Err(e) => {
                report.push(failed("fixture", e));
                continue;
            }
        };
        let pi = Matrix::from_shape_simple_fn((3, 2), || 0.1 + rng.uniform());
        let pi = &pi / &pi.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
        let mut d_d = Matrix::from_shape_simple_fn((3, 2), || 0.2 + rng.uniform());
        d_d /= d_d.sum();
        let config = SaddleConfig::default();
        let solved = ExactQuantities::compute(&mdp, &pi, &d_d).and_then(|exact| {
            let abs = saddle_solve(&mdp, &pi, &d_d, true, &config)?;
            let signed = saddle_solve(&mdp, &pi, &d_d, false, &config)?;
            Ok((exact, abs, signed))
        });
        let (exact, abs, signed) = match solved {
            Ok(x) => x,
            Err(e) => {
                report.push(failed(&format!("seed {seed}"), e));
                continue;
            }
        };
        for (name, a, b) in [
            ("abs vs signed", &abs.zeta, &signed.zeta),
            ("abs vs exact", &abs.zeta, &exact.zeta_star),
            ("signed vs exact", &signed.zeta, &exact.zeta_star),
        ] {
            report.push(Check::new(format!("seed {seed} {name} weighted L1"), weighted_l1(&d_d, a, b), Relation::Below, 1e-2));
        }
    }
    report
}

/// Confidence-bound identities and weight normalization properties.
pub fn bounds_suite() -> Report {
    let mut report = bound_identity_checks();
    report.extend(normalization_checks());
    report
}

/// `Q_UB - Q_LB = (β_UB + β_LB) σ` and `β_LB = 1` giving the minimum, on
/// 10^4 random triples.
pub fn bound_identity_checks() -> Report {
    let mut rng = Rng::new(31);
    let mut report = Report::default();
    let (mut identity_gap, mut min_width, mut min_mismatches) = (0.0f64, f64::INFINITY, 0usize);
    for _ in 0..10_000 {
        let (q1, q2) = (10.0 * rng.normal(), 10.0 * rng.normal());
        let (bu, bl) = (rng.uniform_range(0.0, 5.0), rng.uniform_range(0.0, 5.0));
        let b = q_bounds(q1, q2, bu, bl);
        identity_gap = identity_gap.max((b.upper - b.lower - (bu + bl) * b.std).abs());
        min_width = min_width.min(b.upper - b.lower);
        if q_bounds(q1, q2, bu, 1.0).lower != q1.min(q2) {
            min_mismatches += 1;
        }
    }
    report.push(Check::new("upper minus lower equals (beta_ub + beta_lb) sigma", identity_gap, Relation::AtMost, 1e-12));
    report.push(Check::new("upper bound never below lower bound", min_width, Relation::AtLeast, 0.0));
    report.push(Check::new("beta_lb = 1 mismatches against min(q1, q2)", min_mismatches as f64, Relation::AtMost, 0.0));
    report
}

/// Sum-to-one on 10^4 random batches, near-uniform weights at T = 10^6, and
/// two worked values.
pub fn normalization_checks() -> Report {
    let mut rng = Rng::new(32);
    let mut report = Report::default();

    let (mut sum_gap, mut flat_gap) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let n = 1 + rng.below(256);
        let zeta: Vec<f64> = (0..n).map(|_| (3.0 * rng.normal()).exp()).collect();
        let t = [1.0, 2.0, 3.0, 5.0][rng.below(4)];
        sum_gap = sum_gap.max((normalize_zeta(&zeta, t).iter().sum::<f64>() - 1.0).abs());
        let bounded: Vec<f64> = zeta.iter().map(|z| z.min(10.0)).collect();
        let u = 1.0 / n as f64;
        let flat = normalize_zeta(&bounded, 1e6);
        flat_gap = flat_gap.max(flat.iter().fold(0.0f64, |m, w| m.max((w - u).abs())));
    }
    report.push(Check::new("normalized weights sum to one", sum_gap, Relation::AtMost, 1e-10));
    report.push(Check::new("T = 1e6 deviation from uniform", flat_gap, Relation::Below, 1e-5));
    let worked = [
        (normalize_zeta(&[1.0, 1.0, 1.0], 3.0), vec![1.0 / 3.0; 3]),
        (normalize_zeta(&[4.0, 1.0], 2.0), vec![2.0 / 3.0, 1.0 / 3.0]),
    ];
    let worked_gap = worked
        .iter()
        .flat_map(|(got, want)| got.iter().zip(want).map(|(a, b)| (a - b).abs()))
        .fold(0.0f64, f64::max);
    report.push(Check::new("worked normalization values", worked_gap, Relation::AtMost, 0.0));
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_suites_pass() {
        for report in [grad_suite(), bounds_suite(), prop1_suite()] {
            eprint!("{report}");
            assert!(report.passed(), "{report}");
        }
    }
}
