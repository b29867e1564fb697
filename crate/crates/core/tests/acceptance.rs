//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! (with the individual measurements underneath) and fails if any criterion
//! fails.

use std::time::{Duration, Instant};

use dicerl_core::envs::{Env, PointMass};
use dicerl_core::trainer::{evaluate_with, ope_check, train, train_observed, Actor, Config, Event, Mode, Trainer};
use dicerl_core::verify::{
    bound_identity_checks, grad_suite, normalization_checks, prop1_suite, tabular_dice_suite, theorem1_suite, Check, Relation, Report,
};
use dicerl_core::Rng;

fn timed(report: &mut Report, limit: Duration, start: Instant) {
    let secs = start.elapsed().as_secs_f64();
    report.push(Check::new("runtime seconds", secs, Relation::Below, limit.as_secs_f64()));
}

fn gradient_correctness() -> Report {
    let start = Instant::now();
    let mut r = grad_suite();
    timed(&mut r, Duration::from_secs(60), start);
    r
}

fn tabular_dice() -> (Report, Report) {
    let start = Instant::now();
    let outcome = tabular_dice_suite();
    let elapsed = start.elapsed();
    let mut recovery = Report::default();
    let mut ope = Report::default();
    for c in outcome.report.checks {
        if c.name.starts_with("ratio") {
            recovery.push(c);
        } else {
            ope.push(c);
        }
    }
    recovery.push(Check::new("runtime seconds", elapsed.as_secs_f64(), Relation::Below, 300.0));
    println!(
        "  tabular DICE: weighted L1 {:.4} (constant-one ratio scores {:.4}); dual estimate {:.4} vs true {:.4}",
        outcome.weighted_l1, outcome.trivial_l1, outcome.dual_estimate, outcome.true_value
    );
    ope.extend(live_ope());
    (recovery, ope)
}

fn live_ope() -> Report {
    let config = Config {
        env: "random-mdp:0:5:2".into(),
        ..Config::desk()
    };
    let mut r = Report::default();
    match train(config) {
        Ok(log) => {
            let c = ope_check(&log).expect("desk run logs evaluations");
            println!(
                "  live OPE over {} evaluations: dual error {:.4}, batch error {:.4}",
                c.points, c.mean_abs_error_dual, c.mean_abs_error_batch
            );
            r.push(Check::new("live ope_check win fraction", c.win_fraction, Relation::AtLeast, 0.7));
        }
        Err(e) => r.push(Check::new(format!("live tabular run ({e})"), f64::NAN, Relation::AtLeast, 0.7)),
    }
    r
}

fn prop1() -> Report {
    let start = Instant::now();
    let mut r = prop1_suite();
    timed(&mut r, Duration::from_secs(120), start);
    r
}

fn small(mode: Mode) -> Config {
    Config {
        mode,
        total_steps: 600,
        warmup_steps: 200,
        eval_interval: 200,
        eval_episodes: 2,
        batch_size: 32,
        hidden: vec![32, 32],
        ..Config::desk()
    }
}

fn mode_contracts() -> Report {
    let mut r = Report::default();

    // forced-uniform weights against a run with no DICE state at all
    let mut forced = small(Mode::NoDice);
    forced.mode = Mode::Ours;
    forced.force_uniform_weights = true;
    let mut a = Trainer::new(forced).unwrap();
    let mut b = Trainer::new(small(Mode::NoDice)).unwrap();
    let mut diverged = 0usize;
    for _ in 0..600 {
        a.advance(&mut ()).unwrap();
        b.advance(&mut ()).unwrap();
        if a.checkpoint_arrays() != b.checkpoint_arrays() {
            diverged += 1;
        }
    }
    let same_log = a
        .log()
        .rows()
        .iter()
        .zip(b.log().rows())
        .all(|(x, y)| x.return_target == y.return_target && x.return_explore == y.return_explore && x.batch_reward == y.batch_reward);
    r.push(Check::new("steps where uniform-weight run differs from DICE-free run", diverged as f64, Relation::AtMost, 0.0));
    r.push(Check::new("evaluation rows identical (1 = yes)", same_log as u8 as f64, Relation::AtLeast, 1.0));

    // weight taps
    for (mode, pol, crit) in [
        (Mode::Ours, true, true),
        (Mode::NoDice, false, false),
        (Mode::OnlyWeightPolicies, true, false),
        (Mode::OnlyWeightQ, false, true),
        (Mode::SacDice, true, true),
    ] {
        let uniform = |w: &[f64]| w.iter().all(|&x| x == 1.0 / w.len() as f64);
        let mut wrong = 0usize;
        let mut actors_wrong = 0usize;
        let expected_actor = if mode == Mode::SacDice { Actor::Target } else { Actor::Explore };
        train_observed(small(mode), &mut |e: &Event<'_>| match e {
            Event::TargetPolicyUpdate { weights, .. } | Event::ExplorePolicyUpdate { weights, .. } => {
                wrong += (uniform(weights) == pol) as usize;
            }
            Event::CriticUpdate { weights, .. } => wrong += (uniform(weights) == crit) as usize,
            Event::Rollout { step, actor } if *step >= 200 => actors_wrong += (*actor != expected_actor) as usize,
            _ => {}
        })
        .unwrap();
        r.push(Check::new(format!("{mode}: updates with misplaced weights"), wrong as f64, Relation::AtMost, 0.0));
        r.push(Check::new(
            format!("{mode}: rollouts not by {expected_actor:?} policy"),
            actors_wrong as f64,
            Relation::AtMost,
            0.0,
        ));
    }
    r
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn point_mass_random_baseline() -> f64 {
    let env = Env::PointMass(PointMass::default());
    let mut policy_rng = Rng::new(1000);
    let random = |_: &[f64]| vec![policy_rng.uniform_range(-1.0, 1.0), policy_rng.uniform_range(-1.0, 1.0)];
    evaluate_with(random, &env, 100, 0.99, &mut Rng::new(1001)).unwrap().mean_return
}

fn learning_smoke() -> Report {
    let mut r = Report::default();

    let start = Instant::now();
    let baseline = point_mass_random_baseline();
    let mut finals = Vec::new();
    let mut failures = 0usize;
    for seed in 0..3 {
        match train(Config { seed, ..Config::desk() }) {
            Ok(log) => finals.push(log.last().unwrap().return_target),
            Err(e) => {
                println!("  point-mass seed {seed}: {e}");
                failures += 1;
            }
        }
    }
    let final_return = if finals.is_empty() { f64::NAN } else { mean(&finals) };
    // returns are negative: "5x better" means a fifth of the baseline's magnitude
    let ratio = baseline.abs() / final_return.abs();
    println!("  point-mass: random baseline {baseline:.3}, final returns {finals:.3?}");
    r.push(Check::new("point-mass improvement factor over random baseline", ratio, Relation::AtLeast, 5.0));
    r.push(Check::new("point-mass runs ending in non-finite losses", failures as f64, Relation::AtMost, 0.0));
    timed(&mut r, Duration::from_secs(1800), start);

    let start = Instant::now();
    match train(Config {
        env: "pendulum".into(),
        total_steps: 50_000,
        ..Config::desk()
    }) {
        Ok(log) => {
            let returns: Vec<f64> = log.rows().iter().map(|x| x.return_target).collect();
            let smooth: Vec<f64> = returns.windows(5).map(mean).collect();
            let up = smooth.windows(2).filter(|w| w[1] > w[0]).count();
            let fraction = up as f64 / (smooth.len() - 1) as f64;
            println!("  pendulum: returns {returns:.1?}");
            r.push(Check::new("pendulum fraction of improving smoothed intervals", fraction, Relation::AtLeast, 0.8));
        }
        Err(e) => r.push(Check::new(format!("pendulum run ({e})"), f64::NAN, Relation::AtLeast, 0.8)),
    }
    timed(&mut r, Duration::from_secs(1800), start);
    r
}

#[test]
fn acceptance() {
    let mut outcomes: Vec<(&str, Report)> = Vec::new();
    let mut run = |name: &'static str, report: Report| {
        println!("{} {name}", if report.passed() { "PASS" } else { "FAIL" });
        for c in &report.checks {
            println!("    {c}");
        }
        outcomes.push((name, report));
    };
    run("1 gradient correctness", gradient_correctness());
    let (recovery, ope) = tabular_dice();
    run("2 tabular DICE ratio recovery", recovery);
    run("3 dual-estimator OPE", ope);
    run("4 weighted policy gradient is unbiased", prop1());
    run("5 absolute-value and signed saddle problems agree", theorem1_suite());
    run("6 confidence-bound identities", bound_identity_checks());
    run("7 weight normalization", normalization_checks());
    run("8 ablation-mode contracts", mode_contracts());
    run("9 desk-scale learning", learning_smoke());

    let failed: Vec<&str> = outcomes.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
