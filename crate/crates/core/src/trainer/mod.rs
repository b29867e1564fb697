//! The training loop: rollouts with the exploration policy, DICE updates,
//! ratio-weighted actor and critic updates, soft target updates, periodic
//! evaluation and logging.

mod config;
mod evaluate;
mod log;

pub use config::{Config, ConfigError, Mode};
pub use evaluate::{evaluate, evaluate_with, Evaluation};
pub use log::{ope_check, LogError, LogRow, OpeCheck, TrainingLog, CSV_HEADER};

use std::path::Path;

use ndarray::{concatenate, Axis};
use thiserror::Error;

use crate::critics::{bellman_target, critic_loss_corrected, CriticPair};
use crate::dice::{dual_estimate, normalize_zeta, DiceBatch, DiceDiagnostics, DiceError, DiceState};
use crate::envs::{random_mdp, Batch, Env, EnvError, Pendulum, PointMass, ReplayBuffer, TabularEnv, TabularMdp, Transition};
use crate::numcore::{Adam, Matrix, Rng, Tape, TensorError};
use crate::policies::{explore_policy_objective, target_policy_objective, GaussianPolicy};

// independent random streams per concern
const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_UPDATE: u64 = 3;
const STREAM_DICE: u64 = 4;
const STREAM_EVAL: u64 = 5;
const STREAM_DICE_INIT: u64 = 6;
const STREAM_LOG: u64 = 7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite {loss} at step {step}: {source}{}", describe_row(.last_row))]
    NonFinite {
        loss: &'static str,
        step: usize,
        #[source]
        source: TensorError,
        last_row: Option<Box<LogRow>>,
    },
}

fn describe_row(row: &Option<Box<LogRow>>) -> String {
    match row {
        Some(r) => format!("; last diagnostics {r:?}"),
        None => String::new(),
    }
}

/// Builds the environment named by `config.env`.
pub fn make_env(config: &Config) -> Result<Env, TrainError> {
    let name = config.env.as_str();
    if name == "point-mass" {
        return Ok(Env::PointMass(PointMass::default()));
    }
    if name == "pendulum" {
        return Ok(Env::Pendulum(Pendulum::default()));
    }
    let tabular = |mdp: TabularMdp| {
        Env::Tabular(TabularEnv {
            mdp,
            horizon: config.tabular_horizon,
        })
    };
    if let Some(path) = name.strip_prefix("tabular:") {
        return Ok(tabular(TabularMdp::load(Path::new(path))?));
    }
    if let Some(spec) = name.strip_prefix("random-mdp:") {
        let parts: Vec<usize> = spec
            .split(':')
            .map(|p| p.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| EnvError::UnknownEnv(name.into()))?;
        if let [seed, states, actions] = parts[..] {
            if states > 0 && actions > 0 {
                return Ok(tabular(random_mdp(&mut Rng::new(seed as u64), states, actions, 1.0)));
            }
        }
    }
    Err(EnvError::UnknownEnv(name.into()).into())
}

/// Who chose a rollout action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actor {
    Random,
    Target,
    Explore,
}

/// Instrumentation hooks, emitted in execution order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event<'a> {
    Rollout { step: usize, actor: Actor },
    BatchSampled { step: usize },
    DiceUpdate { step: usize, diagnostics: &'a DiceDiagnostics },
    TargetPolicyUpdate { step: usize, weights: &'a [f64] },
    ExplorePolicyUpdate { step: usize, weights: &'a [f64] },
    CriticUpdate { step: usize, weights: &'a [f64] },
    SoftUpdate { step: usize },
    Evaluation { row: &'a LogRow },
}

pub trait Observer {
    fn on_event(&mut self, event: &Event<'_>);
}

impl Observer for () {
    fn on_event(&mut self, _: &Event<'_>) {}
}

impl<F: FnMut(&Event<'_>)> Observer for F {
    fn on_event(&mut self, event: &Event<'_>) {
        self(event)
    }
}

fn join(a: &Matrix, b: &Matrix) -> Matrix {
    concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts agree")
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: Config,
    env: Env,
    target: GaussianPolicy,
    explore: GaussianPolicy,
    critics: CriticPair,
    dice: Option<DiceState>,
    buffer: ReplayBuffer,
    opt_target: Adam,
    opt_explore: Adam,
    opt_critics: Adam,
    rng_env: Rng,
    rng_batch: Rng,
    rng_update: Rng,
    rng_dice: Rng,
    rng_eval: Rng,
    rng_log: Rng,
    state: Vec<f64>,
    episode_step: usize,
    step: usize,
    updates: usize,
    last_diagnostics: Option<DiceDiagnostics>,
    log: TrainingLog,
}

impl Trainer {
    pub fn new(config: Config) -> Result<Self, TrainError> {
        config.validate()?;
        let env = make_env(&config)?;
        let root = Rng::new(config.seed);
        let mut init = root.derive(STREAM_INIT);
        let (od, ad) = (env.obs_dim(), env.action_dim());
        let target = GaussianPolicy::new(od, ad, &config.hidden, config.alpha, &mut init);
        let explore = GaussianPolicy::new(od, ad, &config.hidden, config.alpha, &mut init);
        let critics = CriticPair::new(od, ad, &config.hidden, config.beta_ub, config.beta_lb, config.tau, &mut init);
        let dice = if config.mode.uses_dice() {
            let mut dice_cfg = config.dice.clone();
            dice_cfg.gamma = config.gamma;
            let dice = DiceState::new(od + ad, &config.hidden, dice_cfg, &mut root.derive(STREAM_DICE_INIT))
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            Some(dice)
        } else {
            None
        };
        let mut rng_env = root.derive(STREAM_ENV);
        let state = env.reset(&mut rng_env);
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            opt_target: Adam::new(config.lr),
            opt_explore: Adam::new(config.lr),
            opt_critics: Adam::new(config.lr),
            rng_env,
            rng_batch: root.derive(STREAM_BATCH),
            rng_update: root.derive(STREAM_UPDATE),
            rng_dice: root.derive(STREAM_DICE),
            rng_eval: root.derive(STREAM_EVAL),
            rng_log: root.derive(STREAM_LOG),
            state,
            episode_step: 0,
            step: 0,
            updates: 0,
            last_diagnostics: None,
            log: TrainingLog::new(),
            config,
            env,
            target,
            explore,
            critics,
            dice,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn target_policy(&self) -> &GaussianPolicy {
        &self.target
    }

    pub fn explore_policy(&self) -> &GaussianPolicy {
        &self.explore
    }

    pub fn critics(&self) -> &CriticPair {
        &self.critics
    }

    pub fn dice(&self) -> Option<&DiceState> {
        self.dice.as_ref()
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn into_log(self) -> TrainingLog {
        self.log
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Runs the remaining environment steps of the configured budget.
    pub fn run(&mut self, observer: &mut impl Observer) -> Result<(), TrainError> {
        while self.step < self.config.total_steps {
            self.advance(observer)?;
        }
        Ok(())
    }

    /// One environment step followed by its updates and, on the evaluation
    /// grid, an evaluation row.
    pub fn advance(&mut self, observer: &mut impl Observer) -> Result<(), TrainError> {
        let step = self.step;
        let obs = self.env.observe(&self.state);
        let actor = if step < self.config.warmup_steps {
            Actor::Random
        } else if self.config.mode == Mode::SacDice {
            Actor::Target
        } else {
            Actor::Explore
        };
        let action = match actor {
            Actor::Random => (0..self.env.action_dim()).map(|_| self.rng_env.uniform_range(-1.0, 1.0)).collect(),
            Actor::Target => self.target.act(&obs, &mut self.rng_env),
            Actor::Explore => self.explore.act(&obs, &mut self.rng_env),
        };
        observer.on_event(&Event::Rollout { step, actor });
        let out = self.env.step(&self.state, &action, &mut self.rng_env)?;
        self.buffer.push(Transition {
            obs,
            action,
            reward: out.reward,
            next_obs: self.env.observe(&out.state),
            done: out.done,
        });
        self.episode_step += 1;
        if out.done || self.episode_step >= self.env.horizon() {
            self.state = self.env.reset(&mut self.rng_env);
            self.episode_step = 0;
        } else {
            self.state = out.state;
        }

        if step >= self.config.warmup_steps && self.buffer.len() >= 1 {
            for _ in 0..self.config.gradient_steps {
                self.update(step, observer)?;
            }
        }
        self.step += 1;
        if self.step % self.config.eval_interval == 0 {
            let row = self.evaluation_row()?;
            observer.on_event(&Event::Evaluation { row: &row });
            self.log.push(row).expect("steps increase");
        }
        Ok(())
    }

    fn non_finite(&self, loss: &'static str, step: usize, source: TensorError) -> TrainError {
        TrainError::NonFinite {
            loss,
            step,
            source,
            last_row: self.log.last().map(|r| Box::new(*r)),
        }
    }

    fn update(&mut self, step: usize, observer: &mut impl Observer) -> Result<(), TrainError> {
        let n = self.config.batch_size;
        let batch = self.buffer.sample(n, &mut self.rng_batch)?;
        observer.on_event(&Event::BatchSampled { step });
        let uniform = vec![1.0 / n as f64; n];

        let weights = match self.dice.as_mut() {
            Some(dice) => {
                let sa = join(&batch.obs, &batch.actions);
                let (next_a, _) = self.target.sample_detached(&batch.next_obs, &mut self.rng_dice);
                let dice_batch = DiceBatch {
                    next_sa: join(&batch.next_obs, &next_a),
                    sa,
                    rewards: batch.rewards.clone(),
                };
                let diagnostics = match dice.update(&dice_batch) {
                    Ok(d) => d,
                    Err(DiceError::Numeric { loss, source }) => return Err(self.non_finite(loss, step, source)),
                    Err(e) => unreachable!("validated DICE state: {e}"),
                };
                self.last_diagnostics = Some(diagnostics);
                observer.on_event(&Event::DiceUpdate {
                    step,
                    diagnostics: &diagnostics,
                });
                let w = self.dice.as_ref().unwrap().weights(&dice_batch.sa);
                if self.config.force_uniform_weights {
                    uniform.clone()
                } else {
                    w
                }
            }
            None => uniform.clone(),
        };
        let policy_weights = if self.config.mode.weights_policies() { &weights } else { &uniform };
        let critic_weights = if self.config.mode.weights_critics() { &weights } else { &uniform };

        self.update_actor(true, &batch, policy_weights, step)?;
        observer.on_event(&Event::TargetPolicyUpdate { step, weights: policy_weights });
        self.update_actor(false, &batch, policy_weights, step)?;
        observer.on_event(&Event::ExplorePolicyUpdate { step, weights: policy_weights });
        self.update_critics(&batch, critic_weights, step)?;
        observer.on_event(&Event::CriticUpdate { step, weights: critic_weights });

        self.updates += 1;
        if self.updates % self.config.target_update_interval == 0 {
            self.critics.soft_update();
            if let Some(dice) = self.dice.as_mut() {
                dice.soft_update_target(self.config.tau);
            }
            observer.on_event(&Event::SoftUpdate { step });
        }
        Ok(())
    }

    fn update_actor(&mut self, is_target: bool, batch: &Batch, weights: &[f64], step: usize) -> Result<(), TrainError> {
        let (policy, name) = if is_target {
            (&self.target, "target policy loss")
        } else {
            (&self.explore, "exploration policy loss")
        };
        let eps = policy.noise(batch.len(), &mut self.rng_update);
        let mut tape = Tape::new();
        let objective = if is_target {
            target_policy_objective(&mut tape, policy, &self.critics, &batch.obs, &eps, weights)
        } else {
            explore_policy_objective(&mut tape, policy, &self.critics, &batch.obs, &eps, weights)
        }
        .map_err(|e| self.non_finite(name, step, e))?;
        let loss = tape.neg(objective);
        let grads = tape.backward(loss).map_err(|e| self.non_finite(name, step, e))?;
        let (policy, opt) = if is_target {
            (&mut self.target, &mut self.opt_target)
        } else {
            (&mut self.explore, &mut self.opt_explore)
        };
        let result = opt.step(&mut policy.params_mut(), &grads);
        result.map_err(|e| self.non_finite(name, step, e))
    }

    fn update_critics(&mut self, batch: &Batch, weights: &[f64], step: usize) -> Result<(), TrainError> {
        let name = "critic loss";
        let (next_a, next_logp) = self.target.sample_detached(&batch.next_obs, &mut self.rng_update);
        let next_min = self.critics.target_min(&batch.next_obs, &next_a);
        let targets = bellman_target(&batch.rewards, &batch.dones, &next_min, &next_logp, self.config.alpha, self.config.gamma);
        let mut tape = Tape::new();
        let o = tape.constant(batch.obs.clone());
        let a = tape.constant(batch.actions.clone());
        let (q1, q2) = self.critics.forward(&mut tape, o, a);
        let l1 = critic_loss_corrected(&mut tape, q1, &targets, weights).map_err(|e| self.non_finite(name, step, e))?;
        let l2 = critic_loss_corrected(&mut tape, q2, &targets, weights).map_err(|e| self.non_finite(name, step, e))?;
        let loss = tape.add(l1, l2);
        let grads = tape.backward(loss).map_err(|e| self.non_finite(name, step, e))?;
        let result = self.opt_critics.step(&mut self.critics.online_params_mut(), &grads);
        result.map_err(|e| self.non_finite(name, step, e))
    }

    /// Evaluates both policies and estimates the target policy's per-step
    /// reward from a fresh replay batch.
    pub fn evaluation_row(&mut self) -> Result<LogRow, TrainError> {
        let gamma = self.config.gamma;
        let episodes = self.config.eval_episodes;
        let target_eval = evaluate(&self.target, &self.env, episodes, gamma, &mut self.rng_eval)?;
        let explore_eval = evaluate(&self.explore, &self.env, episodes, gamma, &mut self.rng_eval)?;
        let (dual, batch_reward) = if self.buffer.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let batch = self.buffer.sample(self.config.batch_size, &mut self.rng_log)?;
            let rewards = batch.rewards();
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            let dual = match &self.dice {
                // raw ratios, self-normalized without tempering
                Some(dice) => dual_estimate(&normalize_zeta(&dice.zeta_values(&join(&batch.obs, &batch.actions)), 1.0), &rewards),
                None => mean,
            };
            (dual, mean)
        };
        let d = self.last_diagnostics;
        let pick = |f: fn(&DiceDiagnostics) -> f64| d.as_ref().map_or(f64::NAN, f);
        Ok(LogRow {
            step: self.step,
            return_target: target_eval.mean_return,
            return_explore: explore_eval.mean_return,
            dual_estimate: dual,
            batch_reward,
            onpolicy_reward: target_eval.mean_reward,
            loss_nu: pick(|d| d.loss_nu),
            loss_zeta: pick(|d| d.loss_zeta),
            loss_lambda: pick(|d| d.loss_lambda),
            lambda: pick(|d| d.lambda),
            mean_zeta: pick(|d| d.mean_zeta),
        })
    }

    /// Named parameter arrays of both actors, both critics and their targets.
    pub fn checkpoint_arrays(&self) -> Vec<(String, Matrix)> {
        let mut out = self.target.named_arrays("target_policy");
        out.extend(self.explore.named_arrays("explore_policy"));
        for (prefix, net) in [
            ("q1", &self.critics.q1),
            ("q2", &self.critics.q2),
            ("q1_target", &self.critics.q1_target),
            ("q2_target", &self.critics.q2_target),
        ] {
            for (i, p) in net.params().iter().enumerate() {
                let kind = if i % 2 == 0 { "weight" } else { "bias" };
                out.push((format!("{prefix}.{}.{kind}", i / 2), p.value.clone()));
            }
        }
        out
    }
}

/// Trains from scratch for the configured number of steps.
pub fn train(config: Config) -> Result<TrainingLog, TrainError> {
    train_observed(config, &mut ())
}

pub fn train_observed(config: Config, observer: &mut impl Observer) -> Result<TrainingLog, TrainError> {
    let mut trainer = Trainer::new(config)?;
    trainer.run(observer)?;
    Ok(trainer.into_log())
}
