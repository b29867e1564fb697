//! Run configuration and its text format.
//!
//! ```text
//! # comments start with '#'
//! env = point-mass
//! seed = 0
//!
//! [sac]
//! hidden = 64, 64
//! beta_ub = 2.0
//!
//! [dice]
//! temperature = 3.0
//! ```
//!
//! Keys before the first section header belong to `[run]`. Unknown sections
//! or keys are errors; omitted keys keep their defaults.

use std::fmt;
use std::str::FromStr;

use crate::dice::DiceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Ours,
    NoDice,
    OnlyWeightPolicies,
    OnlyWeightQ,
    SacDice,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Ours, Mode::NoDice, Mode::OnlyWeightPolicies, Mode::OnlyWeightQ, Mode::SacDice];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Ours => "ours",
            Mode::NoDice => "no_dice",
            Mode::OnlyWeightPolicies => "only_weight_policies",
            Mode::OnlyWeightQ => "only_weight_q",
            Mode::SacDice => "sac_dice",
        }
    }

    pub fn uses_dice(self) -> bool {
        self != Mode::NoDice
    }

    pub fn weights_policies(self) -> bool {
        matches!(self, Mode::Ours | Mode::OnlyWeightPolicies | Mode::SacDice)
    }

    pub fn weights_critics(self) -> bool {
        matches!(self, Mode::Ours | Mode::OnlyWeightQ | Mode::SacDice)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown mode `{s}` (expected one of ours, no_dice, only_weight_policies, only_weight_q, sac_dice)")))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// `point-mass`, `pendulum`, `tabular:<path>` or
    /// `random-mdp:<seed>:<states>:<actions>`.
    pub env: String,
    pub seed: u64,
    pub mode: Mode,
    pub total_steps: usize,
    /// Uniform-random actions and no updates for this many initial steps.
    pub warmup_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Episode length on tabular environments.
    pub tabular_horizon: usize,

    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    /// Fixed entropy coefficient.
    pub alpha: f64,
    pub hidden: Vec<usize>,
    pub beta_ub: f64,
    pub beta_lb: f64,
    pub gradient_steps: usize,
    pub target_update_interval: usize,

    pub dice: DiceConfig,

    /// Test instrumentation: train DICE as usual but hand uniform weights to
    /// every RL loss.
    #[doc(hidden)]
    pub force_uniform_weights: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            env: "point-mass".into(),
            seed: 0,
            mode: Mode::Ours,
            total_steps: 1_000_000,
            warmup_steps: 1000,
            eval_interval: 1000,
            eval_episodes: 10,
            tabular_horizon: 100,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            alpha: 0.2,
            hidden: vec![256, 256],
            beta_ub: 2.0,
            beta_lb: 2.5,
            gradient_steps: 1,
            target_update_interval: 1,
            dice: DiceConfig::default(),
            force_uniform_weights: false,
        }
    }
}

impl Config {
    /// Small networks and buffer for workstation-scale runs.
    pub fn desk() -> Self {
        Self {
            total_steps: 30_000,
            hidden: vec![64, 64],
            buffer_capacity: 100_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, v) in [("sac.lr", self.lr), ("sac.tau", self.tau), ("dice.lr", self.dice.lr), ("dice.temperature", self.dice.temperature)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.tau > 1.0 {
            return bad(format!("sac.tau must not exceed 1, got {}", self.tau));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("sac.gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.alpha >= 0.0) || !(self.beta_ub >= 0.0) || !(self.beta_lb >= 0.0) {
            return bad("sac.alpha, sac.beta_ub and sac.beta_lb must be nonnegative".into());
        }
        for (name, v) in [
            ("sac.batch_size", self.batch_size),
            ("sac.buffer_capacity", self.buffer_capacity),
            ("sac.gradient_steps", self.gradient_steps),
            ("sac.target_update_interval", self.target_update_interval),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes),
            ("tabular_horizon", self.tabular_horizon),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("sac.hidden needs one or more positive widths".into());
        }
        self.dice.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Applies `key = value` text on top of `self`.
    pub fn parse_onto(mut self, text: &str) -> Result<Self, ConfigError> {
        let mut section = "run".to_string();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| ConfigError::Parse { line, message };
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?.trim();
                if !["run", "sac", "dice"].contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            self.set(&section, key.trim(), value.trim()).map_err(err)?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::default().parse_onto(text)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse `{v}`"))
        }
        fn flag(key: &str, v: &str) -> Result<bool, String> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(format!("{key}: expected true or false, got `{v}`")),
            }
        }
        match (section, key) {
            ("run", "env") => self.env = value.to_string(),
            ("run", "seed") => self.seed = num(key, value)?,
            ("run", "mode") => self.mode = value.parse().map_err(|e: ConfigError| e.to_string())?,
            ("run", "profile") => {
                let base = match value {
                    "desk" => Config::desk(),
                    "full" => Config::default(),
                    _ => return Err(format!("profile: expected desk or full, got `{value}`")),
                };
                *self = Config {
                    env: std::mem::take(&mut self.env),
                    seed: self.seed,
                    mode: self.mode,
                    ..base
                };
            }
            ("run", "total_steps") => self.total_steps = num(key, value)?,
            ("run", "warmup_steps") => self.warmup_steps = num(key, value)?,
            ("run", "eval_interval") => self.eval_interval = num(key, value)?,
            ("run", "eval_episodes") => self.eval_episodes = num(key, value)?,
            ("run", "tabular_horizon") => self.tabular_horizon = num(key, value)?,
            ("run", "force_uniform_weights") => self.force_uniform_weights = flag(key, value)?,
            ("sac", "batch_size") => self.batch_size = num(key, value)?,
            ("sac", "buffer_capacity") => self.buffer_capacity = num(key, value)?,
            ("sac", "gamma") => self.gamma = num(key, value)?,
            ("sac", "tau") => self.tau = num(key, value)?,
            ("sac", "lr") => self.lr = num(key, value)?,
            ("sac", "alpha") => self.alpha = num(key, value)?,
            ("sac", "hidden") => {
                self.hidden = value
                    .split(',')
                    .map(|w| num::<usize>(key, w.trim()))
                    .collect::<Result<_, _>>()?;
            }
            ("sac", "beta_ub") => self.beta_ub = num(key, value)?,
            ("sac", "beta_lb") => self.beta_lb = num(key, value)?,
            ("sac", "gradient_steps") => self.gradient_steps = num(key, value)?,
            ("sac", "target_update_interval") => self.target_update_interval = num(key, value)?,
            ("dice", "lr") => self.dice.lr = num(key, value)?,
            ("dice", "alpha_nu") => self.dice.alpha_nu = num(key, value)?,
            ("dice", "alpha_zeta") => self.dice.alpha_zeta = num(key, value)?,
            ("dice", "alpha_r") => self.dice.alpha_r = num(key, value)?,
            ("dice", "exponent") => self.dice.exponent = num(key, value)?,
            ("dice", "temperature") => self.dice.temperature = num(key, value)?,
            _ => return Err(format!("unknown key `{key}` in [{section}]")),
        }
        Ok(())
    }

    /// Every setting in the text format; parsing the output reproduces `self`.
    pub fn to_text(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(|w| w.to_string()).collect();
        let mut out = format!(
            "env = {}\nseed = {}\nmode = {}\ntotal_steps = {}\nwarmup_steps = {}\neval_interval = {}\neval_episodes = {}\ntabular_horizon = {}\n",
            self.env, self.seed, self.mode, self.total_steps, self.warmup_steps, self.eval_interval, self.eval_episodes, self.tabular_horizon
        );
        if self.force_uniform_weights {
            out.push_str("force_uniform_weights = true\n");
        }
        out.push_str(&format!(
            "\n[sac]\nbatch_size = {}\nbuffer_capacity = {}\ngamma = {:?}\ntau = {:?}\nlr = {:?}\nalpha = {:?}\nhidden = {}\nbeta_ub = {:?}\nbeta_lb = {:?}\ngradient_steps = {}\ntarget_update_interval = {}\n",
            self.batch_size,
            self.buffer_capacity,
            self.gamma,
            self.tau,
            self.lr,
            self.alpha,
            hidden.join(", "),
            self.beta_ub,
            self.beta_lb,
            self.gradient_steps,
            self.target_update_interval
        ));
        let d = &self.dice;
        out.push_str(&format!(
            "\n[dice]\nlr = {:?}\nalpha_nu = {:?}\nalpha_zeta = {:?}\nalpha_r = {:?}\nexponent = {:?}\ntemperature = {:?}\n",
            d.lr, d.alpha_nu, d.alpha_zeta, d.alpha_r, d.exponent, d.temperature
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = Config::default();
        assert_eq!((c.beta_ub, c.beta_lb, c.dice.temperature), (2.0, 2.5, 3.0));
        assert_eq!((c.dice.lr, c.dice.alpha_nu, c.dice.alpha_zeta, c.dice.exponent), (1e-4, 1.0, 1.0, 1.5));
        assert_eq!((c.gamma, c.tau, c.lr, c.batch_size), (0.99, 0.005, 3e-4, 256));
        assert_eq!((c.buffer_capacity, c.hidden.clone()), (1_000_000, vec![256, 256]));
        assert_eq!((c.gradient_steps, c.target_update_interval, c.eval_interval), (1, 1, 1000));
        let d = Config::desk();
        assert_eq!((d.buffer_capacity, d.hidden), (100_000, vec![64, 64]));
    }

    #[test]
    fn parses_sections() {
        let c = Config::parse(
            "env = pendulum # trailing comment\nmode = sac_dice\n\n[sac]\nhidden = 32, 16\nbeta_ub = 3.0\n[dice]\ntemperature = 5\n",
        )
        .unwrap();
        assert_eq!(c.env, "pendulum");
        assert_eq!(c.mode, Mode::SacDice);
        assert_eq!(c.hidden, vec![32, 16]);
        assert_eq!(c.beta_ub, 3.0);
        assert_eq!(c.dice.temperature, 5.0);
    }

    #[test]
    fn profile_keeps_identity_fields() {
        let c = Config::parse("env = pendulum\nseed = 4\nprofile = desk\n").unwrap();
        assert_eq!((c.env.as_str(), c.seed, c.hidden.clone()), ("pendulum", 4, vec![64, 64]));
    }

    #[test]
    fn text_round_trip() {
        let mut c = Config::desk();
        c.mode = Mode::OnlyWeightQ;
        c.dice.alpha_r = 0.5;
        c.hidden = vec![8, 4, 2];
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_line() {
        assert!(matches!(Config::parse("seed = 1\n[sac]\nbogus = 2\n"), Err(ConfigError::Parse { line: 3, .. })));
        assert!(matches!(Config::parse("[extra]\n"), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(Config::parse("seed 1\n"), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(Config::parse("mode = fast\n"), Err(ConfigError::Parse { line: 1, .. })));
    }

    #[test]
    fn rejects_nonpositive_rates() {
        assert!(matches!(Config::parse("[sac]\nlr = 0\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::parse("[dice]\ntemperature = -1\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::parse("[sac]\nhidden = 0\n"), Err(ConfigError::Invalid(_))));
    }
}
