//! Off-policy actor-critic with a conservative target policy, an optimistic
//! exploration policy, and DICE-estimated distribution correction of the
//! replay data, plus exact tabular oracles for checking the pieces.

pub mod numcore;
pub mod envs;
pub mod checkpoint;
pub mod critics;
pub mod policies;
pub mod dice;
pub mod oracle;
pub mod verify;
pub mod trainer;

pub use dice::{DiceConfig, DiceState};
pub use envs::Env;
pub use numcore::{Matrix, Rng};
pub use trainer::{ope_check, train, Config, LogRow, Mode, OpeCheck, TrainError, Trainer, TrainingLog};
pub use verify::{run_suite, Check, Report, Suite};
