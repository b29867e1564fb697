//! Oracle-backed verification suites. Each suite returns a report of named
//! checks with the measured value and its threshold.

mod fixtures;
mod suites;

pub use fixtures::{empirical_distribution, train_tabular_dice, TabularDiceFixture, TabularSample};
pub use suites::{bound_identity_checks, bounds_suite, normalization_checks, grad_suite, prop1_suite, tabular_dice_suite, theorem1_suite, TabularDiceOutcome};

use std::fmt;
use std::str::FromStr;

/// How a measured value is compared with its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Below,
    AtMost,
    Above,
    AtLeast,
}

impl Relation {
    fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Relation::Below => value < threshold,
            Relation::AtMost => value <= threshold,
            Relation::Above => value > threshold,
            Relation::AtLeast => value >= threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Relation::Below => "<",
            Relation::AtMost => "<=",
            Relation::Above => ">",
            Relation::AtLeast => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    /// NaN never passes.
    pub fn new(name: impl Into<String>, value: f64, relation: Relation, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: relation.holds(value, threshold),
            value,
            relation,
            threshold,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {:.6e} {} {:e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.relation.symbol(),
            self.threshold
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Grad,
    TabularDice,
    Prop1,
    Theorem1,
    Bounds,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Grad, Suite::TabularDice, Suite::Prop1, Suite::Theorem1, Suite::Bounds];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Grad => "grad",
            Suite::TabularDice => "tabular-dice",
            Suite::Prop1 => "prop1",
            Suite::Theorem1 => "theorem1",
            Suite::Bounds => "bounds",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown suite `{0}` (expected one of grad, tabular-dice, prop1, theorem1, bounds)")]
pub struct UnknownSuite(pub String);

impl FromStr for Suite {
    type Err = UnknownSuite;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| UnknownSuite(s.into()))
    }
}

/// Runs one suite with its fixed seeds. Internal errors (a failed linear
/// solve, a non-finite loss) surface as failing checks.
pub fn run_suite(suite: Suite) -> Report {
    match suite {
        Suite::Grad => grad_suite(),
        Suite::TabularDice => tabular_dice_suite().report,
        Suite::Prop1 => prop1_suite(),
        Suite::Theorem1 => theorem1_suite(),
        Suite::Bounds => bounds_suite(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn nan_fails_every_relation() {
        for r in [Relation::Below, Relation::AtMost, Relation::Above, Relation::AtLeast] {
            assert!(!Check::new("x", f64::NAN, r, 1.0).passed);
        }
        let c = Check::new("gap", 0.5, Relation::Below, 1.0);
        assert!(c.passed);
        assert!(c.to_string().starts_with("PASS gap: 5.000000e-1 < 1e0"));
    }
}
