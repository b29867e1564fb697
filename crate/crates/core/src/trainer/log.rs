//! Per-evaluation training log, its CSV form, and the dual-estimate check.

use std::fmt::Write as _;

pub const CSV_HEADER: &str =
    "step,return_target,return_explore,dual_estimate,batch_reward,onpolicy_reward,loss_nu,loss_zeta,loss_lambda,lambda,mean_zeta";

/// DICE columns are NaN when the run trains no DICE networks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogRow {
    pub step: usize,
    pub return_target: f64,
    pub return_explore: f64,
    pub dual_estimate: f64,
    pub batch_reward: f64,
    pub onpolicy_reward: f64,
    pub loss_nu: f64,
    pub loss_zeta: f64,
    pub loss_lambda: f64,
    pub lambda: f64,
    pub mean_zeta: f64,
}

impl LogRow {
    fn values(&self) -> [f64; 10] {
        [
            self.return_target,
            self.return_explore,
            self.dual_estimate,
            self.batch_reward,
            self.onpolicy_reward,
            self.loss_nu,
            self.loss_zeta,
            self.loss_lambda,
            self.lambda,
            self.mean_zeta,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("step {step} does not follow step {previous}")]
    NonIncreasing { previous: usize, step: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: LogRow) -> Result<(), LogError> {
        if let Some(last) = self.rows.last() {
            if row.step <= last.step {
                return Err(LogError::NonIncreasing {
                    previous: last.step,
                    step: row.step,
                });
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            write!(out, "{}", r.step).unwrap();
            for v in r.values() {
                write!(out, ",{v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, LogError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            Some((i, _)) => {
                return Err(LogError::Parse {
                    line: i + 1,
                    message: "unexpected header".into(),
                })
            }
            None => {
                return Err(LogError::Parse {
                    line: 1,
                    message: "missing header".into(),
                })
            }
        }
        let mut log = Self::new();
        for (i, l) in lines {
            let err = |message: String| LogError::Parse { line: i + 1, message };
            let fields: Vec<&str> = l.trim().split(',').collect();
            if fields.len() != 11 {
                return Err(err(format!("expected 11 fields, got {}", fields.len())));
            }
            let step = fields[0].parse().map_err(|_| err(format!("bad step `{}`", fields[0])))?;
            let mut v = [0.0; 10];
            for (slot, f) in v.iter_mut().zip(&fields[1..]) {
                *slot = f.parse().map_err(|_| err(format!("bad number `{f}`")))?;
            }
            log.push(LogRow {
                step,
                return_target: v[0],
                return_explore: v[1],
                dual_estimate: v[2],
                batch_reward: v[3],
                onpolicy_reward: v[4],
                loss_nu: v[5],
                loss_zeta: v[6],
                loss_lambda: v[7],
                lambda: v[8],
                mean_zeta: v[9],
            })?;
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpeCheck {
    /// Fraction of rows where the dual estimate is strictly closer to the
    /// on-policy reward than the batch reward is.
    pub win_fraction: f64,
    pub mean_abs_error_dual: f64,
    pub mean_abs_error_batch: f64,
    pub points: usize,
}

pub fn ope_check(log: &TrainingLog) -> Option<OpeCheck> {
    let rows = log.rows();
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let (mut wins, mut dual, mut batch) = (0usize, 0.0, 0.0);
    for r in rows {
        let a = (r.dual_estimate - r.onpolicy_reward).abs();
        let b = (r.batch_reward - r.onpolicy_reward).abs();
        // ties lose
        if a < b {
            wins += 1;
        }
        dual += a;
        batch += b;
    }
    Some(OpeCheck {
        win_fraction: wins as f64 / n,
        mean_abs_error_dual: dual / n,
        mean_abs_error_batch: batch / n,
        points: rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, dual: f64, batch: f64, on: f64) -> LogRow {
        LogRow {
            step,
            dual_estimate: dual,
            batch_reward: batch,
            onpolicy_reward: on,
            ..LogRow::default()
        }
    }

    #[test]
    fn ope_check_extremes() {
        let mut log = TrainingLog::new();
        for i in 1..=4 {
            log.push(row(i * 1000, 0.5 * i as f64, 0.1, 0.5 * i as f64)).unwrap();
        }
        assert_eq!(ope_check(&log).unwrap().win_fraction, 1.0);

        let mut log = TrainingLog::new();
        for i in 1..=4 {
            log.push(row(i * 1000, 0.3, 0.3, 1.0)).unwrap();
        }
        let c = ope_check(&log).unwrap();
        assert_eq!(c.win_fraction, 0.0);
        assert_eq!(c.mean_abs_error_dual, c.mean_abs_error_batch);
        assert!(ope_check(&TrainingLog::new()).is_none());
    }

    #[test]
    fn steps_must_increase() {
        let mut log = TrainingLog::new();
        log.push(row(1000, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(
            log.push(row(1000, 0.0, 0.0, 0.0)),
            Err(LogError::NonIncreasing { previous: 1000, step: 1000 })
        );
    }

    #[test]
    fn csv_round_trip_with_nan_columns() {
        let mut log = TrainingLog::new();
        log.push(LogRow {
            step: 1000,
            return_target: -12.5,
            return_explore: -13.25,
            dual_estimate: 0.1,
            batch_reward: 0.2,
            onpolicy_reward: 0.3,
            loss_nu: f64::NAN,
            loss_zeta: f64::NAN,
            loss_lambda: f64::NAN,
            lambda: f64::NAN,
            mean_zeta: f64::NAN,
        })
        .unwrap();
        let text = log.to_csv();
        assert!(text.starts_with(CSV_HEADER));
        let back = TrainingLog::from_csv(&text).unwrap();
        assert_eq!(back.rows()[0].return_explore, -13.25);
        assert!(back.rows()[0].lambda.is_nan());
        assert_eq!(TrainingLog::from_csv(&format!("{CSV_HEADER}\n")).unwrap().len(), 0);
        assert!(TrainingLog::from_csv("a,b\n").is_err());
    }
}
