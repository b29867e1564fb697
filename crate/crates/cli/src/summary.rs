//! Per-step mean and sample standard deviation across seeds, and output
//! paths that never clobber earlier runs.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use dicerl_core::{LogRow, TrainingLog};

pub const METRICS: [(&str, fn(&LogRow) -> f64); 5] = [
    ("return_target", |r| r.return_target),
    ("return_explore", |r| r.return_explore),
    ("dual_estimate", |r| r.dual_estimate),
    ("batch_reward", |r| r.batch_reward),
    ("onpolicy_reward", |r| r.onpolicy_reward),
];

/// Mean and sample standard deviation; a single value has zero spread.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluation steps shared by every log; errors if the grids differ.
pub fn common_steps(logs: &[TrainingLog]) -> Result<Vec<usize>> {
    let Some(first) = logs.first() else { bail!("no logs given") };
    let steps: Vec<usize> = first.rows().iter().map(|r| r.step).collect();
    for (i, log) in logs.iter().enumerate().skip(1) {
        let other: Vec<usize> = log.rows().iter().map(|r| r.step).collect();
        if other != steps {
            bail!("log {} has a different evaluation step grid than log 0", i);
        }
    }
    Ok(steps)
}

/// Per step and metric, `(mean, std)` across logs.
pub fn aggregate(logs: &[TrainingLog]) -> Result<Vec<(usize, Vec<(f64, f64)>)>> {
    let steps = common_steps(logs)?;
    Ok(steps
        .iter()
        .enumerate()
        .map(|(i, &step)| {
            let stats = METRICS
                .iter()
                .map(|(_, get)| {
                    let xs: Vec<f64> = logs.iter().map(|l| get(&l.rows()[i])).collect();
                    mean_std(&xs)
                })
                .collect();
            (step, stats)
        })
        .collect())
}

pub fn summary_header() -> String {
    let mut h = String::from("step,runs");
    for (name, _) in METRICS {
        write!(h, ",{name}_mean,{name}_std").unwrap();
    }
    h
}

/// Summary rows without the header, optionally prefixed by extra columns.
pub fn summary_rows(logs: &[TrainingLog], prefix: &str) -> Result<String> {
    let mut out = String::new();
    for (step, stats) in aggregate(logs)? {
        write!(out, "{prefix}{step},{}", logs.len()).unwrap();
        for (m, s) in stats {
            write!(out, ",{m:?},{s:?}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn summary_csv(logs: &[TrainingLog]) -> Result<String> {
    Ok(format!("{}\n{}", summary_header(), summary_rows(logs, "")?))
}

/// `dir/stem.ext`, or `dir/stem.run<k>.ext` with the smallest free `k` when
/// that already exists. The file is created here so that concurrent writers
/// cannot pick the same name.
pub fn create_unique(dir: &Path, stem: &str, ext: &str) -> io::Result<(PathBuf, fs::File)> {
    fs::create_dir_all(dir)?;
    for k in 0.. {
        let name = if k == 0 { format!("{stem}.{ext}") } else { format!("{stem}.run{k}.{ext}") };
        let path = dir.join(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => return Ok((path, f)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

pub fn write_unique(dir: &Path, stem: &str, ext: &str, contents: &[u8]) -> io::Result<PathBuf> {
    let (path, mut f) = create_unique(dir, stem, ext)?;
    f.write_all(contents)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(values: &[(usize, f64)]) -> TrainingLog {
        let mut l = TrainingLog::new();
        for &(step, r) in values {
            l.push(LogRow {
                step,
                return_target: r,
                ..LogRow::default()
            })
            .unwrap();
        }
        l
    }

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn summary_over_two_logs() {
        let logs = [log(&[(1000, 1.0), (2000, 3.0)]), log(&[(1000, 3.0), (2000, 3.0)])];
        let csv = summary_csv(&logs).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], summary_header());
        assert!(lines[1].starts_with(&format!("1000,2,2.0,{:?},", 2f64.sqrt())));
        assert!(lines[2].starts_with("2000,2,3.0,0.0,"));
    }

    #[test]
    fn mismatched_grids_rejected() {
        let logs = [log(&[(1000, 1.0)]), log(&[(2000, 1.0)])];
        assert!(aggregate(&logs).is_err());
    }

    #[test]
    fn unique_names_never_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_unique(dir.path(), "x", "csv", b"first").unwrap();
        let b = write_unique(dir.path(), "x", "csv", b"second").unwrap();
        assert_eq!(a.file_name().unwrap(), "x.csv");
        assert_eq!(b.file_name().unwrap(), "x.run1.csv");
        assert_eq!(fs::read_to_string(a).unwrap(), "first");
    }
}
