use std::io::Write;

use serde::{Deserialize, Serialize};

use super::MissionRecord;
use crate::error::{Error, Result};

/// Per-mission statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub coverage_fraction: f64,
    pub iterations: usize,
    pub recovered: usize,
    pub targets_per_move: f64,
    pub wall_budget_s: f64,
}

pub fn compute_metrics(record: &MissionRecord) -> Metrics {
    let s = &record.summary;
    Metrics {
        coverage_fraction: s.visited.len() as f64 / record.config.cells() as f64,
        iterations: s.iterations,
        recovered: s.recovered,
        targets_per_move: if s.iterations == 0 {
            0.0
        } else {
            s.recovered as f64 / s.iterations as f64
        },
        wall_budget_s: s.clock_s,
    }
}

/// Median (lower-middle for even counts), mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Result<Spread> {
        if values.is_empty() {
            return Err(Error::Domain("no values to summarise".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = sorted[(n - 1) / 2];
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Spread { median, mean, sd })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub missions: usize,
    pub coverage_fraction: Spread,
    pub iterations: Spread,
    pub recovered: Spread,
    pub targets_per_move: Spread,
}

pub fn aggregate(metrics: &[Metrics]) -> Result<Aggregate> {
    if metrics.is_empty() {
        return Err(Error::Domain("cannot aggregate an empty set of missions".into()));
    }
    let col = |f: fn(&Metrics) -> f64| Spread::of(&metrics.iter().map(f).collect::<Vec<_>>());
    Ok(Aggregate {
        missions: metrics.len(),
        coverage_fraction: col(|m| m.coverage_fraction)?,
        iterations: col(|m| m.iterations as f64)?,
        recovered: col(|m| m.recovered as f64)?,
        targets_per_move: col(|m| m.targets_per_move)?,
    })
}

/// One CSV row per mission.
pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[(String, Metrics)]) -> Result<()> {
    writeln!(out, "mission,coverage,iterations,recovered,targets_per_move,clock_s")?;
    for (name, m) in rows {
        writeln!(
            out,
            "{name},{:.6},{},{},{:.6},{:.2}",
            m.coverage_fraction, m.iterations, m.recovered, m.targets_per_move, m.wall_budget_s
        )?;
    }
    Ok(())
}
