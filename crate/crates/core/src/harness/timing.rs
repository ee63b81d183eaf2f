//! Solver wall-time records and their summary.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Wall time spent per tick by the estimator and the position controller.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingRow {
    pub t: f64,
    pub estimator_ms: f64,
    pub controller_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Percentiles {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl Percentiles {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        // Nearest-rank percentile.
        let rank = |q: f64| sorted[((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p50: rank(0.5),
            p95: rank(0.95),
            max: sorted[sorted.len() - 1],
        }
    }
}

/// Timing summary in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingSummary {
    pub estimator: Percentiles,
    pub controller: Percentiles,
    /// Mean of the per-tick sum of both.
    pub combined_mean: f64,
}

impl TimingSummary {
    pub fn within_budget(&self, budget_ms: f64) -> bool {
        self.combined_mean < budget_ms
    }
}

pub fn report_timings(rows: &[TimingRow]) -> TimingSummary {
    let est: Vec<f64> = rows.iter().map(|r| r.estimator_ms).collect();
    let ctl: Vec<f64> = rows.iter().map(|r| r.controller_ms).collect();
    let sum: Vec<f64> = rows.iter().map(|r| r.estimator_ms + r.controller_ms).collect();
    TimingSummary {
        estimator: Percentiles::of(&est),
        controller: Percentiles::of(&ctl),
        combined_mean: Percentiles::of(&sum).mean,
    }
}

pub fn write_timing_csv(rows: &[TimingRow], path: &Path) -> Result<(), HarnessError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "t_s,estimator_ms,controller_ms")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.t, r.estimator_ms, r.controller_ms)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_entries_give_constant_summary() {
        let rows: Vec<TimingRow> = (0..100)
            .map(|k| TimingRow {
                t: k as f64 * 0.01,
                estimator_ms: 2.0,
                controller_ms: 2.0,
            })
            .collect();
        let s = report_timings(&rows);
        assert_eq!(s.estimator.mean, 2.0);
        assert_eq!(s.controller.p95, 2.0);
        assert_eq!(s.combined_mean, 4.0);
        assert!(s.within_budget(10.0));
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        let p = Percentiles::of(&v);
        assert_eq!((p.p50, p.p95, p.max), (10.0, 19.0, 20.0));
        assert_eq!(p.mean, 10.5);
        assert_eq!(Percentiles::of(&[]), Percentiles::default());
    }
}
