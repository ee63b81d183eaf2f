//! Per-tick trace records, their CSV form and hold-phase statistics.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::sim::PowerMeter;
use crate::vehicle::{ControlInput, Measurement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Hover,
    Approach,
    Settle,
    Hold,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hover => "hover",
            Self::Approach => "approach",
            Self::Settle => "settle",
            Self::Hold => "hold",
        }
    }
}

/// One controller tick. Plant quantities are sampled at the start of the tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub phase: Phase,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Vector3<f64>,
    pub rates: Vector3<f64>,
    pub reference: Vector3<f64>,
    pub measurement: Measurement,
    pub input: ControlInput,
    pub f_hat: Vector3<f64>,
    pub force_feed: bool,
    pub thrust_ratio: f64,
    pub ceiling_distance: f64,
    pub stuck: bool,
    pub voltage: f64,
    pub current: f64,
    pub degraded: bool,
}

/// Column names with units, in file order.
#[rustfmt::skip]
pub const TRACE_COLUMNS: &[&str] = &[
    "t_s", "phase",
    "x_m", "y_m", "z_m", "vx_mps", "vy_mps", "vz_mps",
    "roll_rad", "pitch_rad", "yaw_rad", "p_radps", "q_radps", "r_radps",
    "x_ref_m", "y_ref_m", "z_ref_m",
    "meas_x_m", "meas_y_m", "meas_z_m", "meas_vx_mps", "meas_vy_mps", "meas_vz_mps",
    "meas_fz_n", "meas_roll_rad", "meas_pitch_rad", "meas_yaw_rad",
    "u_fz_n", "u_roll_rad", "u_pitch_rad", "u_yaw_rad",
    "fhat_x_n", "fhat_y_n", "fhat_z_n", "force_feed",
    "thrust_ratio", "ceiling_distance_m", "stuck", "voltage_v", "current_a", "degraded",
];

impl TraceRow {
    pub fn tracking_error(&self) -> f64 {
        (self.position - self.reference).norm()
    }

    fn write_csv(&self, line: &mut String) {
        line.clear();
        let _ = write!(line, "{},{}", self.t, self.phase.as_str());
        // `{}` prints the shortest representation that parses back exactly.
        let mut push = |v: f64| {
            let _ = write!(line, ",{v}");
        };
        let y = self.measurement.to_vector();
        let u = self.input.to_vector();
        let vectors = [self.position, self.velocity, self.attitude, self.rates, self.reference];
        vectors.iter().flat_map(|v| v.iter()).for_each(|v| push(*v));
        y.iter().for_each(|v| push(*v));
        u.iter().for_each(|v| push(*v));
        self.f_hat.iter().for_each(|v| push(*v));
        push(f64::from(u8::from(self.force_feed)));
        push(self.thrust_ratio);
        push(self.ceiling_distance);
        push(f64::from(u8::from(self.stuck)));
        push(self.voltage);
        push(self.current);
        push(f64::from(u8::from(self.degraded)));
        line.push('\n');
    }
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<(), HarnessError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", TRACE_COLUMNS.join(","))?;
    let mut line = String::new();
    for row in rows {
        row.write_csv(&mut line);
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Statistics over the hold phase of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HoldStats {
    pub samples: usize,
    /// Mean and population standard deviation of the Euclidean position error [m].
    pub error_mean: f64,
    pub error_std: f64,
    /// Mean absolute vertical error [m].
    pub z_error_mean: f64,
    /// Fraction of hold samples in ceiling contact.
    pub contact_fraction: f64,
    /// Time-averaged electrical power [W] and current [A].
    pub p_ave: f64,
    pub i_ave: f64,
}

pub fn hold_stats(rows: &[TraceRow]) -> HoldStats {
    let hold: Vec<&TraceRow> = rows.iter().filter(|r| r.phase == Phase::Hold).collect();
    let n = hold.len();
    if n == 0 {
        return HoldStats::default();
    }
    let nf = n as f64;
    let errors: Vec<f64> = hold.iter().map(|r| r.tracking_error()).collect();
    let error_mean = errors.iter().sum::<f64>() / nf;
    let error_std = (errors.iter().map(|e| (e - error_mean).powi(2)).sum::<f64>() / nf).sqrt();
    let z_error_mean = hold.iter().map(|r| (r.position.z - r.reference.z).abs()).sum::<f64>() / nf;
    let contact_fraction = hold.iter().filter(|r| r.stuck).count() as f64 / nf;
    let mut meter = PowerMeter::new();
    for r in &hold {
        meter.push(r.t, r.voltage, r.current);
    }
    HoldStats {
        samples: n,
        error_mean,
        error_std,
        z_error_mean,
        contact_fraction,
        p_ave: meter.average_power(),
        i_ave: meter.average_current(),
    }
}

/// Recomputes [`HoldStats`] from a trace file without using the in-memory
/// records, as a cross-check of the summary.
pub fn recompute_hold_stats(path: &Path) -> Result<HoldStats, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| HarnessError::Config("empty trace file".into()))?
        .split(',')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| HarnessError::Config(format!("trace lacks column {name}")))
    };
    let idx = [
        col("t_s")?,
        col("x_m")?,
        col("y_m")?,
        col("z_m")?,
        col("x_ref_m")?,
        col("y_ref_m")?,
        col("z_ref_m")?,
        col("stuck")?,
        col("voltage_v")?,
        col("current_a")?,
    ];
    let phase = col("phase")?;
    let mut v: Vec<[f64; 10]> = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.get(phase) != Some(&"hold") {
            continue;
        }
        let mut rec = [0.0; 10];
        for (slot, &i) in rec.iter_mut().zip(&idx) {
            *slot = fields
                .get(i)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| HarnessError::Config(format!("bad field in line `{line}`")))?;
        }
        v.push(rec);
    }
    let n = v.len();
    if n == 0 {
        return Ok(HoldStats::default());
    }
    let mut stats = HoldStats {
        samples: n,
        ..HoldStats::default()
    };
    let err = |r: &[f64; 10]| ((r[1] - r[4]).powi(2) + (r[2] - r[5]).powi(2) + (r[3] - r[6]).powi(2)).sqrt();
    let mut sum = 0.0;
    let mut sum_z = 0.0;
    let mut contact = 0usize;
    for r in &v {
        sum += err(r);
        sum_z += (r[3] - r[6]).abs();
        contact += usize::from(r[7] != 0.0);
    }
    stats.error_mean = sum / n as f64;
    stats.error_std = (v.iter().map(|r| (err(r) - stats.error_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    stats.z_error_mean = sum_z / n as f64;
    stats.contact_fraction = contact as f64 / n as f64;
    if n == 1 {
        stats.p_ave = v[0][8] * v[0][9];
        stats.i_ave = v[0][9];
    } else {
        let span = v[n - 1][0] - v[0][0];
        let (mut e, mut q) = (0.0, 0.0);
        for w in v.windows(2) {
            let dt = w[1][0] - w[0][0];
            e += 0.5 * dt * (w[0][8] * w[0][9] + w[1][8] * w[1][9]);
            q += 0.5 * dt * (w[0][9] + w[1][9]);
        }
        stats.p_ave = e / span;
        stats.i_ave = q / span;
    }
    Ok(stats)
}
