//! Closed-loop simulation of one scenario.

use std::path::Path;
use std::time::Instant;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::config::{ControllerKind, ScenarioConfig};
use super::timing::{report_timings, write_timing_csv, TimingRow, TimingSummary};
use super::trace::{hold_stats, write_trace_csv, HoldStats, Phase, TraceRow};
use super::HarnessError;
use crate::inner_loop::{AttitudeController, PositionPid};
use crate::nmhe::Nmhe;
use crate::nmpc::{make_nominal_nmpc, Nmpc, Reference};
use crate::sim::{power_draw, Plant, PlantState, Sensor};
use crate::vehicle::ControlInput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub controller: ControllerKind,
    pub distance_m: f64,
    pub dz_over_r: f64,
    pub seed: u64,
    pub free_flight: bool,
    pub hold: HoldStats,
    /// Pinned to the ceiling at the end of the run.
    pub stuck: bool,
    /// Reductions relative to a free-hover run, when one was supplied.
    pub relative_power: Option<f64>,
    pub relative_current: Option<f64>,
    /// Extremes over the whole run of the estimated vertical force and the
    /// commanded thrust [N].
    pub f_hat_z_min: f64,
    pub f_hat_z_max: f64,
    pub f_z_min: f64,
    pub f_z_max: f64,
    pub degraded_ticks: usize,
    pub arrival_resets: usize,
    pub timing_ms: TimingSummary,
}

impl RunSummary {
    /// Fills the relative power and current from free-hover averages.
    pub fn set_free_hover(&mut self, p_free: f64, i_free: f64) {
        self.relative_power = Some(1.0 - self.hold.p_ave / p_free);
        self.relative_current = Some(1.0 - self.hold.i_ave / i_free);
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub trace: Vec<TraceRow>,
    pub timing: Vec<TimingRow>,
}

impl RunOutput {
    /// Writes `trace.csv`, `timing.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        write_trace_csv(&self.trace, &dir.join("trace.csv"))?;
        write_timing_csv(&self.timing, &dir.join("timing.csv"))?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)?)?;
        Ok(())
    }
}

/// Quintic rest-to-rest blend s(τ) and its derivative.
fn min_jerk(tau: f64) -> (f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t);
    (s, ds)
}

/// Reference trajectory: hover below the setpoint, a minimum-jerk climb to
/// it, then hold.
#[derive(Debug, Clone, Copy)]
pub struct Profile {
    start: Vector3<f64>,
    target: Vector3<f64>,
    hover: f64,
    approach: f64,
    settle: f64,
}

impl Profile {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let z_target = cfg.ceiling.ceiling_height - cfg.distance;
        let [x, y] = cfg.start_xy;
        Self {
            start: Vector3::new(x, y, z_target - cfg.timeline.approach_distance),
            target: Vector3::new(x, y, z_target),
            hover: cfg.timeline.hover,
            approach: cfg.timeline.approach,
            settle: cfg.timeline.settle,
        }
    }

    pub fn start(&self) -> Vector3<f64> {
        self.start
    }

    /// Position, velocity and phase at time `t`.
    pub fn at(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Phase) {
        let delta = self.target - self.start;
        if t < self.hover {
            return (self.start, Vector3::zeros(), Phase::Hover);
        }
        let ta = t - self.hover;
        if ta < self.approach {
            let (s, ds) = min_jerk(ta / self.approach);
            return (self.start + delta * s, delta * (ds / self.approach), Phase::Approach);
        }
        let phase = if ta < self.approach + self.settle {
            Phase::Settle
        } else {
            Phase::Hold
        };
        (self.target, Vector3::zeros(), phase)
    }
}

// One instance per run, so variant size does not matter.
#[allow(clippy::large_enum_variant)]
enum Outer {
    Pid(PositionPid),
    Mpc { nmpc: Nmpc, nmhe: Option<Nmhe> },
}

fn build_outer(cfg: &ScenarioConfig) -> Result<Outer, HarnessError> {
    let p = cfg.vehicle;
    Ok(match cfg.controller {
        ControllerKind::Pid => {
            let (lo, hi) = cfg.nmpc.input_bounds(&p, cfg.yaw);
            Outer::Pid(PositionPid::new(cfg.pid, p, lo, hi))
        }
        ControllerKind::Nmpc => Outer::Mpc {
            nmpc: make_nominal_nmpc(cfg.nmpc.clone(), p)?,
            nmhe: None,
        },
        ControllerKind::ForceNmpc => {
            let mut nmpc = Nmpc::new(cfg.nmpc.clone(), p)?;
            nmpc.set_force_feed(false);
            Outer::Mpc {
                nmpc,
                nmhe: Some(Nmhe::new(cfg.nmhe.clone(), p)?),
            }
        }
    })
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs one scenario with the given noise seed. The trace depends only on
/// the configuration and the seed; wall times go to the separate timing log.
pub fn run_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let p = cfg.vehicle;
    let ceiling = cfg.resolved_ceiling()?;
    let plant = Plant::new(cfg.plant, p, (!cfg.free_flight).then_some(ceiling));
    let mixer = *plant.mixer();
    let mut sensor = Sensor::new(cfg.noise, seed);
    let mut attitude = AttitudeController::new(cfg.attitude);
    let mut outer = build_outer(cfg)?;
    let profile = Profile::new(cfg);

    let mut state = PlantState::hover_at(profile.start(), &p);
    state.attitude.z = cfg.yaw;
    let ticks = (cfg.timeline.duration() / cfg.control_dt).round() as usize;
    let substeps = cfg.substeps();
    let mut trace = Vec::with_capacity(ticks);
    let mut timing = Vec::with_capacity(ticks);
    let mut prev_input: Option<ControlInput> = None;
    let mut f_hat = Vector3::zeros();
    let mut rate_accel = Vector3::zeros();
    let (mut f_hat_z_min, mut f_hat_z_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut f_z_min, mut f_z_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut degraded_ticks = 0;

    for k in 0..ticks {
        let t = k as f64 * cfg.control_dt;
        let y = sensor.sample(&state, &mixer);
        let (pos_ref, vel_ref, phase) = profile.at(t);
        let reference = Reference {
            position: pos_ref,
            velocity: vel_ref,
            nominal: ControlInput::new(p.weight(), 0.0, 0.0, cfg.yaw),
        };
        let feed = t >= cfg.switch_time;
        let mut degraded = false;
        let mut estimator_ms = 0.0;
        let controller_start;
        let u = match &mut outer {
            Outer::Pid(pid) => {
                controller_start = Instant::now();
                pid.update(&y.motion(), &reference, cfg.control_dt)
            }
            Outer::Mpc { nmpc, nmhe } => {
                let mut x_hat: Vector6<f64> = y.motion();
                if let Some(est) = nmhe {
                    let start = Instant::now();
                    match est.push_and_estimate(&y, &prev_input.unwrap_or_else(|| y.input())) {
                        Ok(out) => {
                            f_hat = out.state_now.f_ext;
                            x_hat = out.state_now.motion();
                        }
                        Err(_) => {
                            degraded = true;
                            est.reset();
                        }
                    }
                    estimator_ms = ms(start);
                    nmpc.set_force_feed(feed);
                }
                controller_start = Instant::now();
                let out = nmpc.control_step(&x_hat, &f_hat, &reference);
                degraded |= out.degraded;
                out.u0
            }
        };
        let controller_ms = ms(controller_start);
        prev_input = Some(y.input());
        degraded_ticks += usize::from(degraded);
        f_hat_z_min = f_hat_z_min.min(f_hat.z);
        f_hat_z_max = f_hat_z_max.max(f_hat.z);
        f_z_min = f_z_min.min(u.f_z);
        f_z_max = f_z_max.max(u.f_z);

        let (voltage, current) = power_draw(&state.rotor_command(), &cfg.power);
        trace.push(TraceRow {
            t,
            phase,
            position: state.position,
            velocity: state.velocity,
            attitude: state.attitude,
            rates: state.rates,
            reference: pos_ref,
            measurement: y,
            input: u,
            f_hat,
            force_feed: feed && cfg.controller == ControllerKind::ForceNmpc,
            thrust_ratio: plant.thrust_ratio(state.position.z),
            ceiling_distance: plant.distance_to_ceiling(state.position.z),
            stuck: state.stuck,
            voltage,
            current,
            degraded,
        });
        timing.push(TimingRow {
            t,
            estimator_ms,
            controller_ms,
        });

        let att_ref = u.attitude();
        for _ in 0..substeps {
            let torque = attitude.update(&att_ref, &state.attitude, &state.rates, &rate_accel, cfg.sim_dt);
            let alloc = mixer.allocate(u.f_z, &torque);
            let next = plant.step(&state, &alloc.command, cfg.sim_dt);
            rate_accel = (next.rates - state.rates) / cfg.sim_dt;
            state = next;
        }
    }

    let hold = hold_stats(&trace);
    let arrival_resets = match &outer {
        Outer::Mpc { nmhe: Some(est), .. } => est.arrival_resets(),
        _ => 0,
    };
    let summary = RunSummary {
        controller: cfg.controller,
        distance_m: cfg.distance,
        dz_over_r: cfg.dz_over_r(cfg.distance),
        seed,
        free_flight: cfg.free_flight,
        stuck: state.stuck,
        hold,
        relative_power: None,
        relative_current: None,
        f_hat_z_min,
        f_hat_z_max,
        f_z_min,
        f_z_max,
        degraded_ticks,
        arrival_resets,
        timing_ms: report_timings(&timing),
    };
    Ok(RunOutput { summary, trace, timing })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_is_continuous_and_ends_at_target() {
        let cfg = ScenarioConfig::default();
        let prof = Profile::new(&cfg);
        let (p0, v0, ph0) = prof.at(0.0);
        assert_eq!((ph0, v0), (Phase::Hover, Vector3::zeros()));
        let end = cfg.timeline.hover + cfg.timeline.approach;
        let (p1, v1, _) = prof.at(end - 1e-9);
        assert!((p1.z - (cfg.ceiling.ceiling_height - cfg.distance)).abs() < 1e-9);
        assert!(v1.norm() < 1e-6);
        assert!((p1 - p0).z - cfg.timeline.approach_distance < 1e-9);
        assert_eq!(prof.at(end + cfg.timeline.settle + 0.1).2, Phase::Hold);
    }

    #[test]
    fn min_jerk_peak_velocity() {
        // Peak of 30τ²(1−τ)² is 15/8 at τ = 1/2.
        assert!((min_jerk(0.5).1 - 1.875).abs() < 1e-15);
        assert_eq!(min_jerk(1.0), (1.0, 0.0));
    }
}
