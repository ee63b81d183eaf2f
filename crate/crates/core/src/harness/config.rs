//! Scenario configuration, loadable from TOML.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::inner_loop::{AttitudeGains, PositionPidGains};
use crate::nmhe::NmheConfig;
use crate::nmpc::NmpcConfig;
use crate::sim::{CeilingModel, NoiseConfig, PlantConfig, PlantState, PowerModel};
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Baseline position PID.
    Pid,
    /// NMPC without the force estimate.
    Nmpc,
    /// NMPC fed with the NMHE force estimate after the switch time.
    ForceNmpc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [Self::Pid, Self::Nmpc, Self::ForceNmpc];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pid => "pid",
            Self::Nmpc => "nmpc",
            Self::ForceNmpc => "force_nmpc",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown controller `{s}` (expected pid, nmpc or force_nmpc)")))
    }
}

/// Durations of the flight phases [s]. The run lasts their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timeline {
    pub hover: f64,
    pub approach: f64,
    pub settle: f64,
    pub hold: f64,
    /// Vertical distance covered by the approach [m].
    pub approach_distance: f64,
}

impl Default for Timeline {
    fn default() -> Self {
        Self {
            hover: 1.0,
            approach: 2.5,
            settle: 1.0,
            hold: 6.0,
            approach_distance: 0.5,
        }
    }
}

impl Timeline {
    pub fn duration(&self) -> f64 {
        self.hover + self.approach + self.settle + self.hold
    }
}

/// Fits the ceiling gain so that regulated hover at `prop_distance` draws
/// `1 − power_reduction` of the free-hover power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub enabled: bool,
    pub power_reduction: f64,
    /// Rotor-to-ceiling distance of the calibration point [m].
    pub prop_distance: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            enabled: true,
            power_reduction: 0.125,
            prop_distance: 0.07,
        }
    }
}

/// Proximity sweep: controllers × distances × the scenario seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub controllers: Vec<ControllerKind>,
    /// Body-reference distances below the ceiling [m].
    pub distances: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            controllers: ControllerKind::ALL.to_vec(),
            distances: vec![0.16, 0.11, 0.06, 0.01],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub controller: ControllerKind,
    /// Hold setpoint: distance of the body reference below the ceiling [m].
    pub distance: f64,
    pub seeds: Vec<u64>,
    /// Time at which the force estimate starts feeding the controller [s].
    pub switch_time: f64,
    /// Removes the ceiling from the plant; the reference path is unchanged.
    pub free_flight: bool,
    /// Horizontal hold position [m] and heading [rad].
    pub start_xy: [f64; 2],
    pub yaw: f64,
    /// Plant integration step [s].
    pub sim_dt: f64,
    /// Estimator and position-controller tick [s].
    pub control_dt: f64,
    pub timeline: Timeline,
    pub vehicle: VehicleParams,
    pub plant: PlantConfig,
    pub ceiling: CeilingModel,
    pub calibration: Calibration,
    pub noise: NoiseConfig,
    pub power: PowerModel,
    pub nmhe: NmheConfig,
    pub nmpc: NmpcConfig,
    pub pid: PositionPidGains,
    pub attitude: AttitudeGains,
    pub sweep: SweepConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            controller: ControllerKind::ForceNmpc,
            distance: 0.01,
            seeds: (0..10).collect(),
            switch_time: 1.0,
            free_flight: false,
            start_xy: [0.0, 0.0],
            yaw: 0.0,
            sim_dt: 0.001,
            control_dt: 0.01,
            timeline: Timeline::default(),
            vehicle: VehicleParams::default(),
            plant: PlantConfig::default(),
            ceiling: CeilingModel::default(),
            calibration: Calibration::default(),
            noise: NoiseConfig::default(),
            power: PowerModel::default(),
            nmhe: NmheConfig::default(),
            nmpc: NmpcConfig::default(),
            pid: PositionPidGains::default(),
            attitude: AttitudeGains::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always serializable")
    }

    /// Number of plant steps per controller tick.
    pub fn substeps(&self) -> usize {
        (self.control_dt / self.sim_dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        self.vehicle
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.sim_dt > 0.0 && self.sim_dt <= 1e-3) {
            return bad("sim_dt must be in (0, 1 ms]");
        }
        let ratio = self.control_dt / self.sim_dt;
        if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
            return bad("control_dt must be an integer multiple of sim_dt");
        }
        if (self.control_dt - self.nmpc.dt).abs() > 1e-12 || (self.control_dt - self.nmhe.dt).abs() > 1e-12 {
            return bad("nmpc.dt and nmhe.dt must equal control_dt");
        }
        if !(self.distance >= 0.0 && self.distance.is_finite()) {
            return bad("distance must be non-negative");
        }
        if self.sweep.distances.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return bad("sweep distances must be non-negative");
        }
        let t = &self.timeline;
        if [t.hover, t.approach, t.settle, t.hold].iter().any(|v| !(*v >= 0.0)) || !(t.hold > 0.0) {
            return bad("phase durations must be non-negative and the hold positive");
        }
        if !(self.plant.rotor_time_constant > 0.0 && self.plant.omega_max > 0.0) {
            return bad("rotor time constant and omega_max must be positive");
        }
        if self.plant.inertia.iter().any(|j| !(*j > 0.0)) {
            return bad("inertia must be positive");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.ceiling.d_min <= 0.0 || self.ceiling.d_on <= self.ceiling.d_min {
            return bad("ceiling requires 0 < d_min < d_on");
        }
        Ok(())
    }

    /// Ceiling with the calibrated gain applied when calibration is enabled.
    pub fn resolved_ceiling(&self) -> Result<CeilingModel, HarnessError> {
        let mut ceiling = self.ceiling;
        ceiling.rotor_radius = self.vehicle.rotor_radius;
        if !self.calibration.enabled {
            return Ok(ceiling);
        }
        let target = calibration_ratio(&self.vehicle, &self.power, self.calibration.power_reduction)?;
        ceiling
            .calibrated(self.calibration.prop_distance, target)
            .ok_or_else(|| HarnessError::Config(format!("no ceiling gain reaches thrust ratio {target:.4}")))
    }

    /// Δz/R of a body-reference distance below the ceiling.
    pub fn dz_over_r(&self, distance: f64) -> f64 {
        (distance + self.ceiling.prop_offset) / self.vehicle.rotor_radius
    }
}

/// Thrust ratio that lowers the steady hover power by `reduction`, with the
/// rotor power following the cube law and the avionics load constant.
pub fn calibration_ratio(p: &VehicleParams, power: &PowerModel, reduction: f64) -> Result<f64, HarnessError> {
    let hover = PlantState::hover_at(Default::default(), p).rotor_command();
    let total = power.demand(&hover);
    let rotors = total - power.avionics;
    let needed = (1.0 - reduction) * total - power.avionics;
    if !(reduction > 0.0 && needed > 0.0 && rotors > 0.0) {
        return Err(HarnessError::Config(format!(
            "power reduction {reduction} is not attainable"
        )));
    }
    // Rotor power scales with (thrust per unit ω²)^(-3/2) at fixed lift.
    Ok((rotors / needed).powf(2.0 / 3.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg =
            ScenarioConfig::from_toml_str("controller = \"pid\"\ndistance = 0.06\n[vehicle]\nmass = 1.5\n").unwrap();
        assert_eq!(cfg.controller, ControllerKind::Pid);
        assert_eq!(cfg.vehicle.mass, 1.5);
        assert_eq!(cfg.vehicle.gravity, 9.81);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            ScenarioConfig::from_toml_str("contoller = \"pid\""),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn default_sweep_matches_proximities() {
        let cfg = ScenarioConfig::default();
        let dz: Vec<f64> = cfg.sweep.distances.iter().map(|d| cfg.dz_over_r(*d)).collect();
        for (got, want) in dz.iter().zip([1.83, 1.42, 1.00, 0.58]) {
            assert!((got - want).abs() < 0.005, "{got} vs {want}");
        }
    }

    #[test]
    fn calibration_ratio_reproduces_power_drop() {
        let cfg = ScenarioConfig::default();
        let r = calibration_ratio(&cfg.vehicle, &cfg.power, 0.125).unwrap();
        // Hover at the amplified ratio: ω² shrinks by 1/r.
        let hover = PlantState::hover_at(Default::default(), &cfg.vehicle).rotor_command();
        let mut near = hover;
        near.omega.iter_mut().for_each(|w| *w /= r.sqrt());
        let drop = 1.0 - cfg.power.demand(&near) / cfg.power.demand(&hover);
        assert!((drop - 0.125).abs() < 1e-12);
        let c = cfg.resolved_ceiling().unwrap();
        assert!((c.thrust_ratio(0.07) - r).abs() < 1e-10);
    }

    #[test]
    fn controller_names_parse() {
        for c in ControllerKind::ALL {
            assert_eq!(c.name().parse::<ControllerKind>().unwrap(), c);
        }
        assert!("lqr".parse::<ControllerKind>().is_err());
    }
}
