//! Receding-horizon position controller on the translational model, with
//! the estimated external force held constant over the horizon.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{propagate, IntegratorConfig, IntegratorError, Propagation};
use crate::nmhe::SolveStats;
use crate::ocp::{control_rti_step, ControlOcp, OcpError, Residual, RtiConfig, ShootingGrid};
use crate::vehicle::{ControlInput, MotionModel, VehicleParams, INPUT_DIM, MOTION_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmpcError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("control solver failed: {0}")]
    SolverFailure(#[from] OcpError),
}

/// Controller settings. As for the estimator, position and velocity errors
/// are weighted in units of `1/length_scale` metres, and attitude inputs in
/// units of `1/angle_scale` radians (degrees by default). The defaults give
/// a vertical stiffness of about 16 N/m and a horizontal velocity loop near
/// 2 rad/s, slow enough for the attitude loop to follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcConfig {
    pub dt: f64,
    pub horizon: usize,
    pub q_diag: [f64; 6],
    pub r_diag: [f64; 4],
    pub s_diag: [f64; 6],
    pub length_scale: f64,
    pub angle_scale: f64,
    /// Thrust bounds as multiples of the vehicle weight.
    pub f_z_min_ratio: f64,
    pub f_z_max_ratio: f64,
    /// Symmetric roll and pitch bound, rad.
    pub tilt_max: f64,
    pub integrator: IntegratorConfig,
    pub rti: RtiConfig,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: 40,
            q_diag: [30.0, 30.0, 10.0, 1.0, 1.0, 2.5],
            r_diag: [30.0, 30.0, 80.0, 0.04],
            s_diag: [60.0, 60.0, 20.0, 2.0, 2.0, 5.0],
            length_scale: 50.0,
            angle_scale: 180.0 / std::f64::consts::PI,
            f_z_min_ratio: 0.5,
            f_z_max_ratio: 1.5,
            tilt_max: 0.5,
            integrator: IntegratorConfig::default(),
            rti: RtiConfig::default(),
        }
    }
}

impl NmpcConfig {
    pub fn validate(&self) -> Result<(), NmpcError> {
        let bad = |m: &str| Err(NmpcError::InvalidConfig(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be positive");
        }
        if self.q_diag.iter().chain(&self.s_diag).any(|v| !(*v >= 0.0)) {
            return bad("state weights must be non-negative");
        }
        if self.r_diag.iter().any(|v| !(*v > 0.0)) {
            return bad("input weights must be positive");
        }
        if !(self.length_scale > 0.0 && self.angle_scale > 0.0)
            || !(0.0 <= self.f_z_min_ratio && self.f_z_min_ratio < self.f_z_max_ratio)
            || !(self.tilt_max > 0.0)
        {
            return bad("length scale, thrust ratios or tilt bound");
        }
        if (self.dt - self.integrator.interval).abs() > 1e-12 {
            return bad("integrator interval must equal dt");
        }
        self.integrator
            .validate()
            .map_err(|e| NmpcError::InvalidConfig(e.to_string()))
    }

    fn state_weight(&self, diag: &[f64; 6]) -> DMatrix<f64> {
        let s2 = self.length_scale * self.length_scale;
        DMatrix::from_diagonal(&DVector::from_iterator(6, diag.iter().map(|v| v * s2)))
    }

    /// Input box (lower, upper) in (f_z, roll, pitch, yaw) order. Yaw is not
    /// optimized: both of its bounds equal the reference yaw.
    pub fn input_bounds(&self, p: &VehicleParams, yaw: f64) -> (ControlInput, ControlInput) {
        let w = p.weight();
        (
            ControlInput::new(self.f_z_min_ratio * w, -self.tilt_max, -self.tilt_max, yaw),
            ControlInput::new(self.f_z_max_ratio * w, self.tilt_max, self.tilt_max, yaw),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub nominal: ControlInput,
}

impl Reference {
    /// Hold `position` with the hover input as nominal.
    pub fn hover_at(position: Vector3<f64>, yaw: f64, p: &VehicleParams) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            nominal: ControlInput::new(p.weight(), 0.0, 0.0, yaw),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u0: ControlInput,
    pub predicted: Vec<Vector6<f64>>,
    pub stats: SolveStats,
    /// Set when the solver failed and `u0` repeats the previous input.
    pub degraded: bool,
}

struct TrackingProblem<'a> {
    model: MotionModel,
    cfg: &'a NmpcConfig,
    x_ref: DVector<f64>,
    u_ref: DVector<f64>,
    stage_weight: &'a DMatrix<f64>,
    terminal_weight: &'a DMatrix<f64>,
    bounds: (DVector<f64>, DVector<f64>),
}

impl ControlOcp for TrackingProblem<'_> {
    fn state_dim(&self) -> usize {
        MOTION_DIM
    }

    fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn propagate(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<Propagation, IntegratorError> {
        propagate(&self.model, x, u, &self.cfg.integrator)
    }

    fn stage_residual(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Residual {
        let n = MOTION_DIM + INPUT_DIM;
        let mut value = DVector::zeros(n);
        value.rows_mut(0, MOTION_DIM).copy_from(&(x - &self.x_ref));
        value.rows_mut(MOTION_DIM, INPUT_DIM).copy_from(&(u - &self.u_ref));
        let mut d_state = DMatrix::zeros(n, MOTION_DIM);
        d_state.view_mut((0, 0), (MOTION_DIM, MOTION_DIM)).fill_with_identity();
        let mut d_input = DMatrix::zeros(n, INPUT_DIM);
        d_input
            .view_mut((MOTION_DIM, 0), (INPUT_DIM, INPUT_DIM))
            .fill_with_identity();
        // The thrust row penalizes the vertical thrust component. With the
        // body thrust penalized instead, alternating roll or pitch sheds
        // vertical thrust at a cost linear in the amount shed, and the
        // optimum dithers the attitude whenever less than nominal thrust is
        // wanted.
        let (f_z, roll, pitch) = (u[0], u[1], u[2]);
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        value[MOTION_DIM] = f_z * cr * cp - self.u_ref[0];
        d_input[(MOTION_DIM, 0)] = cr * cp;
        d_input[(MOTION_DIM, 1)] = -f_z * sr * cp;
        d_input[(MOTION_DIM, 2)] = -f_z * cr * sp;
        Residual {
            value,
            d_state,
            d_input,
        }
    }

    fn stage_weight(&self, _k: usize) -> &DMatrix<f64> {
        self.stage_weight
    }

    fn terminal_residual(&self, x: &DVector<f64>) -> Residual {
        Residual {
            value: x - &self.x_ref,
            d_state: DMatrix::identity(MOTION_DIM, MOTION_DIM),
            d_input: DMatrix::zeros(MOTION_DIM, 0),
        }
    }

    fn terminal_weight(&self) -> &DMatrix<f64> {
        self.terminal_weight
    }

    fn input_bounds(&self, _k: usize) -> (DVector<f64>, DVector<f64>) {
        self.bounds.clone()
    }
}

fn input_dvec(u: &ControlInput) -> DVector<f64> {
    DVector::from_column_slice(u.to_vector().as_slice())
}

/// Nonlinear MPC with optional force feed-forward.
#[derive(Debug, Clone)]
pub struct Nmpc {
    cfg: NmpcConfig,
    params: VehicleParams,
    force_feed: bool,
    stage_weight: DMatrix<f64>,
    terminal_weight: DMatrix<f64>,
    grid: Option<ShootingGrid>,
    last_input: Option<ControlInput>,
}

impl Nmpc {
    /// Controller that uses the supplied force estimate.
    pub fn new(cfg: NmpcConfig, params: VehicleParams) -> Result<Self, NmpcError> {
        cfg.validate()?;
        params.validate().map_err(|e| NmpcError::InvalidConfig(e.to_string()))?;
        let mut stage_weight = DMatrix::zeros(MOTION_DIM + INPUT_DIM, MOTION_DIM + INPUT_DIM);
        stage_weight
            .view_mut((0, 0), (MOTION_DIM, MOTION_DIM))
            .copy_from(&cfg.state_weight(&cfg.q_diag));
        for i in 0..INPUT_DIM {
            let scale = if i == 0 { 1.0 } else { cfg.angle_scale * cfg.angle_scale };
            stage_weight[(MOTION_DIM + i, MOTION_DIM + i)] = cfg.r_diag[i] * scale;
        }
        Ok(Self {
            terminal_weight: cfg.state_weight(&cfg.s_diag),
            stage_weight,
            cfg,
            params,
            force_feed: true,
            grid: None,
            last_input: None,
        })
    }

    pub fn config(&self) -> &NmpcConfig {
        &self.cfg
    }

    pub fn force_feed(&self) -> bool {
        self.force_feed
    }

    /// Enables or disables use of the force estimate.
    pub fn set_force_feed(&mut self, on: bool) {
        self.force_feed = on;
    }

    pub fn reset(&mut self) {
        self.grid = None;
        self.last_input = None;
    }

    /// One real-time iteration from the measured translational state.
    pub fn control_step(
        &mut self,
        state: &Vector6<f64>,
        f_ext_hat: &Vector3<f64>,
        reference: &Reference,
    ) -> ControlOutput {
        let start = Instant::now();
        let f_ext = if self.force_feed { *f_ext_hat } else { Vector3::zeros() };
        let x0 = DVector::from_column_slice(state.as_slice());
        let (lo, hi) = self.cfg.input_bounds(&self.params, reference.nominal.yaw);
        let mut x_ref = DVector::zeros(MOTION_DIM);
        x_ref.rows_mut(0, 3).copy_from(&reference.position);
        x_ref.rows_mut(3, 3).copy_from(&reference.velocity);
        let problem = TrackingProblem {
            model: MotionModel {
                params: self.params,
                f_ext,
            },
            cfg: &self.cfg,
            x_ref,
            u_ref: input_dvec(&reference.nominal),
            stage_weight: &self.stage_weight,
            terminal_weight: &self.terminal_weight,
            bounds: (input_dvec(&lo), input_dvec(&hi)),
        };

        let mut grid = match self.grid.take() {
            Some(mut g) => {
                g.shift();
                g
            }
            None => ShootingGrid::constant(self.cfg.horizon, &x0, &problem.u_ref),
        };
        let result = control_rti_step(&problem, &mut grid, &x0, &self.cfg.rti);
        let wall = start.elapsed().as_secs_f64();
        match result {
            Ok(rti) if grid.node_inputs[0].iter().all(|v| v.is_finite()) => {
                let raw = ControlInput::from_slice(grid.node_inputs[0].as_slice());
                let u0 = ControlInput::new(
                    raw.f_z.clamp(lo.f_z, hi.f_z),
                    raw.roll.clamp(lo.roll, hi.roll),
                    raw.pitch.clamp(lo.pitch, hi.pitch),
                    raw.yaw.clamp(lo.yaw, hi.yaw),
                );
                let predicted = grid
                    .node_states
                    .iter()
                    .map(|x| Vector6::from_column_slice(x.as_slice()))
                    .collect();
                self.grid = Some(grid);
                self.last_input = Some(u0);
                ControlOutput {
                    u0,
                    predicted,
                    stats: SolveStats {
                        qp_iterations: rti.qp_iterations,
                        kkt_residual: rti.kkt_residual,
                        active_bounds: rti.active_bounds,
                        wall_time_s: wall,
                    },
                    degraded: false,
                }
            }
            _ => {
                // Hold the previous input and rebuild the grid next tick.
                let u0 = self.last_input.unwrap_or(reference.nominal);
                ControlOutput {
                    u0,
                    predicted: Vec::new(),
                    stats: SolveStats {
                        wall_time_s: wall,
                        ..SolveStats::default()
                    },
                    degraded: true,
                }
            }
        }
    }
}

/// Controller identical to [`Nmpc`] but with the force estimate pinned to zero.
pub fn make_nominal_nmpc(cfg: NmpcConfig, params: VehicleParams) -> Result<Nmpc, NmpcError> {
    let mut c = Nmpc::new(cfg, params)?;
    c.set_force_feed(false);
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::step;
    use crate::vehicle::AugmentedState;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    fn converge(ctrl: &mut Nmpc, f_ext: Vector3<f64>, reference: &Reference, ticks: usize) -> ControlOutput {
        let state = Vector6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let mut out = None;
        for _ in 0..ticks {
            out = Some(ctrl.control_step(&state, &f_ext, reference));
        }
        out.unwrap()
    }

    #[test]
    fn at_reference_returns_hover() {
        let p = params();
        let mut ctrl = Nmpc::new(NmpcConfig::default(), p).unwrap();
        let reference = Reference::hover_at(Vector3::new(0.0, 0.0, 1.0), 0.3, &p);
        let out = converge(&mut ctrl, Vector3::zeros(), &reference, 3);
        let want = ControlInput::new(p.weight(), 0.0, 0.0, 0.3);
        assert!((out.u0.to_vector() - want.to_vector()).amax() < 1e-6);
        assert!(!out.degraded);
    }

    #[test]
    fn downward_force_is_compensated() {
        let p = params();
        let mut ctrl = Nmpc::new(NmpcConfig::default(), p).unwrap();
        let reference = Reference::hover_at(Vector3::new(0.0, 0.0, 1.0), 0.0, &p);
        let out = converge(&mut ctrl, Vector3::new(0.0, 0.0, -4.0), &reference, 30);
        // The nominal-input penalty leaves a small shortfall.
        assert!((out.u0.f_z - (p.weight() + 4.0)).abs() < 0.1, "{}", out.u0.f_z);
        let (lo, hi) = ctrl.config().input_bounds(&p, 0.0);
        assert!(out.u0.f_z <= hi.f_z && out.u0.f_z >= lo.f_z);
    }

    #[test]
    fn strong_upward_force_saturates_thrust() {
        let p = params();
        let mut ctrl = Nmpc::new(NmpcConfig::default(), p).unwrap();
        let reference = Reference::hover_at(Vector3::new(0.0, 0.0, 1.0), 0.0, &p);
        let out = converge(&mut ctrl, Vector3::new(0.0, 0.0, 8.0), &reference, 10);
        assert_eq!(out.u0.f_z, 0.5 * p.weight());
    }

    #[test]
    fn nominal_controller_ignores_estimate() {
        let p = params();
        let reference = Reference::hover_at(Vector3::new(0.0, 0.0, 1.0), 0.0, &p);
        let mut fed = Nmpc::new(NmpcConfig::default(), p).unwrap();
        let mut nominal = make_nominal_nmpc(NmpcConfig::default(), p).unwrap();
        let a = converge(&mut fed, Vector3::zeros(), &reference, 5);
        let b = converge(&mut nominal, Vector3::new(0.0, 0.0, -4.0), &reference, 5);
        assert_eq!(a.u0, b.u0);
    }

    fn closed_loop(f_ext: Vector3<f64>, ticks: usize) -> (AugmentedState, Vec<ControlInput>) {
        let p = params();
        let cfg = NmpcConfig::default();
        let mut ctrl = Nmpc::new(cfg.clone(), p).unwrap();
        let reference = Reference::hover_at(Vector3::new(1.0, -0.5, 2.0), 0.0, &p);
        let mut s = AugmentedState::new(Vector3::new(0.0, 0.0, 1.0), Vector3::zeros(), f_ext);
        let mut inputs = Vec::with_capacity(ticks);
        for _ in 0..ticks {
            let out = ctrl.control_step(&s.motion(), &s.f_ext, &reference);
            s = step(&s, &out.u0, &cfg.integrator, &p).unwrap().next_state;
            inputs.push(out.u0);
        }
        (s, inputs)
    }

    #[test]
    fn regulates_from_offset() {
        let (s, _) = closed_loop(Vector3::zeros(), 1000);
        let e = (s.position - Vector3::new(1.0, -0.5, 2.0)).norm();
        assert!(e < 0.02, "{e}");
    }

    #[test]
    fn upward_force_does_not_dither_attitude() {
        let (s, inputs) = closed_loop(Vector3::new(0.0, 0.0, 3.0), 1500);
        let e = (s.position - Vector3::new(1.0, -0.5, 2.0)).norm();
        assert!(e < 0.02, "{e} {:?}", s.position);
        let tail = &inputs[1400..];
        let tilt = tail.iter().map(|u| u.roll.abs().max(u.pitch.abs())).fold(0.0, f64::max);
        let jump = tail
            .windows(2)
            .map(|w| (w[1].roll - w[0].roll).abs().max((w[1].pitch - w[0].pitch).abs()))
            .fold(0.0, f64::max);
        assert!(tilt < 1e-2 && jump < 1e-4, "{tilt} {jump}");
        assert!(tail.iter().all(|u| u.f_z < 0.8 * 11.772));
    }

    #[test]
    fn rejects_bad_weights() {
        let cfg = NmpcConfig {
            r_diag: [30.0, 0.0, 80.0, 0.04],
            ..NmpcConfig::default()
        };
        assert!(Nmpc::new(cfg, params()).is_err());
    }
}
