//! Attitude control, control allocation and the baseline position PID.

use nalgebra::{Matrix4, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::nmpc::Reference;
use crate::vehicle::{ControlInput, VehicleParams};

/// Gains and limits of one PID channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on the integral term's contribution to the output.
    pub integral_limit: f64,
    /// Symmetric output bound.
    pub output_limit: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64, integral_limit: f64, output_limit: f64) -> Self {
        Self {
            kp,
            ki,
            kd,
            integral_limit,
            output_limit,
        }
    }
}

/// PID channel with a clamped integral. The derivative acts on a supplied
/// error rate, so there is no derivative kick on reference steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pid {
    pub gains: PidGains,
    integral: f64,
}

impl Pid {
    pub fn new(gains: PidGains) -> Self {
        Self { gains, integral: 0.0 }
    }

    /// Current integral contribution to the output.
    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
    }

    pub fn update(&mut self, error: f64, error_rate: f64, dt: f64) -> f64 {
        let g = &self.gains;
        self.integral = (self.integral + g.ki * error * dt).clamp(-g.integral_limit, g.integral_limit);
        (g.kp * error + g.kd * error_rate + self.integral).clamp(-g.output_limit, g.output_limit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttitudeGains {
    /// Angle-to-rate proportional gains, 1/s.
    pub angle_p: [f64; 3],
    /// Rate reference limits, rad/s.
    pub rate_limit: [f64; 3],
    /// Rate PID per axis, output in N·m.
    pub rate: [PidGains; 3],
}

impl Default for AttitudeGains {
    fn default() -> Self {
        let roll_pitch = PidGains::new(0.35, 0.3, 0.004, 0.05, 1.0);
        Self {
            angle_p: [9.0, 9.0, 4.0],
            rate_limit: [4.0, 4.0, 2.0],
            rate: [roll_pitch, roll_pitch, PidGains::new(0.25, 0.1, 0.0, 0.05, 0.3)],
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// Cascaded attitude controller: P on angle error giving a rate reference,
/// PID on rate error giving torque.
#[derive(Debug, Clone)]
pub struct AttitudeController {
    gains: AttitudeGains,
    rate_pids: [Pid; 3],
}

impl AttitudeController {
    pub fn new(gains: AttitudeGains) -> Self {
        Self {
            rate_pids: gains.rate.map(Pid::new),
            gains,
        }
    }

    pub fn reset(&mut self) {
        self.rate_pids.iter_mut().for_each(Pid::reset);
    }

    /// Torques (N·m) for attitude reference `att_ref`, attitude `att` (roll,
    /// pitch, yaw) and body rates `rates`. `rate_accel` is the measured
    /// body angular acceleration used by the derivative term.
    pub fn update(
        &mut self,
        att_ref: &Vector3<f64>,
        att: &Vector3<f64>,
        rates: &Vector3<f64>,
        rate_accel: &Vector3<f64>,
        dt: f64,
    ) -> Vector3<f64> {
        let mut torque = Vector3::zeros();
        for i in 0..3 {
            let err = wrap_angle(att_ref[i] - att[i]);
            let lim = self.gains.rate_limit[i];
            let rate_ref = (self.gains.angle_p[i] * err).clamp(-lim, lim);
            torque[i] = self.rate_pids[i].update(rate_ref - rates[i], -rate_accel[i], dt);
        }
        torque
    }
}

/// Rotor speeds, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RotorCommand {
    pub omega: [f64; 4],
}

/// Result of a control allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub command: RotorCommand,
    /// Wrench (f_z, τx, τy, τz) produced by `command`; differs from the
    /// request when a rotor saturated.
    pub achieved: Vector4<f64>,
    pub saturated: bool,
}

/// X-configuration mixer. Rotors are numbered front-left, rear-left,
/// rear-right, front-right (body x forward, y left, z up); the front-left /
/// rear-right pair spins clockwise seen from above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mixer {
    matrix: Matrix4<f64>,
    inverse: Matrix4<f64>,
    omega_max: f64,
}

impl Mixer {
    pub fn new(p: &VehicleParams, omega_max: f64) -> Self {
        let a = p.arm_length / std::f64::consts::SQRT_2;
        let (kt, kd) = (p.thrust_coeff, p.drag_torque_coeff);
        // Rotor positions (x, y) and yaw-torque signs.
        let pos = [(a, a), (-a, a), (-a, -a), (a, -a)];
        let spin = [-1.0, 1.0, -1.0, 1.0];
        let mut m = Matrix4::zeros();
        for i in 0..4 {
            m[(0, i)] = kt;
            m[(1, i)] = kt * pos[i].1;
            m[(2, i)] = -kt * pos[i].0;
            m[(3, i)] = kd * spin[i];
        }
        let inverse = m
            .try_inverse()
            .expect("mixer matrix is invertible for positive parameters");
        Self {
            matrix: m,
            inverse,
            omega_max,
        }
    }

    /// Maps squared rotor speeds to (f_z, τx, τy, τz).
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn omega_max(&self) -> f64 {
        self.omega_max
    }

    pub fn wrench(&self, cmd: &RotorCommand) -> Vector4<f64> {
        let w2 = Vector4::from_iterator(cmd.omega.iter().map(|w| w * w));
        self.matrix * w2
    }

    /// Rotor speeds for thrust `f_z` and body torques; squared speeds are
    /// clamped to [0, ω_max²] and the achieved wrench is reported.
    pub fn allocate(&self, f_z: f64, torque: &Vector3<f64>) -> Allocation {
        let w2 = self.inverse * Vector4::new(f_z.max(0.0), torque.x, torque.y, torque.z);
        let max2 = self.omega_max * self.omega_max;
        let mut saturated = false;
        let mut omega = [0.0; 4];
        for i in 0..4 {
            let c = w2[i].clamp(0.0, max2);
            saturated |= c != w2[i];
            omega[i] = c.sqrt();
        }
        let command = RotorCommand { omega };
        Allocation {
            achieved: self.wrench(&command),
            command,
            saturated,
        }
    }
}

/// Convenience wrapper around [`Mixer::allocate`].
pub fn allocate(f_z: f64, torque: &Vector3<f64>, p: &VehicleParams, omega_max: f64) -> Allocation {
    Mixer::new(p, omega_max).allocate(f_z, torque)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionPidGains {
    /// Horizontal channels, output in m/s².
    pub xy: PidGains,
    /// Vertical channel, output in m/s².
    pub z: PidGains,
}

impl Default for PositionPidGains {
    fn default() -> Self {
        Self {
            xy: PidGains::new(4.0, 0.5, 3.0, 1.0, 5.0),
            z: PidGains::new(4.0, 1.0, 3.0, 1.0, 5.0),
        }
    }
}

/// Baseline position controller: PID on position error producing a desired
/// acceleration, inverted to (f_z, roll, pitch) by small-angle relations.
#[derive(Debug, Clone)]
pub struct PositionPid {
    params: VehicleParams,
    pids: [Pid; 3],
    lower: ControlInput,
    upper: ControlInput,
}

impl PositionPid {
    /// `lower`/`upper` are the input boxes (yaw entries are ignored).
    pub fn new(gains: PositionPidGains, params: VehicleParams, lower: ControlInput, upper: ControlInput) -> Self {
        Self {
            params,
            pids: [Pid::new(gains.xy), Pid::new(gains.xy), Pid::new(gains.z)],
            lower,
            upper,
        }
    }

    pub fn reset(&mut self) {
        self.pids.iter_mut().for_each(Pid::reset);
    }

    pub fn integrals(&self) -> Vector3<f64> {
        Vector3::new(
            self.pids[0].integral(),
            self.pids[1].integral(),
            self.pids[2].integral(),
        )
    }

    pub fn update(&mut self, state: &Vector6<f64>, reference: &Reference, dt: f64) -> ControlInput {
        let mut acc = Vector3::zeros();
        for i in 0..3 {
            let e = reference.position[i] - state[i];
            let de = reference.velocity[i] - state[3 + i];
            acc[i] = self.pids[i].update(e, de, dt);
        }
        let g = self.params.gravity;
        let yaw = reference.nominal.yaw;
        let (sy, cy) = yaw.sin_cos();
        let pitch = (cy * acc.x + sy * acc.y) / g;
        let roll = (sy * acc.x - cy * acc.y) / g;
        let f_z = self.params.mass * (g + acc.z);
        ControlInput::new(
            f_z.clamp(self.lower.f_z, self.upper.f_z),
            roll.clamp(self.lower.roll, self.upper.roll),
            pitch.clamp(self.lower.pitch, self.upper.pitch),
            yaw,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::thrust_axis;
    use proptest::prelude::*;

    fn mixer() -> Mixer {
        Mixer::new(&VehicleParams::default(), 1000.0)
    }

    #[test]
    fn hover_wrench_gives_equal_rotors() {
        let p = VehicleParams::default();
        let a = mixer().allocate(p.weight(), &Vector3::zeros());
        let expect = (p.weight() / (4.0 * p.thrust_coeff)).sqrt();
        for w in a.command.omega {
            assert!((w - expect).abs() < 1e-9 * expect);
        }
        assert!(!a.saturated);
    }

    #[test]
    fn yaw_torque_splits_diagonal_pairs() {
        let a = mixer().allocate(10.0, &Vector3::new(0.0, 0.0, 0.05));
        let w = a.command.omega;
        assert!((w[0] - w[2]).abs() < 1e-9);
        assert!((w[1] - w[3]).abs() < 1e-9);
        assert!(w[1] > w[0]);
        assert!((a.achieved[0] - 10.0).abs() < 1e-10);
    }

    #[test]
    fn saturation_is_reported() {
        let a = mixer().allocate(1.0, &Vector3::new(2.0, 0.0, 0.0));
        assert!(a.saturated);
        assert!(a.command.omega.iter().all(|w| (0.0..=1000.0).contains(w)));
        assert!((a.achieved[1] - 2.0).abs() > 1e-3);
    }

    proptest! {
        #[test]
        fn allocation_round_trips(fz in 4.0..25.0f64, tx in -0.3..0.3f64, ty in -0.3..0.3f64, tz in -0.05..0.05f64) {
            let a = mixer().allocate(fz, &Vector3::new(tx, ty, tz));
            prop_assume!(!a.saturated);
            let want = Vector4::new(fz, tx, ty, tz);
            for i in 0..4 {
                prop_assert!((a.achieved[i] - want[i]).abs() <= 1e-10 * want.amax());
            }
        }

        #[test]
        fn pid_integral_stays_clamped(errors in proptest::collection::vec(-100.0..100.0f64, 1..200)) {
            let mut pid = Pid::new(PidGains::new(1.0, 50.0, 0.0, 0.7, 10.0));
            for e in errors {
                let out = pid.update(e, 0.0, 0.01);
                prop_assert!(pid.integral().abs() <= 0.7);
                prop_assert!(out.abs() <= 10.0);
            }
        }
    }

    #[test]
    fn zero_error_gives_zero_torque() {
        let mut c = AttitudeController::new(AttitudeGains::default());
        let z = Vector3::zeros();
        assert_eq!(c.update(&z, &z, &z, &z, 0.001), Vector3::zeros());
    }

    #[test]
    fn integral_removes_constant_disturbance_rate_error() {
        // Single-axis rigid body with a constant disturbance torque.
        let j = 0.0117;
        let mut c = AttitudeController::new(AttitudeGains::default());
        let (mut angle, mut rate, mut accel) = (0.0, 0.0, 0.0);
        let dt = 0.001;
        for _ in 0..20_000 {
            let t = c.update(
                &Vector3::zeros(),
                &Vector3::new(angle, 0.0, 0.0),
                &Vector3::new(rate, 0.0, 0.0),
                &Vector3::new(accel, 0.0, 0.0),
                dt,
            );
            accel = (t.x + 0.02) / j;
            rate += accel * dt;
            angle += rate * dt;
        }
        assert!(rate.abs() < 1e-6);
        assert!(angle.abs() < 1e-6);
    }

    #[test]
    fn wrap_keeps_angles_in_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.1) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn position_pid_at_rest_returns_hover() {
        let p = VehicleParams::default();
        let lo = ControlInput::new(0.5 * p.weight(), -0.5, -0.5, 0.0);
        let hi = ControlInput::new(1.5 * p.weight(), 0.5, 0.5, 0.0);
        let mut pid = PositionPid::new(PositionPidGains::default(), p, lo, hi);
        let reference = Reference::hover_at(Vector3::new(1.0, 2.0, 3.0), 0.4, &p);
        let u = pid.update(&Vector6::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0), &reference, 0.01);
        assert!((u.f_z - p.weight()).abs() < 1e-12);
        assert_eq!((u.roll, u.pitch, u.yaw), (0.0, 0.0, 0.4));
    }

    #[test]
    fn small_angle_inversion_points_thrust_toward_demand() {
        let p = VehicleParams::default();
        let lo = ControlInput::new(0.0, -0.5, -0.5, 0.0);
        let hi = ControlInput::new(100.0, 0.5, 0.5, 0.0);
        for yaw in [0.0, 0.7, -2.0] {
            let mut pid = PositionPid::new(PositionPidGains::default(), p, lo, hi);
            let reference = Reference::hover_at(Vector3::new(0.05, -0.02, 0.0), yaw, &p);
            let u = pid.update(&Vector6::zeros(), &reference, 0.01);
            let axis = thrust_axis(u.roll, u.pitch, u.yaw);
            assert!(axis.x > 0.0 && axis.y < 0.0, "yaw {yaw}: {axis:?}");
            assert!((axis.x / axis.y + 2.5).abs() < 0.05);
        }
    }
}
