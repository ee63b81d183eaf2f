//! Translational prediction model of the quadrotor.
//!
//! The model is written in the world frame (z up). The collective thrust
//! acts along the body z axis and is rotated into the world frame with a
//! Z-Y-X (yaw-pitch-roll) Euler rotation. The lumped external force is
//! modelled as a constant disturbance, so its derivative is zero.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::OdeSystem;

/// Dimension of the augmented state (position, velocity, external force).
pub const STATE_DIM: usize = 9;
/// Dimension of the translational state used by the controller.
pub const MOTION_DIM: usize = 6;
/// Dimension of the flat input (f_z, roll, pitch, yaw).
pub const INPUT_DIM: usize = 4;
/// Dimension of the measurement vector.
pub const MEASUREMENT_DIM: usize = 10;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type InputVector = Vector4<f64>;
pub type MeasurementVector = SVector<f64, MEASUREMENT_DIM>;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("vehicle parameter `{name}` must be strictly positive and finite, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
}

/// Physical parameters shared by the prediction model, the allocator and the plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Vehicle mass [kg].
    pub mass: f64,
    /// Gravitational acceleration [m/s²].
    pub gravity: f64,
    /// Propeller radius [m]. Used for Δz/R reporting and the ceiling model.
    pub rotor_radius: f64,
    /// Distance from the centre of mass to each rotor hub [m].
    pub arm_length: f64,
    /// Rotor thrust coefficient k_T, thrust = k_T·ω² [N·s²].
    pub thrust_coeff: f64,
    /// Rotor drag torque coefficient k_D, torque = k_D·ω² [N·m·s²].
    pub drag_torque_coeff: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1.2,
            gravity: 9.81,
            rotor_radius: 0.12,
            arm_length: 0.225,
            thrust_coeff: 8.0e-6,
            drag_torque_coeff: 1.3e-7,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("rotor_radius", self.rotor_radius),
            ("arm_length", self.arm_length),
            ("thrust_coeff", self.thrust_coeff),
            ("drag_torque_coeff", self.drag_torque_coeff),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::NonPositiveParameter { name, value });
            }
        }
        Ok(())
    }

    /// Weight force m·g [N].
    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Position, velocity and lumped external force, all in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentedState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub f_ext: Vector3<f64>,
}

impl AugmentedState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, f_ext: Vector3<f64>) -> Self {
        Self {
            position,
            velocity,
            f_ext,
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let mut v = StateVector::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position);
        v.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        v.fixed_rows_mut::<3>(6).copy_from(&self.f_ext);
        v
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            position: v.fixed_rows::<3>(0).into_owned(),
            velocity: v.fixed_rows::<3>(3).into_owned(),
            f_ext: v.fixed_rows::<3>(6).into_owned(),
        }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::from_vector(&StateVector::from_column_slice(&v[..STATE_DIM]))
    }

    /// Position and velocity stacked, the controller's state.
    pub fn motion(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }
}

/// Flat input: body-frame vertical force and Euler attitude.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Collective thrust along body z [N].
    pub f_z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl ControlInput {
    pub fn new(f_z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { f_z, roll, pitch, yaw }
    }

    /// Level hover input for the given parameters.
    pub fn hover(p: &VehicleParams) -> Self {
        Self::new(p.weight(), 0.0, 0.0, 0.0)
    }

    pub fn to_vector(&self) -> InputVector {
        InputVector::new(self.f_z, self.roll, self.pitch, self.yaw)
    }

    pub fn from_vector(v: &InputVector) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn attitude(&self) -> Vector3<f64> {
        Vector3::new(self.roll, self.pitch, self.yaw)
    }
}

/// Measurement vector: position, velocity, vertical force and attitude.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurement {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub f_z: f64,
    pub attitude: Vector3<f64>,
}

impl Measurement {
    pub fn to_vector(&self) -> MeasurementVector {
        let mut v = MeasurementVector::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position);
        v.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        v[6] = self.f_z;
        v.fixed_rows_mut::<3>(7).copy_from(&self.attitude);
        v
    }

    pub fn from_vector(v: &MeasurementVector) -> Self {
        Self {
            position: v.fixed_rows::<3>(0).into_owned(),
            velocity: v.fixed_rows::<3>(3).into_owned(),
            f_z: v[6],
            attitude: v.fixed_rows::<3>(7).into_owned(),
        }
    }

    /// The input channels of the measurement (f_z and attitude).
    pub fn input(&self) -> ControlInput {
        ControlInput::new(self.f_z, self.attitude.x, self.attitude.y, self.attitude.z)
    }

    pub fn motion(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }
}

/// Rotation from body to world frame, Z-Y-X intrinsic Euler convention
/// (R = Rz(yaw)·Ry(pitch)·Rx(roll)).
pub fn rotation_world_from_body(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Body z axis expressed in the world frame, R·e3.
pub fn thrust_axis(roll: f64, pitch: f64, yaw: f64) -> Vector3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Vector3::new(cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr)
}

/// Partial derivatives of R·e3 with respect to (roll, pitch, yaw), as columns.
fn thrust_axis_partials(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        -cy * sp * sr + sy * cr,
        cy * cp * cr,
        -sy * sp * cr + cy * sr,
        -sy * sp * sr - cy * cr,
        sy * cp * cr,
        cy * sp * cr + sy * sr,
        -cp * sr,
        -sp * cr,
        0.0,
    )
}

/// Translational acceleration in the world frame.
fn acceleration(f_ext: &Vector3<f64>, u: &ControlInput, p: &VehicleParams) -> Vector3<f64> {
    let mut force = thrust_axis(u.roll, u.pitch, u.yaw) * u.f_z + f_ext;
    force.z -= p.weight();
    force / p.mass
}

/// Time derivative of the augmented state.
///
/// The body-frame transport term ω×ẋ vanishes because the model is written in
/// the world frame; any residual mismatch is absorbed by the external force.
pub fn dynamics_continuous(s: &AugmentedState, u: &ControlInput, p: &VehicleParams) -> StateVector {
    let mut d = StateVector::zeros();
    d.fixed_rows_mut::<3>(0).copy_from(&s.velocity);
    d.fixed_rows_mut::<3>(3).copy_from(&acceleration(&s.f_ext, u, p));
    d
}

/// Jacobian of [`dynamics_continuous`] with respect to the state. Constant.
pub fn dynamics_state_jacobian(p: &VehicleParams) -> SMatrix<f64, STATE_DIM, STATE_DIM> {
    let mut a = SMatrix::<f64, STATE_DIM, STATE_DIM>::zeros();
    for i in 0..3 {
        a[(i, 3 + i)] = 1.0;
        a[(3 + i, 6 + i)] = 1.0 / p.mass;
    }
    a
}

/// Jacobian of the acceleration with respect to the input (3×4).
fn acceleration_input_jacobian(u: &ControlInput, p: &VehicleParams) -> SMatrix<f64, 3, 4> {
    let mut b = SMatrix::<f64, 3, 4>::zeros();
    b.fixed_columns_mut::<1>(0)
        .copy_from(&(thrust_axis(u.roll, u.pitch, u.yaw) / p.mass));
    let partials = thrust_axis_partials(u.roll, u.pitch, u.yaw) * (u.f_z / p.mass);
    b.fixed_columns_mut::<3>(1).copy_from(&partials);
    b
}

/// Jacobian of [`dynamics_continuous`] with respect to the input.
pub fn dynamics_input_jacobian(u: &ControlInput, p: &VehicleParams) -> SMatrix<f64, STATE_DIM, INPUT_DIM> {
    let mut b = SMatrix::<f64, STATE_DIM, INPUT_DIM>::zeros();
    b.fixed_rows_mut::<3>(3).copy_from(&acceleration_input_jacobian(u, p));
    b
}

/// Measurement function h(x, u) = [position, velocity, f_z, attitude].
pub fn measure(s: &AugmentedState, u: &ControlInput) -> Measurement {
    Measurement {
        position: s.position,
        velocity: s.velocity,
        f_z: u.f_z,
        attitude: u.attitude(),
    }
}

/// Jacobian of the measurement function with respect to the augmented state.
pub fn measurement_state_jacobian() -> SMatrix<f64, MEASUREMENT_DIM, STATE_DIM> {
    let mut c = SMatrix::<f64, MEASUREMENT_DIM, STATE_DIM>::zeros();
    for i in 0..6 {
        c[(i, i)] = 1.0;
    }
    c
}

/// The 9-state augmented model as an ODE for the integrator.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedModel {
    pub params: VehicleParams,
}

impl OdeSystem for AugmentedModel {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let s = AugmentedState::from_slice(x.as_slice());
        let d = dynamics_continuous(&s, &ControlInput::from_slice(u.as_slice()), &self.params);
        DVector::from_column_slice(d.as_slice())
    }

    fn state_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let a = dynamics_state_jacobian(&self.params);
        DMatrix::from_column_slice(STATE_DIM, STATE_DIM, a.as_slice())
    }

    fn input_jacobian(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let b = dynamics_input_jacobian(&ControlInput::from_slice(u.as_slice()), &self.params);
        DMatrix::from_column_slice(STATE_DIM, INPUT_DIM, b.as_slice())
    }
}

/// Position/velocity model with the external force held as a fixed parameter.
/// This is the controller's prediction model.
#[derive(Debug, Clone, Copy)]
pub struct MotionModel {
    pub params: VehicleParams,
    pub f_ext: Vector3<f64>,
}

impl OdeSystem for MotionModel {
    fn state_dim(&self) -> usize {
        MOTION_DIM
    }

    fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let acc = acceleration(&self.f_ext, &ControlInput::from_slice(u.as_slice()), &self.params);
        DVector::from_column_slice(&[x[3], x[4], x[5], acc.x, acc.y, acc.z])
    }

    fn state_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(MOTION_DIM, MOTION_DIM);
        for i in 0..3 {
            a[(i, 3 + i)] = 1.0;
        }
        a
    }

    fn input_jacobian(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let jac = acceleration_input_jacobian(&ControlInput::from_slice(u.as_slice()), &self.params);
        let mut b = DMatrix::zeros(MOTION_DIM, INPUT_DIM);
        b.view_mut((3, 0), (3, INPUT_DIM)).copy_from(&jac);
        b
    }
}
