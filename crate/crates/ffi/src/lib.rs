//! C ABI over the estimator, the controller, the allocator, the ceiling
//! model and the scenario runner.
//!
//! Every fallible function returns a [`CmStatus`]. On failure a message is
//! stored per thread and can be read with [`cm_last_error_message`]. Objects
//! are opaque handles created by `*_new` and released by `*_free`. Vector
//! arguments are pointers to `double` arrays whose length is documented per
//! function.
//!
//! # Safety
//!
//! Every pointer argument must be null or valid for the documented number of
//! elements. Handles must come from the matching `*_new` function, must not
//! be used after `*_free`, and must not be shared between threads without
//! external locking.

// `!(x > 0.0)` is used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::{Vector3, Vector6};

use ceiling_mpc::harness::{run_scenario, ScenarioConfig};
use ceiling_mpc::inner_loop::Mixer;
use ceiling_mpc::nmhe::{Nmhe, NmheConfig};
use ceiling_mpc::nmpc::{Nmpc, NmpcConfig, Reference};
use ceiling_mpc::sim::CeilingModel;
use ceiling_mpc::vehicle::{ControlInput, Measurement, VehicleParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SolverFailure = 3,
    Io = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type FfiResult = Result<(), (CmStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult) -> CmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CmStatus::Panic
        }
    }
}

fn invalid(msg: impl ToString) -> (CmStatus, String) {
    (CmStatus::InvalidArgument, msg.to_string())
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (CmStatus, String)> {
    p.as_ref()
        .ok_or_else(|| (CmStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, (CmStatus, String)> {
    p.as_mut()
        .ok_or_else(|| (CmStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn array<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], (CmStatus, String)> {
    if p.is_null() {
        return Err((CmStatus::NullPointer, format!("`{name}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn optional_str<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, (CmStatus, String)> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| invalid(format!("`{name}` is not valid UTF-8")))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the buffer size needed for the
/// full message including the terminator, or 0 when there is no message.
#[no_mangle]
pub unsafe extern "C" fn cm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmVehicleParams {
    pub mass: f64,
    pub gravity: f64,
    pub rotor_radius: f64,
    pub arm_length: f64,
    pub thrust_coeff: f64,
    pub drag_torque_coeff: f64,
}

impl From<CmVehicleParams> for VehicleParams {
    fn from(p: CmVehicleParams) -> Self {
        Self {
            mass: p.mass,
            gravity: p.gravity,
            rotor_radius: p.rotor_radius,
            arm_length: p.arm_length,
            thrust_coeff: p.thrust_coeff,
            drag_torque_coeff: p.drag_torque_coeff,
        }
    }
}

fn vehicle(p: *const CmVehicleParams) -> Result<VehicleParams, (CmStatus, String)> {
    let p: VehicleParams = (*unsafe { deref(p, "params")? }).into();
    p.validate().map_err(invalid)?;
    Ok(p)
}

#[no_mangle]
pub extern "C" fn cm_vehicle_params_default() -> CmVehicleParams {
    let p = VehicleParams::default();
    CmVehicleParams {
        mass: p.mass,
        gravity: p.gravity,
        rotor_radius: p.rotor_radius,
        arm_length: p.arm_length,
        thrust_coeff: p.thrust_coeff,
        drag_torque_coeff: p.drag_torque_coeff,
    }
}

/// Flat input: collective thrust [N] and roll, pitch, yaw [rad].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmControlInput {
    pub f_z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl From<CmControlInput> for ControlInput {
    fn from(u: CmControlInput) -> Self {
        ControlInput::new(u.f_z, u.roll, u.pitch, u.yaw)
    }
}

impl From<ControlInput> for CmControlInput {
    fn from(u: ControlInput) -> Self {
        Self {
            f_z: u.f_z,
            roll: u.roll,
            pitch: u.pitch,
            yaw: u.yaw,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmMeasurement {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub f_z: f64,
    pub attitude: [f64; 3],
}

/// Position [m], velocity [m/s] and lumped external force [N], world frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CmAugmentedState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub f_ext: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmReference {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub nominal: CmControlInput,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmCeilingModel {
    pub ceiling_height: f64,
    pub kappa: f64,
    pub d_on: f64,
    pub d_min: f64,
    pub max_ratio: f64,
    pub rotor_radius: f64,
    pub prop_offset: f64,
}

#[no_mangle]
pub extern "C" fn cm_ceiling_model_default() -> CmCeilingModel {
    let c = CeilingModel::default();
    CmCeilingModel {
        ceiling_height: c.ceiling_height,
        kappa: c.kappa,
        d_on: c.d_on,
        d_min: c.d_min,
        max_ratio: c.max_ratio,
        rotor_radius: c.rotor_radius,
        prop_offset: c.prop_offset,
    }
}

/// Thrust amplification at rotor-to-ceiling distance `d` [m]; NaN when
/// `model` is null.
#[no_mangle]
pub unsafe extern "C" fn cm_thrust_ratio(model: *const CmCeilingModel, d: f64) -> f64 {
    let Some(c) = model.as_ref() else { return f64::NAN };
    CeilingModel {
        ceiling_height: c.ceiling_height,
        kappa: c.kappa,
        d_on: c.d_on,
        d_min: c.d_min,
        max_ratio: c.max_ratio,
        rotor_radius: c.rotor_radius,
        prop_offset: c.prop_offset,
    }
    .thrust_ratio(d)
}

/// X-configuration allocation of thrust `f_z` [N] and body torques
/// `torque[3]` [N·m] to rotor speeds `omega_out[4]` [rad/s]. The achieved
/// wrench is written to `achieved_out[4]` and the saturation flag to
/// `saturated_out`; both may be null.
#[no_mangle]
pub unsafe extern "C" fn cm_allocate(
    params: *const CmVehicleParams,
    omega_max: f64,
    f_z: f64,
    torque: *const f64,
    omega_out: *mut f64,
    achieved_out: *mut f64,
    saturated_out: *mut bool,
) -> CmStatus {
    guard(|| {
        let p = vehicle(params)?;
        if !(omega_max > 0.0) || !(f_z >= 0.0) {
            return Err(invalid("omega_max must be positive and f_z non-negative"));
        }
        let t = array(torque, 3, "torque")?;
        if omega_out.is_null() {
            return Err((CmStatus::NullPointer, "`omega_out` is null".into()));
        }
        let a = Mixer::new(&p, omega_max).allocate(f_z, &Vector3::new(t[0], t[1], t[2]));
        std::slice::from_raw_parts_mut(omega_out, 4).copy_from_slice(&a.command.omega);
        if !achieved_out.is_null() {
            std::slice::from_raw_parts_mut(achieved_out, 4).copy_from_slice(a.achieved.as_slice());
        }
        if let Some(s) = saturated_out.as_mut() {
            *s = a.saturated;
        }
        Ok(())
    })
}

/// Moving-horizon estimator handle.
pub struct CmEstimator {
    inner: Nmhe,
}

/// Creates an estimator. `config_toml` holds estimator settings in TOML
/// (the `[nmhe]` table of a scenario file, without the header) or is null
/// for defaults.
#[no_mangle]
pub unsafe extern "C" fn cm_estimator_new(
    params: *const CmVehicleParams,
    config_toml: *const c_char,
    out: *mut *mut CmEstimator,
) -> CmStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let p = vehicle(params)?;
        let cfg: NmheConfig = match optional_str(config_toml, "config_toml")? {
            Some(s) => toml::from_str(s).map_err(invalid)?,
            None => NmheConfig::default(),
        };
        let inner = Nmhe::new(cfg, p).map_err(invalid)?;
        *out = Box::into_raw(Box::new(CmEstimator { inner }));
        Ok(())
    })
}

/// Adds measurement `y`, taken after input `u` was applied for one
/// interval, and writes the current estimate to `state_out`.
#[no_mangle]
pub unsafe extern "C" fn cm_estimator_push(
    est: *mut CmEstimator,
    y: *const CmMeasurement,
    u: *const CmControlInput,
    state_out: *mut CmAugmentedState,
) -> CmStatus {
    guard(|| {
        let est = deref_mut(est, "est")?;
        let y = deref(y, "y")?;
        let u = deref(u, "u")?;
        let out = deref_mut(state_out, "state_out")?;
        let meas = Measurement {
            position: Vector3::from(y.position),
            velocity: Vector3::from(y.velocity),
            f_z: y.f_z,
            attitude: Vector3::from(y.attitude),
        };
        let r = est
            .inner
            .push_and_estimate(&meas, &(*u).into())
            .map_err(|e| (CmStatus::SolverFailure, e.to_string()))?;
        let s = r.state_now;
        *out = CmAugmentedState {
            position: s.position.into(),
            velocity: s.velocity.into(),
            f_ext: s.f_ext.into(),
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cm_estimator_reset(est: *mut CmEstimator) -> CmStatus {
    guard(|| {
        deref_mut(est, "est")?.inner.reset();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cm_estimator_free(est: *mut CmEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Receding-horizon controller handle.
pub struct CmController {
    inner: Nmpc,
}

/// Creates a controller. `config_toml` is the `[nmpc]` table body or null.
/// With `force_feed` false the force estimate passed to the step is ignored.
#[no_mangle]
pub unsafe extern "C" fn cm_controller_new(
    params: *const CmVehicleParams,
    config_toml: *const c_char,
    force_feed: bool,
    out: *mut *mut CmController,
) -> CmStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let p = vehicle(params)?;
        let cfg: NmpcConfig = match optional_str(config_toml, "config_toml")? {
            Some(s) => toml::from_str(s).map_err(invalid)?,
            None => NmpcConfig::default(),
        };
        let mut inner = Nmpc::new(cfg, p).map_err(invalid)?;
        inner.set_force_feed(force_feed);
        *out = Box::into_raw(Box::new(CmController { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cm_controller_set_force_feed(ctl: *mut CmController, on: bool) -> CmStatus {
    guard(|| {
        deref_mut(ctl, "ctl")?.inner.set_force_feed(on);
        Ok(())
    })
}

/// One control tick from `state[6]` (position, velocity) and force
/// estimate `f_ext[3]`. A solver failure is not an error: the previous
/// input is repeated and `degraded_out` (nullable) is set.
#[no_mangle]
pub unsafe extern "C" fn cm_controller_step(
    ctl: *mut CmController,
    state: *const f64,
    f_ext: *const f64,
    reference: *const CmReference,
    input_out: *mut CmControlInput,
    degraded_out: *mut bool,
) -> CmStatus {
    guard(|| {
        let ctl = deref_mut(ctl, "ctl")?;
        let x = Vector6::from_column_slice(array(state, 6, "state")?);
        let f = Vector3::from_column_slice(array(f_ext, 3, "f_ext")?);
        let r = deref(reference, "reference")?;
        let out = deref_mut(input_out, "input_out")?;
        if !(x.iter().chain(f.iter()).all(|v| v.is_finite())) {
            return Err(invalid("state and force must be finite"));
        }
        let reference = Reference {
            position: Vector3::from(r.position),
            velocity: Vector3::from(r.velocity),
            nominal: r.nominal.into(),
        };
        let o = ctl.inner.control_step(&x, &f, &reference);
        *out = o.u0.into();
        if let Some(d) = degraded_out.as_mut() {
            *d = o.degraded;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cm_controller_free(ctl: *mut CmController) {
    if !ctl.is_null() {
        drop(Box::from_raw(ctl));
    }
}

/// Hold-phase results of one scenario run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CmRunSummary {
    pub dz_over_r: f64,
    pub error_mean: f64,
    pub error_std: f64,
    pub z_error_mean: f64,
    pub contact_fraction: f64,
    pub stuck: bool,
    pub p_ave: f64,
    pub i_ave: f64,
    pub f_hat_z_min: f64,
    pub f_hat_z_max: f64,
    pub f_z_min: f64,
    pub f_z_max: f64,
    pub degraded_ticks: u64,
    pub estimator_mean_ms: f64,
    pub controller_mean_ms: f64,
}

/// Runs the scenario described by `config_toml` (a full scenario file, or
/// null for defaults) with noise seed `seed`. When `out_dir` is not null the
/// trace, timing log and summary are written there.
#[no_mangle]
pub unsafe extern "C" fn cm_run_scenario(
    config_toml: *const c_char,
    seed: u64,
    out_dir: *const c_char,
    summary_out: *mut CmRunSummary,
) -> CmStatus {
    guard(|| {
        let out = deref_mut(summary_out, "summary_out")?;
        let cfg = match optional_str(config_toml, "config_toml")? {
            Some(s) => ScenarioConfig::from_toml_str(s).map_err(invalid)?,
            None => ScenarioConfig::default(),
        };
        let run = run_scenario(&cfg, seed).map_err(|e| (CmStatus::SolverFailure, e.to_string()))?;
        if let Some(dir) = optional_str(out_dir, "out_dir")? {
            run.write(Path::new(dir)).map_err(|e| (CmStatus::Io, e.to_string()))?;
        }
        let s = &run.summary;
        *out = CmRunSummary {
            dz_over_r: s.dz_over_r,
            error_mean: s.hold.error_mean,
            error_std: s.hold.error_std,
            z_error_mean: s.hold.z_error_mean,
            contact_fraction: s.hold.contact_fraction,
            stuck: s.stuck,
            p_ave: s.hold.p_ave,
            i_ave: s.hold.i_ave,
            f_hat_z_min: s.f_hat_z_min,
            f_hat_z_max: s.f_hat_z_max,
            f_z_min: s.f_z_min,
            f_z_max: s.f_z_max,
            degraded_ticks: s.degraded_ticks as u64,
            estimator_mean_ms: s.timing_ms.estimator.mean,
            controller_mean_ms: s.timing_ms.controller.mean,
        };
        Ok(())
    })
}
