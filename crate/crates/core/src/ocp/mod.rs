//! Least-squares optimal control and estimation: transcription, a box QP
//! solver and the real-time iteration.

pub mod linalg;
pub mod qp;
pub mod rti;
pub mod transcription;

pub use linalg::{BandedSym, Hessian};
pub use qp::{solve_qp, solve_qp_from, QpError, QpSettings, QpSolution, QpSubproblem};
pub use rti::{control_rti_step, estimation_rti_step, RtiConfig, RtiStats};
pub use transcription::{
    condense_control, control_cost, estimation_cost, transcribe_estimation, CondensedQp, ControlOcp, EstimationOcp,
    OcpError, Residual, ShootingGrid,
};
