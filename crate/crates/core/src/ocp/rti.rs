//! Real-time iteration: one Gauss-Newton step per sampling instant on a
//! shift-initialized multiple-shooting grid.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, QpError, QpSettings, QpSolution};
use super::transcription::{
    condense_control, transcribe_estimation, ControlOcp, EstimationOcp, OcpError, ShootingGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RtiConfig {
    /// Levenberg regularization added to the Gauss-Newton Hessian.
    pub levenberg: f64,
    /// Factor applied to `levenberg` for the single retry after a QP failure.
    pub retry_factor: f64,
    /// Gauss-Newton iterations per call; 1 is the real-time iteration.
    pub iterations: usize,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for RtiConfig {
    fn default() -> Self {
        Self {
            levenberg: 1e-8,
            retry_factor: 100.0,
            iterations: 1,
            qp_tol: 1e-12,
            qp_max_iter: 100,
        }
    }
}

impl RtiConfig {
    pub fn qp_settings(&self) -> QpSettings {
        QpSettings {
            tol: self.qp_tol,
            max_iter: self.qp_max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RtiStats {
    pub qp_iterations: usize,
    pub active_bounds: usize,
    pub kkt_residual: f64,
    pub retried: bool,
}

fn solve_damped(mut qp: super::qp::QpSubproblem, cfg: &RtiConfig) -> Result<(QpSolution, bool), QpError> {
    qp.hessian.add_diagonal(cfg.levenberg);
    match solve_qp(&qp, &cfg.qp_settings()) {
        Ok(sol) => Ok((sol, false)),
        Err(QpError::InfeasibleBounds { index }) => Err(QpError::InfeasibleBounds { index }),
        Err(QpError::DimensionMismatch) => Err(QpError::DimensionMismatch),
        Err(_) => {
            qp.hessian.add_diagonal(cfg.levenberg * (cfg.retry_factor - 1.0));
            solve_qp(&qp, &cfg.qp_settings()).map(|s| (s, true))
        }
    }
}

/// One (or `cfg.iterations`) Gauss-Newton steps of a control problem. The
/// grid is updated in place; the first input is the one to apply.
pub fn control_rti_step<P: ControlOcp + ?Sized>(
    ocp: &P,
    grid: &mut ShootingGrid,
    x0: &DVector<f64>,
    cfg: &RtiConfig,
) -> Result<RtiStats, OcpError> {
    let nu = ocp.input_dim();
    let mut stats = RtiStats::default();
    for _ in 0..cfg.iterations.max(1) {
        let condensed = condense_control(ocp, grid, x0)?;
        let (sol, retried) = solve_damped(condensed.qp.clone(), cfg)?;
        let dx = condensed.expand(&sol.primal);
        for (x, d) in grid.node_states.iter_mut().zip(dx.iter()) {
            *x += d;
        }
        for (k, u) in grid.node_inputs.iter_mut().enumerate() {
            *u += sol.primal.rows(k * nu, nu);
        }
        stats.qp_iterations += sol.iterations;
        stats.active_bounds = sol.active_set.len();
        stats.kkt_residual = sol.kkt_residual;
        stats.retried |= retried;
    }
    Ok(stats)
}

/// Gauss-Newton steps of an estimation problem on the node states.
pub fn estimation_rti_step<P: EstimationOcp + ?Sized>(
    ocp: &P,
    states: &mut [DVector<f64>],
    cfg: &RtiConfig,
) -> Result<RtiStats, OcpError> {
    let mut stats = RtiStats::default();
    let nx = ocp.state_dim();
    for _ in 0..cfg.iterations.max(1) {
        let qp = transcribe_estimation(ocp, states)?;
        let (sol, retried) = solve_damped(qp, cfg)?;
        for (k, x) in states.iter_mut().enumerate() {
            *x += sol.primal.rows(k * nx, nx);
        }
        stats.qp_iterations += sol.iterations;
        stats.active_bounds = sol.active_set.len();
        stats.kkt_residual = sol.kkt_residual;
        stats.retried |= retried;
    }
    Ok(stats)
}
