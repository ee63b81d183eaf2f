//! Two-stage Gauss-Legendre collocation (order 4) with first-order
//! sensitivities.
//!
//! The implicit stage equations are solved by full Newton iteration with the
//! analytic Jacobian. Sensitivities are propagated through the converged
//! stage equations with the implicit function theorem and chained across the
//! sub-steps of one shooting interval.

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::{AugmentedModel, AugmentedState, ControlInput, VehicleParams, INPUT_DIM, STATE_DIM};

const SQRT3_6: f64 = 0.288_675_134_594_812_9;
const BUTCHER_A: [[f64; 2]; 2] = [[0.25, 0.25 - SQRT3_6], [0.25 + SQRT3_6, 0.25]];
const BUTCHER_B: [f64; 2] = [0.5, 0.5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("stage equations did not converge after {iterations} Newton iterations (last increment {increment:e})")]
    NonConvergence { iterations: usize, increment: f64 },
    #[error("stage Newton matrix is singular")]
    SingularStageMatrix,
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("integration failed at input index {index}: {source}")]
    AtStep {
        index: usize,
        #[source]
        source: Box<IntegratorError>,
    },
}

/// A continuous-time system ẋ = f(x, u) with analytic Jacobians.
pub trait OdeSystem {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn state_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn input_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Integration steps per shooting interval.
    pub step_count: usize,
    /// Length of one shooting interval [s].
    pub interval: f64,
    pub newton_iters: usize,
    pub newton_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            step_count: 2,
            interval: 0.01,
            newton_iters: 10,
            newton_tol: 1e-10,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), IntegratorError> {
        if self.step_count == 0 {
            return Err(IntegratorError::InvalidConfig("step_count must be at least 1"));
        }
        if !(self.interval.is_finite() && self.interval > 0.0) {
            return Err(IntegratorError::InvalidConfig("interval must be positive"));
        }
        if self.newton_iters == 0 {
            return Err(IntegratorError::InvalidConfig("newton_iters must be at least 1"));
        }
        if !(self.newton_tol > 0.0) {
            return Err(IntegratorError::InvalidConfig("newton_tol must be positive"));
        }
        Ok(())
    }

    fn substep(&self) -> f64 {
        self.interval / self.step_count as f64
    }
}

/// Result of integrating a generic system over one interval.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub next: DVector<f64>,
    pub d_state: DMatrix<f64>,
    pub d_input: DMatrix<f64>,
}

struct Stages {
    k: DVector<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    jac_x: [DMatrix<f64>; 2],
    nodes: [DVector<f64>; 2],
}

fn stage_point(x: &DVector<f64>, k: &DVector<f64>, h: f64, row: usize) -> DVector<f64> {
    let n = x.len();
    let mut p = x.clone();
    for (j, a) in BUTCHER_A[row].iter().enumerate() {
        p.axpy(h * a, &k.rows(j * n, n), 1.0);
    }
    p
}

fn solve_stages<S: OdeSystem + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    cfg: &IntegratorConfig,
) -> Result<Stages, IntegratorError> {
    let n = x.len();
    let f0 = sys.rhs(x, u);
    let mut k = DVector::zeros(2 * n);
    k.rows_mut(0, n).copy_from(&f0);
    k.rows_mut(n, n).copy_from(&f0);

    let mut last_increment = f64::INFINITY;
    for _ in 0..cfg.newton_iters {
        let nodes = [stage_point(x, &k, h, 0), stage_point(x, &k, h, 1)];
        let jac_x = [sys.state_jacobian(&nodes[0], u), sys.state_jacobian(&nodes[1], u)];
        let mut residual = DVector::zeros(2 * n);
        let mut newton = DMatrix::identity(2 * n, 2 * n);
        for i in 0..2 {
            let fi = sys.rhs(&nodes[i], u);
            residual.rows_mut(i * n, n).copy_from(&(k.rows(i * n, n) - fi));
            for j in 0..2 {
                let mut block = newton.view_mut((i * n, j * n), (n, n));
                block -= &jac_x[i] * (h * BUTCHER_A[i][j]);
            }
        }
        let lu = newton.lu();
        let delta = lu.solve(&residual).ok_or(IntegratorError::SingularStageMatrix)?;
        k -= &delta;
        last_increment = delta.amax();
        if !last_increment.is_finite() {
            break;
        }
        if last_increment <= cfg.newton_tol * k.amax().max(1.0) {
            // The Newton matrix of this iteration is reused for the
            // sensitivities; its linearization point differs from the
            // converged stages by less than the tolerance.
            return Ok(Stages { k, lu, jac_x, nodes });
        }
    }
    Err(IntegratorError::NonConvergence {
        iterations: cfg.newton_iters,
        increment: last_increment,
    })
}

/// One Gauss-Legendre sub-step of length `h` with sensitivities.
fn gl4_substep<S: OdeSystem + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    cfg: &IntegratorConfig,
) -> Result<Propagation, IntegratorError> {
    let n = x.len();
    let m = u.len();
    let stages = solve_stages(sys, x, u, h, cfg)?;

    let mut next = x.clone();
    for (i, b) in BUTCHER_B.iter().enumerate() {
        next.axpy(h * b, &stages.k.rows(i * n, n), 1.0);
    }

    let mut rhs = DMatrix::zeros(2 * n, n + m);
    for i in 0..2 {
        rhs.view_mut((i * n, 0), (n, n)).copy_from(&stages.jac_x[i]);
        rhs.view_mut((i * n, n), (n, m))
            .copy_from(&sys.input_jacobian(&stages.nodes[i], u));
    }
    let dk = stages.lu.solve(&rhs).ok_or(IntegratorError::SingularStageMatrix)?;
    let mut d_state = DMatrix::identity(n, n);
    let mut d_input = DMatrix::zeros(n, m);
    for (i, b) in BUTCHER_B.iter().enumerate() {
        d_state += dk.view((i * n, 0), (n, n)) * (h * b);
        d_input += dk.view((i * n, n), (n, m)) * (h * b);
    }
    Ok(Propagation { next, d_state, d_input })
}

/// Integrates any [`OdeSystem`] over one shooting interval with a constant input.
pub fn propagate<S: OdeSystem + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> Result<Propagation, IntegratorError> {
    cfg.validate()?;
    let h = cfg.substep();
    let mut acc = gl4_substep(sys, x, u, h, cfg)?;
    for _ in 1..cfg.step_count {
        let sub = gl4_substep(sys, &acc.next, u, h, cfg)?;
        acc = Propagation {
            d_input: &sub.d_state * &acc.d_input + &sub.d_input,
            d_state: &sub.d_state * &acc.d_state,
            next: sub.next,
        };
    }
    Ok(acc)
}

/// Next augmented state over one shooting interval plus its sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStepResult {
    pub next_state: AugmentedState,
    pub d_next_d_state: SMatrix<f64, STATE_DIM, STATE_DIM>,
    pub d_next_d_input: SMatrix<f64, STATE_DIM, INPUT_DIM>,
}

pub fn step(
    s: &AugmentedState,
    u: &ControlInput,
    cfg: &IntegratorConfig,
    p: &VehicleParams,
) -> Result<DiscreteStepResult, IntegratorError> {
    let model = AugmentedModel { params: *p };
    let x = DVector::from_column_slice(s.to_vector().as_slice());
    let uu = DVector::from_column_slice(u.to_vector().as_slice());
    let prop = propagate(&model, &x, &uu, cfg)?;
    Ok(DiscreteStepResult {
        next_state: AugmentedState::from_slice(prop.next.as_slice()),
        d_next_d_state: SMatrix::from_column_slice(prop.d_state.as_slice()),
        d_next_d_input: SMatrix::from_column_slice(prop.d_input.as_slice()),
    })
}

/// Repeated [`step`]; the result includes the initial state.
pub fn rollout(
    s0: &AugmentedState,
    inputs: &[ControlInput],
    cfg: &IntegratorConfig,
    p: &VehicleParams,
) -> Result<Vec<AugmentedState>, IntegratorError> {
    if inputs.is_empty() {
        return Err(IntegratorError::InvalidConfig("rollout needs at least one input"));
    }
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(*s0);
    for (index, u) in inputs.iter().enumerate() {
        let prev = out[index];
        let next = step(&prev, u, cfg, p).map_err(|e| IntegratorError::AtStep {
            index,
            source: Box::new(e),
        })?;
        out.push(next.next_state);
    }
    Ok(out)
}
