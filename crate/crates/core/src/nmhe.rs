//! Moving-horizon estimation of the augmented state, in particular the lumped
//! external force.
//!
//! Every tick the newest measurement enters a window of `window + 1` nodes, one
//! real-time Gauss-Newton iteration is taken on the window problem, and once
//! the window is full the oldest node is summarized into the arrival cost by
//! an extended-Kalman update linearized at its smoothed estimate.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{propagate, IntegratorConfig, IntegratorError, Propagation};
use crate::ocp::{estimation_rti_step, EstimationOcp, OcpError, Residual, RtiConfig};
use crate::vehicle::{
    measure, measurement_state_jacobian, AugmentedModel, AugmentedState, ControlInput, Measurement, VehicleParams,
    MEASUREMENT_DIM, MOTION_DIM, STATE_DIM,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmheError {
    #[error("estimation solver failed: {0}")]
    SolverFailure(#[from] OcpError),
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("arrival-cost update lost positive definiteness")]
    NumericalBreakdown,
}

/// Estimator settings. Weights are given on the diagonal. Position and
/// velocity residuals are expressed in units of `1/length_scale` metres
/// (centimetres by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmheConfig {
    pub dt: f64,
    pub window: usize,
    /// Measurement residual weight, 10 entries.
    pub v_diag: Vec<f64>,
    /// Process-noise weight, 9 entries.
    pub w_diag: Vec<f64>,
    /// Initial and fallback arrival-cost weight, 9 entries.
    pub p_l_diag: Vec<f64>,
    pub length_scale: f64,
    pub f_ext_z_min: f64,
    pub f_ext_z_max: f64,
    pub integrator: IntegratorConfig,
    pub rti: RtiConfig,
}

impl Default for NmheConfig {
    fn default() -> Self {
        let mut v_diag = vec![25e-4; MEASUREMENT_DIM];
        v_diag[6] = 0.01e-4;
        let mut w_diag = vec![1.0 / 30.0; STATE_DIM];
        let mut p_l_diag = vec![0.01; STATE_DIM];
        for i in MOTION_DIM..STATE_DIM {
            w_diag[i] = 1.0 / 8.0;
            p_l_diag[i] = 0.001;
        }
        Self {
            dt: 0.01,
            window: 40,
            v_diag,
            w_diag,
            p_l_diag,
            length_scale: 100.0,
            f_ext_z_min: -6.0,
            f_ext_z_max: 2.0,
            integrator: IntegratorConfig::default(),
            rti: RtiConfig::default(),
        }
    }
}

impl NmheConfig {
    pub fn validate(&self) -> Result<(), NmheError> {
        let bad = |m: &str| Err(NmheError::InvalidConfig(m.to_string()));
        if self.v_diag.len() != MEASUREMENT_DIM || self.w_diag.len() != STATE_DIM || self.p_l_diag.len() != STATE_DIM {
            return bad("weight diagonals must have 10, 9 and 9 entries");
        }
        if self.v_diag.iter().any(|v| !(*v >= 0.0)) {
            return bad("measurement weight must be non-negative");
        }
        if self.w_diag.iter().chain(&self.p_l_diag).any(|v| !(*v > 0.0)) {
            return bad("process and arrival weights must be positive");
        }
        if self.window == 0 || !(self.length_scale > 0.0) || !(self.f_ext_z_min < self.f_ext_z_max) {
            return bad("window, length scale or force bounds");
        }
        if (self.dt - self.integrator.interval).abs() > 1e-12 {
            return bad("integrator interval must equal dt");
        }
        self.integrator
            .validate()
            .map_err(|e| NmheError::InvalidConfig(e.to_string()))
    }

    fn scaled(&self, diag: &[f64], scaled_rows: usize) -> DMatrix<f64> {
        let s2 = self.length_scale * self.length_scale;
        DMatrix::from_diagonal(&DVector::from_iterator(
            diag.len(),
            diag.iter()
                .enumerate()
                .map(|(i, v)| if i < scaled_rows { v * s2 } else { *v }),
        ))
    }

    /// Measurement weight in SI units.
    pub fn v_si(&self) -> DMatrix<f64> {
        self.scaled(&self.v_diag, MOTION_DIM)
    }

    /// Process-noise weight in SI units.
    pub fn w_si(&self) -> DMatrix<f64> {
        self.scaled(&self.w_diag, MOTION_DIM)
    }

    /// Arrival-cost weight in SI units.
    pub fn p_l_si(&self) -> DMatrix<f64> {
        self.scaled(&self.p_l_diag, MOTION_DIM)
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let mut lo = DVector::from_element(STATE_DIM, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(STATE_DIM, f64::INFINITY);
        lo[8] = self.f_ext_z_min;
        hi[8] = self.f_ext_z_max;
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SolveStats {
    pub qp_iterations: usize,
    pub kkt_residual: f64,
    pub active_bounds: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOutput {
    pub state_now: AugmentedState,
    pub window_states: Vec<AugmentedState>,
    pub stats: SolveStats,
}

/// Kalman-style propagation of the arrival cost by one sample.
///
/// `prior` and `weight` describe the current prior on the oldest node,
/// `lin` is its smoothed estimate, `y_minus_h` the measurement residual
/// y − h(lin), `c` the measurement Jacobian and `step` the dynamics from
/// `lin`. Returns the prior and information matrix for the next node.
#[allow(clippy::too_many_arguments)]
pub fn arrival_update(
    prior: &DVector<f64>,
    weight: &DMatrix<f64>,
    lin: &DVector<f64>,
    y_minus_h: &DVector<f64>,
    c: &DMatrix<f64>,
    v: &DMatrix<f64>,
    step: &Propagation,
    w: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), NmheError> {
    let info = weight + c.transpose() * v * c;
    let cov = symmetric_inverse(&info)?;
    let innovation = y_minus_h - c * (prior - lin);
    let posterior = prior + &cov * (c.transpose() * (v * innovation));
    let next_prior = &step.next + &step.d_state * (posterior - lin);
    let w_cov = symmetric_inverse(w)?;
    let next_cov = &step.d_state * cov * step.d_state.transpose() + w_cov;
    let next_weight = symmetric_inverse(&next_cov)?;
    Ok((next_prior, next_weight))
}

fn symmetric_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, NmheError> {
    let sym = (m + m.transpose()) * 0.5;
    let inv = sym.cholesky().ok_or(NmheError::NumericalBreakdown)?.inverse();
    let out = (&inv + inv.transpose()) * 0.5;
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(NmheError::NumericalBreakdown)
    }
}

struct WindowProblem<'a> {
    measurements: &'a [DVector<f64>],
    steps: &'a [IntervalMap],
    c: DMatrix<f64>,
    v: &'a DMatrix<f64>,
    w: &'a DMatrix<f64>,
    prior: &'a DVector<f64>,
    prior_weight: &'a DMatrix<f64>,
    bounds: (DVector<f64>, DVector<f64>),
}

impl EstimationOcp for WindowProblem<'_> {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn intervals(&self) -> usize {
        self.measurements.len() - 1
    }

    fn propagate(&self, k: usize, x: &DVector<f64>) -> Result<Propagation, IntegratorError> {
        Ok(self.steps[k].at(x))
    }

    fn measurement_residual(&self, k: usize, x: &DVector<f64>) -> Residual {
        let h = predicted_measurement(x, &self.inputs_at_node(k));
        Residual {
            value: h - &self.measurements[k],
            d_state: self.c.clone(),
            d_input: DMatrix::zeros(MEASUREMENT_DIM, 0),
        }
    }

    fn measurement_weight(&self) -> &DMatrix<f64> {
        self.v
    }

    fn process_weight(&self) -> &DMatrix<f64> {
        self.w
    }

    fn prior(&self) -> (&DVector<f64>, &DMatrix<f64>) {
        (self.prior, self.prior_weight)
    }

    fn state_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        self.bounds.clone()
    }
}

impl WindowProblem<'_> {
    /// Input used in h at node k: the measured input of that node.
    fn inputs_at_node(&self, k: usize) -> DVector<f64> {
        let y = &self.measurements[k];
        y.rows(MOTION_DIM, 4).into_owned()
    }
}

fn predicted_measurement(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let y = measure(
        &AugmentedState::from_slice(x.as_slice()),
        &ControlInput::from_slice(u.as_slice()),
    );
    DVector::from_column_slice(y.to_vector().as_slice())
}

/// Discrete map of one window interval.
///
/// The augmented model is affine in the state, so one integration per
/// interval, at the point where the interval entered the window, fixes the
/// interval map exactly: F(x) = F(x₀) + A (x − x₀).
#[derive(Debug, Clone)]
struct IntervalMap {
    origin: DVector<f64>,
    prop: Propagation,
}

impl IntervalMap {
    fn at(&self, x: &DVector<f64>) -> Propagation {
        Propagation {
            next: &self.prop.next + &self.prop.d_state * (x - &self.origin),
            d_state: self.prop.d_state.clone(),
            d_input: self.prop.d_input.clone(),
        }
    }
}

/// Sliding window of measurements and inputs together with the arrival cost
/// and the current node-state guesses.
#[derive(Debug, Clone)]
pub struct EstimationWindow {
    measurements: VecDeque<DVector<f64>>,
    /// `steps[k]` maps node k to node k+1 under the input of that interval.
    steps: VecDeque<IntervalMap>,
    states: VecDeque<DVector<f64>>,
    prior_state: DVector<f64>,
    prior_weight: DMatrix<f64>,
}

impl EstimationWindow {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn prior_state(&self) -> AugmentedState {
        AugmentedState::from_slice(self.prior_state.as_slice())
    }

    pub fn prior_weight(&self) -> &DMatrix<f64> {
        &self.prior_weight
    }
}

/// Moving-horizon estimator for the augmented state.
#[derive(Debug, Clone)]
pub struct Nmhe {
    cfg: NmheConfig,
    model: AugmentedModel,
    v: DMatrix<f64>,
    w: DMatrix<f64>,
    p_l: DMatrix<f64>,
    c: DMatrix<f64>,
    win: EstimationWindow,
    resets: usize,
}

impl Nmhe {
    pub fn new(cfg: NmheConfig, params: VehicleParams) -> Result<Self, NmheError> {
        cfg.validate()?;
        params.validate().map_err(|e| NmheError::InvalidConfig(e.to_string()))?;
        let c = measurement_state_jacobian();
        let p_l = cfg.p_l_si();
        Ok(Self {
            v: cfg.v_si(),
            w: cfg.w_si(),
            c: DMatrix::from_column_slice(MEASUREMENT_DIM, STATE_DIM, c.as_slice()),
            win: EstimationWindow {
                measurements: VecDeque::with_capacity(cfg.window + 1),
                steps: VecDeque::with_capacity(cfg.window),
                states: VecDeque::with_capacity(cfg.window + 1),
                prior_state: DVector::zeros(STATE_DIM),
                prior_weight: p_l.clone(),
            },
            p_l,
            model: AugmentedModel { params },
            cfg,
            resets: 0,
        })
    }

    pub fn config(&self) -> &NmheConfig {
        &self.cfg
    }

    pub fn window(&self) -> &EstimationWindow {
        &self.win
    }

    /// Number of arrival-cost resets caused by numerical breakdown.
    pub fn arrival_resets(&self) -> usize {
        self.resets
    }

    /// Adds measurement `y` and solves the window problem. `u` is the input
    /// applied over the interval that ended at `y`; it is ignored for the
    /// first measurement.
    pub fn push_and_estimate(&mut self, y: &Measurement, u: &ControlInput) -> Result<EstimateOutput, NmheError> {
        let start = Instant::now();
        let yv = DVector::from_column_slice(y.to_vector().as_slice());
        if self.win.is_empty() {
            // Cold start: prior at the first sample, zero force.
            let mut x0 = DVector::zeros(STATE_DIM);
            x0.rows_mut(0, MOTION_DIM).copy_from(&yv.rows(0, MOTION_DIM));
            self.win.prior_state = x0.clone();
            self.win.prior_weight = self.p_l.clone();
            self.win.states.push_back(x0);
        } else {
            let uv = DVector::from_column_slice(u.to_vector().as_slice());
            let last = self.win.states.back().expect("non-empty window");
            let prop =
                propagate(&self.model, last, &uv, &self.cfg.integrator).map_err(|source| OcpError::Integration {
                    node: self.win.len() - 1,
                    source,
                })?;
            let guess = prop.next.clone();
            self.win.steps.push_back(IntervalMap {
                origin: last.clone(),
                prop,
            });
            self.win.states.push_back(guess);
        }
        self.win.measurements.push_back(yv);
        if self.win.len() > self.cfg.window + 1 {
            self.drop_oldest()?;
        }

        let measurements: Vec<DVector<f64>> = self.win.measurements.iter().cloned().collect();
        self.win.steps.make_contiguous();
        let steps = self.win.steps.as_slices().0;
        let mut states: Vec<DVector<f64>> = self.win.states.iter().cloned().collect();
        let problem = WindowProblem {
            measurements: &measurements,
            steps,
            c: self.c.clone(),
            v: &self.v,
            w: &self.w,
            prior: &self.win.prior_state,
            prior_weight: &self.win.prior_weight,
            bounds: self.cfg.bounds(),
        };
        let rti = estimation_rti_step(&problem, &mut states, &self.cfg.rti)?;
        let (lo, hi) = (self.cfg.f_ext_z_min, self.cfg.f_ext_z_max);
        for x in &mut states {
            x[8] = x[8].clamp(lo, hi);
        }
        self.win.states = states.iter().cloned().collect();
        let window_states: Vec<AugmentedState> = states
            .iter()
            .map(|x| AugmentedState::from_slice(x.as_slice()))
            .collect();
        Ok(EstimateOutput {
            state_now: *window_states.last().expect("non-empty window"),
            window_states,
            stats: SolveStats {
                qp_iterations: rti.qp_iterations,
                kkt_residual: rti.kkt_residual,
                active_bounds: rti.active_bounds,
                wall_time_s: start.elapsed().as_secs_f64(),
            },
        })
    }

    /// Summarizes the oldest node into the arrival cost and removes it.
    fn drop_oldest(&mut self) -> Result<(), NmheError> {
        let y = self.win.measurements.pop_front().expect("full window");
        let map = self.win.steps.pop_front().expect("full window");
        let lin = self.win.states.pop_front().expect("full window");
        let step = map.at(&lin);
        let h = predicted_measurement(&lin, &y.rows(MOTION_DIM, 4).into_owned());
        match arrival_update(
            &self.win.prior_state,
            &self.win.prior_weight,
            &lin,
            &(&y - h),
            &self.c,
            &self.v,
            &step,
            &self.w,
        ) {
            Ok((mut prior, weight)) => {
                prior[8] = prior[8].clamp(self.cfg.f_ext_z_min, self.cfg.f_ext_z_max);
                self.win.prior_state = prior;
                self.win.prior_weight = weight;
            }
            Err(NmheError::NumericalBreakdown) => {
                self.resets += 1;
                self.win.prior_state = step.next;
                self.win.prior_weight = self.p_l.clone();
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    /// Latest force estimate, or zero before the first measurement.
    pub fn force_estimate(&self) -> Vector3<f64> {
        self.win
            .states
            .back()
            .map_or_else(Vector3::zeros, |x| Vector3::new(x[6], x[7], x[8]))
    }

    pub fn reset(&mut self) {
        self.win.measurements.clear();
        self.win.steps.clear();
        self.win.states.clear();
        self.win.prior_weight = self.p_l.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::rollout;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn scalar_m(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn scalar_arrival_update_is_the_kalman_filter() {
        // x+ = a x, y = x + noise; measurement variance r, process variance q.
        let (a, q, r) = (0.9, 0.3, 0.5);
        let (mut m, mut p) = (0.2, 2.0);
        let mut prior = scalar(m);
        let mut weight = scalar_m(1.0 / p);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..20 {
            let y: f64 = normal.sample(&mut rng);
            // Textbook filter.
            let k = p / (p + r);
            let mp = m + k * (y - m);
            let pp = (1.0 - k) * p;
            m = a * mp;
            p = a * a * pp + q;

            // Linearization point anywhere: the system is linear.
            let lin = scalar(normal.sample(&mut rng));
            let step = Propagation {
                next: &lin * a,
                d_state: scalar_m(a),
                d_input: DMatrix::zeros(1, 0),
            };
            let (np, nw) = arrival_update(
                &prior,
                &weight,
                &lin,
                &scalar(y - lin[0]),
                &scalar_m(1.0),
                &scalar_m(1.0 / r),
                &step,
                &scalar_m(1.0 / q),
            )
            .unwrap();
            prior = np;
            weight = nw;
            assert_relative_eq!(prior[0], m, epsilon = 1e-12);
            assert_relative_eq!(1.0 / weight[(0, 0)], p, epsilon = 1e-12);
        }
    }

    #[test]
    fn information_grows_without_process_noise() {
        let c = scalar_m(1.0);
        let step = Propagation {
            next: scalar(0.0),
            d_state: scalar_m(1.0),
            d_input: DMatrix::zeros(1, 0),
        };
        let mut weight = scalar_m(1.0);
        for _ in 0..10 {
            let (_, w) = arrival_update(
                &scalar(0.0),
                &weight,
                &scalar(0.0),
                &scalar(0.0),
                &c,
                &scalar_m(2.0),
                &step,
                &scalar_m(1e12),
            )
            .unwrap();
            assert!(w[(0, 0)] > weight[(0, 0)]);
            weight = w;
        }
    }

    #[test]
    fn indefinite_arrival_weight_is_reported() {
        let step = Propagation {
            next: scalar(0.0),
            d_state: scalar_m(1.0),
            d_input: DMatrix::zeros(1, 0),
        };
        let r = arrival_update(
            &scalar(0.0),
            &scalar_m(-5.0),
            &scalar(0.0),
            &scalar(0.0),
            &scalar_m(1.0),
            &scalar_m(1.0),
            &step,
            &scalar_m(1.0),
        );
        assert_eq!(r, Err(NmheError::NumericalBreakdown));
    }

    fn run_constant_force(f_z: f64, ticks: usize) -> (Nmhe, EstimateOutput) {
        let p = VehicleParams::default();
        let cfg = NmheConfig::default();
        let mut est = Nmhe::new(cfg.clone(), p).unwrap();
        // Thrust cancels gravity; the force accelerates the vehicle, which the
        // estimator must explain.
        let u = ControlInput::hover(&p);
        let truth0 = AugmentedState::new(
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, f_z),
        );
        let traj = rollout(&truth0, &vec![u; ticks], &cfg.integrator, &p).unwrap();
        let mut out = None;
        for s in &traj {
            out = Some(est.push_and_estimate(&measure(s, &u), &u).unwrap());
        }
        (est, out.unwrap())
    }

    #[test]
    fn recovers_constant_force_noise_free() {
        let (est, out) = run_constant_force(-3.0, 80);
        assert!((out.state_now.f_ext.z + 3.0).abs() < 0.1, "{}", out.state_now.f_ext.z);
        assert!(out.state_now.f_ext.xy().norm() < 1e-6);
        assert_eq!(est.window().len(), 41);
        let pw = est.window().prior_weight();
        assert!((pw - pw.transpose()).amax() < 1e-12 * pw.amax());
    }

    #[test]
    fn force_estimate_saturates_at_bound() {
        let (_, out) = run_constant_force(-10.0, 60);
        assert_eq!(out.state_now.f_ext.z, -6.0);
        assert!(out.window_states.iter().all(|s| s.f_ext.z >= -6.0 && s.f_ext.z <= 2.0));
    }

    #[test]
    fn zero_force_gives_no_phantom_force() {
        let (_, out) = run_constant_force(0.0, 200);
        assert!(out.state_now.f_ext.norm() < 0.05);
    }

    #[test]
    fn rejects_mismatched_interval() {
        let cfg = NmheConfig {
            dt: 0.02,
            ..NmheConfig::default()
        };
        assert!(Nmhe::new(cfg, VehicleParams::default()).is_err());
    }
}
