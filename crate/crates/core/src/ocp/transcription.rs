//! Multiple-shooting transcription of least-squares OCPs into box QPs.
//!
//! Two layouts are provided:
//!
//! * control problems (fixed initial state, inputs free) are condensed onto
//!   the input increments, giving a dense QP whose bounds are the input
//!   boxes;
//! * estimation problems (inputs known, all node states free) eliminate the
//!   process-noise slack `w_k = x_{k+1} − F(x_k)` explicitly and keep the node
//!   states as variables, giving a block-tridiagonal (banded) Hessian whose
//!   bounds are the state boxes.
//!
//! Both use the Gauss-Newton Hessian JᵀWJ of the stacked residuals.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::linalg::{BandedSym, Hessian};
use super::qp::{QpError, QpSubproblem};
use crate::integrator::{IntegratorError, Propagation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("integration failed at node {node}: {source}")]
    Integration {
        node: usize,
        #[source]
        source: IntegratorError,
    },
    #[error("QP failed: {0}")]
    Qp(#[from] QpError),
}

/// A residual vector and its Jacobians with respect to state and input.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub value: DVector<f64>,
    pub d_state: DMatrix<f64>,
    pub d_input: DMatrix<f64>,
}

impl Residual {
    fn check(&self, weight: &DMatrix<f64>, nx: usize, nu: usize, what: &str) -> Result<(), OcpError> {
        let nr = self.value.len();
        let ok = weight.nrows() == nr
            && weight.ncols() == nr
            && self.d_state.nrows() == nr
            && self.d_state.ncols() == nx
            && self.d_input.nrows() == nr
            && self.d_input.ncols() == nu;
        if ok {
            Ok(())
        } else {
            Err(OcpError::DimensionMismatch(format!(
                "{what}: residual {nr}, weight {}x{}, d_state {}x{}, d_input {}x{} (nx {nx}, nu {nu})",
                weight.nrows(),
                weight.ncols(),
                self.d_state.nrows(),
                self.d_state.ncols(),
                self.d_input.nrows(),
                self.d_input.ncols()
            )))
        }
    }
}

/// Least-squares optimal control problem over a fixed horizon:
///
/// ```text
/// min Σ_k ‖r_k(x_k, u_k)‖²_{W_k} + ‖r_N(x_N)‖²_{W_N}
/// s.t. x_0 = x̂, x_{k+1} = F(x_k, u_k), lower_k ≤ u_k ≤ upper_k
/// ```
pub trait ControlOcp {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn propagate(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<Propagation, IntegratorError>;
    fn stage_residual(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Residual;
    fn stage_weight(&self, k: usize) -> &DMatrix<f64>;
    /// Terminal residual; `d_input` must have zero columns.
    fn terminal_residual(&self, x: &DVector<f64>) -> Residual;
    fn terminal_weight(&self) -> &DMatrix<f64>;
    fn input_bounds(&self, k: usize) -> (DVector<f64>, DVector<f64>);
}

/// Least-squares moving-window estimation problem:
///
/// ```text
/// min ‖x_0 − x̄‖²_P + Σ_k ‖r_k(x_k)‖²_V + Σ_k ‖x_{k+1} − F_k(x_k)‖²_W
/// s.t. lower ≤ x_k ≤ upper
/// ```
pub trait EstimationOcp {
    fn state_dim(&self) -> usize;
    /// Number of shooting intervals; there is one more node than intervals.
    fn intervals(&self) -> usize;
    /// One interval of the dynamics with the (known) input of interval `k`.
    fn propagate(&self, k: usize, x: &DVector<f64>) -> Result<Propagation, IntegratorError>;
    /// Measurement residual at node `k`; `d_input` is ignored.
    fn measurement_residual(&self, k: usize, x: &DVector<f64>) -> Residual;
    fn measurement_weight(&self) -> &DMatrix<f64>;
    fn process_weight(&self) -> &DMatrix<f64>;
    fn prior(&self) -> (&DVector<f64>, &DMatrix<f64>);
    fn state_bounds(&self) -> (DVector<f64>, DVector<f64>);
}

/// Shooting nodes of a control problem: N+1 states and N inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingGrid {
    pub node_states: Vec<DVector<f64>>,
    pub node_inputs: Vec<DVector<f64>>,
}

impl ShootingGrid {
    /// Grid with every node at `x` and every input at `u`.
    pub fn constant(horizon: usize, x: &DVector<f64>, u: &DVector<f64>) -> Self {
        Self {
            node_states: vec![x.clone(); horizon + 1],
            node_inputs: vec![u.clone(); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.node_inputs.len()
    }

    /// Shift-initialization: drops the first interval and duplicates the
    /// last node and input.
    pub fn shift(&mut self) {
        if self.node_inputs.is_empty() {
            return;
        }
        self.node_states.remove(0);
        let last = self.node_states.last().cloned().expect("grid has nodes");
        self.node_states.push(last);
        self.node_inputs.remove(0);
        let last = self.node_inputs.last().cloned().unwrap_or_else(|| DVector::zeros(0));
        self.node_inputs.push(last);
    }
}

/// Dense QP in the input increments plus the data needed to expand a QP
/// solution back into a state trajectory.
#[derive(Debug, Clone)]
pub struct CondensedQp {
    pub qp: QpSubproblem,
    pub initial_deviation: DVector<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub defects: Vec<DVector<f64>>,
}

impl CondensedQp {
    /// State increments Δx_0..Δx_N for the input increments `du`
    /// (stacked, horizon·nu).
    pub fn expand(&self, du: &DVector<f64>) -> Vec<DVector<f64>> {
        let nu = self.b.first().map_or(0, |b| b.ncols());
        let mut dx = Vec::with_capacity(self.a.len() + 1);
        dx.push(self.initial_deviation.clone());
        for k in 0..self.a.len() {
            let next = &self.a[k] * &dx[k] + &self.b[k] * du.rows(k * nu, nu) + &self.defects[k];
            dx.push(next);
        }
        dx
    }
}

/// Linearizes a control problem at `grid` and condenses the state
/// increments away. `x0` is the measured initial state.
pub fn condense_control<P: ControlOcp + ?Sized>(
    ocp: &P,
    grid: &ShootingGrid,
    x0: &DVector<f64>,
) -> Result<CondensedQp, OcpError> {
    let nx = ocp.state_dim();
    let nu = ocp.input_dim();
    let n = ocp.horizon();
    if grid.node_states.len() != n + 1
        || grid.node_inputs.len() != n
        || x0.len() != nx
        || grid.node_states.iter().any(|x| x.len() != nx)
        || grid.node_inputs.iter().any(|u| u.len() != nu)
    {
        return Err(OcpError::DimensionMismatch(
            "shooting grid does not match the problem".into(),
        ));
    }

    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut defects = Vec::with_capacity(n);
    // Per-stage quadratic model: q/Q on states, r/R on inputs, S cross term.
    let mut q_mat = Vec::with_capacity(n + 1);
    let mut q_vec = Vec::with_capacity(n + 1);
    let mut s_mat = Vec::with_capacity(n);
    let mut r_mat = Vec::with_capacity(n);
    let mut r_vec = Vec::with_capacity(n);
    for k in 0..n {
        let (x, u) = (&grid.node_states[k], &grid.node_inputs[k]);
        let prop = ocp
            .propagate(k, x, u)
            .map_err(|source| OcpError::Integration { node: k, source })?;
        defects.push(&prop.next - &grid.node_states[k + 1]);
        a.push(prop.d_state);
        b.push(prop.d_input);

        let res = ocp.stage_residual(k, x, u);
        let w = ocp.stage_weight(k);
        res.check(w, nx, nu, "stage residual")?;
        let wjx = w * &res.d_state;
        let wju = w * &res.d_input;
        let wr = w * &res.value;
        q_mat.push(res.d_state.transpose() * &wjx);
        q_vec.push(res.d_state.transpose() * &wr);
        s_mat.push(res.d_input.transpose() * &wjx);
        r_mat.push(res.d_input.transpose() * &wju);
        r_vec.push(res.d_input.transpose() * &wr);
    }
    let term = ocp.terminal_residual(&grid.node_states[n]);
    let wn = ocp.terminal_weight();
    term.check(wn, nx, 0, "terminal residual")?;
    q_mat.push(term.d_state.transpose() * wn * &term.d_state);
    q_vec.push(term.d_state.transpose() * (wn * &term.value));

    // Free response of the state increments (no input change).
    let mut phi = Vec::with_capacity(n + 1);
    phi.push(x0 - &grid.node_states[0]);
    for k in 0..n {
        let next = &a[k] * &phi[k] + &defects[k];
        phi.push(next);
    }

    let dim = n * nu;
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);

    // Gradient: backward costate recursion λ_k = q_k + Q_k φ_k + A_kᵀ λ_{k+1}.
    let mut lambda = &q_vec[n] + &q_mat[n] * &phi[n];
    for k in (0..n).rev() {
        let gi = &r_vec[k] + &s_mat[k] * &phi[k] + b[k].transpose() * &lambda;
        g.rows_mut(k * nu, nu).copy_from(&gi);
        lambda = &q_vec[k] + &q_mat[k] * &phi[k] + a[k].transpose() * &lambda;
    }

    // Hessian blocks. With the cost-to-go P_k = Q_k + A_kᵀ P_{k+1} A_k and
    // G_{i,j} the response of Δx_i to Δu_j (G_{j+1,j} = B_j,
    // G_{i+1,j} = A_i G_{i,j}):
    //   H_jj = B_jᵀ P_{j+1} B_j + R_j
    //   H_ij = (B_iᵀ P_{i+1} A_i + S_i) G_{i,j},  i > j.
    let mut p_next = q_mat[n].clone();
    let mut e: Vec<DMatrix<f64>> = vec![DMatrix::zeros(nu, nx); n];
    for i in (0..n).rev() {
        let bp = b[i].transpose() * &p_next;
        let diag = &bp * &b[i] + &r_mat[i];
        h.view_mut((i * nu, i * nu), (nu, nu)).copy_from(&diag);
        e[i] = &bp * &a[i] + &s_mat[i];
        if i > 0 {
            p_next = &q_mat[i] + a[i].transpose() * &p_next * &a[i];
        }
    }
    let mut gcol = vec![0.0; nx * nu];
    let mut gtmp = vec![0.0; nx * nu];
    let mut block = vec![0.0; nu * nu];
    for j in 0..n {
        gcol.copy_from_slice(b[j].as_slice());
        for i in j + 1..n {
            small_mul(&e[i], &gcol, nu, &mut block);
            for c in 0..nu {
                for r in 0..nu {
                    let v = block[c * nu + r];
                    h[(i * nu + r, j * nu + c)] = v;
                    h[(j * nu + c, i * nu + r)] = v;
                }
            }
            small_mul(&a[i], &gcol, nu, &mut gtmp);
            std::mem::swap(&mut gcol, &mut gtmp);
        }
    }
    // Exact symmetry regardless of round-off in the block products.
    for i in 0..dim {
        for j in 0..i {
            let v = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }

    let mut lower = DVector::zeros(dim);
    let mut upper = DVector::zeros(dim);
    for k in 0..n {
        let (lo, hi) = ocp.input_bounds(k);
        if lo.len() != nu || hi.len() != nu {
            return Err(OcpError::DimensionMismatch("input bounds".into()));
        }
        let u = &grid.node_inputs[k];
        lower.rows_mut(k * nu, nu).copy_from(&(lo - u));
        upper.rows_mut(k * nu, nu).copy_from(&(hi - u));
    }

    Ok(CondensedQp {
        qp: QpSubproblem {
            hessian: Hessian::Dense(h),
            gradient: g,
            lower,
            upper,
        },
        initial_deviation: phi.swap_remove(0),
        a,
        b,
        defects,
    })
}

/// out = m · x for a column-major `x` with `cols` columns. Plain loops: the
/// operands are a few rows wide, where packing for a blocked product costs
/// more than the arithmetic.
fn small_mul(m: &DMatrix<f64>, x: &[f64], cols: usize, out: &mut [f64]) {
    let (rows, inner) = m.shape();
    let md = m.as_slice();
    for c in 0..cols {
        let xc = &x[c * inner..(c + 1) * inner];
        let oc = &mut out[c * rows..(c + 1) * rows];
        oc.fill(0.0);
        for (k, xv) in xc.iter().enumerate() {
            let mk = &md[k * rows..(k + 1) * rows];
            for (o, mv) in oc.iter_mut().zip(mk) {
                *o += mv * xv;
            }
        }
    }
}

/// Banded QP in the node-state increments of an estimation problem.
pub fn transcribe_estimation<P: EstimationOcp + ?Sized>(
    ocp: &P,
    states: &[DVector<f64>],
) -> Result<QpSubproblem, OcpError> {
    let nx = ocp.state_dim();
    let nodes = ocp.intervals() + 1;
    if states.len() != nodes || states.iter().any(|x| x.len() != nx) {
        return Err(OcpError::DimensionMismatch(
            "estimation nodes do not match the problem".into(),
        ));
    }
    let v = ocp.measurement_weight();
    let w = ocp.process_weight();
    let (prior, prior_weight) = ocp.prior();
    if w.nrows() != nx
        || w.ncols() != nx
        || prior.len() != nx
        || prior_weight.nrows() != nx
        || prior_weight.ncols() != nx
    {
        return Err(OcpError::DimensionMismatch("process or prior weight".into()));
    }

    let dim = nodes * nx;
    let mut h = BandedSym::zeros(dim, 2 * nx - 1);
    let mut g = DVector::zeros(dim);

    let prior_res = &states[0] - prior;
    h.add_block(0, 0, prior_weight);
    g.rows_mut(0, nx).axpy(1.0, &(prior_weight * prior_res), 1.0);

    for (k, x) in states.iter().enumerate() {
        let res = ocp.measurement_residual(k, x);
        let nr = res.value.len();
        if v.nrows() != nr || v.ncols() != nr || res.d_state.nrows() != nr || res.d_state.ncols() != nx {
            return Err(OcpError::DimensionMismatch("measurement residual".into()));
        }
        let vj = v * &res.d_state;
        h.add_block(k * nx, k * nx, &(res.d_state.transpose() * &vj));
        g.rows_mut(k * nx, nx)
            .axpy(1.0, &(res.d_state.transpose() * (v * &res.value)), 1.0);
    }

    for k in 0..nodes - 1 {
        let prop = ocp
            .propagate(k, &states[k])
            .map_err(|source| OcpError::Integration { node: k, source })?;
        let noise = &states[k + 1] - &prop.next;
        let wa = w * &prop.d_state;
        h.add_block(k * nx, k * nx, &(prop.d_state.transpose() * &wa));
        h.add_block((k + 1) * nx, (k + 1) * nx, w);
        h.add_block((k + 1) * nx, k * nx, &(-wa));
        let wn = w * &noise;
        g.rows_mut(k * nx, nx)
            .axpy(-1.0, &(prop.d_state.transpose() * &wn), 1.0);
        g.rows_mut((k + 1) * nx, nx).axpy(1.0, &wn, 1.0);
    }

    let (lo, hi) = ocp.state_bounds();
    if lo.len() != nx || hi.len() != nx {
        return Err(OcpError::DimensionMismatch("state bounds".into()));
    }
    let mut lower = DVector::zeros(dim);
    let mut upper = DVector::zeros(dim);
    for (k, x) in states.iter().enumerate() {
        lower.rows_mut(k * nx, nx).copy_from(&(&lo - x));
        upper.rows_mut(k * nx, nx).copy_from(&(&hi - x));
    }
    Ok(QpSubproblem {
        hessian: Hessian::Banded(h),
        gradient: g,
        lower,
        upper,
    })
}

/// Exact least-squares cost of a control problem for an input sequence,
/// evaluated on the single-shooting rollout from `x0`.
pub fn control_cost<P: ControlOcp + ?Sized>(
    ocp: &P,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<f64, OcpError> {
    let mut x = x0.clone();
    let mut cost = 0.0;
    for (k, u) in inputs.iter().enumerate() {
        let r = ocp.stage_residual(k, &x, u);
        cost += r.value.dot(&(ocp.stage_weight(k) * &r.value));
        x = ocp
            .propagate(k, &x, u)
            .map_err(|source| OcpError::Integration { node: k, source })?
            .next;
    }
    let r = ocp.terminal_residual(&x);
    Ok(cost + r.value.dot(&(ocp.terminal_weight() * &r.value)))
}

/// Exact estimation cost at the given node states.
pub fn estimation_cost<P: EstimationOcp + ?Sized>(ocp: &P, states: &[DVector<f64>]) -> Result<f64, OcpError> {
    let (prior, pw) = ocp.prior();
    let d = &states[0] - prior;
    let mut cost = d.dot(&(pw * &d));
    for (k, x) in states.iter().enumerate() {
        let r = ocp.measurement_residual(k, x);
        cost += r.value.dot(&(ocp.measurement_weight() * &r.value));
    }
    for k in 0..states.len() - 1 {
        let next = ocp
            .propagate(k, &states[k])
            .map_err(|source| OcpError::Integration { node: k, source })?
            .next;
        let w = &states[k + 1] - next;
        cost += w.dot(&(ocp.process_weight() * &w));
    }
    Ok(cost)
}

#[cfg(test)]
pub(crate) mod test_problems {
    use super::*;

    /// Linear time-invariant control problem with quadratic tracking cost.
    pub struct LinearOcp {
        pub a: DMatrix<f64>,
        pub b: DMatrix<f64>,
        pub q: DMatrix<f64>,
        pub s: DMatrix<f64>,
        pub horizon: usize,
        pub lower: DVector<f64>,
        pub upper: DVector<f64>,
    }

    impl ControlOcp for LinearOcp {
        fn state_dim(&self) -> usize {
            self.a.nrows()
        }
        fn input_dim(&self) -> usize {
            self.b.ncols()
        }
        fn horizon(&self) -> usize {
            self.horizon
        }
        fn propagate(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<Propagation, IntegratorError> {
            Ok(Propagation {
                next: &self.a * x + &self.b * u,
                d_state: self.a.clone(),
                d_input: self.b.clone(),
            })
        }
        fn stage_residual(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Residual {
            let (nx, nu) = (x.len(), u.len());
            let mut value = DVector::zeros(nx + nu);
            value.rows_mut(0, nx).copy_from(x);
            value.rows_mut(nx, nu).copy_from(u);
            let mut d_state = DMatrix::zeros(nx + nu, nx);
            d_state.view_mut((0, 0), (nx, nx)).fill_with_identity();
            let mut d_input = DMatrix::zeros(nx + nu, nu);
            d_input.view_mut((nx, 0), (nu, nu)).fill_with_identity();
            Residual {
                value,
                d_state,
                d_input,
            }
        }
        fn stage_weight(&self, _k: usize) -> &DMatrix<f64> {
            &self.q
        }
        fn terminal_residual(&self, x: &DVector<f64>) -> Residual {
            Residual {
                value: x.clone(),
                d_state: DMatrix::identity(x.len(), x.len()),
                d_input: DMatrix::zeros(x.len(), 0),
            }
        }
        fn terminal_weight(&self) -> &DMatrix<f64> {
            &self.s
        }
        fn input_bounds(&self, _k: usize) -> (DVector<f64>, DVector<f64>) {
            (self.lower.clone(), self.upper.clone())
        }
    }

    pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows() + b.nrows();
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), a.shape()).copy_from(a);
        m.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
        m
    }
}
