//! Strictly convex QP with simple bounds,
//!
//! ```text
//! minimize    ½ xᵀ H x + gᵀ x
//! subject to  lower ≤ x ≤ upper
//! ```
//!
//! solved by a projected Newton method: variables whose bound is (nearly)
//! active with an outward gradient are held fixed, a Newton step is taken on
//! the remaining free face, and the step is projected back onto the box with
//! an Armijo search along the projection arc. Once the optimal face is
//! identified the face solve is exact, so the method terminates with a KKT
//! certificate at machine precision.

use nalgebra::DVector;
use thiserror::Error;

use super::linalg::Hessian;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("lower bound exceeds upper bound at index {index}")]
    InfeasibleBounds { index: usize },
    #[error("QP not solved within {iterations} iterations (KKT residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("reduced Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("QP data has inconsistent dimensions")]
    DimensionMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSubproblem {
    pub hessian: Hessian,
    pub gradient: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpSubproblem {
    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&self.hessian.mul_vec(x)) + self.gradient.dot(x)
    }

    /// Natural KKT residual ‖x − P(x − ∇f(x))‖∞ plus bound violation.
    pub fn kkt_residual(&self, x: &DVector<f64>) -> f64 {
        let grad = self.hessian.mul_vec(x) + &self.gradient;
        natural_residual(x, &grad, &self.lower, &self.upper)
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        if self.hessian.dim() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::DimensionMismatch);
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] {
                return Err(QpError::InfeasibleBounds { index: i });
            }
        }
        Ok(())
    }
}

fn natural_residual(x: &DVector<f64>, grad: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    let mut r: f64 = 0.0;
    for i in 0..x.len() {
        let proj = (x[i] - grad[i]).clamp(lo[i], hi[i]);
        r = r.max((x[i] - proj).abs());
        r = r.max(lo[i] - x[i]).max(x[i] - hi[i]);
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveBound {
    pub index: usize,
    pub side: BoundSide,
    /// Lagrange multiplier, non-negative at an optimum.
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    pub active_set: Vec<ActiveBound>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Convergence threshold on the natural residual, relative to
    /// max(1, ‖g‖∞).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100,
        }
    }
}

pub fn solve_qp(qp: &QpSubproblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    solve_qp_from(qp, settings, None)
}

/// Like [`solve_qp`], starting from the projection of `start` when given.
pub fn solve_qp_from(
    qp: &QpSubproblem,
    settings: &QpSettings,
    start: Option<&DVector<f64>>,
) -> Result<QpSolution, QpError> {
    qp.validate()?;
    let n = qp.dim();
    let (lo, hi) = (&qp.lower, &qp.upper);
    let mut x = match start {
        Some(s) if s.len() == n => s.clone(),
        Some(_) => return Err(QpError::DimensionMismatch),
        None => DVector::zeros(n),
    };
    for i in 0..n {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
    let threshold = settings.tol * qp.gradient.amax().max(1.0);

    let mut hx = qp.hessian.mul_vec(&x);
    let mut f = 0.5 * x.dot(&hx) + qp.gradient.dot(&x);
    let mut free = Vec::with_capacity(n);
    let mut fixed = Vec::with_capacity(n);
    for iter in 0..=settings.max_iter {
        let grad = &hx + &qp.gradient;
        let residual = natural_residual(&x, &grad, lo, hi);
        if residual <= threshold {
            return Ok(finish(qp, x, &grad, residual, iter, f));
        }
        if iter == settings.max_iter {
            return Err(QpError::MaxIterations {
                iterations: iter,
                residual,
            });
        }

        let eps = residual.min(1e-6);
        free.clear();
        fixed.clear();
        for i in 0..n {
            let at_lo = x[i] - lo[i] <= eps && grad[i] > 0.0;
            let at_hi = hi[i] - x[i] <= eps && grad[i] < 0.0;
            if at_lo || at_hi || lo[i] == hi[i] {
                fixed.push(i);
            } else {
                free.push(i);
            }
        }

        let mut dir = DVector::zeros(n);
        if !free.is_empty() {
            let chol = qp
                .hessian
                .factor_subset(&free)
                .map_err(|_| QpError::NotPositiveDefinite)?;
            let rhs: Vec<f64> = free.iter().map(|&i| -grad[i]).collect();
            for (&i, d) in free.iter().zip(chol.solve(&rhs)) {
                dir[i] = d;
            }
        }
        for &i in &fixed {
            let h = qp.hessian.get(i, i);
            dir[i] = -grad[i] / if h > 0.0 { h } else { 1.0 };
        }

        let newton_decrease: f64 = free.iter().map(|&i| -grad[i] * dir[i]).sum();
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = x.clone();
            trial.axpy(alpha, &dir, 1.0);
            for i in 0..n {
                trial[i] = trial[i].clamp(lo[i], hi[i]);
            }
            let htrial = qp.hessian.mul_vec(&trial);
            let ftrial = 0.5 * trial.dot(&htrial) + qp.gradient.dot(&trial);
            let fixed_decrease: f64 = fixed.iter().map(|&i| grad[i] * (x[i] - trial[i])).sum();
            let predicted = alpha * newton_decrease + fixed_decrease;
            if f - ftrial >= 1e-4 * predicted || (f - ftrial).abs() <= 1e-15 * f.abs().max(1.0) && predicted <= 0.0 {
                accepted = true;
                x = trial;
                hx = htrial;
                f = ftrial;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(QpError::MaxIterations {
                iterations: iter + 1,
                residual,
            });
        }
    }
    unreachable!("loop returns on its last iteration")
}

fn finish(
    qp: &QpSubproblem,
    x: DVector<f64>,
    grad: &DVector<f64>,
    residual: f64,
    iterations: usize,
    objective: f64,
) -> QpSolution {
    let mut active_set = Vec::new();
    for i in 0..x.len() {
        if x[i] <= qp.lower[i] && grad[i] >= 0.0 {
            active_set.push(ActiveBound {
                index: i,
                side: BoundSide::Lower,
                multiplier: grad[i],
            });
        } else if x[i] >= qp.upper[i] && grad[i] <= 0.0 {
            active_set.push(ActiveBound {
                index: i,
                side: BoundSide::Upper,
                multiplier: -grad[i],
            });
        }
    }
    QpSolution {
        primal: x,
        active_set,
        kkt_residual: residual,
        iterations,
        objective,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn projected_gradient_reference(qp: &QpSubproblem, iterations: usize) -> DVector<f64> {
        // Plain projected gradient with step 1/L, independent of the Newton path.
        let h = qp.hessian.to_dense();
        let lipschitz = h.symmetric_eigenvalues().max();
        let mut x = DVector::zeros(qp.dim());
        for _ in 0..iterations {
            let g = &h * &x + &qp.gradient;
            x -= g / lipschitz;
            for i in 0..x.len() {
                x[i] = x[i].clamp(qp.lower[i], qp.upper[i]);
            }
        }
        x
    }

    fn random_qp(n: usize, rng: &mut ChaCha8Rng) -> QpSubproblem {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = a.transpose() * &a / n as f64 + DMatrix::identity(n, n) * 0.2;
        let gradient = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        let lower = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..0.0));
        let upper = DVector::from_fn(n, |i, _| lower[i] + rng.gen_range(0.0..2.5));
        QpSubproblem {
            hessian: Hessian::Dense(h),
            gradient,
            lower,
            upper,
        }
    }

    #[test]
    fn separable_example() {
        let qp = QpSubproblem {
            hessian: Hessian::Dense(DMatrix::identity(2, 2)),
            gradient: DVector::from_column_slice(&[-1.0, -3.0]),
            lower: DVector::from_element(2, -2.0),
            upper: DVector::from_element(2, 2.0),
        };
        let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
        assert!((sol.primal[0] - 1.0).abs() < 1e-14);
        assert!((sol.primal[1] - 2.0).abs() < 1e-14);
        assert_eq!(sol.active_set.len(), 1);
        assert_eq!(sol.active_set[0].index, 1);
        assert_eq!(sol.active_set[0].side, BoundSide::Upper);
        assert!((sol.active_set[0].multiplier - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unbounded_case_is_newton_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut qp = random_qp(12, &mut rng);
        qp.lower.fill(f64::NEG_INFINITY);
        qp.upper.fill(f64::INFINITY);
        let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
        let h = qp.hessian.to_dense();
        let newton = -h.lu().solve(&qp.gradient).unwrap();
        assert!((sol.primal - newton).amax() < 1e-12);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn matches_projected_gradient_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let n = rng.gen_range(1..=20);
            let qp = random_qp(n, &mut rng);
            let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
            let reference = projected_gradient_reference(&qp, 20_000);
            assert!((sol.objective - qp.objective(&reference)).abs() < 1e-8);
            assert!(sol.kkt_residual < 1e-10);
            for b in &sol.active_set {
                assert!(b.multiplier >= 0.0);
            }
            for i in 0..n {
                assert!(sol.primal[i] >= qp.lower[i] && sol.primal[i] <= qp.upper[i]);
            }
        }
    }

    #[test]
    fn infeasible_bounds_rejected() {
        let qp = QpSubproblem {
            hessian: Hessian::Dense(DMatrix::identity(2, 2)),
            gradient: DVector::zeros(2),
            lower: DVector::from_column_slice(&[0.0, 1.0]),
            upper: DVector::from_column_slice(&[1.0, 0.5]),
        };
        assert_eq!(
            solve_qp(&qp, &QpSettings::default()).unwrap_err(),
            QpError::InfeasibleBounds { index: 1 }
        );
    }

    #[test]
    fn indefinite_hessian_reported() {
        let qp = QpSubproblem {
            hessian: Hessian::Dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])),
            gradient: DVector::from_column_slice(&[1.0, 1.0]),
            lower: DVector::from_element(2, -1.0),
            upper: DVector::from_element(2, 1.0),
        };
        assert_eq!(
            solve_qp(&qp, &QpSettings::default()).unwrap_err(),
            QpError::NotPositiveDefinite
        );
    }

    #[test]
    fn equal_bounds_pin_variable() {
        let qp = QpSubproblem {
            hessian: Hessian::Dense(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])),
            gradient: DVector::from_column_slice(&[1.0, -1.0]),
            lower: DVector::from_column_slice(&[0.3, -5.0]),
            upper: DVector::from_column_slice(&[0.3, 5.0]),
        };
        let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
        assert_eq!(sol.primal[0], 0.3);
        assert!((sol.primal[1] - (1.0 - 0.15)).abs() < 1e-14);
    }
}
