//! Symmetric Hessian storage and Cholesky factorizations restricted to a
//! subset of free variables.

use nalgebra::{DMatrix, DVector};

/// Symmetric matrix stored as its lower band.
///
/// Row `i` keeps the entries `(i, j)` for `i - bandwidth <= j <= i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSym {
    dim: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(dim: usize, bandwidth: usize) -> Self {
        Self {
            dim,
            bandwidth,
            data: vec![0.0; dim * (bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bandwidth {
            None
        } else {
            Some(i * (self.bandwidth + 1) + self.bandwidth + j - i)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Adds `v` to the symmetric pair (i, j)/(j, i).
    ///
    /// Panics if the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.data[s] += v;
    }

    /// Adds a dense block with top-left corner at (row, col), row >= col.
    /// Only the part on or below the diagonal is accumulated.
    pub fn add_block(&mut self, row: usize, col: usize, block: &DMatrix<f64>) {
        for c in 0..block.ncols() {
            for r in 0..block.nrows() {
                let (i, j) = (row + r, col + c);
                if i >= j {
                    self.add(i, j, block[(r, c)]);
                }
            }
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim);
        let w = self.bandwidth + 1;
        for i in 0..self.dim {
            let j0 = i.saturating_sub(self.bandwidth);
            let row = &self.data[i * w..(i + 1) * w];
            let mut acc = 0.0;
            for j in j0..i {
                let a = row[self.bandwidth + j - i];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            acc += row[self.bandwidth] * x[i];
            y[i] += acc;
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }
}

/// Hessian of a box-constrained QP.
#[derive(Debug, Clone, PartialEq)]
pub enum Hessian {
    Dense(DMatrix<f64>),
    Banded(BandedSym),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite;

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::Dense(m) => m.nrows(),
            Hessian::Banded(b) => b.dim(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Hessian::Dense(m) => m[(i, j)],
            Hessian::Banded(b) => b.get(i, j),
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Hessian::Dense(m) => m * x,
            Hessian::Banded(b) => b.mul_vec(x),
        }
    }

    pub fn add_diagonal(&mut self, lambda: f64) {
        match self {
            Hessian::Dense(m) => {
                for i in 0..m.nrows() {
                    m[(i, i)] += lambda;
                }
            }
            Hessian::Banded(b) => {
                for i in 0..b.dim() {
                    b.add(i, i, lambda);
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Hessian::Dense(m) => m.clone(),
            Hessian::Banded(b) => b.to_dense(),
        }
    }

    /// Cholesky factor of the principal submatrix selected by `free`
    /// (indices ascending).
    pub fn factor_subset(&self, free: &[usize]) -> Result<SubsetCholesky, NotPositiveDefinite> {
        let n = free.len();
        let bandwidth = match self {
            Hessian::Dense(_) => n.saturating_sub(1),
            Hessian::Banded(b) => b.bandwidth().min(n.saturating_sub(1)),
        };
        let w = bandwidth + 1;
        // Row-major lower band of the factor, same layout as BandedSym,
        // initialized with the selected entries of the matrix.
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            let j0 = i.saturating_sub(bandwidth);
            let row = &mut l[i * w + bandwidth - i..];
            match self {
                Hessian::Dense(m) => {
                    for j in j0..=i {
                        row[j] = m[(free[i], free[j])];
                    }
                }
                Hessian::Banded(b) => {
                    for j in j0..=i {
                        row[j] = b.get(free[i], free[j]);
                    }
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bandwidth);
            let ri = i * w + bandwidth - i;
            for j in j0..=i {
                let rj = j * w + bandwidth - j;
                let k0 = j0.max(j.saturating_sub(bandwidth));
                let dot: f64 = l[ri + k0..ri + j]
                    .iter()
                    .zip(&l[rj + k0..rj + j])
                    .map(|(x, y)| x * y)
                    .sum();
                let v = l[ri + j] - dot;
                if i == j {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(NotPositiveDefinite);
                    }
                    l[ri + i] = v.sqrt();
                } else {
                    l[ri + j] = v / l[rj + j];
                }
            }
        }
        Ok(SubsetCholesky { dim: n, bandwidth, l })
    }
}

/// Lower-triangular banded Cholesky factor.
#[derive(Debug, Clone)]
pub struct SubsetCholesky {
    dim: usize,
    bandwidth: usize,
    l: Vec<f64>,
}

impl SubsetCholesky {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.bandwidth + 1) + self.bandwidth + j - i]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            let j0 = i.saturating_sub(self.bandwidth);
            let mut v = y[i];
            for j in j0..i {
                v -= self.at(i, j) * y[j];
            }
            y[i] = v / self.at(i, i);
        }
        for i in (0..n).rev() {
            let j1 = (i + self.bandwidth).min(n - 1);
            let mut v = y[i];
            for j in i + 1..=j1 {
                v -= self.at(j, i) * y[j];
            }
            y[i] = v / self.at(i, i);
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, bw: usize, rng: &mut ChaCha8Rng) -> BandedSym {
        let mut b = BandedSym::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                b.add(i, j, rng.gen_range(-1.0..1.0));
            }
            b.add(i, i, 2.0 * bw as f64 + 1.0);
        }
        b
    }

    #[test]
    fn banded_matvec_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_banded(23, 4, &mut rng);
        let x = DVector::from_fn(23, |_, _| rng.gen_range(-1.0..1.0));
        let err = (b.mul_vec(&x) - b.to_dense() * &x).amax();
        assert!(err < 1e-13);
        assert_eq!(b.get(10, 3), 0.0);
        assert_eq!(b.get(3, 7), b.get(7, 3));
    }

    #[test]
    fn subset_factor_solves_reduced_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = random_banded(30, 5, &mut rng);
        let dense = b.to_dense();
        let free: Vec<usize> = (0..30).filter(|i| i % 4 != 1).collect();
        let rhs: Vec<f64> = free.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        for h in [Hessian::Banded(b.clone()), Hessian::Dense(dense.clone())] {
            let x = h.factor_subset(&free).unwrap().solve(&rhs);
            let sub = dense.select_rows(&free).select_columns(&free);
            let res = sub * DVector::from_column_slice(&x) - DVector::from_column_slice(&rhs);
            assert!(res.amax() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let h = Hessian::Dense(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert!(h.factor_subset(&[0, 1]).is_err());
        assert!(h.factor_subset(&[0]).is_ok());
    }
}
