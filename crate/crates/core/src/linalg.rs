//! Fixed-size dense matrices for the 6-dimensional filter state.
//!
//! Only what the unscented filter needs: products, transposes, a Cholesky
//! factorisation and SPD solves. Sizes are const generics so the same code
//! serves 2x2 test systems and the 6x6 vehicle state.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matrix<T, const R: usize, const C: usize>(pub [[T; C]; R]);

pub type Vector<T, const N: usize> = [T; N];

impl<T: Real, const R: usize, const C: usize> Default for Matrix<T, R, C> {
    fn default() -> Self {
        Self::zeros()
    }
}

impl<T: Real, const R: usize, const C: usize> Matrix<T, R, C> {
    pub fn zeros() -> Self {
        Matrix([[T::zero(); C]; R])
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros();
        for i in 0..R {
            for j in 0..C {
                m.0[i][j] = f(i, j);
            }
        }
        m
    }

    pub fn transpose(&self) -> Matrix<T, C, R> {
        Matrix::from_fn(|i, j| self.0[j][i])
    }

    pub fn scale(&self, s: T) -> Self {
        Self::from_fn(|i, j| self.0[i][j] * s)
    }

    pub fn mul_vec(&self, v: &Vector<T, C>) -> Vector<T, R> {
        let mut out = [T::zero(); R];
        for (i, row) in self.0.iter().enumerate() {
            let mut acc = T::zero();
            for j in 0..C {
                acc += row[j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn column(&self, j: usize) -> Vector<T, R> {
        let mut out = [T::zero(); R];
        for i in 0..R {
            out[i] = self.0[i][j];
        }
        out
    }

    /// Adds `w * a bᵀ` in place.
    pub fn add_outer(&mut self, w: T, a: &Vector<T, R>, b: &Vector<T, C>) {
        for i in 0..R {
            let wa = w * a[i];
            for j in 0..C {
                self.0[i][j] += wa * b[j];
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.0
            .iter()
            .flat_map(|r| r.iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flat_map(|r| r.iter()).all(|v| v.is_finite())
    }
}

impl<T: Real, const N: usize> Matrix<T, N, N> {
    pub fn identity() -> Self {
        Self::diagonal(&[T::one(); N])
    }

    pub fn diagonal(d: &Vector<T, N>) -> Self {
        Self::from_fn(|i, j| if i == j { d[i] } else { T::zero() })
    }

    pub fn diag(&self) -> Vector<T, N> {
        let mut out = [T::zero(); N];
        for i in 0..N {
            out[i] = self.0[i][i];
        }
        out
    }

    pub fn trace(&self) -> T {
        self.diag().iter().fold(T::zero(), |a, &b| a + b)
    }

    /// `(P + Pᵀ) / 2`.
    pub fn symmetrized(&self) -> Self {
        let half = T::lit(0.5);
        Self::from_fn(|i, j| (self.0[i][j] + self.0[j][i]) * half)
    }

    /// Lower-triangular `L` with `L Lᵀ = self`, or `None` when the matrix is
    /// not positive definite. Exactly-zero pivots on an all-zero trailing
    /// block are accepted so degenerate (zero) covariances factor to zero.
    pub fn cholesky(&self) -> Option<Self> {
        let mut l = Self::zeros();
        let scale = self.max_abs().max(T::min_positive_value());
        let tiny = scale * T::epsilon() * T::lit(16.0);
        for j in 0..N {
            let mut d = self.0[j][j];
            for k in 0..j {
                d -= l.0[j][k] * l.0[j][k];
            }
            if d < -tiny || !d.is_finite() {
                return None;
            }
            if d <= tiny {
                // Semi-definite direction: the column must vanish as well.
                for i in (j + 1)..N {
                    let mut s = self.0[i][j];
                    for k in 0..j {
                        s -= l.0[i][k] * l.0[j][k];
                    }
                    if s.abs() > tiny.sqrt() * scale.sqrt() {
                        return None;
                    }
                }
                continue;
            }
            let dj = d.sqrt();
            l.0[j][j] = dj;
            for i in (j + 1)..N {
                let mut s = self.0[i][j];
                for k in 0..j {
                    s -= l.0[i][k] * l.0[j][k];
                }
                l.0[i][j] = s / dj;
            }
        }
        Some(l)
    }

    /// Solves `self · X = B` for symmetric positive definite `self`.
    pub fn solve_spd<const C: usize>(&self, b: &Matrix<T, N, C>) -> Option<Matrix<T, N, C>> {
        let l = self.cholesky()?;
        if (0..N).any(|i| l.0[i][i] <= T::zero()) {
            return None;
        }
        let mut x = *b;
        for c in 0..C {
            // forward: L y = b
            for i in 0..N {
                let mut s = x.0[i][c];
                for k in 0..i {
                    s -= l.0[i][k] * x.0[k][c];
                }
                x.0[i][c] = s / l.0[i][i];
            }
            // backward: Lᵀ x = y
            for i in (0..N).rev() {
                let mut s = x.0[i][c];
                for k in (i + 1)..N {
                    s -= l.0[k][i] * x.0[k][c];
                }
                x.0[i][c] = s / l.0[i][i];
            }
        }
        Some(x)
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    /// Returns the eigenvalues and the matrix whose columns are the
    /// corresponding eigenvectors.
    pub fn symmetric_eigen(&self) -> (Vector<T, N>, Self) {
        let mut a = self.symmetrized();
        let mut v = Self::identity();
        for _ in 0..100 {
            let mut off = T::zero();
            for i in 0..N {
                for j in (i + 1)..N {
                    off += a.0[i][j] * a.0[i][j];
                }
            }
            if off <= T::epsilon() * T::epsilon() * (a.max_abs() * a.max_abs() + T::one()) {
                break;
            }
            for p in 0..N {
                for q in (p + 1)..N {
                    if a.0[p][q] == T::zero() {
                        continue;
                    }
                    let theta = (a.0[q][q] - a.0[p][p]) / (T::lit(2.0) * a.0[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..N {
                        let akp = a.0[k][p];
                        let akq = a.0[k][q];
                        a.0[k][p] = c * akp - s * akq;
                        a.0[k][q] = s * akp + c * akq;
                    }
                    for k in 0..N {
                        let apk = a.0[p][k];
                        let aqk = a.0[q][k];
                        a.0[p][k] = c * apk - s * aqk;
                        a.0[q][k] = s * apk + c * aqk;
                    }
                    for k in 0..N {
                        let vkp = v.0[k][p];
                        let vkq = v.0[k][q];
                        v.0[k][p] = c * vkp - s * vkq;
                        v.0[k][q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        (a.diag(), v)
    }

    /// Smallest eigenvalue (symmetric input).
    pub fn min_eigenvalue(&self) -> T {
        self.symmetric_eigen().0.iter().fold(T::infinity(), |m, &v| m.min(v))
    }

    /// Nearest positive semi-definite matrix in Frobenius norm: eigenvalues
    /// below `floor` are raised to it.
    pub fn psd_projection(&self, floor: T) -> Self {
        let (vals, vecs) = self.symmetric_eigen();
        let mut out = Self::zeros();
        for k in 0..N {
            let lam = vals[k].max(floor);
            let col = vecs.column(k);
            out.add_outer(lam, &col, &col);
        }
        out.symmetrized()
    }
}

impl<T: Real, const R: usize, const C: usize> Index<(usize, usize)> for Matrix<T, R, C> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.0[i][j]
    }
}

impl<T: Real, const R: usize, const C: usize> IndexMut<(usize, usize)> for Matrix<T, R, C> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.0[i][j]
    }
}

impl<T: Real, const R: usize, const C: usize> Add for Matrix<T, R, C> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] + rhs.0[i][j])
    }
}

impl<T: Real, const R: usize, const C: usize> AddAssign for Matrix<T, R, C> {
    fn add_assign(&mut self, rhs: Self) {
        for i in 0..R {
            for j in 0..C {
                self.0[i][j] += rhs.0[i][j];
            }
        }
    }
}

impl<T: Real, const R: usize, const C: usize> Sub for Matrix<T, R, C> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] - rhs.0[i][j])
    }
}

impl<T: Real, const R: usize, const K: usize, const C: usize> Mul<Matrix<T, K, C>>
    for Matrix<T, R, K>
{
    type Output = Matrix<T, R, C>;
    fn mul(self, rhs: Matrix<T, K, C>) -> Matrix<T, R, C> {
        let mut out = Matrix::<T, R, C>::zeros();
        for i in 0..R {
            for k in 0..K {
                let a = self.0[i][k];
                if a == T::zero() {
                    continue;
                }
                for j in 0..C {
                    out.0[i][j] += a * rhs.0[k][j];
                }
            }
        }
        out
    }
}

pub fn vec_add<T: Real, const N: usize>(a: &Vector<T, N>, b: &Vector<T, N>) -> Vector<T, N> {
    let mut out = *a;
    for i in 0..N {
        out[i] += b[i];
    }
    out
}

pub fn vec_sub<T: Real, const N: usize>(a: &Vector<T, N>, b: &Vector<T, N>) -> Vector<T, N> {
    let mut out = *a;
    for i in 0..N {
        out[i] -= b[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;


    #[test]
    fn cholesky_reconstructs_spd_matrix() {
        let a = Matrix::<f64, 3, 3>([[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]]);
        let l = a.cholesky().unwrap();
        let back = l * l.transpose();
        assert!((back - a).max_abs() < 1e-12);
    }

    #[test]
    fn cholesky_accepts_zero_and_rejects_indefinite() {
        assert_eq!(Matrix::<f64, 3, 3>::zeros().cholesky(), Some(Matrix::<f64, 3, 3>::zeros()));
        let bad = Matrix::<f64, 3, 3>([[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(bad.cholesky().is_none());
    }

    #[test]
    fn spd_solve_matches_product() {
        let a = Matrix::<f64, 3, 3>([[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]]);
        let b = Matrix::<f64, 3, 1>([[1.0], [-2.0], [0.5]]);
        let x = a.solve_spd(&b).unwrap();
        assert!(((a * x) - b).max_abs() < 1e-12);
    }

    #[test]
    fn jacobi_min_eigenvalue() {
        // eigenvalues 1, 3 for [[2,1],[1,2]]
        let a = Matrix::<f64, 2, 2>([[2.0, 1.0], [1.0, 2.0]]);
        assert!((a.min_eigenvalue() - 1.0).abs() < 1e-12);
        let d = Matrix::<f64, 3, 3>::diagonal(&[3.0, -0.5, 2.0]);
        assert!((d.min_eigenvalue() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn eigen_decomposition_reconstructs() {
        let a = Matrix::<f64, 3, 3>([[4.0, 2.0, 0.6], [2.0, -1.0, 1.0], [0.6, 1.0, 3.0]]);
        let (vals, vecs) = a.symmetric_eigen();
        let back = vecs * Matrix::diagonal(&vals) * vecs.transpose();
        assert!((back - a).max_abs() < 1e-10);
        assert!((vecs.transpose() * vecs - Matrix::identity()).max_abs() < 1e-10);
    }

    #[test]
    fn psd_projection_clips_negative_directions() {
        let bad = Matrix::<f64, 3, 3>([[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let fixed = bad.psd_projection(0.0);
        assert!(fixed.min_eigenvalue() > -1e-12);
        // eigenvalues 3, -1, 1: the projection keeps 3 and 1
        assert!((fixed.trace() - 4.0).abs() < 1e-10);
        let good = Matrix::<f64, 2, 2>([[2.0, 1.0], [1.0, 2.0]]);
        assert!((good.psd_projection(0.0) - good).max_abs() < 1e-12);
    }
}
