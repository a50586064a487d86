//! Dense complex matrix helpers sized for the ranging problem.
//!
//! Every matrix in the receiver chain is at most `M x M` with `M` the number
//! of symbols per ranging slot (4 in the reference configuration), so a plain
//! row-major buffer with direct algorithms is both simpler and faster than a
//! general-purpose linear algebra stack. The Hermitian eigensolver uses
//! cyclic Jacobi rotations; positive-definite systems go through a complex
//! Cholesky factorization.

use num_complex::Complex64;

use crate::error::{RangingError, Result};

/// Absolute tolerance for the Hermitian-input contract check.
const HERMITIAN_TOL: f64 = 1e-10;
/// Relative off-diagonal mass at which the Jacobi sweeps stop.
const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 50;

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Builds a matrix whose columns are the given vectors (all equal length).
    pub fn from_columns(columns: &[Vec<Complex64>]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows, cols);
        for (j, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), rows, "ragged column set");
            for (i, &v) in col.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// `A * v`.
    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .map(|j| self[(i, j)] * v[j])
                    .sum::<Complex64>()
            })
            .collect()
    }

    /// `A^H * v`.
    pub fn adjoint_matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.rows);
        (0..self.cols)
            .map(|j| {
                (0..self.rows)
                    .map(|i| self[(i, j)].conj() * v[i])
                    .sum::<Complex64>()
            })
            .collect()
    }

    /// Gram matrix `A^H A`.
    pub fn gram(&self) -> CMatrix {
        let k = self.cols;
        let mut g = CMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let s: Complex64 = (0..self.rows)
                    .map(|i| self[(i, a)].conj() * self[(i, b)])
                    .sum();
                g[(a, b)] = s;
                g[(b, a)] = s.conj();
            }
        }
        g
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in i..self.cols {
                if (self[(i, j)] - self[(j, i)].conj()).norm() > tol {
                    return false;
                }
            }
        }
        true
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `a^H b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns the eigenvalues in descending order together with the matching
/// orthonormal eigenvectors as matrix columns. The input must be Hermitian
/// within an absolute elementwise tolerance of 1e-10.
pub fn hermitian_evd(a: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    if a.rows != a.cols {
        return Err(RangingError::NotHermitian);
    }
    if !a.is_hermitian(HERMITIAN_TOL) {
        return Err(RangingError::NotHermitian);
    }
    let n = a.rows;
    let mut w = a.clone();
    // Symmetrize exactly so rounding in the caller cannot leak through.
    for i in 0..n {
        w[(i, i)] = Complex64::new(w[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let m = 0.5 * (w[(i, j)] + w[(j, i)].conj());
            w[(i, j)] = m;
            w[(j, i)] = m.conj();
        }
    }
    let mut vecs = CMatrix::identity(n);
    let scale = w.frobenius_norm();
    if scale == 0.0 {
        return Ok((vec![0.0; n], vecs));
    }
    let target = JACOBI_TOL * scale;

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * w[(i, j)].norm_sqr();
            }
        }
        if off.sqrt() <= target {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let beta = w[(p, q)];
                let abs_b = beta.norm();
                if abs_b == 0.0 {
                    continue;
                }
                let phase = beta / abs_b;
                let alpha = w[(p, p)].re;
                let gamma = w[(q, q)].re;
                // Zero the (p,q) pivot: t solves t^2 - 2*t*(alpha-gamma)/(2|b|) - 1 = 0,
                // smaller-magnitude root for the stabler rotation.
                let wr = (alpha - gamma) / (2.0 * abs_b);
                let t = if wr >= 0.0 {
                    -1.0 / (wr + (wr * wr + 1.0).sqrt())
                } else {
                    1.0 / (-wr + (wr * wr + 1.0).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sigma = t * c;
                let s = phase * sigma;

                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let wkp = w[(k, p)];
                    let wkq = w[(k, q)];
                    let new_kp = wkp * c - wkq * s.conj();
                    let new_kq = wkp * s + wkq * c;
                    w[(k, p)] = new_kp;
                    w[(p, k)] = new_kp.conj();
                    w[(k, q)] = new_kq;
                    w[(q, k)] = new_kq.conj();
                }
                let new_pp = alpha * c * c + gamma * sigma * sigma - 2.0 * c * sigma * abs_b;
                let new_qq = alpha * sigma * sigma + gamma * c * c + 2.0 * c * sigma * abs_b;
                w[(p, p)] = Complex64::new(new_pp, 0.0);
                w[(q, q)] = Complex64::new(new_qq, 0.0);
                w[(p, q)] = Complex64::new(0.0, 0.0);
                w[(q, p)] = Complex64::new(0.0, 0.0);

                for k in 0..n {
                    let vkp = vecs[(k, p)];
                    let vkq = vecs[(k, q)];
                    vecs[(k, p)] = vkp * c - vkq * s.conj();
                    vecs[(k, q)] = vkp * s + vkq * c;
                }
            }
        }
    }
    if !converged {
        // One last check after the final sweep.
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * w[(i, j)].norm_sqr();
            }
        }
        if off.sqrt() > target {
            return Err(RangingError::NoConvergence);
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let vals: Vec<f64> = (0..n).map(|i| w[(i, i)].re).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
    let sorted_vals: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let mut sorted_vecs = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            sorted_vecs[(i, dst)] = vecs[(i, src)];
        }
    }
    Ok((sorted_vals, sorted_vecs))
}

/// Lower Cholesky factor of a Hermitian positive-definite matrix.
pub fn cholesky_lower(t: &CMatrix) -> Result<CMatrix> {
    assert_eq!(t.rows, t.cols);
    let n = t.rows;
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = t[(j, j)].re;
        for p in 0..j {
            d -= l[(j, p)].norm_sqr();
        }
        if d.is_nan() || d <= 0.0 || !d.is_finite() {
            return Err(RangingError::SingularGram);
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in (j + 1)..n {
            let mut s = t[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L L^H x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &CMatrix, b: &[Complex64]) -> Vec<Complex64> {
    let n = l.rows;
    assert_eq!(b.len(), n);
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= l[(i, p)] * y[p];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in (i + 1)..n {
            s -= l[(p, i)].conj() * x[p];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Real diagonal of the inverse of a Hermitian positive-definite matrix.
pub fn spd_inverse_diag(t: &CMatrix) -> Result<Vec<f64>> {
    let n = t.rows;
    let l = cholesky_lower(t)?;
    let mut diag = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[k] = Complex64::new(1.0, 0.0);
        let x = cholesky_solve(&l, &e);
        diag.push(x[k].re);
    }
    Ok(diag)
}

/// 2-norm condition number of a Hermitian positive-semidefinite matrix.
pub fn hermitian_condition(t: &CMatrix) -> Result<f64> {
    let (vals, _) = hermitian_evd(t)?;
    let max = vals.first().copied().unwrap_or(0.0);
    let min = vals.last().copied().unwrap_or(0.0);
    if min <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::TrialRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hermitian(n: usize, rng: &mut TrialRng) -> CMatrix {
        let mut a = CMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = c(rng.uniform_in(-2.0, 2.0), 0.0);
            for j in (i + 1)..n {
                let z = c(rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0));
                a[(i, j)] = z;
                a[(j, i)] = z.conj();
            }
        }
        a
    }

    #[test]
    fn evd_identity() {
        let (vals, vecs) = hermitian_evd(&CMatrix::identity(4)).unwrap();
        for v in vals {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let g = vecs.gram();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - c(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn evd_diagonal_sorted() {
        let mut a = CMatrix::zeros(4, 4);
        for (i, v) in [1.0, 3.0, 0.0, 2.0].iter().enumerate() {
            a[(i, i)] = c(*v, 0.0);
        }
        let (vals, vecs) = hermitian_evd(&a).unwrap();
        assert_eq!(vals, vec![3.0, 2.0, 1.0, 0.0]);
        // Eigenvector of the top eigenvalue is the second basis vector.
        assert!((vecs[(1, 0)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evd_rejects_non_hermitian() {
        let mut a = CMatrix::identity(3);
        a[(0, 1)] = c(0.5, 0.0);
        assert_eq!(hermitian_evd(&a), Err(RangingError::NotHermitian));
    }

    #[test]
    fn evd_reconstructs_random_matrices() {
        let mut rng = TrialRng::from_master(11, 0);
        for _ in 0..200 {
            let a = random_hermitian(4, &mut rng);
            let (vals, vecs) = hermitian_evd(&a).unwrap();
            // Reconstruction residual relative to the input norm.
            let mut resid = 0.0;
            let mut denom = a.frobenius_norm();
            if denom == 0.0 {
                denom = 1.0;
            }
            for i in 0..4 {
                for j in 0..4 {
                    let mut s = c(0.0, 0.0);
                    for k in 0..4 {
                        s += vecs[(i, k)] * vals[k] * vecs[(j, k)].conj();
                    }
                    resid += (s - a[(i, j)]).norm_sqr();
                }
            }
            assert!(resid.sqrt() / denom < 1e-9, "residual {}", resid.sqrt());
            let g = vecs.gram();
            for i in 0..4 {
                for j in 0..4 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((g[(i, j)] - c(expect, 0.0)).norm() < 1e-10);
                }
            }
            assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let mut rng = TrialRng::from_master(12, 0);
        for _ in 0..100 {
            // A^H A + I is Hermitian positive definite.
            let cols: Vec<Vec<Complex64>> = (0..3)
                .map(|_| {
                    (0..4)
                        .map(|_| c(rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)))
                        .collect()
                })
                .collect();
            let a = CMatrix::from_columns(&cols);
            let mut t = a.gram();
            for i in 0..3 {
                t[(i, i)] += c(1.0, 0.0);
            }
            let b: Vec<Complex64> = (0..3)
                .map(|_| c(rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)))
                .collect();
            let l = cholesky_lower(&t).unwrap();
            let x = cholesky_solve(&l, &b);
            let tx = t.matvec(&x);
            for i in 0..3 {
                assert!((tx[i] - b[i]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn cholesky_rejects_singular() {
        let mut t = CMatrix::zeros(2, 2);
        t[(0, 0)] = c(1.0, 0.0);
        t[(0, 1)] = c(1.0, 0.0);
        t[(1, 0)] = c(1.0, 0.0);
        t[(1, 1)] = c(1.0, 0.0);
        assert_eq!(cholesky_lower(&t), Err(RangingError::SingularGram));
    }

    #[test]
    fn inverse_diag_matches_direct_inverse() {
        let mut t = CMatrix::zeros(2, 2);
        t[(0, 0)] = c(4.0, 0.0);
        t[(0, 1)] = c(1.0, 1.0);
        t[(1, 0)] = c(1.0, -1.0);
        t[(1, 1)] = c(3.0, 0.0);
        // det = 12 - 2 = 10; inverse diag = [3/10, 4/10].
        let d = spd_inverse_diag(&t).unwrap();
        assert!((d[0] - 0.3).abs() < 1e-12);
        assert!((d[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn condition_number_of_scaled_identity() {
        let mut t = CMatrix::identity(3);
        t[(2, 2)] = c(1e-3, 0.0);
        let cond = hermitian_condition(&t).unwrap();
        assert!((cond - 1e3).abs() / 1e3 < 1e-9);
    }
}
