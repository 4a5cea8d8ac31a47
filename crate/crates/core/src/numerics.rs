//! Dense complex linear algebra shared by the rest of the crate.
//!
//! Everything here works on `nalgebra` dense matrices of [`C64`]. Problem
//! sizes are at most a few dozen rows, so no sparse structure is used.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Absolute tolerance used when validating Hermitian structure.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// A square complex matrix that is conjugate-symmetric.
///
/// Construction through [`HermitianMatrix::new`] validates the structure;
/// [`HermitianMatrix::from_herm_part`] projects an arbitrary square matrix
/// onto its Hermitian part `(m + m^H) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        Self::with_tolerance(m, HERMITIAN_TOL)
    }

    pub fn with_tolerance(m: CMatrix, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        let dev = hermitian_deviation(&m);
        if dev > tol {
            return Err(Error::invalid(format!(
                "matrix is not Hermitian (max deviation {dev:.3e} > {tol:.1e})"
            )));
        }
        Ok(Self(herm_part(&m)))
    }

    pub fn from_herm_part(m: &CMatrix) -> Self {
        assert!(m.is_square(), "from_herm_part needs a square matrix");
        Self(herm_part(m))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self(CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                c64(diag[i], 0.0)
            } else {
                C64::default()
            }
        }))
    }

    /// `v v^H`.
    pub fn outer(v: &CVector) -> Self {
        Self::from_herm_part(&(v * v.adjoint()))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn frobenius(&self) -> f64 {
        frobenius(&self.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eig(self).0.last().copied().unwrap_or(0.0)
    }

    /// Clips negative eigenvalues to zero.
    pub fn psd_projection(&self) -> Self {
        let (vals, vecs) = hermitian_eig(self);
        let clipped: Vec<f64> = vals.iter().map(|&v| v.max(0.0)).collect();
        Self::from_herm_part(&reconstruct(&clipped, &vecs))
    }
}

impl std::ops::Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 + &rhs.0)
    }
}

impl std::ops::Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, rhs: f64) -> HermitianMatrix {
        HermitianMatrix(&self.0 * c64(rhs, 0.0))
    }
}

pub fn herm_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c64(0.5, 0.0)
}

pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigen-decomposition of a Hermitian matrix.
///
/// Eigenvalues come back sorted in descending order, with the eigenvectors
/// as the matching columns of the returned matrix.
pub fn hermitian_eig(m: &HermitianMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.dim();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(herm_part(m.as_matrix()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Validating front end for [`hermitian_eig`] on a raw matrix.
pub fn hermitian_eig_checked(m: &CMatrix, tol: f64) -> Result<(Vec<f64>, CMatrix)> {
    let h = HermitianMatrix::with_tolerance(m.clone(), tol)?;
    Ok(hermitian_eig(&h))
}

/// `V diag(values) V^H`.
pub fn reconstruct(values: &[f64], vectors: &CMatrix) -> CMatrix {
    let mut scaled = vectors.clone();
    for (j, &v) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(v);
    }
    &scaled * vectors.adjoint()
}

/// `Re Tr(a b)` for Hermitian `a`, `b`.
pub fn trace_inner(a: &HermitianMatrix, b: &HermitianMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "trace_inner dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(re_trace_product(a.as_matrix(), b.as_matrix()))
}

/// `Re Tr(a b)` for same-shaped square matrices without validation.
///
/// For Hermitian operands this is `Re sum_ij a_ij conj(b_ij)`.
#[inline]
pub fn re_trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = a[(i, j)];
            let y = b[(j, i)];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

/// `v^H m v` (real part).
pub fn quad_form(m: &CMatrix, v: &CVector) -> f64 {
    (v.adjoint() * m * v)[(0, 0)].re
}

/// `diag(v)`.
pub fn diag_matrix(v: &CVector) -> CMatrix {
    CMatrix::from_diagonal(v)
}

/// Real block embedding `[[Re m, -Im m], [Im m, Re m]]` stored as a complex matrix with zero
/// imaginary parts.
pub fn real_embedding(m: &CMatrix) -> CMatrix {
    let (r, c) = m.shape();
    CMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = m[(i % r, j % c)];
        let v = match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        };
        c64(v, 0.0)
    })
}

/// Inverse of [`real_embedding`] for a real-symmetric 2n x 2n matrix, averaging the two copies.
pub fn from_real_embedding(m: &CMatrix) -> CMatrix {
    let n = m.nrows() / 2;
    CMatrix::from_fn(n, n, |i, j| {
        let re = 0.5 * (m[(i, j)].re + m[(i + n, j + n)].re);
        let im = 0.5 * (m[(i + n, j)].re - m[(i, j + n)].re);
        c64(re, im)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_hermitian(n: usize, seed: u64) -> HermitianMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = CMatrix::from_fn(n, n, |_, _| c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        HermitianMatrix::from_herm_part(&m)
    }

    #[test]
    fn eig_identity() {
        let (vals, vecs) = hermitian_eig(&HermitianMatrix::identity(2));
        assert_eq!(vals.len(), 2);
        assert_relative_eq!(vals[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 1.0, epsilon = 1e-12);
        let gram = vecs.adjoint() * &vecs;
        assert!(frobenius(&(gram - CMatrix::identity(2, 2))) < 1e-10);
    }

    #[test]
    fn eig_diagonal() {
        let (vals, vecs) = hermitian_eig(&HermitianMatrix::from_real_diagonal(&[1.0, 3.0]));
        assert_relative_eq!(vals[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 1.0, epsilon = 1e-12);
        // first eigenvector is e_2 up to phase
        assert_relative_eq!(vecs[(1, 0)].norm(), 1.0, epsilon = 1e-12);
        assert!(vecs[(0, 0)].norm() < 1e-12);
    }

    #[test]
    fn eig_two_by_two_complex() {
        // det([[2-l, i], [-i, 2-l]]) = (2-l)^2 - 1 -> l = 3, 1
        let m = CMatrix::from_row_slice(2, 2, &[c64(2.0, 0.0), c64(0.0, 1.0), c64(0.0, -1.0), c64(2.0, 0.0)]);
        let disc: f64 = 1.0; // |i|^2
        let expected = [2.0 + disc.sqrt(), 2.0 - disc.sqrt()];
        let (vals, _) = hermitian_eig_checked(&m, HERMITIAN_TOL).unwrap();
        assert_relative_eq!(vals[0], expected[0], epsilon = 1e-12);
        assert_relative_eq!(vals[1], expected[1], epsilon = 1e-12);
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0), c64(1.0, 0.0)]);
        assert!(matches!(hermitian_eig_checked(&m, 1e-12), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn eig_reconstructs_random() {
        for seed in 0..20 {
            let h = random_hermitian(7, seed);
            let (vals, vecs) = hermitian_eig(&h);
            assert!(vals.windows(2).all(|w| w[0] >= w[1]));
            let rec = reconstruct(&vals, &vecs);
            assert!(frobenius(&(rec - h.as_matrix())) <= 1e-8 * (1.0 + h.frobenius()));
            let gram = vecs.adjoint() * &vecs;
            assert!(frobenius(&(gram - CMatrix::identity(7, 7))) < 1e-8);
        }
    }

    #[test]
    fn trace_inner_basic() {
        let i2 = HermitianMatrix::identity(2);
        assert_relative_eq!(trace_inner(&i2, &i2).unwrap(), 2.0);
        let a = HermitianMatrix::from_real_diagonal(&[1.0, 2.0]);
        let b = HermitianMatrix::from_real_diagonal(&[3.0, 4.0]);
        assert_relative_eq!(trace_inner(&a, &b).unwrap(), 11.0);
        assert!(trace_inner(&a, &HermitianMatrix::identity(3)).is_err());
    }

    #[test]
    fn trace_inner_matches_double_sum() {
        for seed in 0..10 {
            let a = random_hermitian(3, seed);
            let b = random_hermitian(3, seed + 100);
            let mut oracle = C64::default();
            for i in 0..3 {
                for j in 0..3 {
                    oracle += a.as_matrix()[(i, j)] * b.as_matrix()[(j, i)];
                }
            }
            let t = trace_inner(&a, &b).unwrap();
            assert!((t - oracle.re).abs() < 1e-12);
            assert!((t - trace_inner(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn psd_pair_has_nonnegative_trace() {
        for seed in 0..10 {
            let a = random_hermitian(4, seed).psd_projection();
            let b = random_hermitian(4, seed + 7).psd_projection();
            assert!(trace_inner(&a, &b).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn real_embedding_roundtrip_preserves_inner_product() {
        let a = random_hermitian(3, 1);
        let b = random_hermitian(3, 2);
        let ea = real_embedding(a.as_matrix());
        let eb = real_embedding(b.as_matrix());
        assert_relative_eq!(0.5 * re_trace_product(&ea, &eb), trace_inner(&a, &b).unwrap(), epsilon = 1e-12);
        let back = from_real_embedding(&eb);
        assert!(frobenius(&(back - b.as_matrix())) < 1e-14);
    }
}
