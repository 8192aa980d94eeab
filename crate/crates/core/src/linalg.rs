//! Small complex linear-algebra helpers shared by the scene, metrics and
//! precoder code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, TwinError};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const LN_2: f64 = std::f64::consts::LN_2;

pub fn frob_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn trace_re(m: &CMat) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

/// Natural-log determinant of a Hermitian positive definite matrix.
pub fn logdet_hpd(m: &CMat) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| TwinError::Numerical("matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    Ok((0..m.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

/// Inverse of a Hermitian positive definite matrix via Cholesky.
pub fn inv_hpd(m: &CMat) -> Result<CMat> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| TwinError::Numerical("matrix is not positive definite".into()))?;
    Ok(chol.inverse())
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = hermitian_part(m).symmetric_eigen();
    let n = m.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    eigh(m).0[0]
}

/// Clips negative eigenvalues to zero. Returns the clipped matrix and the
/// smallest eigenvalue before clipping.
pub fn clip_psd(m: &CMat) -> (CMat, f64) {
    let (vals, vecs) = eigh(m);
    let min = vals.first().copied().unwrap_or(0.0);
    if min >= 0.0 {
        return (hermitian_part(m), min);
    }
    let d = CMat::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| C64::new(v.max(0.0), 0.0)),
    ));
    (&vecs * d * vecs.adjoint(), min)
}

/// Orthonormal basis of the real vector space of n×n Hermitian matrices
/// under the inner product `Re tr(A B)`.
///
/// Coordinates are ordered: the n diagonal entries, then for every i<j the
/// symmetric and the antisymmetric (imaginary) off-diagonal generator.
#[derive(Debug, Clone)]
pub struct HermitianBasis {
    n: usize,
}

impl HermitianBasis {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Coordinates of the Hermitian part of `m`, i.e. `Re tr(m E_k)` for each
    /// basis element `E_k`.
    pub fn coords(&self, m: &CMat, out: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(out.len(), n * n);
        for i in 0..n {
            out[i] = m[(i, i)].re;
        }
        let s = std::f64::consts::SQRT_2;
        let mut k = n;
        for i in 0..n {
            for j in (i + 1)..n {
                // Re tr(m E) for E = (e_ij + e_ji)/√2 and E = i(e_ij − e_ji)/√2
                let a = m[(i, j)];
                let b = m[(j, i)];
                out[k] = (a.re + b.re) / s;
                out[k + 1] = (a.im - b.im) / s;
                k += 2;
            }
        }
    }

    pub fn matrix(&self, coords: &[f64]) -> CMat {
        let n = self.n;
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(coords[i], 0.0);
        }
        let s = std::f64::consts::SQRT_2;
        let mut k = n;
        for i in 0..n {
            for j in (i + 1)..n {
                let z = C64::new(coords[k] / s, coords[k + 1] / s);
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
                k += 2;
            }
        }
        m
    }

    /// Coordinates of the identity matrix scaled by `c`.
    pub fn identity_coords(&self, c: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for x in v.iter_mut().take(self.n) {
            *x = c;
        }
        v
    }

    /// Basis element k as a matrix.
    pub fn element(&self, k: usize) -> CMat {
        let mut c = vec![0.0; self.dim()];
        c[k] = 1.0;
        self.matrix(&c)
    }
}
