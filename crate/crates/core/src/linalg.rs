//! Fixed-size complex linear algebra for two-qubit operators.
//!
//! Everything here works on 4×4 matrices over the product basis
//! |HH⟩, |HV⟩, |VH⟩, |VV⟩. The Hermitian eigensolver is a cyclic complex
//! Jacobi iteration; at this size it converges in a handful of sweeps and
//! keeps full double precision on both eigenvalues and eigenvectors.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64 as C64;
use thiserror::Error;

pub const DIM: usize = 4;

/// Maximum tolerated ‖m − m†‖ (max-norm) accepted by [`hermitian_eigen`].
pub const EIGEN_HERMITIAN_TOL: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (max |m - m^dagger| = {0:e})")]
    NotHermitian(f64),
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// A complex column vector of length 4.
pub type Vec4 = [C64; DIM];

/// Dense 4×4 complex matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexMat4(pub [[C64; DIM]; DIM]);

impl Default for ComplexMat4 {
    fn default() -> Self {
        Self::zeros()
    }
}

impl ComplexMat4 {
    pub const fn zeros() -> Self {
        Self([[ZERO; DIM]; DIM])
    }

    pub fn identity() -> Self {
        Self::from_fn(|i, j| if i == j { ONE } else { ZERO })
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros();
        for i in 0..DIM {
            for j in 0..DIM {
                m.0[i][j] = f(i, j);
            }
        }
        m
    }

    pub fn from_real(re: [[f64; DIM]; DIM]) -> Self {
        Self::from_fn(|i, j| C64::new(re[i][j], 0.0))
    }

    pub fn diag(d: [f64; DIM]) -> Self {
        Self::from_fn(|i, j| if i == j { C64::new(d[i], 0.0) } else { ZERO })
    }

    /// |a⟩⟨b|
    pub fn outer(a: &Vec4, b: &Vec4) -> Self {
        Self::from_fn(|i, j| a[i] * b[j].conj())
    }

    /// Kronecker product of two 2×2 matrices.
    pub fn kron2(a: &[[C64; 2]; 2], b: &[[C64; 2]; 2]) -> Self {
        Self::from_fn(|i, j| a[i / 2][j / 2] * b[i % 2][j % 2])
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(|i, j| self.0[j][i].conj())
    }

    /// Element-wise complex conjugate (no transpose).
    pub fn conj(&self) -> Self {
        Self::from_fn(|i, j| self.0[i][j].conj())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(|i, j| self.0[i][j] * s)
    }

    pub fn trace(&self) -> C64 {
        (0..DIM).map(|i| self.0[i][i]).sum()
    }

    pub fn mul_vec(&self, v: &Vec4) -> Vec4 {
        let mut out = [ZERO; DIM];
        for (i, row) in self.0.iter().enumerate() {
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (*self - *other).max_abs()
    }

    /// ‖m − m†‖ in max-norm.
    pub fn hermiticity_defect(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    /// (m + m†)/2
    pub fn hermitian_part(&self) -> Self {
        (*self + self.adjoint()).scale(0.5)
    }

    pub fn is_finite(&self) -> bool {
        self.0
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Σ λᵢ vᵢvᵢ† for an eigen-pair list.
    pub fn from_spectrum(values: &[f64; DIM], vectors: &[Vec4; DIM]) -> Self {
        let mut m = Self::zeros();
        for (lambda, v) in values.iter().zip(vectors) {
            m = m + Self::outer(v, v).scale(*lambda);
        }
        m
    }
}

impl Index<(usize, usize)> for ComplexMat4 {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMat4 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.0[i][j]
    }
}

impl Add for ComplexMat4 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] + rhs.0[i][j])
    }
}

impl Sub for ComplexMat4 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] - rhs.0[i][j])
    }
}

impl Mul for ComplexMat4 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| (0..DIM).map(|k| self.0[i][k] * rhs.0[k][j]).sum())
    }
}

impl Mul<f64> for ComplexMat4 {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

pub fn inner(a: &Vec4, b: &Vec4) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &Vec4) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Spectral decomposition of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct Eigen4 {
    /// Eigenvalues, sorted descending.
    pub values: [f64; DIM],
    /// Orthonormal eigenvectors; `vectors[i]` belongs to `values[i]`.
    pub vectors: [Vec4; DIM],
}

impl Eigen4 {
    /// Rebuild the matrix with `f` applied to each eigenvalue.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> ComplexMat4 {
        let values = self.values.map(f);
        ComplexMat4::from_spectrum(&values, &self.vectors)
    }
}

/// Eigen-decomposition of a Hermitian 4×4 matrix.
///
/// The input is symmetrized before iterating, so any anti-Hermitian part
/// below [`EIGEN_HERMITIAN_TOL`] is discarded.
pub fn hermitian_eigen(m: &ComplexMat4) -> Result<Eigen4, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let defect = m.hermiticity_defect();
    if defect > EIGEN_HERMITIAN_TOL {
        return Err(LinalgError::NotHermitian(defect));
    }
    let mut a = m.hermitian_part();
    let mut v = ComplexMat4::identity();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);

    for _sweep in 0..64 {
        let off: f64 = (0..DIM)
            .flat_map(|i| (0..DIM).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.0[i][j].norm_sqr())
            .sum();
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..DIM - 1 {
            for q in p + 1..DIM {
                let apq = a.0[p][q];
                let r = apq.norm();
                if r <= 1e-300 {
                    continue;
                }
                // Phase the (p, q) element to a real positive value, then do a
                // real symmetric rotation on the 2×2 block.
                let phase = apq / r;
                let app = a.0[p][p].re;
                let aqq = a.0[q][q].re;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // G = D·R with D = diag(.., 1 at p, conj(phase) at q, ..)
                // and R the real rotation [[c, s], [-s, c]] on (p, q).
                let mut g = ComplexMat4::identity();
                g.0[p][p] = C64::new(c, 0.0);
                g.0[p][q] = C64::new(s, 0.0);
                g.0[q][p] = phase.conj() * (-s);
                g.0[q][q] = phase.conj() * c;
                a = g.adjoint() * a * g;
                a.0[p][q] = ZERO;
                a.0[q][p] = ZERO;
                v = v * g;
            }
        }
    }

    let mut order: [usize; DIM] = [0, 1, 2, 3];
    order.sort_by(|&i, &j| a.0[j][j].re.total_cmp(&a.0[i][i].re));
    let values = order.map(|k| a.0[k][k].re);
    let vectors = order.map(|k| [v.0[0][k], v.0[1][k], v.0[2][k], v.0[3][k]]);
    Ok(Eigen4 { values, vectors })
}

/// Principal square root of a positive semidefinite Hermitian matrix.
/// Small negative eigenvalues from rounding are clamped to zero.
pub fn psd_sqrt(m: &ComplexMat4) -> Result<ComplexMat4, LinalgError> {
    Ok(hermitian_eigen(m)?.map_spectrum(|x| x.max(0.0).sqrt()))
}
