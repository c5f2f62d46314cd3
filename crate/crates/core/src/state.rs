//! Two-qubit polarization states: analyzer bases, kets, density matrices,
//! and the handful of operators the analysis needs.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, hermitian_eigen, ComplexMat4, LinalgError, Vec4, DIM};

/// Hermiticity tolerance (max-norm) for a valid density matrix.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Allowed deviation of the trace from one.
pub const TRACE_TOL: f64 = 1e-9;
/// Eigenvalues in `[-PSD_TOL, 0)` are clamped; anything lower is rejected.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is not Hermitian (defect {0:e})")]
    NotHermitian(f64),
    #[error("trace is {0}, expected 1")]
    BadTrace(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),
    #[error("ket is not normalized (norm {0})")]
    NotNormalized(f64),
    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("unknown polarization label {0:?}")]
    UnknownBasis(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Analyzer polarization for one photon.
///
/// Circular states use R = (H + iV)/√2 and L = (H − iV)/√2, so R is the
/// +1 eigenvector of σy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolarizationBasis {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl PolarizationBasis {
    /// Canonical ordering used for table and histogram layouts.
    pub const ALL: [PolarizationBasis; 6] = [Self::H, Self::V, Self::D, Self::A, Self::R, Self::L];

    pub fn ket(self) -> [C64; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Self::H => [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            Self::V => [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            Self::D => [C64::new(s, 0.0), C64::new(s, 0.0)],
            Self::A => [C64::new(s, 0.0), C64::new(-s, 0.0)],
            Self::R => [C64::new(s, 0.0), C64::new(0.0, s)],
            Self::L => [C64::new(s, 0.0), C64::new(0.0, -s)],
        }
    }

    pub fn orthogonal(self) -> Self {
        match self {
            Self::H => Self::V,
            Self::V => Self::H,
            Self::D => Self::A,
            Self::A => Self::D,
            Self::R => Self::L,
            Self::L => Self::R,
        }
    }

    /// Index into [`Self::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::H => "H",
            Self::V => "V",
            Self::D => "D",
            Self::A => "A",
            Self::R => "R",
            Self::L => "L",
        }
    }

    /// The Pauli axis measured by this analyzer and the eigenvalue sign.
    pub fn pauli_axis(self) -> (PauliAxis, f64) {
        match self {
            Self::H => (PauliAxis::Z, 1.0),
            Self::V => (PauliAxis::Z, -1.0),
            Self::D => (PauliAxis::X, 1.0),
            Self::A => (PauliAxis::X, -1.0),
            Self::R => (PauliAxis::Y, 1.0),
            Self::L => (PauliAxis::Y, -1.0),
        }
    }
}

impl fmt::Display for PolarizationBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PolarizationBasis {
    type Err = StateError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "H" => Ok(Self::H),
            "V" => Ok(Self::V),
            "D" => Ok(Self::D),
            "A" => Ok(Self::A),
            "R" => Ok(Self::R),
            "L" => Ok(Self::L),
            other => Err(StateError::UnknownBasis(other.to_string())),
        }
    }
}

/// One of the three single-qubit Pauli axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub const ALL: [PauliAxis; 3] = [Self::X, Self::Y, Self::Z];

    pub fn matrix(self) -> [[C64; 2]; 2] {
        let o = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            Self::X => [[o, one], [one, o]],
            Self::Y => [[o, -i], [i, o]],
            Self::Z => [[one, o], [o, -one]],
        }
    }

    /// Analyzer pair (+1 eigenstate, −1 eigenstate).
    pub fn analyzers(self) -> (PolarizationBasis, PolarizationBasis) {
        match self {
            Self::X => (PolarizationBasis::D, PolarizationBasis::A),
            Self::Y => (PolarizationBasis::R, PolarizationBasis::L),
            Self::Z => (PolarizationBasis::H, PolarizationBasis::V),
        }
    }
}

pub fn identity2() -> [[C64; 2]; 2] {
    let o = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    [[one, o], [o, one]]
}

/// σa ⊗ σb
pub fn pauli_product(a: PauliAxis, b: PauliAxis) -> ComplexMat4 {
    ComplexMat4::kron2(&a.matrix(), &b.matrix())
}

/// σy ⊗ σy, the two-qubit spin flip.
pub fn spin_flip() -> ComplexMat4 {
    pauli_product(PauliAxis::Y, PauliAxis::Y)
}

/// Normalized two-photon polarization ket over |HH⟩,|HV⟩,|VH⟩,|VV⟩.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoQubitKet(Vec4);

impl TwoQubitKet {
    pub fn new(amp: Vec4) -> Result<Self, StateError> {
        let n = linalg::norm(&amp);
        if !n.is_finite() || (n - 1.0).abs() > 1e-12 {
            return Err(StateError::NotNormalized(n));
        }
        Ok(Self(amp))
    }

    /// Normalizes `amp` first. Fails only for a zero or non-finite vector.
    pub fn normalized(amp: Vec4) -> Result<Self, StateError> {
        let n = linalg::norm(&amp);
        if !n.is_finite() || n == 0.0 {
            return Err(StateError::NotNormalized(n));
        }
        Ok(Self(amp.map(|z| z / n)))
    }

    /// (|HH⟩ + |VV⟩)/√2
    pub fn phi_plus() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let z = C64::new(0.0, 0.0);
        Self([C64::new(s, 0.0), z, z, C64::new(s, 0.0)])
    }

    pub fn product(b1: PolarizationBasis, b2: PolarizationBasis) -> Self {
        let (x, y) = (b1.ket(), b2.ket());
        Self([x[0] * y[0], x[0] * y[1], x[1] * y[0], x[1] * y[1]])
    }

    pub fn amplitudes(&self) -> &Vec4 {
        &self.0
    }

    pub fn projector(&self) -> ComplexMat4 {
        ComplexMat4::outer(&self.0, &self.0)
    }
}

/// |b1⟩⟨b1| ⊗ |b2⟩⟨b2|
pub fn projector(b1: PolarizationBasis, b2: PolarizationBasis) -> ComplexMat4 {
    TwoQubitKet::product(b1, b2).projector()
}

/// A valid two-qubit density matrix: Hermitian, unit trace, PSD.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDensity", into = "RawDensity")]
pub struct DensityMatrix {
    mat: ComplexMat4,
}

impl DensityMatrix {
    /// Validates `mat`. Eigenvalues in `[-PSD_TOL, 0)` are clamped to zero
    /// and the trace renormalized; larger negativity is an error.
    pub fn new(mat: ComplexMat4) -> Result<Self, StateError> {
        if !mat.is_finite() {
            return Err(StateError::NonFinite);
        }
        let defect = mat.hermiticity_defect();
        if defect > HERMITIAN_TOL {
            return Err(StateError::NotHermitian(defect));
        }
        let tr = mat.trace().re;
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(StateError::BadTrace(tr));
        }
        let eig = hermitian_eigen(&mat)?;
        let min = eig.values[DIM - 1];
        if min < -PSD_TOL {
            return Err(StateError::NotPositive(min));
        }
        if min < 0.0 {
            let clamped = eig.map_spectrum(|x| x.max(0.0));
            let tr = clamped.trace().re;
            return Ok(Self {
                mat: clamped.hermitian_part().scale(1.0 / tr),
            });
        }
        Ok(Self { mat })
    }

    /// Projects an arbitrary Hermitian matrix onto the physical set by
    /// clamping negative eigenvalues and renormalizing the trace. Falls back
    /// to the maximally mixed state if nothing positive remains.
    pub fn clamp_from(mat: &ComplexMat4) -> Result<Self, StateError> {
        if !mat.is_finite() {
            return Err(StateError::NonFinite);
        }
        let eig = hermitian_eigen(&mat.hermitian_part())?;
        let clamped = eig.map_spectrum(|x| x.max(0.0));
        let tr = clamped.trace().re;
        if tr <= 1e-300 {
            return Ok(Self::maximally_mixed());
        }
        Self::new(clamped.hermitian_part().scale(1.0 / tr))
    }

    pub fn from_ket(ket: &TwoQubitKet) -> Self {
        Self {
            mat: ket.projector().hermitian_part(),
        }
    }

    /// I/4
    pub fn maximally_mixed() -> Self {
        Self {
            mat: ComplexMat4::identity().scale(0.25),
        }
    }

    pub fn matrix(&self) -> &ComplexMat4 {
        &self.mat
    }

    pub fn element(&self, i: usize, j: usize) -> C64 {
        self.mat[(i, j)]
    }

    pub fn eigenvalues(&self) -> [f64; DIM] {
        // The invariants guarantee a Hermitian input.
        hermitian_eigen(&self.mat)
            .map(|e| e.values)
            .unwrap_or([f64::NAN; DIM])
    }

    /// Tr(ρ²)
    pub fn purity(&self) -> f64 {
        self.mat.0.iter().flatten().map(|z| z.norm_sqr()).sum()
    }

    /// U ρ U† for a unitary `u`.
    pub fn transform(&self, u: &ComplexMat4) -> Result<Self, StateError> {
        Self::new((*u * self.mat * u.adjoint()).hermitian_part())
    }
}

/// Tr(ρ·obs)
pub fn expectation(rho: &DensityMatrix, obs: &ComplexMat4) -> C64 {
    (*rho.matrix() * *obs).trace()
}

/// p·|Φ⁺⟩⟨Φ⁺| + (1 − p)/4·I
pub fn werner_state(p: f64) -> Result<DensityMatrix, StateError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(StateError::OutOfRange {
            value: p,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let phi = TwoQubitKet::phi_plus().projector();
    let mix = ComplexMat4::identity().scale((1.0 - p) / 4.0);
    DensityMatrix::new(phi.scale(p) + mix)
}

/// JSON form: two row-major 4×4 real arrays.
#[derive(Serialize, Deserialize)]
struct RawDensity {
    re: [[f64; DIM]; DIM],
    im: [[f64; DIM]; DIM],
}

impl From<DensityMatrix> for RawDensity {
    fn from(rho: DensityMatrix) -> Self {
        let m = rho.mat;
        RawDensity {
            re: std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)].re)),
            im: std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)].im)),
        }
    }
}

impl TryFrom<RawDensity> for DensityMatrix {
    type Error = StateError;
    fn try_from(raw: RawDensity) -> Result<Self, Self::Error> {
        DensityMatrix::new(ComplexMat4::from_fn(|i, j| {
            C64::new(raw.re[i][j], raw.im[i][j])
        }))
    }
}
