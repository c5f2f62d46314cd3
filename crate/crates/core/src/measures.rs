//! Mixedness, entanglement, fidelity and nonlocality measures, and the
//! Werner curve on the linear-entropy/tangle plane.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{GateScheme, GateWindow};
use crate::linalg::{hermitian_eigen, psd_sqrt, ComplexMat4, LinalgError};
use crate::state::{expectation, pauli_product, spin_flip, DensityMatrix, PauliAxis, TwoQubitKet};

/// Eigenvalues of the spin-flipped product down to this value are treated
/// as rounding noise and clamped to zero.
pub const SPIN_FLIP_NEG_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("spin-flipped operator has eigenvalue {0:e} below tolerance")]
    NumericalFailure(f64),
    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("state-point CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("state-point CSV: {0}")]
    Format(String),
}

fn check_range(value: f64, lo: f64, hi: f64) -> Result<f64, MeasureError> {
    if value.is_nan() || value < lo || value > hi {
        return Err(MeasureError::OutOfRange { value, lo, hi });
    }
    Ok(value)
}

/// 4/3·(1 − Tr ρ²)
pub fn linear_entropy(rho: &DensityMatrix) -> f64 {
    (4.0 / 3.0 * (1.0 - rho.purity())).clamp(0.0, 1.0)
}

/// Square roots of the eigenvalues of ρ(σy⊗σy)ρ*(σy⊗σy), descending.
///
/// Computed on the Hermitian similar matrix √ρ·Ỹρ*Ỹ·√ρ, which has the
/// same spectrum.
pub fn spin_flip_roots(rho: &DensityMatrix) -> Result<[f64; 4], MeasureError> {
    let sqrt_rho = psd_sqrt(rho.matrix())?;
    let yy = spin_flip();
    let flipped = yy * rho.matrix().conj() * yy;
    let r = (sqrt_rho * flipped * sqrt_rho).hermitian_part();
    let eig = hermitian_eigen(&r)?;
    let mut roots = [0.0; 4];
    for (root, &lambda) in roots.iter_mut().zip(&eig.values) {
        if lambda < -SPIN_FLIP_NEG_TOL {
            return Err(MeasureError::NumericalFailure(lambda));
        }
        *root = lambda.max(0.0).sqrt();
    }
    Ok(roots)
}

/// Concurrence max(λ₁ − λ₂ − λ₃ − λ₄, 0).
pub fn concurrence(rho: &DensityMatrix) -> Result<f64, MeasureError> {
    let l = spin_flip_roots(rho)?;
    Ok((l[0] - l[1] - l[2] - l[3]).max(0.0))
}

/// Squared concurrence.
pub fn tangle(rho: &DensityMatrix) -> Result<f64, MeasureError> {
    let c = concurrence(rho)?;
    Ok((c * c).min(1.0))
}

/// ⟨Φ⁺|ρ|Φ⁺⟩ = (ρ₁₁ + ρ₄₄)/2 + Re ρ₁₄
pub fn fidelity_phi_plus(rho: &DensityMatrix) -> f64 {
    let (a, d, c) = (
        rho.element(0, 0).re,
        rho.element(3, 3).re,
        rho.element(0, 3).re,
    );
    ((a + d) / 2.0 + c).clamp(0.0, 1.0)
}

/// Uhlmann fidelity (Tr √(√ρ σ √ρ))² between two states.
pub fn state_fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64, MeasureError> {
    let s = psd_sqrt(rho.matrix())?;
    let inner = (s * *sigma.matrix() * s).hermitian_part();
    let root_trace: f64 = hermitian_eigen(&inner)?
        .values
        .iter()
        .map(|x| x.max(0.0).sqrt())
        .sum();
    Ok((root_trace * root_trace).min(1.0))
}

/// Analyzer basis pair in which a two-photon correlation is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationBasis {
    Rectilinear,
    Diagonal,
    Circular,
}

impl CorrelationBasis {
    pub const ALL: [CorrelationBasis; 3] = [Self::Rectilinear, Self::Diagonal, Self::Circular];

    pub fn axis(self) -> PauliAxis {
        match self {
            Self::Rectilinear => PauliAxis::Z,
            Self::Diagonal => PauliAxis::X,
            Self::Circular => PauliAxis::Y,
        }
    }

    /// +1 for co-polarized correlation, −1 for the circular basis where
    /// cross-handed coincidences (R, L) count as correlated.
    pub fn sign(self) -> f64 {
        match self {
            Self::Circular => -1.0,
            _ => 1.0,
        }
    }
}

/// C_H/V = ⟨σz⊗σz⟩, C_D/A = ⟨σx⊗σx⟩, C_R/L = −⟨σy⊗σy⟩.
pub fn correlation(rho: &DensityMatrix, basis: CorrelationBasis) -> f64 {
    let axis = basis.axis();
    let e = expectation(rho, &pauli_product(axis, axis)).re;
    (basis.sign() * e).clamp(-1.0, 1.0)
}

/// f = (1 + C_H/V + C_D/A + C_R/L)/4
pub fn fidelity_from_correlations(c_hv: f64, c_da: f64, c_rl: f64) -> Result<f64, MeasureError> {
    for c in [c_hv, c_da, c_rl] {
        check_range(c, -1.0, 1.0)?;
    }
    Ok((1.0 + c_hv + c_da + c_rl) / 4.0)
}

/// Pauli correlation matrix T_ij = Tr(ρ σᵢ⊗σⱼ) with i, j over (x, y, z).
pub fn correlation_matrix(rho: &DensityMatrix) -> [[f64; 3]; 3] {
    let mut t = [[0.0; 3]; 3];
    for (i, a) in PauliAxis::ALL.iter().enumerate() {
        for (j, b) in PauliAxis::ALL.iter().enumerate() {
            t[i][j] = expectation(rho, &pauli_product(*a, *b)).re;
        }
    }
    t
}

/// Horodecki parameter M(ρ): sum of the two largest eigenvalues of TᵀT.
/// The maximal CHSH value is 2√M, so M > 1 signals a violation.
pub fn chsh_parameter(rho: &DensityMatrix) -> f64 {
    let t = correlation_matrix(rho);
    // TᵀT is 3×3 real symmetric PSD; pad to 4×4 with a zero row/column so
    // the extra eigenvalue is 0 and never among the two largest.
    let mut ttt = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            ttt[i][j] = (0..3).map(|k| t[k][i] * t[k][j]).sum();
        }
    }
    let ev = hermitian_eigen(&ComplexMat4::from_real(ttt))
        .map(|e| e.values)
        .unwrap_or([f64::NAN; 4]);
    (ev[0] + ev[1]).clamp(0.0, 2.0)
}

/// Maximal CHSH value 2√M.
pub fn chsh_max(rho: &DensityMatrix) -> f64 {
    2.0 * chsh_parameter(rho).sqrt()
}

/// Tangle of the Werner state with linear entropy `s_lin`.
pub fn werner_curve(s_lin: f64) -> Result<f64, MeasureError> {
    check_range(s_lin, 0.0, 1.0)?;
    let p = (1.0 - s_lin).sqrt();
    let c = ((3.0 * p - 1.0) / 2.0).max(0.0);
    Ok(c * c)
}

/// Linear entropy of the entangled Werner state with tangle `tangle`.
pub fn werner_linear_entropy_for_tangle(tangle: f64) -> Result<f64, MeasureError> {
    check_range(tangle, 0.0, 1.0)?;
    let p = (2.0 * tangle.sqrt() + 1.0) / 3.0;
    Ok(1.0 - p * p)
}

/// Summary of one state on the S_L–T plane plus fidelity and CHSH data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatePoint {
    pub s_lin: f64,
    pub tangle: f64,
    pub fidelity: f64,
    pub m_chsh: f64,
    pub gate: Option<GateWindow>,
}

pub fn state_point(
    rho: &DensityMatrix,
    gate: Option<GateWindow>,
) -> Result<StatePoint, MeasureError> {
    Ok(StatePoint {
        s_lin: linear_entropy(rho),
        tangle: tangle(rho)?,
        fidelity: fidelity_phi_plus(rho),
        m_chsh: chsh_parameter(rho),
        gate,
    })
}

impl StatePoint {
    /// Signed vertical distance T − T_Werner(S_L).
    pub fn werner_deviation(&self) -> f64 {
        self.tangle - werner_curve(self.s_lin.clamp(0.0, 1.0)).unwrap_or(f64::NAN)
    }
}

pub const STATE_POINT_HEADER: [&str; 6] = [
    "gate_t0_ps",
    "gate_dt_ps",
    "s_lin",
    "tangle",
    "fidelity",
    "m_chsh",
];

/// Writes the header and one row per point. Gate-less points leave the
/// two gate columns empty.
pub fn write_state_points<W: io::Write>(out: W, points: &[StatePoint]) -> Result<(), MeasureError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STATE_POINT_HEADER)?;
    for p in points {
        let (t0, dt) = match p.gate {
            Some(g) => (fmt_num(g.t_g), fmt_num(g.dt_g)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            t0,
            dt,
            fmt_num(p.s_lin),
            fmt_num(p.tangle),
            fmt_num(p.fidelity),
            fmt_num(p.m_chsh),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

/// Reads rows written by [`write_state_points`]; `#` lines are skipped.
/// The gating scheme is not stored, so gates starting at 0 come back as
/// widening and the rest as shifting.
pub fn read_state_points<R: io::Read>(input: R) -> Result<Vec<StatePoint>, MeasureError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != STATE_POINT_HEADER {
        return Err(MeasureError::Format(format!(
            "unexpected header {:?}",
            headers
        )));
    }
    let parse = |s: &str, name: &str| -> Result<f64, MeasureError> {
        s.parse::<f64>()
            .map_err(|_| MeasureError::Format(format!("bad {name} value {s:?}")))
    };
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let gate = if rec[0].is_empty() && rec[1].is_empty() {
            None
        } else {
            let t_g = parse(&rec[0], "gate_t0_ps")?;
            let dt_g = parse(&rec[1], "gate_dt_ps")?;
            let scheme = if t_g > 0.0 {
                GateScheme::Shifting
            } else {
                GateScheme::Widening
            };
            Some(
                GateWindow::new(t_g, dt_g, scheme)
                    .map_err(|e| MeasureError::Format(e.to_string()))?,
            )
        };
        points.push(StatePoint {
            gate,
            s_lin: parse(&rec[2], "s_lin")?,
            tangle: parse(&rec[3], "tangle")?,
            fidelity: parse(&rec[4], "fidelity")?,
            m_chsh: parse(&rec[5], "m_chsh")?,
        });
    }
    Ok(points)
}

/// Fidelity with the Bell state recomputed from the three correlation
/// functions of `rho`; matches [`fidelity_phi_plus`] only for X-shaped states
/// with a real corner coherence.
pub fn correlation_fidelity(rho: &DensityMatrix) -> f64 {
    let c = CorrelationBasis::ALL.map(|b| correlation(rho, b));
    (1.0 + c[0] + c[1] + c[2]) / 4.0
}

/// |Φ⁺⟩⟨Φ⁺| convenience constructor.
pub fn phi_plus_state() -> DensityMatrix {
    DensityMatrix::from_ket(&TwoQubitKet::phi_plus())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::werner_state;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_entropy_examples() {
        assert_abs_diff_eq!(linear_entropy(&phi_plus_state()), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            linear_entropy(&DensityMatrix::maximally_mixed()),
            1.0,
            epsilon = 1e-14
        );
        // Tr ρ_W² = (3p² + 1)/4 ⇒ S_L = 1 − p²
        let w = werner_state(0.745).unwrap();
        assert_abs_diff_eq!(linear_entropy(&w), 1.0 - 0.745 * 0.745, epsilon = 1e-12);
        assert_abs_diff_eq!(linear_entropy(&w), 0.445, epsilon = 5e-4);
    }

    #[test]
    fn tangle_examples() {
        assert_abs_diff_eq!(tangle(&phi_plus_state()).unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(
            tangle(&DensityMatrix::maximally_mixed()).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let w = werner_state(0.745).unwrap();
        let closed = ((3.0 * 0.745 - 1.0) / 2.0_f64).powi(2);
        assert_abs_diff_eq!(tangle(&w).unwrap(), closed, epsilon = 1e-12);
        assert_abs_diff_eq!(closed, 0.3813, epsilon = 1e-4);
    }

    #[test]
    fn fidelity_examples() {
        assert_abs_diff_eq!(fidelity_phi_plus(&phi_plus_state()), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            fidelity_phi_plus(&DensityMatrix::maximally_mixed()),
            0.25,
            epsilon = 1e-15
        );
        let w = werner_state(0.745).unwrap();
        assert_abs_diff_eq!(
            fidelity_phi_plus(&w),
            (1.0 + 3.0 * 0.745) / 4.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(fidelity_phi_plus(&w), 0.8088, epsilon = 1e-4);
    }

    #[test]
    fn correlation_examples() {
        for b in CorrelationBasis::ALL {
            assert_abs_diff_eq!(correlation(&phi_plus_state(), b), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(
                correlation(&DensityMatrix::maximally_mixed(), b),
                0.0,
                epsilon = 1e-15
            );
        }
        let w = werner_state(0.745).unwrap();
        assert_abs_diff_eq!(
            correlation(&w, CorrelationBasis::Rectilinear),
            0.745,
            epsilon = 1e-14
        );
    }

    #[test]
    fn fidelity_from_correlation_examples() {
        assert_abs_diff_eq!(fidelity_from_correlations(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(fidelity_from_correlations(0.0, 0.0, 0.0).unwrap(), 0.25);
        let f = fidelity_from_correlations(0.745, 0.745, 0.745).unwrap();
        assert_abs_diff_eq!(
            f,
            fidelity_phi_plus(&werner_state(0.745).unwrap()),
            epsilon = 1e-12
        );
        assert!(matches!(
            fidelity_from_correlations(1.2, 0.0, 0.0),
            Err(MeasureError::OutOfRange { .. })
        ));
    }

    #[test]
    fn chsh_examples() {
        assert_abs_diff_eq!(chsh_parameter(&phi_plus_state()), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            chsh_max(&phi_plus_state()),
            2.0 * 2f64.sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            chsh_parameter(&DensityMatrix::maximally_mixed()),
            0.0,
            epsilon = 1e-15
        );
        let w = werner_state(std::f64::consts::FRAC_1_SQRT_2).unwrap();
        assert_abs_diff_eq!(chsh_parameter(&w), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn phi_plus_correlation_matrix_is_diag_one_minus_one_one() {
        let t = correlation_matrix(&phi_plus_state());
        let expect = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(t[i][j], expect[i][j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn werner_curve_examples() {
        assert_abs_diff_eq!(werner_curve(0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(werner_curve(8.0 / 9.0).unwrap(), 0.0, epsilon = 1e-15);
        let p = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(
            werner_curve(0.5).unwrap(),
            ((3.0 * p - 1.0) / 2.0).powi(2),
            epsilon = 1e-14
        );
        // The exact value is 0.31434; three printed decimals.
        assert_abs_diff_eq!(werner_curve(0.5).unwrap(), 0.314, epsilon = 5e-4);
        assert!(werner_curve(1.5).is_err());
        assert!(werner_curve(-0.1).is_err());
    }

    #[test]
    fn anchor_tangles_invert_on_werner_branch() {
        assert_abs_diff_eq!(
            werner_linear_entropy_for_tangle(0.382).unwrap(),
            0.445,
            epsilon = 1e-3
        );
        for t in [0.0, 0.2, 0.382, 0.664, 1.0] {
            let s = werner_linear_entropy_for_tangle(t).unwrap();
            assert_abs_diff_eq!(werner_curve(s).unwrap(), t, epsilon = 1e-12);
        }
    }

    #[test]
    fn state_point_examples() {
        let sp = state_point(&phi_plus_state(), None).unwrap();
        assert_abs_diff_eq!(sp.s_lin, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.tangle, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sp.fidelity, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.m_chsh, 2.0, epsilon = 1e-12);
        let sp = state_point(&DensityMatrix::maximally_mixed(), None).unwrap();
        assert_abs_diff_eq!(sp.s_lin, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.tangle, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.fidelity, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.m_chsh, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn state_point_csv_round_trip() {
        let g = GateWindow::new(384.0, 384.0, GateScheme::Shifting).unwrap();
        let points = vec![
            state_point(&werner_state(0.7).unwrap(), Some(g)).unwrap(),
            state_point(&werner_state(0.2).unwrap(), None).unwrap(),
        ];
        let mut buf = Vec::new();
        write_state_points(&mut buf, &points).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("gate_t0_ps,gate_dt_ps,s_lin,tangle,fidelity,m_chsh\n"));
        let commented = format!("# provenance line\n{text}");
        let back = read_state_points(commented.as_bytes()).unwrap();
        assert_eq!(back, points);
    }
}
