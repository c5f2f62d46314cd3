//! Analytic model of the time-gated biphoton state from a biexciton–exciton
//! cascade.
//!
//! A pair emitted after an exciton dwell time `t` carries the Bell state
//! (|HH⟩ + e^{iSt/ħ}|VV⟩)/√2. Averaging over the radiative decay inside a
//! coincidence gate, mixing in spin-scattered and background pairs, and
//! damping the |HH⟩⟨VV| coherence with the cross-dephasing rate gives an
//! X-shaped density matrix with populations (1 ± p)/4 and corner element
//! (p/2)·I_c/I₀, where
//!
//! ```text
//! I₀ = ∫ (1/τ_r) e^{−t(1/τ_r + 1/τ_ss)} dt
//! I_c = ∫ (1/τ_r) e^{−t(1/τ_r + 1/τ_ss + 1/τ_HV)} e^{iSt/ħ} dt
//! ```
//!
//! both over the gate `[t_g, t_g + Δt_g]`.

use std::fmt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::ComplexMat4;
use crate::state::{DensityMatrix, StateError, TwoQubitKet};

/// Reduced Planck constant in μeV·ps.
pub const HBAR_UEV_PS: f64 = 658.211_956_9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CascadeError {
    #[error("invalid cascade parameters: {0}")]
    InvalidParams(String),
    #[error("invalid gate: {0}")]
    InvalidGate(String),
    #[error("{name} = {value} is out of range")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("model state is not physical: {0}")]
    ModelNonPhysical(StateError),
}

/// Physical parameters of the emitter. Times are in ps, the splitting in
/// μeV. `tau_ss_ps` and `tau_hv_ps` may be `f64::INFINITY`, which switches
/// the corresponding process off exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct CascadeParams {
    pub fss_uev: f64,
    pub tau_r_ps: f64,
    pub tau_ss_ps: f64,
    pub tau_hv_ps: f64,
    pub d: f64,
}

impl CascadeParams {
    pub fn new(
        fss_uev: f64,
        tau_r_ps: f64,
        tau_ss_ps: f64,
        tau_hv_ps: f64,
        d: f64,
    ) -> Result<Self, CascadeError> {
        let p = Self {
            fss_uev,
            tau_r_ps,
            tau_ss_ps,
            tau_hv_ps,
            d,
        };
        p.validate()?;
        Ok(p)
    }

    /// S = 0.36 μeV, τ_r = 560 ps, τ_ss = 2.8 ns, τ_HV = 2.3 ns, d = 0.008.
    pub fn reference_dot() -> Self {
        Self {
            fss_uev: 0.36,
            tau_r_ps: 560.0,
            tau_ss_ps: 2800.0,
            tau_hv_ps: 2300.0,
            d: 0.008,
        }
    }

    /// Background-free emitter with no splitting, scattering or dephasing.
    pub fn ideal(tau_r_ps: f64) -> Self {
        Self {
            fss_uev: 0.0,
            tau_r_ps,
            tau_ss_ps: f64::INFINITY,
            tau_hv_ps: f64::INFINITY,
            d: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), CascadeError> {
        let bad = |msg: String| Err(CascadeError::InvalidParams(msg));
        if !(self.fss_uev.is_finite() && self.fss_uev >= 0.0) {
            return bad(format!("S must be finite and >= 0, got {}", self.fss_uev));
        }
        if !(self.tau_r_ps.is_finite() && self.tau_r_ps > 0.0) {
            return bad(format!(
                "tau_r must be finite and > 0, got {}",
                self.tau_r_ps
            ));
        }
        for (name, v) in [("tau_ss", self.tau_ss_ps), ("tau_hv", self.tau_hv_ps)] {
            if v.is_nan() || v <= 0.0 {
                return bad(format!("{name} must be > 0 or infinite, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.d) {
            return bad(format!("d must lie in [0, 1], got {}", self.d));
        }
        Ok(())
    }

    /// Γ₀ = 1/τ_r + 1/τ_ss
    pub fn population_rate(&self) -> f64 {
        1.0 / self.tau_r_ps + 1.0 / self.tau_ss_ps
    }

    /// Γ_c = 1/τ_r + 1/τ_ss + 1/τ_HV − iS/ħ
    pub fn coherence_rate(&self) -> C64 {
        C64::new(
            self.population_rate() + 1.0 / self.tau_hv_ps,
            -self.fss_uev / HBAR_UEV_PS,
        )
    }

    /// p′/p = (1 + τ_r/τ_ss)/(1 + τ_r/τ_ss + τ_r/τ_HV)
    pub fn dephasing_ratio(&self) -> f64 {
        let a = 1.0 + self.tau_r_ps / self.tau_ss_ps;
        a / (a + self.tau_r_ps / self.tau_hv_ps)
    }
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    #[serde(rename = "S_ueV")]
    s_uev: f64,
    tau_r_ps: f64,
    #[serde(default)]
    tau_ss_ps: Option<f64>,
    #[serde(default)]
    tau_hv_ps: Option<f64>,
    d: f64,
}

impl TryFrom<RawParams> for CascadeParams {
    type Error = CascadeError;
    fn try_from(r: RawParams) -> Result<Self, Self::Error> {
        CascadeParams::new(
            r.s_uev,
            r.tau_r_ps,
            r.tau_ss_ps.unwrap_or(f64::INFINITY),
            r.tau_hv_ps.unwrap_or(f64::INFINITY),
            r.d,
        )
    }
}

impl From<CascadeParams> for RawParams {
    fn from(p: CascadeParams) -> Self {
        let finite = |x: f64| x.is_finite().then_some(x);
        RawParams {
            s_uev: p.fss_uev,
            tau_r_ps: p.tau_r_ps,
            tau_ss_ps: finite(p.tau_ss_ps),
            tau_hv_ps: finite(p.tau_hv_ps),
            d: p.d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateScheme {
    WholePeak,
    Widening,
    Shifting,
}

impl fmt::Display for GateScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::WholePeak => "whole",
            Self::Widening => "widening",
            Self::Shifting => "shifting",
        })
    }
}

/// Coincidence gate `[t_g, t_g + dt_g]` on the XX–X delay axis, in ps.
/// `dt_g` may be infinite to integrate the whole decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateWindow {
    pub t_g: f64,
    pub dt_g: f64,
    pub scheme: GateScheme,
}

impl GateWindow {
    pub fn new(t_g: f64, dt_g: f64, scheme: GateScheme) -> Result<Self, CascadeError> {
        if !(t_g.is_finite() && t_g >= 0.0) {
            return Err(CascadeError::InvalidGate(format!(
                "start {t_g} must be finite and >= 0"
            )));
        }
        if dt_g.is_nan() || dt_g <= 0.0 {
            return Err(CascadeError::InvalidGate(format!(
                "width {dt_g} must be > 0"
            )));
        }
        Ok(Self { t_g, dt_g, scheme })
    }

    pub fn whole_peak(window_ps: f64) -> Result<Self, CascadeError> {
        Self::new(0.0, window_ps, GateScheme::WholePeak)
    }

    pub fn end(&self) -> f64 {
        self.t_g + self.dt_g
    }
}

/// Which population weight enters the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingWeight {
    /// p = k/(1 + τ_r/τ_ss), the same for every gate.
    #[default]
    Asymptotic,
    /// p = k·I₀/Sig, the unscattered fraction of pairs inside the gate.
    /// Equals the asymptotic value for the gate [0, ∞).
    GateResolved,
}

/// Coefficient multiplying I_c/I₀ in the corner element.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffDiagCoefficient {
    /// Corner = (p/2)·I_c/I₀.
    #[default]
    P,
    /// Corner = (p²/p′)/2·I_c/I₀; reproduces the zero-gate closed forms
    /// f ≃ (1+p)/4 + p²/2p′ and S_L ≃ (3 − p² − 2p⁴/p′²)/3.
    PSquaredOverPPrime,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub offdiag: OffDiagCoefficient,
    pub weight: MixingWeight,
}

/// S·t/ħ
pub fn relative_phase(t_ps: f64, params: &CascadeParams) -> f64 {
    params.fss_uev * t_ps / HBAR_UEV_PS
}

/// (|HH⟩ + e^{iSt/ħ}|VV⟩)/√2
pub fn pure_state_at(t_ps: f64, params: &CascadeParams) -> TwoQubitKet {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    let phase = C64::from_polar(s, relative_phase(t_ps, params));
    TwoQubitKet::new([C64::new(s, 0.0), z, z, phase]).expect("unit norm by construction")
}

/// e^z − 1 without cancellation for small |z|.
fn cexpm1(z: C64) -> C64 {
    let em1 = z.re.exp_m1();
    let half = (z.im / 2.0).sin();
    C64::new(
        em1 * z.im.cos() - 2.0 * half * half,
        (em1 + 1.0) * z.im.sin(),
    )
}

/// (1 − e^{−Γ·Δ}) for a rate with positive real part; 1 when Δ is infinite.
fn real_window_factor(rate: f64, dt: f64) -> f64 {
    if dt.is_infinite() {
        1.0
    } else {
        -(-rate * dt).exp_m1()
    }
}

fn complex_window_factor(rate: C64, dt: f64) -> C64 {
    if dt.is_infinite() {
        C64::new(1.0, 0.0)
    } else {
        -cexpm1(-rate * dt)
    }
}

/// Closed-form I₀ over the gate.
pub fn i0_integral(gate: &GateWindow, params: &CascadeParams) -> f64 {
    let g0 = params.population_rate();
    (-g0 * gate.t_g).exp() * real_window_factor(g0, gate.dt_g) / (params.tau_r_ps * g0)
}

/// Closed-form I_c over the gate.
pub fn ic_integral(gate: &GateWindow, params: &CascadeParams) -> C64 {
    let gc = params.coherence_rate();
    (-gc * gate.t_g).exp() * complex_window_factor(gc, gate.dt_g) / (gc * params.tau_r_ps)
}

/// I_c/I₀ evaluated so that the common decay factor cancels analytically;
/// stays accurate for vanishing gates and far-out gate starts.
pub fn coherence_ratio(gate: &GateWindow, params: &CascadeParams) -> C64 {
    let g0 = params.population_rate();
    let gc = params.coherence_rate();
    let decay = (-(gc - g0) * gate.t_g).exp();
    let num = complex_window_factor(gc, gate.dt_g) / gc;
    let den = real_window_factor(g0, gate.dt_g) / g0;
    decay * num / den
}

/// Fraction of the radiative decay inside the gate,
/// e^{−t_g/τ_r} − e^{−(t_g+Δt_g)/τ_r}.
pub fn signal_fraction(gate: &GateWindow, params: &CascadeParams) -> f64 {
    let rate = 1.0 / params.tau_r_ps;
    (-rate * gate.t_g).exp() * real_window_factor(rate, gate.dt_g)
}

/// Fraction of coincidences in the gate stemming from the dot,
/// k = Sig/(Sig + d·Δt_g/τ_r), with a flat background of density d/τ_r.
pub fn k_fraction(gate: &GateWindow, params: &CascadeParams) -> f64 {
    if params.d == 0.0 {
        return 1.0;
    }
    let sig = signal_fraction(gate, params);
    let bg = params.d * gate.dt_g / params.tau_r_ps;
    if bg.is_infinite() {
        return 0.0;
    }
    sig / (sig + bg)
}

/// I₀/Sig, the unscattered share of pairs emitted inside the gate.
fn unscattered_share(gate: &GateWindow, params: &CascadeParams) -> f64 {
    let g0 = params.population_rate();
    let decay = (-gate.t_g / params.tau_ss_ps).exp();
    let inside = real_window_factor(g0, gate.dt_g) / (params.tau_r_ps * g0);
    decay * inside / real_window_factor(1.0 / params.tau_r_ps, gate.dt_g)
}

/// Weight p of the correlated component for this gate.
pub fn mixing_weight(gate: &GateWindow, params: &CascadeParams, weight: MixingWeight) -> f64 {
    let k = k_fraction(gate, params);
    match weight {
        MixingWeight::Asymptotic => k / (1.0 + params.tau_r_ps / params.tau_ss_ps),
        MixingWeight::GateResolved => k * unscattered_share(gate, params),
    }
}

fn offdiag_coefficient(p: f64, params: &CascadeParams, which: OffDiagCoefficient) -> f64 {
    match which {
        OffDiagCoefficient::P => p,
        OffDiagCoefficient::PSquaredOverPPrime => {
            let p_prime = p * params.dephasing_ratio();
            if p_prime > 0.0 {
                p * p / p_prime
            } else {
                0.0
            }
        }
    }
}

fn x_state(p: f64, corner: C64) -> ComplexMat4 {
    let mut m = ComplexMat4::diag([
        (1.0 + p) / 4.0,
        (1.0 - p) / 4.0,
        (1.0 - p) / 4.0,
        (1.0 + p) / 4.0,
    ]);
    m[(3, 0)] = corner;
    m[(0, 3)] = corner.conj();
    m
}

/// Gated density matrix with the default model options.
pub fn gated_density_matrix(
    gate: &GateWindow,
    params: &CascadeParams,
) -> Result<DensityMatrix, CascadeError> {
    gated_density_matrix_with(gate, params, ModelOptions::default())
}

pub fn gated_density_matrix_with(
    gate: &GateWindow,
    params: &CascadeParams,
    opts: ModelOptions,
) -> Result<DensityMatrix, CascadeError> {
    params.validate()?;
    let p = mixing_weight(gate, params, opts.weight);
    let coef = offdiag_coefficient(p, params, opts.offdiag);
    let corner = coherence_ratio(gate, params) * (coef / 2.0);
    DensityMatrix::new(x_state(p, corner)).map_err(CascadeError::ModelNonPhysical)
}

/// Gate list for a scheme: widening gates `[0, n·step]` for n = 1..=count,
/// shifting gates `[n·step, (n+1)·step]` for n = 0..count, or a single
/// whole-peak gate `[0, step]`.
pub fn gate_sequence(
    scheme: GateScheme,
    dt_step: f64,
    count: usize,
) -> Result<Vec<GateWindow>, CascadeError> {
    if !(dt_step.is_finite() && dt_step > 0.0) {
        return Err(CascadeError::OutOfRange {
            name: "dt_step",
            value: dt_step,
        });
    }
    if count == 0 {
        return Err(CascadeError::OutOfRange {
            name: "count",
            value: 0.0,
        });
    }
    match scheme {
        GateScheme::Widening => (1..=count)
            .map(|n| GateWindow::new(0.0, n as f64 * dt_step, scheme))
            .collect(),
        GateScheme::Shifting => (0..count)
            .map(|n| GateWindow::new(n as f64 * dt_step, dt_step, scheme))
            .collect(),
        GateScheme::WholePeak if count == 1 => Ok(vec![GateWindow::whole_peak(dt_step)?]),
        GateScheme::WholePeak => Err(CascadeError::OutOfRange {
            name: "count",
            value: count as f64,
        }),
    }
}

/// Fidelity and linear entropy of the gated state as Δt_g → 0 at t_g = 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroGateLimits {
    pub fidelity: f64,
    pub s_lin: f64,
}

/// k in the limit of a vanishing gate at the origin: signal and background
/// both scale with Δt_g, leaving 1/(1 + d).
pub fn zero_gate_k(params: &CascadeParams) -> f64 {
    1.0 / (1.0 + params.d)
}

/// f ≃ (1+p)/4 + p²/2p′ and S_L ≃ (−2p⁴/p′² − p² + 3)/3 with
/// p = k/(1+τ_r/τ_ss), p′ = k/(1+τ_r/τ_ss+τ_r/τ_HV) and k at zero gate.
pub fn zero_gate_limits(params: &CascadeParams) -> ZeroGateLimits {
    let k = zero_gate_k(params);
    let p = k / (1.0 + params.tau_r_ps / params.tau_ss_ps);
    let pp = k / (1.0 + params.tau_r_ps / params.tau_ss_ps + params.tau_r_ps / params.tau_hv_ps);
    ZeroGateLimits {
        fidelity: (1.0 + p) / 4.0 + p * p / (2.0 * pp),
        s_lin: (-2.0 * p.powi(4) / (pp * pp) - p * p + 3.0) / 3.0,
    }
}

/// Zero-gate closed form for an arbitrary model configuration. At a
/// vanishing gate I_c/I₀ → 1, so the state has populations (1 ± p₀)/4 and a
/// real corner c₀/2.
pub fn zero_gate_closed_form(params: &CascadeParams, opts: ModelOptions) -> ZeroGateLimits {
    let k = zero_gate_k(params);
    let p0 = match opts.weight {
        MixingWeight::Asymptotic => k / (1.0 + params.tau_r_ps / params.tau_ss_ps),
        MixingWeight::GateResolved => k,
    };
    let c0 = offdiag_coefficient(p0, params, opts.offdiag);
    ZeroGateLimits {
        fidelity: (1.0 + p0) / 4.0 + c0 / 2.0,
        s_lin: 4.0 / 3.0 * (1.0 - (1.0 + p0 * p0) / 4.0 - c0 * c0 / 2.0),
    }
}
