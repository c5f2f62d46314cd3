//! Monte Carlo coincidence generator: per-pair emission delays, the
//! spin-scattering and cross-dephasing channels, polarization projection,
//! a flat unpolarized background, and delay histogramming per analyzer
//! configuration.
//!
//! Every configuration owns a ChaCha8 stream keyed by the master seed with
//! the stream number set to its table index, so histograms do not depend
//! on evaluation order.

use std::io;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{relative_phase, CascadeError, CascadeParams, GateWindow};
use crate::state::PolarizationBasis;
use crate::tomography::{config_index, configs, CoincidenceTable, TableError, N_CONFIGS};

/// Relative tolerance for gate edges and window/bin divisibility.
const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("gate [{start}, {end}] ps is not aligned to {bin_width} ps bins")]
    Misaligned {
        start: f64,
        end: f64,
        bin_width: f64,
    },
    #[error("gate [{start}, {end}] ps extends past the {window} ps histogram")]
    OutsideWindow { start: f64, end: f64, window: f64 },
    #[error("histogram has no counts")]
    Empty,
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error("histogram CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("histogram CSV: {0}")]
    Format(String),
}

fn default_bin_width() -> f64 {
    64.0
}

fn default_window() -> f64 {
    3072.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: CascadeParams,
    /// Emitted pairs per analyzer configuration.
    pub n_pairs: u64,
    #[serde(default = "default_bin_width")]
    pub bin_width_ps: f64,
    #[serde(default = "default_window")]
    pub window_ps: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(params: CascadeParams, n_pairs: u64, seed: u64) -> Self {
        Self {
            params,
            n_pairs,
            bin_width_ps: default_bin_width(),
            window_ps: default_window(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        if self.n_pairs == 0 {
            return Err(SimError::InvalidConfig("n_pairs must be >= 1".into()));
        }
        if !(self.bin_width_ps.is_finite() && self.bin_width_ps > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "bin width {} must be > 0",
                self.bin_width_ps
            )));
        }
        if !(self.window_ps.is_finite() && self.window_ps >= self.bin_width_ps) {
            return Err(SimError::InvalidConfig(format!(
                "window {} must cover at least one bin",
                self.window_ps
            )));
        }
        let ratio = self.window_ps / self.bin_width_ps;
        if (ratio - ratio.round()).abs() > ALIGN_TOL * ratio {
            return Err(SimError::InvalidConfig(format!(
                "bin width {} does not divide window {}",
                self.bin_width_ps, self.window_ps
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        (self.window_ps / self.bin_width_ps).round() as usize
    }
}

/// Delay histograms for all 36 configurations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TdcHistogram {
    bin_width_bits: u64,
    bins: Vec<Vec<u64>>,
}

impl TdcHistogram {
    /// `bins[config_index(a, b)]` holds the histogram of configuration (a, b).
    pub fn new(bin_width_ps: f64, bins: Vec<Vec<u64>>) -> Result<Self, SimError> {
        if !(bin_width_ps.is_finite() && bin_width_ps > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "bin width {bin_width_ps} must be > 0"
            )));
        }
        if bins.len() != N_CONFIGS {
            return Err(SimError::Format(format!(
                "expected 36 configurations, got {}",
                bins.len()
            )));
        }
        let n = bins[0].len();
        if n == 0 || bins.iter().any(|b| b.len() != n) {
            return Err(SimError::Format(
                "configurations have differing or zero bin counts".into(),
            ));
        }
        Ok(Self {
            bin_width_bits: bin_width_ps.to_bits(),
            bins,
        })
    }

    pub fn bin_width(&self) -> f64 {
        f64::from_bits(self.bin_width_bits)
    }

    pub fn n_bins(&self) -> usize {
        self.bins[0].len()
    }

    pub fn window(&self) -> f64 {
        self.n_bins() as f64 * self.bin_width()
    }

    pub fn config(&self, b_xx: PolarizationBasis, b_x: PolarizationBasis) -> &[u64] {
        &self.bins[config_index(b_xx, b_x)]
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().flatten().sum()
    }

    /// Histogram delayed by `n` bins: `n` empty bins are prepended and the
    /// tail is cut to keep the window.
    pub fn delayed(&self, n: usize) -> Self {
        let len = self.n_bins();
        let bins = self
            .bins
            .iter()
            .map(|b| {
                std::iter::repeat_n(0, n)
                    .chain(b.iter().copied())
                    .take(len)
                    .collect()
            })
            .collect();
        Self {
            bin_width_bits: self.bin_width_bits,
            bins,
        }
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["basis_xx", "basis_x", "bin_start_ps", "counts"])?;
        for (a, b) in configs() {
            for (i, n) in self.config(a, b).iter().enumerate() {
                let start = i as f64 * self.bin_width();
                w.write_record([a.label(), b.label(), &format!("{start}"), &n.to_string()])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads the long-format CSV. Bins must start at 0 and be evenly spaced.
    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, SimError> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["basis_xx", "basis_x", "bin_start_ps", "counts"] {
            return Err(SimError::Format(format!("unexpected header {:?}", headers)));
        }
        let mut rows: Vec<Vec<(f64, u64)>> = vec![Vec::new(); N_CONFIGS];
        for rec in r.records() {
            let rec = rec?;
            let basis = |s: &str| {
                s.parse::<PolarizationBasis>()
                    .map_err(|e| SimError::Format(e.to_string()))
            };
            let (a, b) = (basis(&rec[0])?, basis(&rec[1])?);
            let start: f64 = rec[2]
                .parse()
                .map_err(|_| SimError::Format(format!("bad bin start {:?}", &rec[2])))?;
            let n: u64 = rec[3]
                .parse()
                .map_err(|_| SimError::Format(format!("bad count {:?}", &rec[3])))?;
            rows[config_index(a, b)].push((start, n));
        }
        let mut sorted = rows[0].clone();
        if sorted.len() < 2 {
            return Err(SimError::Format(
                "need at least two bins to infer the bin width".into(),
            ));
        }
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
        let width = sorted[1].0 - sorted[0].0;
        if width.is_nan() || width <= 0.0 {
            return Err(SimError::Format("cannot infer bin width".into()));
        }
        let mut bins = Vec::with_capacity(N_CONFIGS);
        for (idx, mut cfg_rows) in rows.into_iter().enumerate() {
            cfg_rows.sort_by(|x, y| x.0.total_cmp(&y.0));
            if cfg_rows.len() != sorted.len() {
                return Err(SimError::Format(format!(
                    "configuration #{idx} has {} bins, expected {}",
                    cfg_rows.len(),
                    sorted.len()
                )));
            }
            for (i, (start, _)) in cfg_rows.iter().enumerate() {
                let expect = i as f64 * width;
                if (start - expect).abs() > ALIGN_TOL * width.max(1.0) {
                    return Err(SimError::Format(format!(
                        "bin start {start} is not {expect}"
                    )));
                }
            }
            bins.push(cfg_rows.into_iter().map(|(_, n)| n).collect());
        }
        Self::new(width, bins)
    }
}

/// Click probabilities of one analyzer pair for the three emission outcomes.
struct Projection {
    /// ⟨b₁b₂|HH⟩ and ⟨b₁b₂|VV⟩
    hh: C64,
    vv: C64,
}

impl Projection {
    fn new(b_xx: PolarizationBasis, b_x: PolarizationBasis) -> Self {
        let (k1, k2) = (b_xx.ket(), b_x.ket());
        Self {
            hh: k1[0].conj() * k2[0].conj(),
            vv: k1[1].conj() * k2[1].conj(),
        }
    }

    /// |⟨b₁b₂|(|HH⟩ + e^{iφ}|VV⟩)/√2|²
    fn coherent(&self, phase: f64) -> f64 {
        let (s, c) = phase.sin_cos();
        let amp = self.hh + self.vv * C64::new(c, s);
        amp.norm_sqr() / 2.0
    }

    /// Populations kept, |HH⟩⟨VV| coherence erased.
    fn dephased(&self) -> f64 {
        (self.hh.norm_sqr() + self.vv.norm_sqr()) / 2.0
    }
}

/// Probability that an unpolarized (I/4) pair passes any product analyzer.
const UNPOLARIZED_PASS: f64 = 0.25;

fn survives(rng: &mut ChaCha8Rng, t: f64, tau: f64) -> bool {
    tau.is_infinite() || rng.random::<f64>() < (-t / tau).exp()
}

/// Histogram for one analyzer configuration.
pub fn sample_events(
    cfg: &SimConfig,
    config: (PolarizationBasis, PolarizationBasis),
) -> Result<Vec<u64>, SimError> {
    cfg.validate()?;
    let p = &cfg.params;
    let n_bins = cfg.n_bins();
    let mut bins = vec![0u64; n_bins];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(config_index(config.0, config.1) as u64);

    let proj = Projection::new(config.0, config.1);
    let dwell = Exp::new(1.0 / p.tau_r_ps).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let record = |bins: &mut [u64], t: f64| {
        let idx = (t / cfg.bin_width_ps) as usize;
        if idx < n_bins {
            bins[idx] += 1;
        }
    };

    for _ in 0..cfg.n_pairs {
        let t: f64 = dwell.sample(&mut rng);
        if t >= cfg.window_ps {
            continue;
        }
        let click = if !survives(&mut rng, t, p.tau_ss_ps) {
            UNPOLARIZED_PASS
        } else if !survives(&mut rng, t, p.tau_hv_ps) {
            proj.dephased()
        } else {
            proj.coherent(relative_phase(t, p))
        };
        if rng.random::<f64>() < click {
            record(&mut bins, t);
        }
    }

    // Flat background of unpolarized pairs with density d/τ_r per ps,
    // scaled by n_pairs and thinned by the analyzer pass probability.
    let mean = cfg.n_pairs as f64 * p.d * cfg.window_ps / p.tau_r_ps * UNPOLARIZED_PASS;
    if mean > 0.0 {
        let poisson = Poisson::new(mean).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let n_bg = poisson.sample(&mut rng) as u64;
        for _ in 0..n_bg {
            let t = rng.random::<f64>() * cfg.window_ps;
            record(&mut bins, t);
        }
    }
    Ok(bins)
}

/// Runs all 36 configurations.
pub fn simulate_histogram(cfg: &SimConfig) -> Result<TdcHistogram, SimError> {
    cfg.validate()?;
    let all: Vec<_> = configs().collect();
    let bins = all
        .par_iter()
        .map(|&c| sample_events(cfg, c))
        .collect::<Result<Vec<_>, _>>()?;
    TdcHistogram::new(cfg.bin_width_ps, bins)
}

fn bin_edge(t: f64, width: f64) -> Option<usize> {
    let x = t / width;
    let r = x.round();
    ((x - r).abs() <= ALIGN_TOL * r.max(1.0)).then_some(r as usize)
}

/// Sums the bins inside `[t_g, t_g + Δt_g)` for every configuration.
pub fn gate_counts(h: &TdcHistogram, gate: &GateWindow) -> Result<CoincidenceTable, SimError> {
    let width = h.bin_width();
    let (start, end) = (gate.t_g, gate.end());
    let misaligned = || SimError::Misaligned {
        start,
        end,
        bin_width: width,
    };
    let first = bin_edge(start, width).ok_or_else(misaligned)?;
    let last = if end.is_finite() {
        bin_edge(end, width).ok_or_else(misaligned)?
    } else {
        usize::MAX
    };
    if last > h.n_bins() {
        return Err(SimError::OutsideWindow {
            start,
            end,
            window: h.window(),
        });
    }
    let mut counts = [0u64; N_CONFIGS];
    for (c, bins) in counts.iter_mut().zip(&h.bins) {
        *c = bins[first..last].iter().sum();
    }
    Ok(CoincidenceTable::new(counts)?)
}

/// Histograms every configuration once and integrates them over each gate.
pub fn simulate_experiment(
    cfg: &SimConfig,
    gates: &[GateWindow],
) -> Result<Vec<(GateWindow, CoincidenceTable)>, SimError> {
    let h = simulate_histogram(cfg)?;
    gates
        .iter()
        .map(|g| Ok((*g, gate_counts(&h, g)?)))
        .collect()
}

/// Start of the bin whose coincidences give the highest correlation
/// fidelity to |Φ⁺⟩; ties go to the earliest bin. Bins lacking counts in
/// any of the three co-basis groups are skipped.
pub fn find_time_origin(h: &TdcHistogram) -> Result<f64, SimError> {
    use crate::state::PauliAxis;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..h.n_bins() {
        let mut counts = [0u64; N_CONFIGS];
        for (c, bins) in counts.iter_mut().zip(&h.bins) {
            *c = bins[i];
        }
        let Ok(table) = CoincidenceTable::new(counts) else {
            continue;
        };
        if PauliAxis::ALL.iter().any(|&a| table.group_total(a, a) == 0) {
            continue;
        }
        let f = table.correlation_fidelity();
        if best.is_none_or(|(_, bf)| f > bf) {
            best = Some((i, f));
        }
    }
    best.map(|(i, _)| i as f64 * h.bin_width())
        .ok_or(SimError::Empty)
}
