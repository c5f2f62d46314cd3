//! Maximum-likelihood two-qubit tomography from the 36 analyzer
//! configurations {H, V, D, A, R, L}².
//!
//! The state is parameterized as ρ = T†T/Tr(T†T) with T lower triangular,
//! which is Hermitian, positive and unit-trace for any real 16-vector. The
//! Poisson likelihood is approximated by its Gaussian form with a 0.5-count
//! floor in the variance, and minimized with a seeded simplex search started
//! from the linear-inversion estimate.

use std::io;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{ComplexMat4, Vec4};
use crate::measures::CorrelationBasis;
use crate::optim::NelderMead;
use crate::state::{
    identity2, pauli_product, DensityMatrix, PauliAxis, PolarizationBasis, StateError, TwoQubitKet,
};

pub const N_CONFIGS: usize = 36;

/// Variance floor (in counts) of the likelihood denominator.
pub const COUNT_FLOOR: f64 = 0.5;

/// A reconstruction counts as converged when the final restart improves the
/// objective by less than this (relative).
pub const RESTART_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("coincidence table has no counts")]
    Empty,
    #[error("configuration ({0}, {1}) listed twice")]
    Duplicate(PolarizationBasis, PolarizationBasis),
    #[error("configuration ({0}, {1}) missing")]
    Missing(PolarizationBasis, PolarizationBasis),
    #[error("coincidence CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("coincidence CSV: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum TomographyError {
    #[error("optimizer budget exhausted before convergence (objective {:.6e})", .0.report.objective)]
    NonConvergence(Box<Reconstruction>),
    #[error(transparent)]
    State(#[from] StateError),
}

/// Index of an analyzer configuration in table layouts.
pub fn config_index(b_xx: PolarizationBasis, b_x: PolarizationBasis) -> usize {
    6 * b_xx.index() + b_x.index()
}

/// All 36 configurations in table order.
pub fn configs() -> impl Iterator<Item = (PolarizationBasis, PolarizationBasis)> {
    PolarizationBasis::ALL
        .into_iter()
        .flat_map(|a| PolarizationBasis::ALL.into_iter().map(move |b| (a, b)))
}

/// Coincidence counts for the full 6×6 analyzer grid. The first basis
/// analyzes the biexciton photon, the second the exciton photon.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceTable {
    counts: Vec<u64>,
}

impl CoincidenceTable {
    pub fn new(counts: [u64; N_CONFIGS]) -> Result<Self, TableError> {
        if counts.iter().all(|&c| c == 0) {
            return Err(TableError::Empty);
        }
        Ok(Self {
            counts: counts.to_vec(),
        })
    }

    pub fn from_fn(
        mut f: impl FnMut(PolarizationBasis, PolarizationBasis) -> u64,
    ) -> Result<Self, TableError> {
        let mut counts = [0u64; N_CONFIGS];
        for (a, b) in configs() {
            counts[config_index(a, b)] = f(a, b);
        }
        Self::new(counts)
    }

    /// Rounded expected counts; a noiseless synthetic data set.
    pub fn from_expected(expected: &[f64; N_CONFIGS]) -> Result<Self, TableError> {
        Self::new(expected.map(|x| x.max(0.0).round() as u64))
    }

    pub fn get(&self, b_xx: PolarizationBasis, b_x: PolarizationBasis) -> u64 {
        self.counts[config_index(b_xx, b_x)]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sum of the four configurations {b, b⊥} × {b′, b′⊥} for the given
    /// pair of measurement axes.
    pub fn group_total(&self, a: PauliAxis, b: PauliAxis) -> u64 {
        let (ap, am) = a.analyzers();
        let (bp, bm) = b.analyzers();
        self.get(ap, bp) + self.get(ap, bm) + self.get(am, bp) + self.get(am, bm)
    }

    /// Counts per complete projector set, averaged over the nine axis pairs.
    pub fn normalization(&self) -> f64 {
        let sum: u64 = PauliAxis::ALL
            .iter()
            .flat_map(|a| PauliAxis::ALL.iter().map(move |b| self.group_total(*a, *b)))
            .sum();
        sum as f64 / 9.0
    }

    /// Estimate of ⟨σa⊗σb⟩ from one axis group; 0 if the group is empty.
    pub fn pauli_correlation(&self, a: PauliAxis, b: PauliAxis) -> f64 {
        let (ap, am) = a.analyzers();
        let (bp, bm) = b.analyzers();
        let total = self.group_total(a, b);
        if total == 0 {
            return 0.0;
        }
        let same = (self.get(ap, bp) + self.get(am, bm)) as f64;
        let diff = (self.get(ap, bm) + self.get(am, bp)) as f64;
        (same - diff) / total as f64
    }

    /// Correlation function in one of the three analyzer bases, with the
    /// circular one counting (R, L) coincidences as correlated.
    pub fn correlation(&self, basis: CorrelationBasis) -> f64 {
        let axis = basis.axis();
        basis.sign() * self.pauli_correlation(axis, axis)
    }

    /// f = (1 + C_H/V + C_D/A + C_R/L)/4 from raw counts.
    pub fn correlation_fidelity(&self) -> f64 {
        let c = CorrelationBasis::ALL.map(|b| self.correlation(b));
        (1.0 + c[0] + c[1] + c[2]) / 4.0
    }

    /// Every count multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Result<Self, TableError> {
        let mut counts = [0u64; N_CONFIGS];
        for (c, &n) in counts.iter_mut().zip(&self.counts) {
            *c = n * factor;
        }
        Self::new(counts)
    }

    /// Table with both analyzer labels passed through `map`.
    pub fn relabeled(
        &self,
        map: impl Fn(PolarizationBasis) -> PolarizationBasis,
    ) -> Result<Self, TableError> {
        Self::from_fn(|a, b| self.get(map(a), map(b)))
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), TableError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["basis_xx", "basis_x", "counts"])?;
        for (a, b) in configs() {
            w.write_record([a.label(), b.label(), &self.get(a, b).to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, TableError> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["basis_xx", "basis_x", "counts"] {
            return Err(TableError::Format(format!(
                "unexpected header {:?}",
                headers
            )));
        }
        let mut counts: [Option<u64>; N_CONFIGS] = [None; N_CONFIGS];
        for rec in r.records() {
            let rec = rec?;
            let parse_basis = |s: &str| {
                s.parse::<PolarizationBasis>()
                    .map_err(|e| TableError::Format(e.to_string()))
            };
            let (a, b) = (parse_basis(&rec[0])?, parse_basis(&rec[1])?);
            let n = rec[2]
                .parse::<u64>()
                .map_err(|_| TableError::Format(format!("bad count {:?}", &rec[2])))?;
            let slot = &mut counts[config_index(a, b)];
            if slot.is_some() {
                return Err(TableError::Duplicate(a, b));
            }
            *slot = Some(n);
        }
        let mut out = [0u64; N_CONFIGS];
        for (a, b) in configs() {
            out[config_index(a, b)] =
                counts[config_index(a, b)].ok_or(TableError::Missing(a, b))?;
        }
        Self::new(out)
    }
}

/// Product kets for every configuration, in table order.
fn analyzer_kets() -> [Vec4; N_CONFIGS] {
    let mut kets = [[C64::new(0.0, 0.0); 4]; N_CONFIGS];
    for (a, b) in configs() {
        kets[config_index(a, b)] = *TwoQubitKet::product(a, b).amplitudes();
    }
    kets
}

/// n̄_ν = n_norm·Tr(ρ P_ν) for every configuration.
pub fn expected_counts(rho: &DensityMatrix, n_norm: f64) -> [f64; N_CONFIGS] {
    let kets = analyzer_kets();
    let m = rho.matrix();
    kets.map(|k| {
        let mk = m.mul_vec(&k);
        let p: C64 = k.iter().zip(&mk).map(|(a, b)| a.conj() * b).sum();
        n_norm * p.re.max(0.0)
    })
}

/// Sixteen reals defining the lower-triangular factor T.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TParams(pub [f64; 16]);

/// (row, col) of the complex sub-diagonal entries, in parameter order.
const OFF_DIAG: [(usize, usize); 6] = [(1, 0), (2, 1), (3, 2), (2, 0), (3, 1), (3, 0)];

impl TParams {
    pub fn lower_factor(&self) -> ComplexMat4 {
        let t = &self.0;
        let mut m = ComplexMat4::zeros();
        for i in 0..4 {
            m[(i, i)] = C64::new(t[i], 0.0);
        }
        for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
            m[(i, j)] = C64::new(t[4 + 2 * k], t[5 + 2 * k]);
        }
        m
    }

    /// ρ = T†T/Tr(T†T); `None` for the all-zero vector.
    pub fn density(&self) -> Option<DensityMatrix> {
        let t = self.lower_factor();
        let m = t.adjoint() * t;
        let tr = m.trace().re;
        if !(tr > 0.0 && tr.is_finite()) {
            return None;
        }
        DensityMatrix::new(m.hermitian_part().scale(1.0 / tr)).ok()
    }

    /// Factor a density matrix as T†T. A small multiple of the identity is
    /// mixed in first so rank-deficient states still have a factor.
    pub fn from_density(rho: &DensityMatrix) -> Self {
        const RIDGE: f64 = 1e-12;
        let m = *rho.matrix() + ComplexMat4::identity().scale(RIDGE);
        // Cholesky of the index-reversed matrix: JρJ = LL† ⇒ ρ = UU† with
        // U = JLJ upper triangular, and T = U† is lower triangular.
        let rev = |i: usize| 3 - i;
        let a = ComplexMat4::from_fn(|i, j| m[(rev(i), rev(j))]);
        let mut l = ComplexMat4::zeros();
        for j in 0..4 {
            let diag = a[(j, j)].re - (0..j).map(|k| l[(j, k)].norm_sqr()).sum::<f64>();
            let ljj = diag.max(RIDGE).sqrt();
            l[(j, j)] = C64::new(ljj, 0.0);
            for i in j + 1..4 {
                let s: C64 = (0..j).map(|k| l[(i, k)] * l[(j, k)].conj()).sum();
                l[(i, j)] = (a[(i, j)] - s) / ljj;
            }
        }
        let u = ComplexMat4::from_fn(|i, j| l[(rev(i), rev(j))]);
        let t = u.adjoint();
        let mut p = [0.0; 16];
        for i in 0..4 {
            p[i] = t[(i, i)].re;
        }
        for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
            p[4 + 2 * k] = t[(i, j)].re;
            p[5 + 2 * k] = t[(i, j)].im;
        }
        Self(p)
    }
}

/// Precomputed data for fast likelihood evaluation.
struct Likelihood {
    kets: [Vec4; N_CONFIGS],
    counts: [f64; N_CONFIGS],
    n_norm: f64,
}

impl Likelihood {
    fn new(table: &CoincidenceTable) -> Self {
        let mut counts = [0.0; N_CONFIGS];
        for (c, &n) in counts.iter_mut().zip(table.counts()) {
            *c = n as f64;
        }
        Self {
            kets: analyzer_kets(),
            counts,
            n_norm: table.normalization(),
        }
    }

    fn eval(&self, t: &[f64]) -> f64 {
        let factor = TParams(t.try_into().expect("16 parameters")).lower_factor();
        let norm: f64 = t.iter().map(|x| x * x).sum();
        if !(norm > 0.0 && norm.is_finite()) {
            return f64::INFINITY;
        }
        let scale = self.n_norm / norm;
        let mut total = 0.0;
        for (k, &n) in self.kets.iter().zip(&self.counts) {
            // ⟨ψ|T†T|ψ⟩ = ‖Tψ‖²
            let tk = factor.mul_vec(k);
            let p: f64 = tk.iter().map(|z| z.norm_sqr()).sum();
            let expected = scale * p;
            let diff = expected - n;
            total += diff * diff / (2.0 * expected.max(COUNT_FLOOR));
        }
        total
    }
}

/// Σ_ν (n̄_ν − n_ν)²/(2·max(n̄_ν, 0.5)), with n̄ from ρ(t) and the table's
/// own normalization.
pub fn nll_objective(t: &TParams, table: &CoincidenceTable) -> f64 {
    Likelihood::new(table).eval(&t.0)
}

/// Linear (Stokes-parameter) estimate, projected onto the physical set.
pub fn linear_inversion_start(table: &CoincidenceTable) -> DensityMatrix {
    let axes = PauliAxis::ALL;
    let mut m = ComplexMat4::identity().scale(0.25);
    // Single-photon Stokes terms, averaged over the partner's three bases.
    for &a in &axes {
        let (ap, _) = a.analyzers();
        let mut first = 0.0;
        let mut second = 0.0;
        for &b in &axes {
            let (bp, bm) = b.analyzers();
            let total = table.group_total(a, b) as f64;
            if total > 0.0 {
                let plus = (table.get(ap, bp) + table.get(ap, bm)) as f64;
                first += (2.0 * plus - total) / total / 3.0;
            }
            let total = table.group_total(b, a) as f64;
            if total > 0.0 {
                let plus = (table.get(bp, ap) + table.get(bm, ap)) as f64;
                second += (2.0 * plus - total) / total / 3.0;
            }
        }
        m = m + ComplexMat4::kron2(&a.matrix(), &identity2()).scale(first / 4.0);
        m = m + ComplexMat4::kron2(&identity2(), &a.matrix()).scale(second / 4.0);
    }
    for &a in &axes {
        for &b in &axes {
            m = m + pauli_product(a, b).scale(table.pauli_correlation(a, b) / 4.0);
        }
    }
    DensityMatrix::clamp_from(&m).unwrap_or_else(|_| DensityMatrix::maximally_mixed())
}

#[derive(Clone, Debug)]
pub struct ReconstructOptions {
    pub seed: u64,
    /// Randomized restarts after the initial descent.
    pub restarts: usize,
    /// Objective-evaluation budget across all runs.
    pub max_evals: usize,
    pub tol: f64,
    pub stall_iters: usize,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            seed: 0x5EED_7040,
            restarts: 5,
            max_evals: 200_000,
            tol: 1e-10,
            stall_iters: 50,
        }
    }
}

/// Diagnostics of one reconstruction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub restarts: usize,
    pub converged: bool,
    pub n_norm: f64,
    pub start: DensityMatrix,
    pub start_objective: f64,
    /// Objective after each run (initial descent, then every restart).
    pub run_objectives: Vec<f64>,
    pub assumption: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Reconstruction {
    pub rho: DensityMatrix,
    pub report: ReconstructionReport,
}

pub fn reconstruct(table: &CoincidenceTable) -> Result<Reconstruction, TomographyError> {
    reconstruct_with(table, &ReconstructOptions::default())
}

pub fn reconstruct_with(
    table: &CoincidenceTable,
    opts: &ReconstructOptions,
) -> Result<Reconstruction, TomographyError> {
    let like = Likelihood::new(table);
    let start = linear_inversion_start(table);
    let mut best = TParams::from_density(&start).0;
    let start_objective = like.eval(&best);
    let mut best_value = start_objective;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut evals = 1usize;
    let mut iterations = 0usize;
    let mut run_objectives = Vec::with_capacity(opts.restarts + 1);
    let mut last_run_converged = false;
    let mut last_gain = f64::INFINITY;

    for run in 0..=opts.restarts {
        let remaining = opts.max_evals.saturating_sub(evals);
        if remaining == 0 {
            break;
        }
        let scale = best.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-3);
        let steps: Vec<f64> = (0..16)
            .map(|_| {
                let size = if run == 0 {
                    0.02
                } else {
                    rng.random_range(0.02..0.2)
                };
                let sign = if run == 0 || rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                };
                sign * size * scale
            })
            .collect();
        let nm = NelderMead {
            tol: opts.tol,
            stall_iters: opts.stall_iters,
            max_evals: remaining,
            ..NelderMead::adaptive(16)
        };
        let m = nm.minimize(|x| like.eval(x), &best, &steps);
        evals += m.evals;
        iterations += m.iterations;
        run_objectives.push(m.value);
        last_run_converged = m.converged;
        if m.value < best_value {
            last_gain = best_value - m.value;
            best_value = m.value;
            best.copy_from_slice(&m.x);
        } else {
            last_gain = 0.0;
        }
    }

    let rho = TParams(best).density().unwrap_or(start);
    let stable = last_gain <= RESTART_TOL * (1.0 + best_value.abs());
    let converged = last_run_converged && stable && run_objectives.len() == opts.restarts + 1;
    let out = Reconstruction {
        rho,
        report: ReconstructionReport {
            objective: best_value,
            iterations,
            evaluations: evals,
            restarts: run_objectives.len().saturating_sub(1),
            converged,
            n_norm: like.n_norm,
            start,
            start_objective,
            run_objectives,
            assumption: "all 36 analyzer configurations integrated for equal durations".into(),
        },
    };
    if converged {
        Ok(out)
    } else {
        Err(TomographyError::NonConvergence(Box::new(out)))
    }
}
