//! Least-squares recovery of (S, τ_HV, d) from gated state points with τ_r
//! and τ_ss held fixed.
//!
//! The search runs in unit-cube coordinates over (S, 1/τ_HV, d). Working
//! with the dephasing rate keeps τ_HV = ∞ at a finite boundary.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{gated_density_matrix_with, CascadeParams, GateWindow, ModelOptions};
use crate::measures::{state_point, StatePoint};
use crate::optim::NelderMead;

/// Objective contribution of an observation whose model state is not
/// physical. Large compared with any attainable squared residual.
pub const NONPHYSICAL_PENALTY: f64 = 1e3;

const N_FREE: usize = 3;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid fit problem: {0}")]
    InvalidProblem(String),
    #[error("fit did not converge (objective {:.3e})", .0.objective)]
    NonConvergence(Box<FitResult>),
}

/// Free parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitTheta {
    pub fss_uev: f64,
    /// May be infinite.
    pub tau_hv_ps: f64,
    pub d: f64,
}

impl FitTheta {
    fn rate(&self) -> f64 {
        1.0 / self.tau_hv_ps
    }

    fn from_rates(x: [f64; N_FREE]) -> Self {
        Self {
            fss_uev: x[0],
            tau_hv_ps: 1.0 / x[1],
            d: x[2],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitBounds {
    pub s_uev: (f64, f64),
    /// Upper end may be infinite.
    #[serde(with = "inf_pair")]
    pub tau_hv_ps: (f64, f64),
    pub d: (f64, f64),
}

impl Default for FitBounds {
    fn default() -> Self {
        Self {
            s_uev: (0.0, 5.0),
            tau_hv_ps: (100.0, f64::INFINITY),
            d: (0.0, 0.2),
        }
    }
}

impl FitBounds {
    fn validate(&self) -> Result<(), FitError> {
        let bad = |name: &str, (lo, hi): (f64, f64)| {
            FitError::InvalidProblem(format!("{name} bounds [{lo}, {hi}]"))
        };
        let (s, t, d) = (self.s_uev, self.tau_hv_ps, self.d);
        if !(s.0.is_finite() && s.1.is_finite() && 0.0 <= s.0 && s.0 <= s.1) {
            return Err(bad("S", s));
        }
        if !(t.0.is_finite() && t.0 > 0.0 && t.0 <= t.1) {
            return Err(bad("tau_hv", t));
        }
        if !(d.0.is_finite() && d.1.is_finite() && 0.0 <= d.0 && d.0 <= d.1) {
            return Err(bad("d", d));
        }
        Ok(())
    }

    /// Lower and upper corners in (S, 1/τ_HV, d).
    fn rate_box(&self) -> ([f64; N_FREE], [f64; N_FREE]) {
        (
            [self.s_uev.0, 1.0 / self.tau_hv_ps.1, self.d.0],
            [self.s_uev.1, 1.0 / self.tau_hv_ps.0, self.d.1],
        )
    }

    pub fn contains(&self, theta: &FitTheta) -> bool {
        let (lo, hi) = self.rate_box();
        let x = [theta.fss_uev, theta.rate(), theta.d];
        (0..N_FREE).all(|i| lo[i] <= x[i] && x[i] <= hi[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub gate: GateWindow,
    pub point: StatePoint,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct FitProblem {
    pub observations: Vec<Observation>,
    pub tau_r_ps: f64,
    pub tau_ss_ps: f64,
    pub bounds: FitBounds,
    pub model: ModelOptions,
}

impl FitProblem {
    /// Unit-weight observations from state points that carry their gate.
    pub fn from_points(
        points: &[StatePoint],
        tau_r_ps: f64,
        tau_ss_ps: f64,
    ) -> Result<Self, FitError> {
        let observations = points
            .iter()
            .map(|p| {
                let gate = p
                    .gate
                    .ok_or_else(|| FitError::InvalidProblem("state point without a gate".into()))?;
                Ok(Observation {
                    gate,
                    point: *p,
                    weight: 1.0,
                })
            })
            .collect::<Result<Vec<_>, FitError>>()?;
        let problem = Self {
            observations,
            tau_r_ps,
            tau_ss_ps,
            bounds: FitBounds::default(),
            model: ModelOptions::default(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.observations.len() < 3 {
            return Err(FitError::InvalidProblem(format!(
                "need >= 3 observations, got {}",
                self.observations.len()
            )));
        }
        if self
            .observations
            .iter()
            .any(|o| !(o.weight.is_finite() && o.weight >= 0.0))
        {
            return Err(FitError::InvalidProblem(
                "observation weights must be finite and >= 0".into(),
            ));
        }
        self.bounds.validate()?;
        let probe = self.params(&FitTheta {
            fss_uev: 0.0,
            tau_hv_ps: f64::INFINITY,
            d: 0.0,
        });
        probe
            .validate()
            .map_err(|e| FitError::InvalidProblem(e.to_string()))?;
        Ok(())
    }

    fn params(&self, theta: &FitTheta) -> CascadeParams {
        CascadeParams {
            fss_uev: theta.fss_uev,
            tau_r_ps: self.tau_r_ps,
            tau_ss_ps: self.tau_ss_ps,
            tau_hv_ps: theta.tau_hv_ps,
            d: theta.d,
        }
    }

    /// Model state point at every observed gate.
    pub fn predict(&self, theta: &FitTheta) -> Vec<Option<StatePoint>> {
        let params = self.params(theta);
        self.observations
            .iter()
            .map(|o| {
                let rho = gated_density_matrix_with(&o.gate, &params, self.model).ok()?;
                state_point(&rho, Some(o.gate)).ok()
            })
            .collect()
    }
}

/// Weighted sum over observations of the squared S_L, T and fidelity
/// residuals.
pub fn fit_objective(theta: &FitTheta, problem: &FitProblem) -> f64 {
    problem
        .predict(theta)
        .iter()
        .zip(&problem.observations)
        .map(|(model, obs)| {
            let r2 = match model {
                Some(m) => {
                    (m.s_lin - obs.point.s_lin).powi(2)
                        + (m.tangle - obs.point.tangle).powi(2)
                        + (m.fidelity - obs.point.fidelity).powi(2)
                }
                None => NONPHYSICAL_PENALTY,
            };
            obs.weight * r2
        })
        .sum()
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub tol: f64,
    pub stall_iters: usize,
    pub max_evals: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 0xF17_5EED,
            tol: 1e-14,
            stall_iters: 100,
            max_evals: 20_000,
        }
    }
}

/// Curvature-based 1σ estimates. A value of infinity means the objective
/// is flat along that axis; zero means the parameter was fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub s_uev: f64,
    #[serde(with = "inf_float")]
    pub tau_hv_ps: f64,
    pub d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub s_hat: f64,
    #[serde(with = "inf_float")]
    pub tau_hv_hat: f64,
    pub d_hat: f64,
    pub objective: f64,
    pub uncertainty: Uncertainty,
    pub converged: bool,
    /// Final objective of each restart, in restart order.
    pub restart_objectives: Vec<f64>,
    pub best_restart: usize,
    pub evaluations: usize,
    /// Which residuals the objective is built from.
    pub residuals: String,
}

impl FitResult {
    pub fn theta(&self) -> FitTheta {
        FitTheta {
            fss_uev: self.s_hat,
            tau_hv_ps: self.tau_hv_hat,
            d: self.d_hat,
        }
    }
}

/// Maps the unit cube onto the rate box.
struct Scaling {
    lo: [f64; N_FREE],
    span: [f64; N_FREE],
}

impl Scaling {
    fn new(bounds: &FitBounds) -> Self {
        let (lo, hi) = bounds.rate_box();
        Self {
            lo,
            span: std::array::from_fn(|i| hi[i] - lo[i]),
        }
    }

    fn to_rates(&self, u: &[f64]) -> [f64; N_FREE] {
        std::array::from_fn(|i| self.lo[i] + u[i].clamp(0.0, 1.0) * self.span[i])
    }

    /// Objective on the unit cube. Points outside are clamped onto the
    /// surface and charged their squared distance to it.
    fn objective(&self, u: &[f64], problem: &FitProblem) -> f64 {
        let outside: f64 = u.iter().map(|&x| (x - x.clamp(0.0, 1.0)).powi(2)).sum();
        fit_objective(&FitTheta::from_rates(self.to_rates(u)), problem) + outside
    }
}

fn latin_hypercube(n: usize, seed: u64) -> Vec<[f64; N_FREE]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![[0.0; N_FREE]; n];
    for axis in 0..N_FREE {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (p, s) in points.iter_mut().zip(strata) {
            p[axis] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

/// 1σ per axis from the quadratic coefficient of a least-squares parabola
/// through five equally spaced objective samples, with the residual
/// variance estimated from the objective at the optimum.
fn curvature_sigma(problem: &FitProblem, best: [f64; N_FREE], objective: f64) -> [f64; N_FREE] {
    let (lo, hi) = problem.bounds.rate_box();
    let n_resid: f64 = 3.0
        * problem
            .observations
            .iter()
            .filter(|o| o.weight > 0.0)
            .count() as f64;
    let variance = objective / (n_resid - N_FREE as f64).max(1.0);
    std::array::from_fn(|axis| {
        let span = hi[axis] - lo[axis];
        if span == 0.0 {
            return 0.0;
        }
        let h = span * 1e-3;
        let centre = best[axis].clamp(lo[axis] + 2.0 * h, hi[axis] - 2.0 * h);
        let f = |k: i32| {
            let mut x = best;
            x[axis] = centre + k as f64 * h;
            fit_objective(&FitTheta::from_rates(x), problem)
        };
        // Least-squares quadratic coefficient for offsets -2..=2.
        let c2 = (2.0 * f(-2) - f(-1) - 2.0 * f(0) - f(1) + 2.0 * f(2)) / (14.0 * h * h);
        if c2 > 0.0 {
            (variance / c2).sqrt()
        } else {
            f64::INFINITY
        }
    })
}

pub fn fit(problem: &FitProblem) -> Result<FitResult, FitError> {
    fit_with(problem, &FitOptions::default())
}

pub fn fit_with(problem: &FitProblem, opts: &FitOptions) -> Result<FitResult, FitError> {
    problem.validate()?;
    if opts.restarts == 0 {
        return Err(FitError::InvalidProblem("need at least one restart".into()));
    }
    let scaling = Scaling::new(&problem.bounds);
    let nm = NelderMead {
        tol: opts.tol,
        stall_iters: opts.stall_iters,
        max_evals: opts.max_evals,
        ..NelderMead::adaptive(N_FREE)
    };
    let starts = latin_hypercube(opts.restarts, opts.seed);
    let runs: Vec<_> = starts
        .par_iter()
        .map(|u0| nm.minimize(|u| scaling.objective(u, problem), u0, &[0.05; N_FREE]))
        .collect();

    // Lowest objective wins; ties go to the lowest restart index.
    let (best_restart, best) = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
        .expect("at least one restart");
    let rates = scaling.to_rates(&best.x);
    let theta = FitTheta::from_rates(rates);
    let objective = fit_objective(&theta, problem);
    let sigma = curvature_sigma(problem, rates, objective);
    let tau_sigma = if rates[1] > 0.0 {
        sigma[1] / (rates[1] * rates[1])
    } else {
        f64::INFINITY
    };

    let result = FitResult {
        s_hat: theta.fss_uev,
        tau_hv_hat: theta.tau_hv_ps,
        d_hat: theta.d,
        objective,
        uncertainty: Uncertainty {
            s_uev: sigma[0],
            tau_hv_ps: tau_sigma,
            d: sigma[2],
        },
        converged: best.converged && objective.is_finite(),
        restart_objectives: runs.iter().map(|m| m.value).collect(),
        best_restart,
        evaluations: runs.iter().map(|m| m.evals).sum(),
        residuals: "state-point summaries (S_L, T, f), equal weights".into(),
    };
    if result.converged {
        Ok(result)
    } else {
        Err(FitError::NonConvergence(Box::new(result)))
    }
}

/// Serializes infinity as JSON null.
mod inf_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(x)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

mod inf_pair {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(x: &(f64, f64), s: S) -> Result<S::Ok, S::Error> {
        let hi = x.1.is_finite().then_some(x.1);
        (x.0, hi).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(f64, f64), D::Error> {
        let (lo, hi) = <(f64, Option<f64>)>::deserialize(d)?;
        Ok((lo, hi.unwrap_or(f64::INFINITY)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{gate_sequence, GateScheme, MixingWeight};

    fn truth() -> FitTheta {
        FitTheta {
            fss_uev: 0.36,
            tau_hv_ps: 2300.0,
            d: 0.008,
        }
    }

    fn gates() -> Vec<GateWindow> {
        let mut g = gate_sequence(GateScheme::Widening, 256.0, 6).unwrap();
        g.extend(gate_sequence(GateScheme::Shifting, 384.0, 8).unwrap());
        g
    }

    fn synthetic(theta: FitTheta, model: ModelOptions) -> FitProblem {
        let template = FitProblem {
            observations: Vec::new(),
            tau_r_ps: 560.0,
            tau_ss_ps: 2800.0,
            bounds: FitBounds::default(),
            model,
        };
        let params = template.params(&theta);
        let observations = gates()
            .into_iter()
            .map(|gate| {
                let rho = gated_density_matrix_with(&gate, &params, model).unwrap();
                Observation {
                    gate,
                    point: state_point(&rho, Some(gate)).unwrap(),
                    weight: 1.0,
                }
            })
            .collect();
        FitProblem {
            observations,
            ..template
        }
    }

    #[test]
    fn objective_vanishes_at_truth() {
        let p = synthetic(truth(), ModelOptions::default());
        assert!(fit_objective(&truth(), &p) < 1e-24);
        let bumped = FitTheta { d: 0.01, ..truth() };
        assert!(fit_objective(&bumped, &p) > 0.0);
    }

    #[test]
    fn doubling_weights_doubles_objective() {
        let mut p = synthetic(truth(), ModelOptions::default());
        let theta = FitTheta {
            fss_uev: 0.5,
            tau_hv_ps: 1500.0,
            d: 0.02,
        };
        let once = fit_objective(&theta, &p);
        p.observations.iter_mut().for_each(|o| o.weight *= 2.0);
        assert!((fit_objective(&theta, &p) - 2.0 * once).abs() <= 1e-12 * once);
    }

    #[test]
    fn recovers_generating_parameters() {
        let model = ModelOptions {
            weight: MixingWeight::GateResolved,
            ..Default::default()
        };
        let p = synthetic(truth(), model);
        let r = fit(&p).unwrap();
        assert!((r.s_hat / 0.36 - 1.0).abs() < 0.01, "S {}", r.s_hat);
        assert!(
            (r.tau_hv_hat / 2300.0 - 1.0).abs() < 0.01,
            "tau {}",
            r.tau_hv_hat
        );
        assert!((r.d_hat / 0.008 - 1.0).abs() < 0.01, "d {}", r.d_hat);
        assert_eq!(r.restart_objectives.len(), 10);
        assert!(r.objective >= 0.0);
    }

    #[test]
    fn d_pinned_at_zero_bound() {
        let theta = FitTheta { d: 0.0, ..truth() };
        let mut p = synthetic(theta, ModelOptions::default());
        p.bounds.d = (0.0, 0.0);
        let r = fit(&p).unwrap();
        assert_eq!(r.d_hat, 0.0);
        assert_eq!(r.uncertainty.d, 0.0);
        assert!((r.s_hat / 0.36 - 1.0).abs() < 0.01);
        assert!((r.tau_hv_hat / 2300.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn rejects_small_problems() {
        let mut p = synthetic(truth(), ModelOptions::default());
        p.observations.truncate(2);
        assert!(matches!(fit(&p), Err(FitError::InvalidProblem(_))));
        let mut p = synthetic(truth(), ModelOptions::default());
        p.bounds.s_uev = (1.0, 0.5);
        assert!(matches!(fit(&p), Err(FitError::InvalidProblem(_))));
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let p = synthetic(truth(), ModelOptions::default());
        let opts = FitOptions {
            max_evals: 20,
            restarts: 2,
            ..Default::default()
        };
        match fit_with(&p, &opts) {
            Err(FitError::NonConvergence(best)) => assert!(!best.converged),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn result_json_round_trip_with_infinite_tau() {
        let r = FitResult {
            s_hat: 0.1,
            tau_hv_hat: f64::INFINITY,
            d_hat: 0.0,
            objective: 1e-3,
            uncertainty: Uncertainty {
                s_uev: 0.01,
                tau_hv_ps: f64::INFINITY,
                d: 0.001,
            },
            converged: true,
            restart_objectives: vec![1e-3],
            best_restart: 0,
            evaluations: 10,
            residuals: "x".into(),
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"tau_hv_hat\":null"));
        let back: FitResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn larger_d_raises_predicted_entropy() {
        let p = synthetic(truth(), ModelOptions::default());
        let lo = p.predict(&truth());
        let hi = p.predict(&FitTheta { d: 0.02, ..truth() });
        for (a, b) in lo.iter().zip(&hi) {
            assert!(b.unwrap().s_lin > a.unwrap().s_lin);
        }
    }
}
