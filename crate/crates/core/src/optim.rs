//! Derivative-free simplex minimizer shared by tomography and parameter
//! fitting.

/// Nelder–Mead settings.
#[derive(Clone, Debug)]
pub struct NelderMead {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Relative tolerance on objective improvement.
    pub tol: f64,
    /// Converged once the best value improves by less than `tol` over this
    /// many iterations, or the simplex values spread by less than `tol`.
    pub stall_iters: usize,
    pub max_evals: usize,
}

impl NelderMead {
    /// Dimension-adapted coefficients (Gao & Han), which behave far better
    /// than the textbook ones beyond a handful of dimensions.
    pub fn adaptive(dim: usize) -> Self {
        let n = dim.max(2) as f64;
        Self {
            reflection: 1.0,
            expansion: 1.0 + 2.0 / n,
            contraction: 0.75 - 1.0 / (2.0 * n),
            shrink: 1.0 - 1.0 / n,
            tol: 1e-10,
            stall_iters: 50,
            max_evals: 200_000,
        }
    }

    fn scaled_tol(&self, f: f64) -> f64 {
        self.tol * (1.0 + f.abs())
    }

    /// Minimizes `f` from `x0`, building the first simplex with one step of
    /// `steps[i]` along each axis.
    pub fn minimize<F>(&self, mut f: F, x0: &[f64], steps: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let n = x0.len();
        assert_eq!(steps.len(), n, "one step per coordinate");
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let v0 = eval(x0, &mut evals);
        simplex.push((x0.to_vec(), v0));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += if steps[i] != 0.0 { steps[i] } else { 1e-3 };
            let v = eval(&x, &mut evals);
            simplex.push((x, v));
        }

        let mut trace = Vec::new();
        let mut iterations = 0usize;
        let mut converged = false;
        let mut centroid = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut trial2 = vec![0.0; n];

        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            trace.push(best);

            if worst - best <= self.scaled_tol(best) {
                converged = true;
                break;
            }
            if trace.len() > self.stall_iters {
                let old = trace[trace.len() - 1 - self.stall_iters];
                if old - best < self.scaled_tol(best) {
                    converged = true;
                    break;
                }
            }
            if evals >= self.max_evals {
                break;
            }
            iterations += 1;

            centroid.iter_mut().for_each(|c| *c = 0.0);
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi / n as f64;
                }
            }
            let (worst_x, worst_v) = (simplex[n].0.clone(), simplex[n].1);
            let second_worst = simplex[n - 1].1;

            for i in 0..n {
                trial[i] = centroid[i] + self.reflection * (centroid[i] - worst_x[i]);
            }
            let fr = eval(&trial, &mut evals);

            if fr < best {
                for i in 0..n {
                    trial2[i] = centroid[i] + self.expansion * (trial[i] - centroid[i]);
                }
                let fe = eval(&trial2, &mut evals);
                simplex[n] = if fe < fr {
                    (trial2.clone(), fe)
                } else {
                    (trial.clone(), fr)
                };
                continue;
            }
            if fr < second_worst {
                simplex[n] = (trial.clone(), fr);
                continue;
            }
            // Contraction, outside if the reflection beat the worst point.
            let outside = fr < worst_v;
            for i in 0..n {
                trial2[i] = if outside {
                    centroid[i] + self.contraction * (trial[i] - centroid[i])
                } else {
                    centroid[i] + self.contraction * (worst_x[i] - centroid[i])
                };
            }
            let fc = eval(&trial2, &mut evals);
            if (outside && fc <= fr) || (!outside && fc < worst_v) {
                simplex[n] = (trial2.clone(), fc);
                continue;
            }
            let anchor = simplex[0].0.clone();
            for (x, v) in simplex.iter_mut().skip(1) {
                for (xi, ai) in x.iter_mut().zip(&anchor) {
                    *xi = ai + self.shrink * (*xi - ai);
                }
                *v = eval(x, &mut evals);
            }
        }

        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, value) = simplex.swap_remove(0);
        Minimum {
            x,
            value,
            evals,
            iterations,
            converged,
            trace,
        }
    }
}

/// Result of one simplex run.
#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value at the start of every iteration.
    pub trace: Vec<f64>,
}
