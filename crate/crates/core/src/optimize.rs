//! Derivative-free Nelder–Mead simplex minimization.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMead {
    /// Hard cap on objective evaluations.
    pub max_evals: usize,
    /// Edge length of the initial simplex along each coordinate.
    pub initial_step: f64,
    /// Stop once the spread of simplex values falls below this.
    pub f_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_evals: 200,
            initial_step: 0.5,
            f_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

impl NelderMead {
    pub fn new(max_evals: usize) -> Self {
        NelderMead {
            max_evals,
            ..Default::default()
        }
    }

    /// Minimize `f` from `x0`. Non-finite objective values are treated as `+inf`.
    pub fn minimize(&self, mut f: impl FnMut(&[f64]) -> f64, x0: &[f64]) -> Minimum {
        let n = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };

        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let v0 = eval(x0, &mut evals);
        simplex.push((x0.to_vec(), v0));
        for i in 0..n {
            if evals >= self.max_evals {
                break;
            }
            let mut x = x0.to_vec();
            x[i] += self.initial_step;
            let v = eval(&x, &mut evals);
            simplex.push((x, v));
        }
        if simplex.len() < n + 1 || n == 0 {
            let best = simplex.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
            return Minimum {
                x: best.0,
                value: best.1,
                evaluations: evals,
            };
        }

        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        while evals < self.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let (best, worst) = (simplex[0].1, simplex[n].1);
            if best.is_finite() && (worst - best).abs() <= self.f_tol * (1.0 + best.abs()) {
                break;
            }
            let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|p| p.0[j]).sum::<f64>() / n as f64).collect();
            let along = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect()
            };

            let xr = along(-alpha);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                if evals >= self.max_evals {
                    simplex[n] = (xr, fr);
                    break;
                }
                let xe = along(-gamma);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            if evals >= self.max_evals {
                break;
            }
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(-rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
                continue;
            }
            // shrink towards the best vertex
            let best_x = simplex[0].0.clone();
            for p in simplex.iter_mut().skip(1) {
                if evals >= self.max_evals {
                    break;
                }
                p.0 = best_x.iter().zip(&p.0).map(|(b, x)| b + sigma * (x - b)).collect();
                p.1 = eval(&p.0, &mut evals);
            }
        }
        let best = simplex.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        Minimum {
            x: best.0,
            value: best.1,
            evaluations: evals,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let m = NelderMead::new(500).minimize(|x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2), &[0.0, 0.0]);
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] + 2.0).abs() < 1e-3, "{m:?}");
    }

    #[test]
    fn rosenbrock_progress() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = NelderMead {
            max_evals: 2000,
            initial_step: 0.5,
            f_tol: 1e-14,
        }
        .minimize(f, &[-1.2, 1.0]);
        assert!(m.value < 1e-6, "{m:?}");
    }

    #[test]
    fn respects_budget_and_infinite_regions() {
        let mut calls = 0;
        let m = NelderMead::new(7).minimize(
            |x| {
                calls += 1;
                if x[0] > 0.2 {
                    f64::NAN
                } else {
                    x.iter().map(|v| v * v).sum()
                }
            },
            &[0.0, 1.0, 1.0],
        );
        assert!(m.evaluations <= 7 && calls == m.evaluations);
        assert!(m.value.is_finite());
    }

    #[test]
    fn deterministic() {
        let f = |x: &[f64]| (x[0] - 0.3).abs() + (x[1] * x[1] - 0.5).powi(2);
        let a = NelderMead::new(100).minimize(f, &[1.0, 1.0]);
        let b = NelderMead::new(100).minimize(f, &[1.0, 1.0]);
        assert_eq!(a, b);
    }
}
