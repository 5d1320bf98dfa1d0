//! Damped Gauss-Newton (Levenberg-Marquardt) for small smooth models.

use nalgebra::{DMatrix, DVector};

pub(crate) const MAX_ITERATIONS: usize = 500;
const STEP_TOLERANCE: f64 = 1e-8;
const DAMPING_UP: f64 = 10.0;
const DAMPING_DOWN: f64 = 0.3;
const DAMPING_MAX: f64 = 1e16;

/// A least-squares problem in an unconstrained parameter space.
pub(crate) trait Problem {
    fn n_residuals(&self) -> usize;
    /// `model - data` at each sample.
    fn residuals(&self, theta: &[f64], out: &mut [f64]);
    /// Row `i` holds the gradient of residual `i` with respect to `theta`.
    fn jacobian(&self, theta: &[f64], out: &mut DMatrix<f64>);
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub theta: Vec<f64>,
    /// Half the sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub history: Vec<f64>,
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

pub(crate) fn minimize<P: Problem>(problem: &P, init: &[f64]) -> Outcome {
    let m = problem.n_residuals();
    let n = init.len();
    let mut theta = init.to_vec();
    let mut r = vec![0.0; m];
    let mut trial_r = vec![0.0; m];
    let mut jac = DMatrix::zeros(m, n);

    problem.residuals(&theta, &mut r);
    let mut cost = cost_of(&r);
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    if !cost.is_finite() {
        return Outcome { theta, cost, iterations, converged, history };
    }

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        problem.jacobian(&theta, &mut jac);
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * rv;

        let mut accepted = false;
        while lambda <= DAMPING_MAX {
            let mut a = jtj.clone();
            for i in 0..n {
                let d = jtj[(i, i)];
                a[(i, i)] += lambda * if d > 0.0 { d } else { 1.0 };
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= DAMPING_UP;
                    continue;
                }
            };
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            problem.residuals(&trial, &mut trial_r);
            let trial_cost = cost_of(&trial_r);
            if trial_cost.is_finite() && trial_cost < cost {
                let small = step.iter().all(|s| s.abs() < STEP_TOLERANCE);
                theta = trial;
                std::mem::swap(&mut r, &mut trial_r);
                cost = trial_cost;
                history.push(cost);
                lambda = (lambda * DAMPING_DOWN).max(1e-12);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            // A step too small to change the parameters that still fails to
            // descend means we sit at the minimum to working precision.
            if step.iter().all(|s| s.abs() < STEP_TOLERANCE * 1e-3) {
                converged = true;
                break;
            }
            lambda *= DAMPING_UP;
        }
        if converged || !accepted {
            break;
        }
    }

    Outcome { theta, cost, iterations, converged, history }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Linear model y = a + b t in (a, b).
    struct Line {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl Problem for Line {
        fn n_residuals(&self) -> usize {
            self.t.len()
        }
        fn residuals(&self, th: &[f64], out: &mut [f64]) {
            for (i, (t, y)) in self.t.iter().zip(&self.y).enumerate() {
                out[i] = th[0] + th[1] * t - y;
            }
        }
        fn jacobian(&self, _th: &[f64], out: &mut DMatrix<f64>) {
            for (i, t) in self.t.iter().enumerate() {
                out[(i, 0)] = 1.0;
                out[(i, 1)] = *t;
            }
        }
    }

    #[test]
    fn solves_linear_least_squares() {
        let t: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.0 - 0.5 * t + if (*t as i32) % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let out = minimize(&Line { t: t.clone(), y: y.clone() }, &[0.0, 0.0]);
        assert!(out.converged);
        // closed-form normal equations
        let n = t.len() as f64;
        let (st, sy) = (t.iter().sum::<f64>(), y.iter().sum::<f64>());
        let stt = t.iter().map(|x| x * x).sum::<f64>();
        let sty = t.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        let b = (n * sty - st * sy) / (n * stt - st * st);
        let a = (sy - b * st) / n;
        assert!((out.theta[0] - a).abs() < 1e-8);
        assert!((out.theta[1] - b).abs() < 1e-8);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
