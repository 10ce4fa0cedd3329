//! Weighted ridge logistic regression fitted by Newton's method (IRLS).
//!
//! The objective is the weighted *mean* log-likelihood minus
//! `ridge * ||beta||^2` (intercept unpenalized). Averaging makes the fit
//! invariant to rescaling the weights, and a weight of 2 is exactly a
//! duplicated row.

use nalgebra::{DMatrix, DVector};

use crate::data::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticConfig {
    pub max_iterations: usize,
    /// Converged when the largest coefficient change falls below this.
    pub tolerance: f64,
    pub ridge: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-10,
            ridge: 1e-6,
        }
    }
}

impl LogisticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "max_iterations must be positive".into(),
            ));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if !self.ridge.is_finite() || self.ridge < 0.0 {
            return Err(Error::InvalidArgument("ridge must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LogisticModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(x))
    }
}

/// Fit diagnostics alongside the model.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub model: LogisticModel,
    pub iterations: usize,
    /// False when the iteration cap was hit first.
    pub converged: bool,
    /// Penalized objective before the first step and after each step.
    pub objective_trace: Vec<f64>,
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

struct Problem<'a> {
    x: &'a Matrix,
    y: &'a [u8],
    w: Vec<f64>,
    ridge: f64,
}

impl Problem<'_> {
    fn eta(&self, theta: &DVector<f64>, i: usize) -> f64 {
        theta[0]
            + self
                .x
                .row(i)
                .iter()
                .enumerate()
                .map(|(j, v)| theta[j + 1] * v)
                .sum::<f64>()
    }

    fn objective(&self, theta: &DVector<f64>) -> f64 {
        let ll: f64 = (0..self.x.rows())
            .filter(|&i| self.w[i] > 0.0)
            .map(|i| {
                let eta = self.eta(theta, i);
                self.w[i] * (f64::from(self.y[i]) * eta - softplus(eta))
            })
            .sum();
        let penalty: f64 = theta.iter().skip(1).map(|b| b * b).sum();
        ll - self.ridge * penalty
    }

    /// Newton direction `H^{-1} g` for the penalized objective.
    fn newton_step(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.x.cols() + 1;
        let mut hess = DMatrix::<f64>::zeros(d, d);
        let mut grad = DVector::<f64>::zeros(d);
        let mut row = vec![0.0; d];
        row[0] = 1.0;
        for i in 0..self.x.rows() {
            let wi = self.w[i];
            if wi == 0.0 {
                continue;
            }
            row[1..].copy_from_slice(self.x.row(i));
            let mu = sigmoid(self.eta(theta, i));
            let r = wi * (f64::from(self.y[i]) - mu);
            let v = wi * mu * (1.0 - mu);
            for a in 0..d {
                grad[a] += r * row[a];
                let va = v * row[a];
                for b in 0..=a {
                    hess[(a, b)] += va * row[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        for j in 1..d {
            grad[j] -= 2.0 * self.ridge * theta[j];
            hess[(j, j)] += 2.0 * self.ridge;
        }
        let chol = hess.cholesky().ok_or(Error::Singular)?;
        let step = chol.solve(&grad);
        if step.iter().all(|s| s.is_finite()) {
            Ok(step)
        } else {
            Err(Error::Singular)
        }
    }
}

/// Fit by IRLS with step-halving, so the objective never decreases.
pub fn fit_logistic(x: &Matrix, y: &[u8], w: &[f64], cfg: &LogisticConfig) -> Result<LogisticFit> {
    cfg.validate()?;
    let n = x.rows();
    for len in [y.len(), w.len()] {
        if len != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: len,
            });
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if w.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::InvalidArgument(
            "weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("all weights are zero".into()));
    }
    let problem = Problem {
        x,
        y,
        w: w.iter().map(|v| v / total).collect(),
        ridge: cfg.ridge,
    };

    let mut theta = DVector::<f64>::zeros(x.cols() + 1);
    let mut current = problem.objective(&theta);
    let mut trace = vec![current];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let step = problem.newton_step(&theta)?;
        let mut scale = 1.0;
        let (next, value) = loop {
            let candidate = &theta + &step * scale;
            let value = problem.objective(&candidate);
            if value >= current || scale < 1e-10 {
                break (candidate, value);
            }
            scale *= 0.5;
        };
        if value < current {
            // no ascent along the Newton direction: at the optimum up to rounding
            converged = true;
            break;
        }
        let change = (&next - &theta).amax();
        theta = next;
        current = value;
        trace.push(current);
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(LogisticFit {
        model: LogisticModel {
            intercept: theta[0],
            coefficients: theta.iter().skip(1).copied().collect(),
        },
        iterations,
        converged,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_features_balanced_labels() {
        let x = Matrix::zeros(4, 2);
        let fit = fit_logistic(&x, &[1, 0, 1, 0], &[1.0; 4], &LogisticConfig::default()).unwrap();
        assert!(fit.model.intercept.abs() < 1e-12);
        assert!(fit.model.coefficients.iter().all(|b| b.abs() < 1e-12));
        assert!((fit.model.score(&[3.0, -1.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn intercept_only_recovers_log_odds() {
        let x = Matrix::zeros(4, 1);
        let fit = fit_logistic(&x, &[1, 1, 1, 0], &[1.0; 4], &LogisticConfig::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.model.intercept - 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn separable_data_stays_bounded() {
        let x = Matrix::new(4, 1, vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        let fit = fit_logistic(&x, &[1, 1, 0, 0], &[1.0; 4], &LogisticConfig::default()).unwrap();
        let b = fit.model.coefficients[0];
        assert!(b > 0.0 && b.is_finite() && b < 50.0);
        for pair in fit.objective_trace.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = Matrix::zeros(2, 1);
        let cfg = LogisticConfig::default();
        assert!(fit_logistic(&x, &[1], &[1.0, 1.0], &cfg).is_err());
        assert!(fit_logistic(&x, &[1, 0], &[0.0, 0.0], &cfg).is_err());
        let bad = LogisticConfig {
            max_iterations: 0,
            ..cfg
        };
        assert!(fit_logistic(&x, &[1, 0], &[1.0, 1.0], &bad).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }
}
