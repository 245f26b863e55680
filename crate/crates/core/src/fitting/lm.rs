//! Damped (Levenberg-Marquardt) weighted least squares with box bounds.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar model `y = f(x; p)`.
pub trait Model: Sync {
    fn param_names(&self) -> &[&'static str];

    fn eval(&self, x: f64, params: &[f64]) -> f64;

    fn n_params(&self) -> usize {
        self.param_names().len()
    }

    /// Partial derivatives at `x`; central differences unless overridden.
    /// `steps[j]` is the absolute step for parameter `j`.
    fn gradient(&self, x: f64, params: &[f64], steps: &[f64], out: &mut [f64]) {
        let mut p = params.to_vec();
        for j in 0..params.len() {
            let h = steps[j];
            p[j] = params[j] + h;
            let up = self.eval(x, &p);
            p[j] = params[j] - h;
            let down = self.eval(x, &p);
            p[j] = params[j];
            out[j] = (up - down) / (2.0 * h);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

impl DataPoint {
    pub fn new(x: f64, y: f64, weight: f64) -> Self {
        Self { x, y, weight }
    }
}

/// Box bounds; a parameter with `lo == hi` is held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn new(pairs: &[(f64, f64)]) -> Self {
        Self {
            lower: pairs.iter().map(|p| p.0).collect(),
            upper: pairs.iter().map(|p| p.1).collect(),
        }
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.lower[j] == self.upper[j]
    }

    fn clamp(&self, j: usize, v: f64) -> f64 {
        v.clamp(self.lower[j], self.upper[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative objective decrease below which an accepted step ends the fit.
    pub f_tol: f64,
    /// Relative parameter change below which an accepted step ends the fit.
    pub x_tol: f64,
    pub initial_damping: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            f_tol: 1e-14,
            x_tol: 1e-13,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: BTreeMap<String, f64>,
    pub standard_errors: BTreeMap<String, f64>,
    pub residual_rms: f64,
    pub converged: bool,
    pub n_iterations: usize,
    /// Weighted sum of squared residuals at the solution.
    pub chi_squared: f64,
    pub n_points: usize,
    /// Parameters in model order.
    pub values: Vec<f64>,
    /// Objective after the initial guess and after every accepted step.
    #[serde(skip)]
    pub objective_history: Vec<f64>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> f64 {
        self.parameters.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn error(&self, name: &str) -> f64 {
        self.standard_errors.get(name).copied().unwrap_or(f64::NAN)
    }
}

fn objective<M: Model + ?Sized>(model: &M, data: &[DataPoint], p: &[f64]) -> f64 {
    data.iter()
        .map(|d| {
            let r = d.y - model.eval(d.x, p);
            d.weight * r * r
        })
        .sum()
}

/// Minimise `sum w_i (y_i - f(x_i; p))^2` from `initial` within `bounds`.
///
/// A parameter is frozen when its bounds coincide. Non-convergence within
/// `max_iterations` is reported through `converged = false` with the best
/// parameters found.
pub fn fit_curve<M: Model + ?Sized>(
    model: &M,
    data: &[DataPoint],
    initial: &[f64],
    bounds: &Bounds,
    options: &FitOptions,
) -> Result<FitResult> {
    let n = model.n_params();
    if initial.len() != n || bounds.lower.len() != n || bounds.upper.len() != n {
        return Err(Error::domain("parameter, guess and bound lengths disagree"));
    }
    for j in 0..n {
        if !initial[j].is_finite() || initial[j] < bounds.lower[j] || initial[j] > bounds.upper[j] {
            return Err(Error::domain(format!(
                "initial value {} for `{}` is not finite or out of bounds",
                initial[j],
                model.param_names()[j]
            )));
        }
    }
    if data.iter().any(|d| !(d.x.is_finite() && d.y.is_finite() && d.weight.is_finite() && d.weight >= 0.0)) {
        return Err(Error::domain("data points must be finite with nonnegative weights"));
    }
    let free: Vec<usize> = (0..n).filter(|&j| !bounds.is_fixed(j)).collect();
    if data.len() < free.len() {
        return Err(Error::InsufficientData(format!(
            "{} points for {} free parameters",
            data.len(),
            free.len()
        )));
    }
    let scales: Vec<f64> = (0..n)
        .map(|j| {
            let width = bounds.upper[j] - bounds.lower[j];
            if initial[j] != 0.0 {
                initial[j].abs()
            } else if width.is_finite() && width > 0.0 {
                width * 1e-3
            } else {
                1.0
            }
        })
        .collect();
    let step_for = |p: &[f64]| -> Vec<f64> {
        (0..n).map(|j| 6e-6 * p[j].abs().max(scales[j] * 1e-3).max(f64::MIN_POSITIVE)).collect()
    };

    let m = data.len();
    let k = free.len();
    let mut p = initial.to_vec();
    let mut chi2 = objective(model, data, &p);
    if !chi2.is_finite() {
        return Err(Error::FitFailed("objective is not finite at the initial guess".into()));
    }
    let mut history = vec![chi2];
    let mut lambda = options.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    let mut grad = vec![0.0; n];

    let jacobian = |p: &[f64], grad: &mut [f64]| -> (DMatrix<f64>, DVector<f64>) {
        let steps = step_for(p);
        let mut jac = DMatrix::zeros(m, k);
        let mut res = DVector::zeros(m);
        for (i, d) in data.iter().enumerate() {
            let sw = d.weight.sqrt();
            res[i] = sw * (d.y - model.eval(d.x, p));
            model.gradient(d.x, p, &steps, grad);
            for (c, &j) in free.iter().enumerate() {
                jac[(i, c)] = -sw * grad[j];
            }
        }
        (jac, res)
    };

    if k == 0 {
        converged = true;
    }
    'outer: while !converged && iterations < options.max_iterations {
        iterations += 1;
        let (jac, res) = jacobian(&p, &mut grad);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        if jtr.amax() <= 1e-300 || chi2 == 0.0 {
            converged = true;
            break;
        }
        let diag_max = (0..k).map(|c| jtj[(c, c)]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
        loop {
            let mut a = jtj.clone();
            for c in 0..k {
                a[(c, c)] += lambda * jtj[(c, c)].max(1e-12 * diag_max);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                if lambda > 1e20 {
                    converged = true;
                    break 'outer;
                }
                continue;
            };
            let delta = chol.solve(&(-&jtr));
            let mut trial = p.clone();
            for (c, &j) in free.iter().enumerate() {
                trial[j] = bounds.clamp(j, p[j] + delta[c]);
            }
            let trial_chi2 = objective(model, data, &trial);
            if trial_chi2.is_finite() && trial_chi2 < chi2 {
                let rel_drop = (chi2 - trial_chi2) / chi2;
                let rel_step = free
                    .iter()
                    .map(|&j| (trial[j] - p[j]).abs() / (p[j].abs() + scales[j] * 1e-6))
                    .fold(0.0f64, f64::max);
                p = trial;
                chi2 = trial_chi2;
                history.push(chi2);
                lambda = (lambda / 10.0).max(1e-15);
                if rel_drop < options.f_tol || rel_step < options.x_tol || chi2 == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                // No descent direction left at working precision.
                converged = true;
                break 'outer;
            }
        }
    }

    let dof = (m - k).max(1) as f64;
    let mut errors = vec![0.0; n];
    if k > 0 {
        let (jac, _) = jacobian(&p, &mut grad);
        let jtj = jac.transpose() * &jac;
        let cov = jtj
            .clone()
            .try_inverse()
            .filter(|inv| inv.iter().all(|v| v.is_finite()))
            .or_else(|| jtj.pseudo_inverse(1e-14).ok());
        match cov {
            Some(cov) => {
                let s2 = chi2 / dof;
                for (c, &j) in free.iter().enumerate() {
                    errors[j] = (cov[(c, c)].abs() * s2).sqrt();
                }
            }
            None => errors.iter_mut().for_each(|e| *e = f64::NAN),
        }
    }
    let names = model.param_names();
    Ok(FitResult {
        parameters: names.iter().zip(&p).map(|(n, v)| (n.to_string(), *v)).collect(),
        standard_errors: names.iter().zip(&errors).map(|(n, v)| (n.to_string(), *v)).collect(),
        residual_rms: (chi2 / m as f64).sqrt(),
        converged,
        n_iterations: iterations,
        chi_squared: chi2,
        n_points: m,
        values: p,
        objective_history: history,
    })
}

/// Straight line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LineModel;

impl Model for LineModel {
    fn param_names(&self) -> &[&'static str] {
        &["intercept", "slope"]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] + p[1] * x
    }

    fn gradient(&self, x: f64, _p: &[f64], _steps: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, SeedStreams};
    use rand_distr::{Distribution, StandardNormal};

    struct Quadratic;
    impl Model for Quadratic {
        fn param_names(&self) -> &[&'static str] {
            &["c0", "c1", "c2"]
        }
        fn eval(&self, x: f64, p: &[f64]) -> f64 {
            p[0] + p[1] * x + p[2] * x * x
        }
    }

    struct Gaussian;
    impl Model for Gaussian {
        fn param_names(&self) -> &[&'static str] {
            &["t2"]
        }
        fn eval(&self, x: f64, p: &[f64]) -> f64 {
            (-(x / p[0]).powi(2)).exp()
        }
    }

    #[test]
    fn exact_line() {
        let data: Vec<_> = (0..10).map(|i| DataPoint::new(i as f64, 3.0 - 0.5 * i as f64, 1.0)).collect();
        let r = fit_curve(&LineModel, &data, &[0.0, 0.0], &Bounds::unbounded(2), &FitOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.get("intercept") - 3.0).abs() < 1e-10);
        assert!((r.get("slope") + 0.5).abs() < 1e-10);
        assert!(r.residual_rms < 1e-10);
    }

    #[test]
    fn gaussian_decay_identity() {
        let t2 = 20e-6;
        let data: Vec<_> = (0..40)
            .map(|i| {
                let t = i as f64 * 1.5e-6;
                DataPoint::new(t, (-(t / t2).powi(2)).exp(), 1.0)
            })
            .collect();
        let r = fit_curve(&Gaussian, &data, &[35e-6], &Bounds::new(&[(1e-9, 1.0)]), &FitOptions::default()).unwrap();
        assert!(r.converged);
        assert!(((r.get("t2") - t2) / t2).abs() < 1e-6, "{}", r.get("t2"));
    }

    #[test]
    fn objective_never_increases() {
        let data: Vec<_> = (0..30)
            .map(|i| {
                let t = i as f64 * 2e-6;
                DataPoint::new(t, (-(t / 17e-6).powi(2)).exp() + 0.01 * ((i * 7 % 5) as f64 - 2.0), 1.0)
            })
            .collect();
        let r = fit_curve(&Gaussian, &data, &[3e-6], &Bounds::new(&[(1e-9, 1.0)]), &FitOptions::default()).unwrap();
        assert!(r.objective_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.objective_history.len() > 2);
    }

    #[test]
    fn quadratic_errors_are_calibrated() {
        // 100 seeded trials of a 10%-noise quadratic; parameters should fall
        // within 3 standard errors nearly always.
        let truth = [1.0, -2.0, 0.5];
        let streams = SeedStreams::new(2024);
        let mut inside = 0;
        for trial in 0..100 {
            let mut rng = streams.stream(Domain::Fitting, trial);
            let data: Vec<_> = (0..1000)
                .map(|i| {
                    let x = -2.0 + 4.0 * i as f64 / 999.0;
                    let y0 = Quadratic.eval(x, &truth);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    DataPoint::new(x, y0 + 0.1 * z, 1.0)
                })
                .collect();
            let r = fit_curve(&Quadratic, &data, &[0.0, 0.0, 0.0], &Bounds::unbounded(3), &FitOptions::default()).unwrap();
            assert!(r.converged);
            let ok = ["c0", "c1", "c2"]
                .iter()
                .zip(truth)
                .all(|(name, t)| (r.get(name) - t).abs() <= 3.0 * r.error(name));
            inside += ok as usize;
        }
        assert!(inside >= 97, "only {inside}/100 within 3 sigma");
    }

    #[test]
    fn fixed_parameter_stays_put() {
        let data: Vec<_> = (0..10).map(|i| DataPoint::new(i as f64, 1.0 + 2.0 * i as f64, 1.0)).collect();
        let b = Bounds::new(&[(1.5, 1.5), (f64::NEG_INFINITY, f64::INFINITY)]);
        let r = fit_curve(&LineModel, &data, &[1.5, 0.0], &b, &FitOptions::default()).unwrap();
        assert_eq!(r.get("intercept"), 1.5);
        assert_eq!(r.error("intercept"), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = vec![DataPoint::new(0.0, 1.0, 1.0)];
        assert!(matches!(
            fit_curve(&LineModel, &data, &[0.0, 0.0], &Bounds::unbounded(2), &FitOptions::default()),
            Err(Error::InsufficientData(_))
        ));
        let data: Vec<_> = (0..5).map(|i| DataPoint::new(i as f64, 1.0, 1.0)).collect();
        let b = Bounds::new(&[(0.0, 1.0), (0.0, 1.0)]);
        assert!(fit_curve(&LineModel, &data, &[2.0, 0.0], &b, &FitOptions::default()).is_err());
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let data: Vec<_> = (0..40)
            .map(|i| {
                let t = i as f64 * 1.5e-6;
                DataPoint::new(t, (-(t / 20e-6).powi(2)).exp(), 1.0)
            })
            .collect();
        let opts = FitOptions {
            max_iterations: 1,
            ..FitOptions::default()
        };
        let r = fit_curve(&Gaussian, &data, &[60e-6], &Bounds::new(&[(1e-9, 1.0)]), &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.n_iterations, 1);
        assert!(r.chi_squared <= r.objective_history[0]);
    }
}
