//! Fits of the fringe, Ramsey-decay and echo-decay line shapes.

use std::f64::consts::PI;

use super::lm::{fit_curve, Bounds, DataPoint, FitOptions, FitResult, Model};
use crate::error::{Error, Result};
use crate::qubit::{fringe_probability, DecayCurve, PulseParams, SequenceKind};

/// Regulariser in the binomial weight `shots / (p (1 - p) + eps)`.
pub const WEIGHT_EPSILON: f64 = 1e-3;

pub fn binomial_weight(p: f64, shots: u32) -> f64 {
    shots as f64 / (p * (1.0 - p) + WEIGHT_EPSILON)
}

/// `amplitude * P(df_mw - delta_f) + offset`, P the finite-pulse fringe.
pub struct FringeModel {
    pub params: PulseParams,
    pub t_e: f64,
}

impl Model for FringeModel {
    fn param_names(&self) -> &[&'static str] {
        &["delta_f", "amplitude", "offset"]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[1] * fringe_probability(&self.params, self.t_e, x - p[0]) + p[2]
    }
}

/// Best `(amplitude, offset)` for a fixed centre by weighted linear regression.
fn linear_scaling(shape: &[f64], data: &[DataPoint]) -> (f64, f64, f64) {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (s, d) in shape.iter().zip(data) {
        sw += d.weight;
        sx += d.weight * s;
        sy += d.weight * d.y;
        sxx += d.weight * s * s;
        sxy += d.weight * s * d.y;
    }
    let det = sw * sxx - sx * sx;
    let (a, b) = if det.abs() > 1e-300 {
        ((sw * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
    } else {
        (0.0, sy / sw)
    };
    let chi2 = shape
        .iter()
        .zip(data)
        .map(|(s, d)| d.weight * (d.y - a * s - b).powi(2))
        .sum();
    (a, b, chi2)
}

/// Fit the fringe centre of one scan line.
///
/// With `seed` the fit starts there (tracking mode); without it the centre
/// is seeded by a chi-square scan over the grid at sub-fringe resolution.
pub fn fit_fringe(
    detuning_grid: &[f64],
    p_up: &[f64],
    shots: u32,
    params: &PulseParams,
    t_e: f64,
    seed: Option<f64>,
) -> Result<FitResult> {
    if detuning_grid.len() != p_up.len() {
        return Err(Error::domain("grid and probabilities differ in length"));
    }
    if detuning_grid.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "fringe fit needs >= 10 points, got {}",
            detuning_grid.len()
        )));
    }
    let model = FringeModel { params: *params, t_e };
    let data: Vec<DataPoint> = detuning_grid
        .iter()
        .zip(p_up)
        .map(|(&x, &y)| DataPoint::new(x, y, binomial_weight(y, shots)))
        .collect();
    let (lo, hi) = (detuning_grid[0], detuning_grid[detuning_grid.len() - 1]);
    let span = hi - lo;

    let scan_at = |centre: f64| {
        let shape: Vec<f64> = detuning_grid
            .iter()
            .map(|&x| fringe_probability(params, t_e, x - centre))
            .collect();
        linear_scaling(&shape, &data)
    };

    let bounds = Bounds::new(&[(lo - span, hi + span), (0.0, 2.0), (-1.0, 1.0)]);
    let fit_from = |centre: f64| {
        let (a0, b0, _) = scan_at(centre);
        let guess = [centre, a0.clamp(0.05, 2.0), b0.clamp(-1.0, 1.0)];
        fit_curve(&model, &data, &guess, &bounds, &FitOptions::default())
    };
    if let Some(s) = seed.filter(|s| s.is_finite()) {
        return reweight(&model, &data, shots, &bounds, fit_from(s)?);
    }
    let spacing = span / (detuning_grid.len() - 1) as f64;
    let step = if t_e > 0.0 { spacing.min(1.0 / (8.0 * t_e)) } else { spacing } / 2.0;
    let n = (span / step).ceil() as usize;
    let scan: Vec<(f64, f64)> = (0..=n)
        .map(|i| lo + i as f64 * step)
        .map(|c| (c, scan_at(c).2))
        .collect();
    // Neighbouring fringes are nearly as tall as the central one, so the
    // deepest few local minima of the scan are all refined.
    let mut minima: Vec<(f64, f64)> = (0..scan.len())
        .filter(|&i| {
            let left = i == 0 || scan[i - 1].1 >= scan[i].1;
            let right = i + 1 == scan.len() || scan[i + 1].1 >= scan[i].1;
            left && right
        })
        .map(|i| scan[i])
        .collect();
    minima.sort_by(|a, b| a.1.total_cmp(&b.1));
    let first = best_of(minima.iter().take(FRINGE_CANDIDATES).map(|&(c, _)| fit_from(c)))?;
    reweight(&model, &data, shots, &bounds, first)
}

const FRINGE_CANDIDATES: usize = 4;

/// `A exp(-(t / T2*)^2) cos(2 pi df t) + B`.
pub struct RamseyDecayModel;

impl Model for RamseyDecayModel {
    fn param_names(&self) -> &[&'static str] {
        &["t2_star", "delta_f", "amplitude", "offset"]
    }

    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        p[2] * (-(t / p[0]).powi(2)).exp() * (2.0 * PI * p[1] * t).cos() + p[3]
    }

    fn gradient(&self, t: f64, p: &[f64], _steps: &[f64], out: &mut [f64]) {
        let env = (-(t / p[0]).powi(2)).exp();
        let (s, c) = (2.0 * PI * p[1] * t).sin_cos();
        out[0] = p[2] * env * c * 2.0 * t * t / p[0].powi(3);
        out[1] = -p[2] * env * s * 2.0 * PI * t;
        out[2] = env * c;
        out[3] = 1.0;
    }
}

/// `A (1 - exp(-(t / T2echo)^(alpha + 1))) + B`.
pub struct EchoDecayModel;

impl Model for EchoDecayModel {
    fn param_names(&self) -> &[&'static str] {
        &["t2_echo", "alpha", "amplitude", "offset"]
    }

    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        p[2] * (1.0 - (-(t / p[0]).powf(p[1] + 1.0)).exp()) + p[3]
    }

    fn gradient(&self, t: f64, p: &[f64], _steps: &[f64], out: &mut [f64]) {
        let u = t / p[0];
        if u <= 0.0 {
            out[0] = 0.0;
            out[1] = 0.0;
            out[2] = 0.0;
            out[3] = 1.0;
            return;
        }
        let q = u.powf(p[1] + 1.0);
        let e = (-q).exp();
        out[0] = -p[2] * e * q * (p[1] + 1.0) / p[0];
        out[1] = p[2] * e * q * u.ln();
        out[2] = 1.0 - e;
        out[3] = 1.0;
    }
}

const REWEIGHT_PASSES: usize = 2;

/// Refit with weights taken from the fitted probabilities instead of the
/// observed proportions, which over-weight points read out as 0 or 1.
fn reweight<M: Model + ?Sized>(
    model: &M,
    data: &[DataPoint],
    shots: u32,
    bounds: &Bounds,
    first: FitResult,
) -> Result<FitResult> {
    let mut current = first;
    for _ in 0..REWEIGHT_PASSES {
        let data: Vec<DataPoint> = data
            .iter()
            .map(|d| {
                let p = model.eval(d.x, &current.values).clamp(0.0, 1.0);
                DataPoint::new(d.x, d.y, binomial_weight(p, shots))
            })
            .collect();
        current = fit_curve(model, &data, &current.values, bounds, &FitOptions::default())?;
    }
    Ok(current)
}

fn curve_data(curve: &DecayCurve) -> Vec<DataPoint> {
    curve
        .t_e_grid_s
        .iter()
        .zip(&curve.p_up)
        .map(|(&t, &p)| DataPoint::new(t, p, binomial_weight(p, curve.shots_per_point)))
        .collect()
}

fn best_of(results: impl Iterator<Item = Result<FitResult>>) -> Result<FitResult> {
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(r) => {
                let better = best.as_ref().is_none_or(|b| {
                    (r.converged && !b.converged) || (r.converged == b.converged && r.chi_squared < b.chi_squared)
                });
                if better {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::FitFailed("no starting point".into())))
}

fn tail_mean(v: &[f64], frac: f64) -> f64 {
    let n = ((v.len() as f64 * frac).ceil() as usize).clamp(1, v.len());
    v[v.len() - n..].iter().sum::<f64>() / n as f64
}

/// Oscillation frequency seed: the strongest component of a direct
/// Fourier scan of the residual up to the grid's Nyquist frequency.
fn dominant_frequency(t: &[f64], y: &[f64]) -> f64 {
    let span = t[t.len() - 1] - t[0];
    if span <= 0.0 {
        return 0.0;
    }
    let dt = span / (t.len() - 1) as f64;
    let f_max = 0.5 / dt;
    let df = 0.25 / span;
    let n = (f_max / df) as usize;
    (0..=n)
        .map(|i| i as f64 * df)
        .map(|f| {
            let (re, im) = t.iter().zip(y).fold((0.0, 0.0), |(re, im), (&ti, &yi)| {
                let (s, c) = (2.0 * PI * f * ti).sin_cos();
                (re + yi * c, im + yi * s)
            });
            (f, re * re + im * im)
        })
        .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0
}

/// Fit a Ramsey free-induction decay.
pub fn fit_ramsey_decay(curve: &DecayCurve) -> Result<FitResult> {
    if curve.sequence_kind != SequenceKind::Ramsey {
        return Err(Error::domain("fit_ramsey_decay expects a Ramsey curve"));
    }
    if curve.p_up.len() < 6 {
        return Err(Error::InsufficientData("Ramsey fit needs >= 6 points".into()));
    }
    let t = &curve.t_e_grid_s;
    let y = &curve.p_up;
    let span = t[t.len() - 1];
    let b0 = tail_mean(y, 0.25);
    let a0 = y[0] - b0;
    let centred: Vec<f64> = y.iter().map(|v| v - b0).collect();
    let f0 = dominant_frequency(t, &centred);
    let crossing = t
        .iter()
        .zip(&centred)
        .find(|(_, c)| c.abs() < a0.abs() / std::f64::consts::E)
        .map(|(t, _)| *t)
        .filter(|&t| t > 0.0)
        .unwrap_or(span / 3.0);
    let f_nyq = 0.5 * (t.len() - 1) as f64 / (span - t[0]).max(f64::MIN_POSITIVE);
    let t_min = (span - t[0]) / (t.len() as f64 * 50.0);
    let bounds = Bounds::new(&[(t_min, 100.0 * span), (0.0, f_nyq), (-1.5, 1.5), (-0.5, 1.5)]);
    let data = curve_data(curve);
    let seeds_t = [crossing, span / 2.0, span / 4.0, span / 8.0];
    let seeds_f = if f0 > 0.0 { vec![f0, 0.0] } else { vec![0.0] };
    let a0 = if a0.abs() < 0.02 { 0.5 } else { a0.clamp(-1.5, 1.5) };
    let b0 = b0.clamp(-0.5, 1.5);
    let first = best_of(seeds_t.iter().flat_map(|&ts| {
        let data = &data;
        let bounds = &bounds;
        seeds_f.iter().map(move |&fs| {
            let guess = [ts.clamp(bounds.lower[0], bounds.upper[0]), fs.min(f_nyq), a0, b0];
            fit_curve(&RamseyDecayModel, data, &guess, bounds, &FitOptions::default())
        })
    }))?;
    reweight(&RamseyDecayModel, &data, curve.shots_per_point, &bounds, first)
}

/// Fit a Hahn-echo decay; `alpha` is held in `[0, 3]`.
pub fn fit_echo_decay(curve: &DecayCurve) -> Result<FitResult> {
    if curve.sequence_kind != SequenceKind::Echo {
        return Err(Error::domain("fit_echo_decay expects an echo curve"));
    }
    if curve.p_up.len() < 6 {
        return Err(Error::InsufficientData("echo fit needs >= 6 points".into()));
    }
    let t = &curve.t_e_grid_s;
    let y = &curve.p_up;
    let span = t[t.len() - 1];
    let b0 = y[0];
    let a0 = tail_mean(y, 0.15) - b0;
    let target = 1.0 - 1.0 / std::f64::consts::E;
    let crossing = t
        .iter()
        .zip(y)
        .find(|(_, &v)| a0 != 0.0 && (v - b0) / a0 > target)
        .map(|(t, _)| *t)
        .filter(|&t| t > 0.0)
        .unwrap_or(span / 2.0);
    let t_min = span / (t.len() as f64 * 50.0);
    let bounds = Bounds::new(&[(t_min, 100.0 * span), (0.0, 3.0), (-1.5, 1.5), (-0.5, 1.5)]);
    let data = curve_data(curve);
    let a0 = if a0.abs() < 0.02 { 0.5 } else { a0.clamp(-1.5, 1.5) };
    let b0 = b0.clamp(-0.5, 1.5);
    let first = best_of([crossing, span / 3.0, span / 1.5].into_iter().flat_map(|ts| {
        let data = &data;
        let bounds = &bounds;
        [1.0, 0.5, 2.0].into_iter().map(move |alpha| {
            let guess = [ts.clamp(bounds.lower[0], bounds.upper[0]), alpha, a0, b0];
            fit_curve(&EchoDecayModel, data, &guess, bounds, &FitOptions::default())
        })
    }))?;
    reweight(&EchoDecayModel, &data, curve.shots_per_point, &bounds, first)
}
