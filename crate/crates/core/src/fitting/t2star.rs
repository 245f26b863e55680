//! Dependence of T2* on the total measurement time.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lm::{fit_curve, Bounds, DataPoint, FitOptions, Model};
use super::models::fit_ramsey_decay;
use crate::error::{Error, Result};
use crate::qubit::DecayCurve;

/// `(t_m^b - t_e^b) / b` with `b = alpha - 1`, continuous through `b = 0`.
fn band_integral(alpha: f64, t_m: f64, t_e: f64) -> f64 {
    let b = alpha - 1.0;
    let log_ratio = (t_m / t_e).ln();
    if (b * log_ratio).abs() < 1e-12 {
        log_ratio
    } else {
        t_e.powf(b) * (b * log_ratio).exp_m1() / b
    }
}

/// T2* predicted for `S(f) = S0 / f^alpha` integrated from `1/t_m` to `1/t_e`.
pub fn t2star_prediction(s0: f64, alpha: f64, t_m: f64, t_e: f64) -> Result<f64> {
    if !(t_e > 0.0) || !(t_m > t_e) {
        return Err(Error::domain(format!("need t_m > t_e > 0, got t_m={t_m}, t_e={t_e}")));
    }
    if !(s0 > 0.0) || !alpha.is_finite() {
        return Err(Error::domain("S0 must be positive and alpha finite"));
    }
    Ok((4.0 * PI * PI * s0 * band_integral(alpha, t_m, t_e)).powf(-0.5))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct T2StarSeries {
    pub t_m_s: Vec<f64>,
    pub t2star_s: Vec<f64>,
    pub n_bundles: Vec<usize>,
    /// Spread between bundles.
    pub t2star_std_s: Vec<f64>,
    /// Standard error of the bundle mean.
    pub t2star_sem_s: Vec<f64>,
}

impl T2StarSeries {
    pub fn len(&self) -> usize {
        self.t_m_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_m_s.is_empty()
    }

    /// Series without bundle statistics, e.g. from a closed form.
    pub fn from_points(t_m_s: Vec<f64>, t2star_s: Vec<f64>) -> Result<Self> {
        if t_m_s.len() != t2star_s.len() {
            return Err(Error::domain("t_m and T2* lengths differ"));
        }
        if t_m_s.windows(2).any(|w| !(w[1] > w[0])) || t2star_s.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::domain("t_m must increase strictly and T2* be positive"));
        }
        let n = t_m_s.len();
        Ok(Self {
            t_m_s,
            t2star_s,
            n_bundles: vec![1; n],
            t2star_std_s: vec![0.0; n],
            t2star_sem_s: vec![0.0; n],
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t_m_s", "t2star_s", "n_bundles", "t2star_std_s", "t2star_sem_s"])?;
        for i in 0..self.len() {
            out.write_record([
                self.t_m_s[i].to_string(),
                self.t2star_s[i].to_string(),
                self.n_bundles[i].to_string(),
                self.t2star_std_s[i].to_string(),
                self.t2star_sem_s[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Log-spaced measurement times, inclusive of both ends.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Bundle-averaged T2* for each requested measurement time.
///
/// A bundle is `ceil(t_m / line_duration)` consecutive lines; bundles start
/// every `bundle_offset` lines. Measurement times needing more lines than
/// available are skipped with a warning, as are bundles whose fit fails.
pub fn t2star_vs_tm(
    lines: &[DecayCurve],
    line_duration_s: f64,
    bundle_offset: usize,
    t_m_list: &[f64],
) -> Result<T2StarSeries> {
    if !(line_duration_s > 0.0) || bundle_offset == 0 {
        return Err(Error::domain("line duration and bundle offset must be positive"));
    }
    let mut t_m_sorted = t_m_list.to_vec();
    t_m_sorted.sort_by(f64::total_cmp);
    t_m_sorted.dedup();
    let mut series = T2StarSeries::default();
    let mut last_size = 0;
    for t_m in t_m_sorted {
        let size = ((t_m / line_duration_s) - 1e-9).ceil().max(1.0) as usize;
        if size > lines.len() {
            log::warn!("t_m = {t_m} s needs {size} lines, only {} available; skipped", lines.len());
            continue;
        }
        if size == last_size {
            continue;
        }
        last_size = size;
        let starts: Vec<usize> = (0..=lines.len() - size).step_by(bundle_offset).collect();
        let fits: Vec<f64> = starts
            .par_iter()
            .filter_map(|&s| {
                let avg = DecayCurve::average(&lines[s..s + size]).ok()?;
                match fit_ramsey_decay(&avg) {
                    Ok(r) if r.converged => Some(r.get("t2_star")),
                    _ => None,
                }
            })
            .collect();
        if fits.is_empty() {
            log::warn!("no bundle fit converged at t_m = {t_m} s; skipped");
            continue;
        }
        let n = fits.len() as f64;
        let mean = fits.iter().sum::<f64>() / n;
        let std = if fits.len() > 1 {
            (fits.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        series.t_m_s.push(size as f64 * line_duration_s);
        series.t2star_s.push(mean);
        series.n_bundles.push(fits.len());
        series.t2star_std_s.push(std);
        series.t2star_sem_s.push(std / n.sqrt());
    }
    if series.is_empty() {
        return Err(Error::InsufficientData("no measurement time could be evaluated".into()));
    }
    Ok(series)
}

/// `T2*(t_m)` with parameters `[ln S0, alpha]`.
struct PredictionModel {
    t_e: f64,
}

impl Model for PredictionModel {
    fn param_names(&self) -> &[&'static str] {
        &["ln_s0", "alpha"]
    }

    fn eval(&self, t_m: f64, p: &[f64]) -> f64 {
        (4.0 * PI * PI * p[0].exp() * band_integral(p[1], t_m, self.t_e)).powf(-0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2StarRegime {
    pub t_m_min_s: f64,
    pub t_m_max_s: f64,
    pub s0: f64,
    pub s0_error: f64,
    pub alpha: f64,
    pub alpha_error: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2StarFit {
    pub regimes: Vec<T2StarRegime>,
    /// RMS of relative residuals over all regimes.
    pub residual_rms: f64,
}

fn fit_regime(t_m: &[f64], t2: &[f64], t_e: f64) -> Result<(T2StarRegime, f64)> {
    if t_m.len() < 4 {
        return Err(Error::domain(format!("a T2*(t_m) regime needs >= 4 points, got {}", t_m.len())));
    }
    if t_m.iter().any(|&t| !(t > t_e)) {
        return Err(Error::domain("every t_m must exceed t_e"));
    }
    let n = t_m.len();
    // Asymptotically T2* ~ t_m^{-(alpha - 1) / 2}.
    let slope = (t2[n - 1] / t2[0]).ln() / (t_m[n - 1] / t_m[0]).ln();
    let alpha0 = (1.0 - 2.0 * slope).clamp(0.2, 2.8);
    let mid = n / 2;
    let ln_s0 = -(4.0 * PI * PI * band_integral(alpha0, t_m[mid], t_e) * t2[mid] * t2[mid]).ln();
    let data: Vec<DataPoint> = t_m
        .iter()
        .zip(t2)
        .map(|(&x, &y)| DataPoint::new(x, y, 1.0 / (y * y)))
        .collect();
    let model = PredictionModel { t_e };
    let bounds = Bounds::new(&[(-200.0, 200.0), (0.0, 3.0)]);
    let r = fit_curve(&model, &data, &[ln_s0, alpha0], &bounds, &FitOptions::default())?;
    let s0 = r.get("ln_s0").exp();
    Ok((
        T2StarRegime {
            t_m_min_s: t_m[0],
            t_m_max_s: t_m[n - 1],
            s0,
            s0_error: s0 * r.error("ln_s0"),
            alpha: r.get("alpha"),
            alpha_error: r.error("alpha"),
            converged: r.converged,
        },
        r.chi_squared,
    ))
}

/// Fit the T2*(t_m) law to a series, optionally as two regimes split at
/// `split_t_m` (points below the split form the first regime).
pub fn fit_t2star_tm(series: &T2StarSeries, t_e: f64, split_t_m: Option<f64>) -> Result<T2StarFit> {
    let ranges: Vec<(usize, usize)> = match split_t_m {
        None => vec![(0, series.len())],
        Some(split) => {
            let k = series.t_m_s.partition_point(|&t| t < split);
            vec![(0, k), (k, series.len())]
        }
    };
    let mut regimes = Vec::new();
    let mut chi2 = 0.0;
    for (a, b) in ranges {
        let (regime, c) = fit_regime(&series.t_m_s[a..b], &series.t2star_s[a..b], t_e)?;
        regimes.push(regime);
        chi2 += c;
    }
    Ok(T2StarFit {
        regimes,
        residual_rms: (chi2 / series.len() as f64).sqrt(),
    })
}
