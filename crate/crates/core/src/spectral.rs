//! Welch spectra, fringe tracking and power-law fits to estimated spectra.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{fit_curve, fit_fringe, Bounds, DataPoint, FitOptions, LineModel};
use crate::psd::QuantityUnit;
use crate::qubit::{FringeDataset, PulseParams};
use crate::synth::NoiseTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    Rect,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            // Periodic Hann.
            Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WelchSettings {
    /// `None` picks `n / 8` rounded to a power of two.
    #[serde(default)]
    pub segment_length: Option<usize>,
    #[serde(default = "default_overlap")]
    pub overlap_fraction: f64,
    #[serde(default)]
    pub window: Window,
}

fn default_overlap() -> f64 {
    0.5
}

impl Default for WelchSettings {
    fn default() -> Self {
        Self {
            segment_length: None,
            overlap_fraction: 0.5,
            window: Window::Hann,
        }
    }
}

impl WelchSettings {
    pub fn resolve_segment_length(&self, n: usize) -> usize {
        self.segment_length.unwrap_or_else(|| default_segment_length(n))
    }
}

/// `n / 8` rounded to the nearest power of two (in log scale), within `[2, n]`.
pub fn default_segment_length(n: usize) -> usize {
    let target = (n as f64 / 8.0).max(2.0);
    let p = 1usize << target.log2().round() as u32;
    let p = if p > n { p / 2 } else { p };
    p.max(2).min(n)
}

/// One-sided spectral density estimate on positive frequency bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub frequencies_hz: Vec<f64>,
    pub densities: Vec<f64>,
    pub segment_length: usize,
    pub overlap_fraction: f64,
    pub window: Window,
    pub n_segments_averaged: usize,
    pub sample_rate_hz: f64,
    pub unit_label: QuantityUnit,
    pub convention: String,
}

impl PsdEstimate {
    pub fn len(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_hz.is_empty()
    }

    pub fn bin_width(&self) -> f64 {
        self.sample_rate_hz / self.segment_length as f64
    }

    /// Bins with `lo <= f <= hi`.
    pub fn band(&self, lo: f64, hi: f64) -> PsdEstimate {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.frequencies_hz[i] >= lo && self.frequencies_hz[i] <= hi)
            .collect();
        PsdEstimate {
            frequencies_hz: keep.iter().map(|&i| self.frequencies_hz[i]).collect(),
            densities: keep.iter().map(|&i| self.densities[i]).collect(),
            ..self.clone()
        }
    }

    /// Rectangle-rule integral of the density.
    pub fn integral(&self) -> f64 {
        self.densities.iter().sum::<f64>() * self.bin_width()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["frequency_hz", "density", "n_segments_averaged"])?;
        let n = self.n_segments_averaged.to_string();
        for (f, d) in self.frequencies_hz.iter().zip(&self.densities) {
            out.write_record([f.to_string(), d.to_string(), n.clone()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Welch estimate of a uniformly sampled series.
///
/// Each segment has its mean removed and is windowed; the density is
/// normalised by the window power so that, for a rectangular window without
/// overlap, the rectangle-rule integral equals the mean segment variance.
pub fn welch_psd(
    samples: &[f64],
    sample_rate: f64,
    segment_length: usize,
    overlap_fraction: f64,
    window: Window,
) -> Result<PsdEstimate> {
    if !(sample_rate > 0.0) {
        return Err(Error::domain("sample rate must be positive"));
    }
    if segment_length < 2 || segment_length > samples.len() {
        return Err(Error::domain(format!(
            "segment length {segment_length} must lie in [2, {}]",
            samples.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::domain("overlap fraction must lie in [0, 1)"));
    }
    let step = ((segment_length as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let n_segments = 1 + (samples.len() - segment_length) / step;
    let w = window.coefficients(segment_length);
    let power: f64 = w.iter().map(|x| x * x).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment_length);
    let half = segment_length / 2;
    let mut acc = vec![0.0; half];
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_length];
    for s in 0..n_segments {
        let seg = &samples[s * step..s * step + segment_length];
        let mean = seg.iter().sum::<f64>() / segment_length as f64;
        for ((b, x), wi) in buf.iter_mut().zip(seg).zip(&w) {
            *b = Complex64::new((x - mean) * wi, 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k + 1].norm_sqr();
        }
    }
    let scale = 1.0 / (sample_rate * power * n_segments as f64);
    let densities = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let bin = k + 1;
            let one_sided = if 2 * bin == segment_length { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let df = sample_rate / segment_length as f64;
    Ok(PsdEstimate {
        frequencies_hz: (1..=half).map(|k| k as f64 * df).collect(),
        densities,
        segment_length,
        overlap_fraction,
        window,
        n_segments_averaged: n_segments,
        sample_rate_hz: sample_rate,
        unit_label: QuantityUnit::Other("unknown".into()),
        convention: "one-sided".into(),
    })
}

pub fn welch_trace(trace: &NoiseTrace, settings: &WelchSettings) -> Result<PsdEstimate> {
    let seg = settings.resolve_segment_length(trace.len());
    let mut est = welch_psd(trace.samples(), trace.sample_rate(), seg, settings.overlap_fraction, settings.window)?;
    est.unit_label = trace.unit().clone();
    Ok(est)
}

/// Detuning extracted line by line from a fringe scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetuningSeries {
    pub times_s: Vec<f64>,
    pub delta_f_hz: Vec<f64>,
    pub sigma_hz: Vec<f64>,
    /// `false` marks a line whose fit failed; its values are not used.
    pub valid: Vec<bool>,
}

impl DetuningSeries {
    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }

    /// Index range of the longest run of consecutive valid points.
    pub fn longest_valid_run(&self) -> std::ops::Range<usize> {
        let mut best = 0..0;
        let mut start = 0;
        for i in 0..=self.len() {
            if i == self.len() || !self.valid[i] {
                if i - start > best.len() {
                    best = start..i;
                }
                start = i + 1;
            }
        }
        best
    }

    /// Uniformly sampled trace over the longest valid run.
    pub fn to_trace(&self) -> Result<NoiseTrace> {
        let run = self.longest_valid_run();
        if run.len() < 2 {
            return Err(Error::InsufficientData("fewer than two consecutive valid points".into()));
        }
        let t = &self.times_s[run.clone()];
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        if t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt) {
            return Err(Error::ResamplingRequired);
        }
        NoiseTrace::new(1.0 / dt, self.delta_f_hz[run].to_vec(), 0, QuantityUnit::DetuningHz)
    }

    /// Valid rows only; gaps appear as missing times.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time_s", "delta_f_hz", "sigma_hz"])?;
        for i in (0..self.len()).filter(|&i| self.valid[i]) {
            out.write_record([
                self.times_s[i].to_string(),
                self.delta_f_hz[i].to_string(),
                self.sigma_hz[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Fit every line of a scan; each fit starts from the last valid estimate.
pub fn track_detuning(dataset: &FringeDataset, params: &PulseParams, t_e: f64) -> Result<DetuningSeries> {
    let grid = &dataset.config.detuning_grid_hz;
    if grid.len() < 10 {
        return Err(Error::InsufficientData(format!("tracking needs >= 10 grid points, got {}", grid.len())));
    }
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    let shots = dataset.config.shots_per_point;
    let mut series = DetuningSeries {
        times_s: dataset.timestamps_s.clone(),
        delta_f_hz: Vec::with_capacity(dataset.p_up.len()),
        sigma_hz: Vec::with_capacity(dataset.p_up.len()),
        valid: Vec::with_capacity(dataset.p_up.len()),
    };
    let mut seed = None;
    for line in &dataset.p_up {
        let fit = fit_fringe(grid, line, shots, params, t_e, seed);
        let accepted = fit.ok().filter(|r| {
            let d = r.get("delta_f");
            r.converged && d >= lo && d <= hi && r.error("delta_f").is_finite()
        });
        match accepted {
            Some(r) => {
                seed = Some(r.get("delta_f"));
                series.delta_f_hz.push(r.get("delta_f"));
                series.sigma_hz.push(r.error("delta_f"));
                series.valid.push(true);
            }
            None => {
                series.delta_f_hz.push(f64::NAN);
                series.sigma_hz.push(f64::NAN);
                series.valid.push(false);
            }
        }
    }
    Ok(series)
}

pub const MIN_BINS_PER_SEGMENT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSegment {
    pub amplitude_at_1hz: f64,
    pub amplitude_error: f64,
    pub exponent: f64,
    pub exponent_error: f64,
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub n_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokenPowerLawFit {
    /// Ordered by frequency: the first segment covers the lowest band.
    pub segments: Vec<FittedSegment>,
    pub f_split_hz: Option<f64>,
    /// RMS of residuals of ln density.
    pub residual_rms: f64,
}

fn fit_log_line(f: &[f64], d: &[f64]) -> Result<(FittedSegment, f64)> {
    let data: Vec<DataPoint> = f
        .iter()
        .zip(d)
        .map(|(&f, &d)| DataPoint::new(f.ln(), d.ln(), 1.0))
        .collect();
    let r = fit_curve(&LineModel, &data, &[0.0, -1.0], &Bounds::unbounded(2), &FitOptions::default())?;
    let amp = r.get("intercept").exp();
    Ok((
        FittedSegment {
            amplitude_at_1hz: amp,
            amplitude_error: amp * r.error("intercept"),
            exponent: -r.get("slope"),
            exponent_error: r.error("slope"),
            f_lo_hz: f[0],
            f_hi_hz: f[f.len() - 1],
            n_bins: f.len(),
        },
        r.chi_squared,
    ))
}

/// Least-squares power laws in log-log space. With two segments and no
/// `f_split`, the split is the bin boundary minimising the total residual.
pub fn fit_broken_power_law(estimate: &PsdEstimate, n_segments: usize, f_split: Option<f64>) -> Result<BrokenPowerLawFit> {
    let (f, d): (Vec<f64>, Vec<f64>) = estimate
        .frequencies_hz
        .iter()
        .zip(&estimate.densities)
        .filter(|(_, &d)| d > 0.0)
        .map(|(&f, &d)| (f, d))
        .unzip();
    let n = f.len();
    let need = |k: usize| {
        if k < MIN_BINS_PER_SEGMENT {
            Err(Error::domain(format!(
                "power-law segment needs >= {MIN_BINS_PER_SEGMENT} bins, got {k}"
            )))
        } else {
            Ok(())
        }
    };
    match n_segments {
        1 => {
            need(n)?;
            let (seg, chi2) = fit_log_line(&f, &d)?;
            Ok(BrokenPowerLawFit {
                segments: vec![seg],
                f_split_hz: None,
                residual_rms: (chi2 / n as f64).sqrt(),
            })
        }
        2 => {
            let split_at = |k: usize| -> Result<(FittedSegment, FittedSegment, f64)> {
                let (a, ca) = fit_log_line(&f[..k], &d[..k])?;
                let (b, cb) = fit_log_line(&f[k..], &d[k..])?;
                Ok((a, b, ca + cb))
            };
            let k = match f_split {
                Some(s) => {
                    let k = f.partition_point(|&x| x < s);
                    need(k)?;
                    need(n - k)?;
                    k
                }
                None => {
                    need(n / 2)?;
                    need(n - n / 2)?;
                    let mut best = (MIN_BINS_PER_SEGMENT, f64::INFINITY);
                    for k in MIN_BINS_PER_SEGMENT..=n - MIN_BINS_PER_SEGMENT {
                        let c = split_at(k)?.2;
                        if c < best.1 {
                            best = (k, c);
                        }
                    }
                    best.0
                }
            };
            let (a, b, chi2) = split_at(k)?;
            let split = f_split.unwrap_or_else(|| (f[k - 1] * f[k]).sqrt());
            Ok(BrokenPowerLawFit {
                segments: vec![a, b],
                f_split_hz: Some(split),
                residual_rms: (chi2 / n as f64).sqrt(),
            })
        }
        other => Err(Error::domain(format!("n_segments must be 1 or 2, got {other}"))),
    }
}
