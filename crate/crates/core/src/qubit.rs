//! Spin-up probabilities for Ramsey fringe scans, free-induction decay and
//! Hahn-echo sequences, with finite-shot readout.
//!
//! Effective detuning is always `drive - noise`: a positive noise excursion
//! moves the fringe centre to a positive microwave detuning.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psd::{CompositePsd, QuantityUnit};
use crate::rng::{Domain, SeedStreams};
use crate::synth::{quasi_static_sigma, ConventionFactor, NoiseTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    /// Rabi frequency of the drive, Hz.
    pub f_rabi_hz: f64,
    /// Duration of one pi/2 pulse, s.
    pub t_pi_half_s: f64,
    /// Reference frequency the detuning is counted from; bookkeeping only.
    pub reference_frequency_hz: f64,
}

impl Default for PulseParams {
    fn default() -> Self {
        Self {
            f_rabi_hz: 1e6,
            t_pi_half_s: 250e-9,
            reference_frequency_hz: 19.9e9,
        }
    }
}

impl PulseParams {
    pub fn new(f_rabi_hz: f64, t_pi_half_s: f64) -> Result<Self> {
        let p = Self {
            f_rabi_hz,
            t_pi_half_s,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_rabi_hz.is_finite() && self.f_rabi_hz > 0.0) {
            return Err(Error::Config(format!("f_rabi must be positive, got {}", self.f_rabi_hz)));
        }
        if !(self.t_pi_half_s.is_finite() && self.t_pi_half_s > 0.0) {
            return Err(Error::Config(format!(
                "t_pi_half must be positive, got {}",
                self.t_pi_half_s
            )));
        }
        Ok(())
    }

    /// True when the pulse rotates by exactly pi/2 on resonance.
    pub fn is_ideal(&self) -> bool {
        (4.0 * self.f_rabi_hz * self.t_pi_half_s - 1.0).abs() < 1e-9
    }
}

/// Spin-up probability after pi/2 - wait `t_e` - pi/2 with finite,
/// off-resonant square pulses.
pub fn fringe_probability(params: &PulseParams, t_e: f64, delta_f: f64) -> f64 {
    let fr = params.f_rabi_hz;
    let phi = delta_f.hypot(fr);
    let (s_pulse, c_pulse) = (PI * params.t_pi_half_s * phi).sin_cos();
    let (s_free, c_free) = (PI * delta_f * t_e).sin_cos();
    let bracket = c_free * c_pulse - (delta_f / phi) * s_free * s_pulse;
    4.0 * fr * fr / (phi * phi) * s_pulse * s_pulse * bracket * bracket
}

/// Ideal-pulse Ramsey probability for a frozen detuning.
pub fn pup_quasistatic(t_e: f64, delta_f: f64) -> f64 {
    0.5 * ((2.0 * PI * t_e * delta_f).cos() + 1.0)
}

/// Accumulated phase of a Hahn echo: `2 pi (int_0^{t/2} df - int_{t/2}^t df)`
/// by the trapezoid rule. `segment[k]` is the detuning at `k / sample_rate`
/// and must reach `t_e`; a midpoint between samples is interpolated.
pub fn echo_phase(segment: &[f64], sample_rate: f64, t_e: f64) -> Result<f64> {
    if !(t_e >= 0.0) {
        return Err(Error::domain(format!("evolution time must be >= 0, got {t_e}")));
    }
    let dt = 1.0 / sample_rate;
    let steps = t_e * sample_rate;
    let n_steps = steps.round();
    if (steps - n_steps).abs() > 1e-6 || segment.len() < n_steps as usize + 1 {
        return Err(Error::domain(format!(
            "segment of {} samples does not span t_e = {t_e} s on a {sample_rate} Hz grid",
            segment.len()
        )));
    }
    let n = n_steps as usize;
    if n == 0 {
        return Ok(0.0);
    }
    let seg = &segment[..=n];
    let trap = |s: &[f64]| -> f64 { s.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum() };
    let (first, second) = if n % 2 == 0 {
        let m = n / 2;
        (trap(&seg[..=m]), trap(&seg[m..]))
    } else {
        // Midpoint falls halfway through interval m..m+1.
        let m = n / 2;
        let mid = 0.5 * (seg[m] + seg[m + 1]);
        let half = 0.5 * dt;
        let first = trap(&seg[..=m]) + 0.5 * (seg[m] + mid) * half;
        let second = 0.5 * (mid + seg[m + 1]) * half + trap(&seg[m + 1..]);
        (first, second)
    };
    Ok(2.0 * PI * (first - second))
}

/// Accumulated Ramsey phase `2 pi int_0^{t_e} df dt` by the trapezoid rule.
fn ramsey_phase(segment: &[f64], sample_rate: f64, t_e: f64) -> Result<f64> {
    let n = (t_e * sample_rate).round() as usize;
    if segment.len() < n + 1 {
        return Err(Error::domain("segment shorter than the evolution time"));
    }
    let dt = 1.0 / sample_rate;
    Ok(2.0 * PI * segment[..=n].windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Each shot is a Bernoulli trial; probabilities are shot fractions.
    #[default]
    Binomial,
    /// Infinite-shot limit: the exact mean probability.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamseyScanConfig {
    pub detuning_grid_hz: Vec<f64>,
    pub shots_per_point: u32,
    pub line_duration_s: f64,
    pub n_lines: usize,
    pub evolution_time_s: f64,
}

impl RamseyScanConfig {
    /// `n_steps` points spanning `[lo, hi]` inclusive.
    pub fn linear_grid(lo: f64, hi: f64, n_steps: usize) -> Vec<f64> {
        let d = (hi - lo) / (n_steps - 1) as f64;
        (0..n_steps).map(|i| lo + d * i as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.detuning_grid_hz.len() < 2
            || self.detuning_grid_hz.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::Config("detuning grid must be strictly increasing".into()));
        }
        if self.shots_per_point == 0 {
            return Err(Error::Config("shots_per_point must be >= 1".into()));
        }
        if !(self.line_duration_s > 0.0) {
            return Err(Error::Config("line_duration must be positive".into()));
        }
        if !(self.evolution_time_s >= 0.0) {
            return Err(Error::Config("evolution time must be >= 0".into()));
        }
        Ok(())
    }

    /// Line midpoints `(i + 1/2) * line_duration`.
    pub fn timestamps(&self) -> Vec<f64> {
        (0..self.n_lines)
            .map(|i| (i as f64 + 0.5) * self.line_duration_s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeDataset {
    pub config: RamseyScanConfig,
    pub params: PulseParams,
    pub readout: Readout,
    /// `p_up[line][grid point]`.
    pub p_up: Vec<Vec<f64>>,
    pub timestamps_s: Vec<f64>,
}

impl FringeDataset {
    /// Long-form CSV: one row per (line, grid point).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["line", "time_s", "delta_f_mw_hz", "p_up"])?;
        for (i, (row, t)) in self.p_up.iter().zip(&self.timestamps_s).enumerate() {
            for (df, p) in self.config.detuning_grid_hz.iter().zip(row) {
                out.write_record([i.to_string(), t.to_string(), df.to_string(), p.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn require_detuning(trace: &NoiseTrace) -> Result<()> {
    if trace.unit() != &QuantityUnit::DetuningHz {
        return Err(Error::UnitMismatch {
            expected: QuantityUnit::DetuningHz.to_string(),
            found: trace.unit().to_string(),
        });
    }
    Ok(())
}

fn sample_fraction<R: Rng + ?Sized>(p: f64, shots: u32, rng: &mut R) -> f64 {
    let dist = Binomial::new(shots as u64, p.clamp(0.0, 1.0)).expect("probability clamped to [0, 1]");
    dist.sample(rng) as f64 / shots as f64
}

/// Fringe scan with the noise frozen per line at the line midpoint.
pub fn simulate_ramsey_scan(
    params: &PulseParams,
    config: &RamseyScanConfig,
    trace: &NoiseTrace,
    streams: &SeedStreams,
    readout: Readout,
) -> Result<FringeDataset> {
    params.validate()?;
    config.validate()?;
    require_detuning(trace)?;
    let needed = config.n_lines as f64 * config.line_duration_s;
    if trace.duration() < needed {
        return Err(Error::domain(format!(
            "trace covers {} s but the scan needs {needed} s",
            trace.duration()
        )));
    }
    let timestamps = config.timestamps();
    let p_up = timestamps
        .par_iter()
        .enumerate()
        .map(|(line, &t)| {
            let noise = trace.value_at(t)?;
            let mut rng = streams.stream(Domain::ScanReadout, line as u64);
            Ok(config
                .detuning_grid_hz
                .iter()
                .map(|&df_mw| {
                    let p = fringe_probability(params, config.evolution_time_s, df_mw - noise);
                    match readout {
                        Readout::Analytic => p,
                        Readout::Binomial => sample_fraction(p, config.shots_per_point, &mut rng),
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(FringeDataset {
        config: config.clone(),
        params: *params,
        readout,
        p_up,
        timestamps_s: timestamps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Ramsey,
    Echo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// Detuning frozen during the free evolution.
    #[default]
    QuasiStatic,
    /// Phase integrated over the trace during the free evolution.
    Integrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub t_e_grid_s: Vec<f64>,
    pub p_up: Vec<f64>,
    pub shots_per_point: u32,
    pub sequence_kind: SequenceKind,
}

impl DecayCurve {
    pub fn new(t_e_grid_s: Vec<f64>, p_up: Vec<f64>, shots_per_point: u32, sequence_kind: SequenceKind) -> Result<Self> {
        if t_e_grid_s.len() != p_up.len() || t_e_grid_s.is_empty() {
            return Err(Error::domain("decay grid and probabilities must be equal, nonempty length"));
        }
        if t_e_grid_s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("evolution-time grid must be strictly increasing"));
        }
        if p_up.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("probabilities must lie in [0, 1]"));
        }
        Ok(Self {
            t_e_grid_s,
            p_up,
            shots_per_point,
            sequence_kind,
        })
    }

    /// Pointwise mean of curves on a common grid; shot counts add.
    pub fn average(curves: &[DecayCurve]) -> Result<DecayCurve> {
        let first = curves
            .first()
            .ok_or_else(|| Error::InsufficientData("no curves to average".into()))?;
        if curves.iter().any(|c| c.t_e_grid_s != first.t_e_grid_s) {
            return Err(Error::domain("curves to average must share a grid"));
        }
        let n = curves.len() as f64;
        let p_up = (0..first.p_up.len())
            .map(|i| curves.iter().map(|c| c.p_up[i]).sum::<f64>() / n)
            .collect();
        let shots = curves.iter().map(|c| c.shots_per_point).sum();
        DecayCurve::new(first.t_e_grid_s.clone(), p_up, shots, first.sequence_kind)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t_e_s", "p_up", "shots"])?;
        for (t, p) in self.t_e_grid_s.iter().zip(&self.p_up) {
            out.write_record([t.to_string(), p.to_string(), self.shots_per_point.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Gaussian quasi-static detuning with spread from a spectrum band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiStaticBand {
    pub psd: CompositePsd,
    pub f_lo_hz: f64,
    /// Upper band edge; `None` uses `1 / t_e` for each evolution time.
    pub f_hi_hz: Option<f64>,
    #[serde(default)]
    pub convention: ConventionFactor,
}

impl QuasiStaticBand {
    pub fn sigma(&self, t_e: f64) -> Result<f64> {
        let f_hi = match self.f_hi_hz {
            Some(f) => f,
            None if t_e > 0.0 => 1.0 / t_e,
            None => return Ok(0.0),
        };
        if f_hi <= self.f_lo_hz {
            return Ok(0.0);
        }
        quasi_static_sigma(&self.psd, self.f_lo_hz, f_hi, self.convention)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum DetuningSource<'a> {
    Trace(&'a NoiseTrace),
    QuasiStatic(&'a QuasiStaticBand),
    /// Slow noise from a trace plus a fresh quasi-static offset per shot for
    /// the band the trace does not resolve.
    TraceWithBand(&'a NoiseTrace, &'a QuasiStaticBand),
}

impl<'a> DetuningSource<'a> {
    fn trace(&self) -> Option<&'a NoiseTrace> {
        match *self {
            DetuningSource::Trace(t) | DetuningSource::TraceWithBand(t, _) => Some(t),
            DetuningSource::QuasiStatic(_) => None,
        }
    }

    fn band(&self) -> Option<&'a QuasiStaticBand> {
        match *self {
            DetuningSource::QuasiStatic(b) | DetuningSource::TraceWithBand(_, b) => Some(b),
            DetuningSource::Trace(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayConfig {
    pub sequence_kind: SequenceKind,
    pub t_e_grid_s: Vec<f64>,
    pub shots_per_point: u32,
    #[serde(default)]
    pub readout: Readout,
    #[serde(default)]
    pub phase_mode: PhaseMode,
    /// Time of the first shot within the trace.
    #[serde(default)]
    pub start_time_s: f64,
    /// Spacing between consecutive shots; shots sweep the grid repeatedly.
    #[serde(default)]
    pub shot_interval_s: f64,
    /// Deliberate drive detuning added to every Ramsey shot.
    #[serde(default)]
    pub drive_detuning_hz: f64,
}

impl DecayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_e_grid_s.is_empty()
            || self.t_e_grid_s[0] < 0.0
            || self.t_e_grid_s.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::Config("t_e grid must be nonnegative and strictly increasing".into()));
        }
        if self.shots_per_point == 0 {
            return Err(Error::Config("shots_per_point must be >= 1".into()));
        }
        Ok(())
    }

    /// Time span of one full line: every shot of every grid point.
    pub fn line_span_s(&self) -> f64 {
        (self.t_e_grid_s.len() as u64 * self.shots_per_point as u64) as f64 * self.shot_interval_s
    }

    fn shot_time(&self, point: usize, rep: u32) -> f64 {
        let k = rep as u64 * self.t_e_grid_s.len() as u64 + point as u64;
        self.start_time_s + k as f64 * self.shot_interval_s
    }
}

/// One decay line. `line` selects independent RNG streams so repeated lines
/// of a dataset can be generated in parallel.
pub fn simulate_decay(
    config: &DecayConfig,
    source: DetuningSource<'_>,
    streams: &SeedStreams,
    line: u64,
) -> Result<DecayCurve> {
    config.validate()?;
    if let Some(trace) = source.trace() {
        require_detuning(trace)?;
        let last = config.shot_time(config.t_e_grid_s.len() - 1, config.shots_per_point - 1);
        let t_max = config.t_e_grid_s[config.t_e_grid_s.len() - 1];
        if last + t_max >= trace.duration() {
            return Err(Error::domain(format!(
                "decay line needs the trace up to {} s, trace has {} s",
                last + t_max,
                trace.duration()
            )));
        }
    }
    let index_base = line << 20;
    let p_up = config
        .t_e_grid_s
        .par_iter()
        .enumerate()
        .map(|(i, &t_e)| {
            let mut noise_rng = streams.stream(Domain::QuasiStatic, index_base + i as u64);
            let mut readout_rng = streams.stream(Domain::DecayReadout, index_base + i as u64);
            let sigma = match source.band() {
                Some(band) => band.sigma(t_e)?,
                None => 0.0,
            };
            let mut acc = 0.0;
            for rep in 0..config.shots_per_point {
                let p = shot_probability(config, source, sigma, t_e, config.shot_time(i, rep), &mut noise_rng)?;
                acc += match config.readout {
                    Readout::Analytic => p,
                    Readout::Binomial => {
                        if readout_rng.random::<f64>() < p {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
            }
            Ok(acc / config.shots_per_point as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    DecayCurve::new(config.t_e_grid_s.clone(), p_up, config.shots_per_point, config.sequence_kind)
}

fn shot_probability<R: Rng + ?Sized>(
    config: &DecayConfig,
    source: DetuningSource<'_>,
    sigma: f64,
    t_e: f64,
    t_shot: f64,
    rng: &mut R,
) -> Result<f64> {
    let drive = config.drive_detuning_hz;
    match (config.sequence_kind, source.trace()) {
        // A static offset is refocused exactly.
        (SequenceKind::Echo, None) => Ok(1.0),
        (SequenceKind::Echo, Some(trace)) => {
            let seg = trace.window(t_shot, t_e)?;
            let phase = echo_phase(seg, trace.sample_rate(), t_e)?;
            Ok(0.5 * (phase.cos() + 1.0))
        }
        (SequenceKind::Ramsey, trace) => {
            let fast = if source.band().is_some() {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            } else {
                0.0
            };
            match (trace, config.phase_mode) {
                (None, _) => Ok(pup_quasistatic(t_e, drive - fast)),
                (Some(trace), PhaseMode::QuasiStatic) => Ok(pup_quasistatic(t_e, drive - fast - trace.value_at(t_shot)?)),
                (Some(trace), PhaseMode::Integrated) => {
                    let seg = trace.window(t_shot, t_e)?;
                    let phase = 2.0 * PI * (drive - fast) * t_e - ramsey_phase(seg, trace.sample_rate(), t_e)?;
                    Ok(0.5 * (phase.cos() + 1.0))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthesize;

    fn ideal() -> PulseParams {
        PulseParams::new(1e6, 250e-9).unwrap()
    }

    #[test]
    fn on_resonance_ideal_pulse_is_full_flip() {
        let p = ideal();
        assert!(p.is_ideal());
        for t_e in [0.0, 1e-6, 3.7e-6] {
            assert!((fringe_probability(&p, t_e, 0.0) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn full_pi_drive_returns_to_start() {
        let p = PulseParams::new(1e6, 500e-9).unwrap();
        assert!(!p.is_ideal());
        assert!(fringe_probability(&p, 2e-6, 0.0).abs() < 1e-15);
    }

    #[test]
    fn fringe_is_even_in_detuning() {
        let p = ideal();
        for df in [1e3, 5e4, 3.3e5] {
            let a = fringe_probability(&p, 2e-6, df);
            let b = fringe_probability(&p, 2e-6, -df);
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn quasistatic_formula_examples() {
        assert_eq!(pup_quasistatic(3e-6, 0.0), 1.0);
        assert!(pup_quasistatic(1.0 / (2.0 * 1e5), 1e5).abs() < 1e-15);
        assert!((pup_quasistatic(5e-6, 5e4) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn echo_cancels_static_detuning() {
        let seg = vec![1234.5; 101];
        assert!(echo_phase(&seg, 1e6, 100e-6).unwrap().abs() < 1e-12);
    }

    #[test]
    fn echo_sign_step() {
        let fs = 1e6;
        let t_e = 100e-6;
        let c = 2e3;
        let seg: Vec<f64> = (0..=100)
            .map(|k| {
                let t = k as f64 / fs;
                c * (t - t_e / 2.0).signum() * if (t - t_e / 2.0).abs() < 1e-15 { 0.0 } else { 1.0 }
            })
            .collect();
        let phi = echo_phase(&seg, fs, t_e).unwrap();
        let expected = -2.0 * PI * c * t_e;
        // Trapezoid smears the jump over one sample on each side.
        assert!((phi - expected).abs() <= 2.0 * PI * c / fs * 1.01, "{phi} vs {expected}");
    }

    #[test]
    fn echo_linear_drift_closed_form() {
        let fs = 1e6;
        let k = 3e7;
        for n in [100usize, 101] {
            let t_e = n as f64 / fs;
            let seg: Vec<f64> = (0..=n).map(|j| k * j as f64 / fs).collect();
            let phi = echo_phase(&seg, fs, t_e).unwrap();
            let expected = -PI * k * t_e * t_e / 2.0;
            assert!(((phi - expected) / expected).abs() < 1e-6, "n={n}: {phi} vs {expected}");
        }
    }

    #[test]
    fn echo_rejects_short_segment() {
        assert!(echo_phase(&[0.0; 10], 1e6, 100e-6).is_err());
    }

    #[test]
    fn symmetric_noise_has_no_echo_phase() {
        let seg: Vec<f64> = (0..=200)
            .map(|k| {
                let x = (k as f64 - 100.0) / 100.0;
                (3.0 * x * x).cos() * 1e4
            })
            .collect();
        assert!(echo_phase(&seg, 1e6, 200e-6).unwrap().abs() < 1e-9);
    }

    fn scan_cfg(n_lines: usize) -> RamseyScanConfig {
        RamseyScanConfig {
            detuning_grid_hz: RamseyScanConfig::linear_grid(-1e6, 1e6, 100),
            shots_per_point: 100,
            line_duration_s: 120.0,
            n_lines,
            evolution_time_s: 5e-6,
        }
    }

    #[test]
    fn analytic_scan_of_quiet_trace_is_the_fringe() {
        let trace = NoiseTrace::new(1.0 / 120.0, vec![0.0; 8], 0, QuantityUnit::DetuningHz).unwrap();
        let cfg = scan_cfg(8);
        let ds = simulate_ramsey_scan(&ideal(), &cfg, &trace, &SeedStreams::new(1), Readout::Analytic).unwrap();
        for row in &ds.p_up {
            for (p, df) in row.iter().zip(&cfg.detuning_grid_hz) {
                assert_eq!(*p, fringe_probability(&ideal(), 5e-6, *df));
            }
        }
    }

    #[test]
    fn binomial_scan_is_deterministic_and_quantized() {
        let psd = CompositePsd::single(QuantityUnit::DetuningHz, 1e6, 1.0).unwrap();
        let trace = synthesize(&psd, 64, 1.0 / 120.0, 5).unwrap();
        let cfg = scan_cfg(32);
        let a = simulate_ramsey_scan(&ideal(), &cfg, &trace, &SeedStreams::new(9), Readout::Binomial).unwrap();
        let b = simulate_ramsey_scan(&ideal(), &cfg, &trace, &SeedStreams::new(9), Readout::Binomial).unwrap();
        assert_eq!(a, b);
        for p in a.p_up.iter().flatten() {
            assert!((0.0..=1.0).contains(p));
            assert!(((p * 100.0).round() - p * 100.0).abs() < 1e-9);
        }
        let long = scan_cfg(65);
        assert!(simulate_ramsey_scan(&ideal(), &long, &trace, &SeedStreams::new(9), Readout::Binomial).is_err());
    }

    #[test]
    fn scan_rejects_non_detuning_trace() {
        let trace = NoiseTrace::new(1.0 / 120.0, vec![0.0; 8], 0, QuantityUnit::CurrentPa).unwrap();
        let r = simulate_ramsey_scan(&ideal(), &scan_cfg(4), &trace, &SeedStreams::new(1), Readout::Analytic);
        assert!(matches!(r, Err(Error::UnitMismatch { .. })));
    }

    fn decay_cfg(kind: SequenceKind, shots: u32, readout: Readout) -> DecayConfig {
        DecayConfig {
            sequence_kind: kind,
            t_e_grid_s: (0..30).map(|i| i as f64 * 2e-6).collect(),
            shots_per_point: shots,
            readout,
            phase_mode: PhaseMode::QuasiStatic,
            start_time_s: 0.0,
            shot_interval_s: 1e-3,
            drive_detuning_hz: 0.0,
        }
    }

    #[test]
    fn quiet_ramsey_does_not_decay() {
        let trace = NoiseTrace::new(1e3, vec![0.0; 4096], 0, QuantityUnit::DetuningHz).unwrap();
        let cfg = decay_cfg(SequenceKind::Ramsey, 4, Readout::Binomial);
        let c = simulate_decay(&cfg, DetuningSource::Trace(&trace), &SeedStreams::new(3), 0).unwrap();
        assert!(c.p_up.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn gaussian_quasi_static_envelope() {
        // sigma from a white band: S = 1e8 over [1, 1 + 0.5] with factor 2 -> sigma = 1e4.
        let band = QuasiStaticBand {
            psd: CompositePsd::single(QuantityUnit::DetuningHz, 1e8, 0.0).unwrap(),
            f_lo_hz: 1.0,
            f_hi_hz: Some(1.5),
            convention: ConventionFactor::Two,
        };
        let sigma = band.sigma(1e-6).unwrap();
        assert!((sigma - 1e4).abs() < 1e-6);
        let t2 = 1.0 / (2f64.sqrt() * PI * sigma);
        let cfg = decay_cfg(SequenceKind::Ramsey, 20_000, Readout::Analytic);
        let c = simulate_decay(&cfg, DetuningSource::QuasiStatic(&band), &SeedStreams::new(4), 0).unwrap();
        for (t, p) in c.t_e_grid_s.iter().zip(&c.p_up) {
            let expected = 0.5 * (1.0 + (-(t / t2).powi(2)).exp());
            assert!((p - expected).abs() < 0.01, "t={t}: {p} vs {expected}");
        }
    }

    #[test]
    fn binomial_mean_converges_to_probability() {
        let mut rng = SeedStreams::new(8).stream(Domain::DecayReadout, 0);
        for p in [0.1, 0.5, 0.93] {
            let frac = sample_fraction(p, 100_000, &mut rng);
            assert!((frac - p).abs() < 0.01, "{frac} vs {p}");
        }
    }

    #[test]
    fn echo_quasi_static_refocuses() {
        let band = QuasiStaticBand {
            psd: CompositePsd::single(QuantityUnit::DetuningHz, 1e8, 1.0).unwrap(),
            f_lo_hz: 1e-3,
            f_hi_hz: None,
            convention: ConventionFactor::Two,
        };
        let cfg = decay_cfg(SequenceKind::Echo, 50, Readout::Binomial);
        let c = simulate_decay(&cfg, DetuningSource::QuasiStatic(&band), &SeedStreams::new(4), 0).unwrap();
        assert!(c.p_up.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn decay_needs_enough_trace() {
        let trace = NoiseTrace::new(1e3, vec![0.0; 16], 0, QuantityUnit::DetuningHz).unwrap();
        let cfg = decay_cfg(SequenceKind::Ramsey, 4, Readout::Binomial);
        assert!(simulate_decay(&cfg, DetuningSource::Trace(&trace), &SeedStreams::new(3), 0).is_err());
    }

    #[test]
    fn average_adds_shots() {
        let a = DecayCurve::new(vec![0.0, 1.0], vec![1.0, 0.5], 10, SequenceKind::Ramsey).unwrap();
        let b = DecayCurve::new(vec![0.0, 1.0], vec![0.8, 0.3], 10, SequenceKind::Ramsey).unwrap();
        let m = DecayCurve::average(&[a, b]).unwrap();
        assert_eq!(m.shots_per_point, 20);
        assert!((m.p_up[0] - 0.9).abs() < 1e-15 && (m.p_up[1] - 0.4).abs() < 1e-15);
    }
}
