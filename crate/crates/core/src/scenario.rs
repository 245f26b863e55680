//! End-to-end pipelines that regenerate the datasets behind each figure.
//!
//! Every pipeline is deterministic under the master seed: sub-seeds are
//! derived per figure and stage, and all parallel reductions are ordered.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::conversion::{convert_psd, ConversionChain};
use crate::error::{Error, Result, StageContext};
use crate::fitting::{fit_echo_decay, fit_ramsey_decay, fit_t2star_tm, log_spaced, t2star_vs_tm};
use crate::hyperfine::{
    bath_table, combine_baths, device_baths, geometry_from_splitting, write_bath_table_csv, BathSpecies,
    DotGeometry,
};
use crate::psd::{CompositePsd, QuantityUnit};
use crate::qubit::{
    simulate_decay, simulate_ramsey_scan, DecayConfig, DecayCurve, DetuningSource, PhaseMode, PulseParams,
    QuasiStaticBand, RamseyScanConfig, Readout, SequenceKind,
};
use crate::rng::{Domain, SeedStreams};
use crate::spectral::{fit_broken_power_law, track_detuning, welch_trace, WelchSettings};
use crate::synth::{synthesize, ConventionFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    Fig1d,
    Fig2c,
    Fig2d,
    Fig3b,
    HyperfineTable,
}

impl Figure {
    pub const ALL: [Figure; 5] = [
        Figure::Fig1d,
        Figure::Fig2c,
        Figure::Fig2d,
        Figure::Fig3b,
        Figure::HyperfineTable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig1d => "fig1d",
            Figure::Fig2c => "fig2c",
            Figure::Fig2d => "fig2d",
            Figure::Fig3b => "fig3b",
            Figure::HyperfineTable => "hyperfine_table",
        }
    }

    fn index(self) -> u64 {
        Figure::ALL.iter().position(|f| *f == self).expect("listed") as u64
    }
}

impl FromStr for Figure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown figure `{s}`")))
    }
}

impl std::fmt::Display for Figure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn device_detuning_psd() -> CompositePsd {
    CompositePsd::two_slope(QuantityUnit::DetuningHz, 4.5e6, 1.0, 2.0, 1e-3).expect("valid constants")
}

/// Fringe scan tracked line by line, then a Welch spectrum of the detuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig1dConfig {
    pub psd: CompositePsd,
    pub n_lines: usize,
    pub line_duration_s: f64,
    pub detuning_min_hz: f64,
    pub detuning_max_hz: f64,
    pub n_detuning_points: usize,
    pub shots_per_point: u32,
    pub evolution_time_s: f64,
    pub readout: Readout,
    pub welch: WelchSettings,
    /// Upper edge of the band used for the power-law fit.
    pub fit_max_frequency_hz: f64,
}

impl Default for Fig1dConfig {
    fn default() -> Self {
        Self {
            psd: device_detuning_psd(),
            n_lines: 2010,
            line_duration_s: 120.0,
            detuning_min_hz: -1e6,
            detuning_max_hz: 1e6,
            n_detuning_points: 100,
            shots_per_point: 100,
            evolution_time_s: 2e-6,
            readout: Readout::Binomial,
            welch: WelchSettings::default(),
            fit_max_frequency_hz: 3e-3,
        }
    }
}

/// Ramsey decay lines bundled into measurement times `t_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig2cConfig {
    pub psd: CompositePsd,
    pub n_lines: usize,
    pub line_duration_s: f64,
    /// Rate of the slow-noise trace; faster noise enters as a per-shot offset.
    pub trace_sample_rate_hz: f64,
    pub t_e_max_s: f64,
    pub n_t_e: usize,
    pub shots_per_point: u32,
    pub drive_detuning_hz: f64,
    pub bundle_offset: usize,
    pub t_m_min_s: f64,
    pub t_m_max_s: f64,
    pub n_t_m: usize,
    pub regime_split_s: f64,
    pub convention: ConventionFactor,
}

impl Default for Fig2cConfig {
    fn default() -> Self {
        Self {
            psd: device_detuning_psd(),
            n_lines: 600,
            line_duration_s: 38.0,
            trace_sample_rate_hz: 1.0,
            t_e_max_s: 60e-6,
            n_t_e: 61,
            shots_per_point: 50,
            drive_detuning_hz: 1e5,
            bundle_offset: 25,
            t_m_min_s: 38.0,
            t_m_max_s: 22680.0,
            n_t_m: 12,
            regime_split_s: 1500.0,
            convention: ConventionFactor::One,
        }
    }
}

/// Hahn-echo decay with the phase integrated over a synthesized trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig2dConfig {
    pub psd: CompositePsd,
    pub sample_rate_hz: f64,
    pub n_samples: usize,
    pub t_e_min_s: f64,
    pub t_e_max_s: f64,
    pub t_e_step_s: f64,
    pub shots_per_point: u32,
}

impl Default for Fig2dConfig {
    fn default() -> Self {
        Self {
            psd: CompositePsd::single(QuantityUnit::DetuningHz, 4.46e6, 1.0).expect("valid constants"),
            sample_rate_hz: 1e6,
            n_samples: 1 << 22,
            t_e_min_s: 10e-6,
            t_e_max_s: 400e-6,
            t_e_step_s: 10e-6,
            shots_per_point: 5000,
        }
    }
}

/// Quasi-static Ramsey decay driven by the converted charge-noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig3bConfig {
    pub charge_psd: CompositePsd,
    pub f_lo_hz: f64,
    pub t_e_max_s: f64,
    pub n_t_e: usize,
    pub shots_per_point: u32,
    pub convention: ConventionFactor,
}

impl Default for Fig3bConfig {
    fn default() -> Self {
        Self {
            charge_psd: CompositePsd::two_slope(QuantityUnit::EnergyMicroEv, 0.47 * 0.47, 1.0, 2.0, 1e-3)
                .expect("valid constants"),
            f_lo_hz: 1e-5,
            t_e_max_s: 60e-6,
            n_t_e: 61,
            shots_per_point: 500,
            convention: ConventionFactor::Two,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperfineConfig {
    pub geometry: DotGeometry,
    pub gamma_barrier: f64,
    /// `None` uses the well and barrier isotopes of the device.
    pub species: Option<Vec<BathSpecies>>,
    pub oracle_trials: usize,
    pub orbital_splitting_ev: f64,
    pub effective_mass_ratio: f64,
}

impl Default for HyperfineConfig {
    fn default() -> Self {
        Self {
            geometry: DotGeometry::device_default(),
            gamma_barrier: crate::hyperfine::DEVICE_GAMMA_BARRIER,
            species: None,
            oracle_trials: 10_000,
            orbital_splitting_ev: 2.5e-3,
            effective_mass_ratio: 0.19,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Fraction of the full run: scales line counts or shot counts.
    pub scale: f64,
    pub pulse: PulseParams,
    pub conversion: ConversionChain,
    pub fig1d: Fig1dConfig,
    pub fig2c: Fig2cConfig,
    pub fig2d: Fig2dConfig,
    pub fig3b: Fig3bConfig,
    pub hyperfine: HyperfineConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            scale: 1.0,
            pulse: PulseParams::default(),
            conversion: ConversionChain::device_default(),
            fig1d: Fig1dConfig::default(),
            fig2c: Fig2cConfig::default(),
            fig2d: Fig2dConfig::default(),
            fig3b: Fig3bConfig::default(),
            hyperfine: HyperfineConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::Config(format!("scale must be in (0, 1], got {}", self.scale)));
        }
        self.pulse.validate()?;
        self.conversion.validate()?;
        Ok(())
    }
}

/// `round(n * scale)`, never below `min` (nor above `n`).
pub fn scaled_count(n: usize, scale: f64, min: usize) -> usize {
    ((n as f64 * scale).round() as usize).max(min.min(n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceReport {
    pub figure: Figure,
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

struct Outputs<'a> {
    dir: &'a Path,
    figure: Figure,
    files: Vec<PathBuf>,
}

impl Outputs<'_> {
    fn write(&mut self, suffix: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(format!("{}_{suffix}", self.figure.name()));
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }
}

/// Run one figure pipeline and write `{figure}_*.csv` and
/// `{figure}_summary.json` into `out_dir`.
pub fn reproduce(figure: Figure, cfg: &ScenarioConfig, out_dir: &Path) -> Result<ReproduceReport> {
    cfg.validate().stage("config")?;
    std::fs::create_dir_all(out_dir).map_err(Error::from).stage("write")?;
    let streams = SeedStreams::new(SeedStreams::new(cfg.seed).derive_seed(Domain::Scenario, figure.index()));
    let mut out = Outputs {
        dir: out_dir,
        figure,
        files: Vec::new(),
    };
    let mut summary = match figure {
        Figure::Fig1d => run_fig1d(cfg, &streams, &mut out)?,
        Figure::Fig2c => run_fig2c(cfg, &streams, &mut out)?,
        Figure::Fig2d => run_fig2d(cfg, &streams, &mut out)?,
        Figure::Fig3b => run_fig3b(cfg, &streams, &mut out)?,
        Figure::HyperfineTable => run_hyperfine(cfg, &streams, &mut out)?,
    };
    summary["figure"] = json!(figure.name());
    summary["seed"] = json!(cfg.seed);
    summary["scale"] = json!(cfg.scale);
    let text = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
    out.write("summary.json", |w| {
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
    .stage("write")?;
    Ok(ReproduceReport {
        figure,
        files: out.files,
        summary,
    })
}

fn run_fig1d(cfg: &ScenarioConfig, streams: &SeedStreams, out: &mut Outputs<'_>) -> Result<Value> {
    let c = &cfg.fig1d;
    let n_lines = scaled_count(c.n_lines, cfg.scale, 256);
    let scan = RamseyScanConfig {
        detuning_grid_hz: RamseyScanConfig::linear_grid(c.detuning_min_hz, c.detuning_max_hz, c.n_detuning_points),
        shots_per_point: c.shots_per_point,
        line_duration_s: c.line_duration_s,
        n_lines,
        evolution_time_s: c.evolution_time_s,
    };
    let fs = 1.0 / c.line_duration_s;
    let trace = synthesize(&c.psd, n_lines + 1, fs, streams.derive_seed(Domain::Synthesis, 0)).stage("synthesize")?;
    let sim_streams = SeedStreams::new(streams.derive_seed(Domain::ScanReadout, 0));
    let data = simulate_ramsey_scan(&cfg.pulse, &scan, &trace, &sim_streams, c.readout).stage("simulate")?;
    let series = track_detuning(&data, &cfg.pulse, c.evolution_time_s).stage("track")?;
    out.write("detuning.csv", |w| series.write_csv(w)).stage("write")?;

    let run = series.longest_valid_run();
    let run_len = run.len();
    let sub = crate::spectral::DetuningSeries {
        times_s: series.times_s[run.clone()].to_vec(),
        delta_f_hz: series.delta_f_hz[run.clone()].to_vec(),
        sigma_hz: series.sigma_hz[run.clone()].to_vec(),
        valid: series.valid[run].to_vec(),
    };
    let tracked = sub.to_trace().stage("estimate")?;
    let est = welch_trace(&tracked, &c.welch).stage("estimate")?;
    out.write("psd.csv", |w| est.write_csv(w)).stage("write")?;
    let band = est.band(0.0, c.fit_max_frequency_hz);
    let single = fit_broken_power_law(&band, 1, None).stage("fit")?;
    let broken = fit_broken_power_law(&band, 2, None).ok();

    let n_valid = series.valid.iter().filter(|v| **v).count();
    Ok(json!({
        "n_lines": n_lines,
        "n_valid_lines": n_valid,
        "longest_valid_run": run_len,
        "welch_segment_length": est.segment_length,
        "welch_segments_averaged": est.n_segments_averaged,
        "fit_max_frequency_hz": c.fit_max_frequency_hz,
        "single_fit": single,
        "broken_fit": broken,
        // One power law across the detection band, blending both slopes.
        "high_band_exponent": single.segments[0].exponent,
        "high_band_exponent_error": single.segments[0].exponent_error,
    }))
}

fn ramsey_grid(t_max: f64, n: usize) -> Vec<f64> {
    RamseyScanConfig::linear_grid(0.0, t_max, n)
}

fn run_fig2c(cfg: &ScenarioConfig, streams: &SeedStreams, out: &mut Outputs<'_>) -> Result<Value> {
    let c = &cfg.fig2c;
    let n_lines = scaled_count(c.n_lines, cfg.scale, 8);
    let span = n_lines as f64 * c.line_duration_s;
    let n_samples = (span * c.trace_sample_rate_hz).ceil() as usize + 2;
    let trace =
        synthesize(&c.psd, n_samples, c.trace_sample_rate_hz, streams.derive_seed(Domain::Synthesis, 0)).stage("synthesize")?;
    let band = QuasiStaticBand {
        psd: c.psd.clone(),
        f_lo_hz: c.trace_sample_rate_hz / 2.0,
        f_hi_hz: None,
        convention: c.convention,
    };
    let grid = ramsey_grid(c.t_e_max_s, c.n_t_e);
    let interval = c.line_duration_s / (grid.len() as f64 * c.shots_per_point as f64);
    let sim_streams = SeedStreams::new(streams.derive_seed(Domain::DecayReadout, 0));
    let lines = (0..n_lines)
        .map(|j| {
            let dc = DecayConfig {
                sequence_kind: SequenceKind::Ramsey,
                t_e_grid_s: grid.clone(),
                shots_per_point: c.shots_per_point,
                readout: Readout::Binomial,
                phase_mode: PhaseMode::QuasiStatic,
                start_time_s: j as f64 * c.line_duration_s,
                shot_interval_s: interval,
                drive_detuning_hz: c.drive_detuning_hz,
            };
            simulate_decay(&dc, DetuningSource::TraceWithBand(&trace, &band), &sim_streams, j as u64)
        })
        .collect::<Result<Vec<DecayCurve>>>()
        .stage("simulate")?;
    let t_m = log_spaced(c.t_m_min_s, c.t_m_max_s, c.n_t_m);
    let offset = scaled_count(c.bundle_offset, cfg.scale, 1);
    let series = t2star_vs_tm(&lines, c.line_duration_s, offset, &t_m).stage("fit")?;
    out.write("t2star_tm.csv", |w| series.write_csv(w)).stage("write")?;
    let monotone = series.t2star_s.windows(2).all(|w| w[1] < w[0]);
    let t_e_ref = grid[grid.len() - 1];
    let all = fit_t2star_tm(&series, t_e_ref, None).ok();
    let split = fit_t2star_tm(&series, t_e_ref, Some(c.regime_split_s)).ok();
    Ok(json!({
        "n_lines": n_lines,
        "bundle_offset": offset,
        "t_m_s": series.t_m_s,
        "t2star_s": series.t2star_s,
        "monotone_decreasing": monotone,
        "single_regime": all,
        "two_regimes": split,
    }))
}

fn run_fig2d(cfg: &ScenarioConfig, streams: &SeedStreams, out: &mut Outputs<'_>) -> Result<Value> {
    let c = &cfg.fig2d;
    let shots = scaled_count(c.shots_per_point as usize, cfg.scale, 100) as u32;
    let n_t = ((c.t_e_max_s - c.t_e_min_s) / c.t_e_step_s).round() as usize + 1;
    let grid: Vec<f64> = (0..n_t).map(|i| c.t_e_min_s + i as f64 * c.t_e_step_s).collect();
    let trace =
        synthesize(&c.psd, c.n_samples, c.sample_rate_hz, streams.derive_seed(Domain::Synthesis, 0)).stage("synthesize")?;
    let t_max = grid[grid.len() - 1];
    let total = (grid.len() * shots as usize) as f64;
    let dc = DecayConfig {
        sequence_kind: SequenceKind::Echo,
        t_e_grid_s: grid,
        shots_per_point: shots,
        readout: Readout::Binomial,
        phase_mode: PhaseMode::Integrated,
        start_time_s: 0.0,
        shot_interval_s: (trace.duration() - 2.0 * t_max) / total,
        drive_detuning_hz: 0.0,
    };
    let sim_streams = SeedStreams::new(streams.derive_seed(Domain::DecayReadout, 0));
    let curve = simulate_decay(&dc, DetuningSource::Trace(&trace), &sim_streams, 0).stage("simulate")?;
    out.write("echo.csv", |w| curve.write_csv(w)).stage("write")?;
    let fit = fit_echo_decay(&curve).stage("fit")?;
    let closed_form = one_over_f_echo_time(&c.psd);
    Ok(json!({
        "shots_per_point": shots,
        "t2_echo_s": fit.get("t2_echo"),
        "t2_echo_error_s": fit.error("t2_echo"),
        "alpha": fit.get("alpha"),
        "alpha_error": fit.error("alpha"),
        "converged": fit.converged,
        "t2_echo_closed_form_s": closed_form,
    }))
}

/// Gaussian echo time for a pure one-sided `S1 / f` spectrum,
/// `(2 pi^2 ln2 S1)^(-1/2)`; `None` for other spectra.
pub fn one_over_f_echo_time(psd: &CompositePsd) -> Option<f64> {
    match psd.segments() {
        [s] if s.exponent() == 1.0 => {
            let k = 2.0 * std::f64::consts::PI.powi(2) * std::f64::consts::LN_2 * s.amplitude_at_1hz();
            Some(k.powf(-0.5))
        }
        _ => None,
    }
}

fn run_fig3b(cfg: &ScenarioConfig, streams: &SeedStreams, out: &mut Outputs<'_>) -> Result<Value> {
    let c = &cfg.fig3b;
    let shots = scaled_count(c.shots_per_point as usize, cfg.scale, 20) as u32;
    let psd = convert_psd(&c.charge_psd, &cfg.conversion).stage("convert")?;
    let band = QuasiStaticBand {
        psd: psd.clone(),
        f_lo_hz: c.f_lo_hz,
        f_hi_hz: None,
        convention: c.convention,
    };
    let dc = DecayConfig {
        sequence_kind: SequenceKind::Ramsey,
        t_e_grid_s: ramsey_grid(c.t_e_max_s, c.n_t_e),
        shots_per_point: shots,
        readout: Readout::Binomial,
        phase_mode: PhaseMode::QuasiStatic,
        start_time_s: 0.0,
        shot_interval_s: 0.0,
        drive_detuning_hz: 0.0,
    };
    let curve = simulate_decay(&dc, DetuningSource::QuasiStatic(&band), streams, 0).stage("simulate")?;
    out.write("ramsey.csv", |w| curve.write_csv(w)).stage("write")?;
    let fit = fit_ramsey_decay(&curve).stage("fit")?;
    Ok(json!({
        "shots_per_point": shots,
        "detuning_psd": psd,
        "detuning_density_at_1hz_hz_per_sqrt_hz": psd.eval(1.0).stage("convert")?.sqrt(),
        "flicker_density_at_1hz_hz_per_sqrt_hz": psd.segments()[0].amplitude_at_1hz().sqrt(),
        "t2star_s": fit.get("t2_star"),
        "t2star_error_s": fit.error("t2_star"),
        "converged": fit.converged,
    }))
}

fn run_hyperfine(cfg: &ScenarioConfig, streams: &SeedStreams, out: &mut Outputs<'_>) -> Result<Value> {
    let c = &cfg.hyperfine;
    let species = c.species.clone().unwrap_or_else(|| device_baths(c.gamma_barrier));
    let rows = bath_table(&species, &c.geometry, Some((c.oracle_trials, streams))).stage("hyperfine")?;
    out.write("baths.csv", |w| write_bath_table_csv(&rows, w)).stage("write")?;
    let formula: Vec<f64> = rows.iter().map(|r| r.t2star_formula_s).collect();
    let combined = combine_baths(&formula).stage("hyperfine")?;
    let derived = geometry_from_splitting(
        c.orbital_splitting_ev,
        c.effective_mass_ratio,
        c.geometry.height_m,
        c.geometry.atomic_density_per_m3,
    )
    .stage("hyperfine")?;
    Ok(json!({
        "geometry": c.geometry,
        "radius_from_splitting_m": derived.radius_m,
        "baths": rows,
        "combined_t2star_s": combined,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_names_round_trip() {
        for f in Figure::ALL {
            assert_eq!(f.name().parse::<Figure>().unwrap(), f);
        }
        assert!("fig9".parse::<Figure>().unwrap_err().is_config_error());
    }

    #[test]
    fn config_defaults_and_strictness() {
        let cfg = ScenarioConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), cfg);
        assert!(ScenarioConfig::from_json(r#"{"sed": 1}"#).unwrap_err().is_config_error());
        assert!(ScenarioConfig::from_json(r#"{"scale": 1.5}"#).unwrap_err().is_config_error());
    }

    #[test]
    fn scaled_counts() {
        assert_eq!(scaled_count(600, 0.1, 8), 60);
        assert_eq!(scaled_count(600, 0.001, 8), 8);
        assert_eq!(scaled_count(4, 0.1, 8), 4);
    }

    #[test]
    fn echo_closed_form() {
        let psd = CompositePsd::single(QuantityUnit::DetuningHz, 4.46e6, 1.0).unwrap();
        let t = one_over_f_echo_time(&psd).unwrap();
        assert!((t - 128e-6).abs() < 0.5e-6, "{t}");
    }

    #[test]
    fn hyperfine_table_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig::default();
        cfg.hyperfine.oracle_trials = 2000;
        let r = reproduce(Figure::HyperfineTable, &cfg, dir.path()).unwrap();
        assert_eq!(r.files.len(), 2);
        let t = r.summary["combined_t2star_s"].as_f64().unwrap();
        assert!((t - 0.61e-6).abs() < 0.03e-6, "{t}");
    }
}
