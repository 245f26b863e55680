use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use qdnoise::conversion::{convert_psd, detuning_from_current};
use qdnoise::fitting::{fit_echo_decay, fit_ramsey_decay, fit_t2star_tm, t2star_vs_tm};
use qdnoise::hyperfine::{bath_table, device_baths, write_bath_table_csv};
use qdnoise::psd::{CompositePsd, QuantityUnit};
use qdnoise::qubit::{
    simulate_decay, simulate_ramsey_scan, DecayConfig, DecayCurve, DetuningSource, FringeDataset, PhaseMode,
    QuasiStaticBand, RamseyScanConfig, Readout, SequenceKind,
};
use qdnoise::rng::{Domain, SeedStreams};
use qdnoise::scenario::{reproduce, Figure, ScenarioConfig};
use qdnoise::spectral::{track_detuning, welch_trace, WelchSettings, Window};
use qdnoise::synth::{synthesize, ConventionFactor, NoiseTrace};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Detuning-noise laboratory for spin qubits
#[derive(Debug, Parser)]
#[command(name = "qdnoise", version, about)]
pub struct Cli {
    /// Scenario config, or a manifest written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Fraction of the full run, in (0, 1].
    #[arg(long, global = true)]
    pub scale: Option<f64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Figure to reproduce (`all` runs every figure).
    #[arg(long, global = true)]
    pub figure: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Synthesize a noise trace from a PSD model.
    Synth(SynthArgs),
    /// Regenerate the datasets of one figure.
    Reproduce,
    /// Welch PSD of a trace.
    Welch(WelchArgs),
    /// Ramsey decay lines or a fringe scan.
    SimulateRamsey(RamseyArgs),
    /// Hahn-echo decay over a trace.
    SimulateEcho(EchoArgs),
    /// Line-by-line detuning from a fringe scan.
    Track(TrackArgs),
    /// Fit a Ramsey free-induction decay.
    FitDecay(CurveArgs),
    /// Fit a Hahn-echo decay.
    FitEcho(CurveArgs),
    /// T2* against measurement time from Ramsey lines.
    T2starScan(T2starArgs),
    /// Convert a current or energy PSD / current trace to detuning.
    Convert(ConvertArgs),
    /// Hyperfine bath table.
    Hyperfine(HyperfineArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// PSD model JSON.
    #[arg(long)]
    pub psd: PathBuf,
    #[arg(long)]
    pub n_samples: usize,
    #[arg(long)]
    pub sample_rate_hz: f64,
    /// Also write the trace as CSV.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowArg {
    Hann,
    Rect,
}

#[derive(Debug, Args, Serialize)]
pub struct WelchArgs {
    /// Binary trace file.
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value = "detuning-Hz")]
    pub unit: String,
    #[arg(long)]
    pub segment_length: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    #[arg(long, value_enum, default_value = "hann")]
    pub window: WindowArg,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RamseyKind {
    Decay,
    Scan,
}

#[derive(Debug, Args, Serialize)]
pub struct RamseyArgs {
    #[arg(long, value_enum, default_value = "decay")]
    pub kind: RamseyKind,
    /// Detuning trace; without it a decay uses the PSD's quasi-static band.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// PSD model for the quasi-static band.
    #[arg(long)]
    pub psd: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-5)]
    pub f_lo_hz: f64,
    #[arg(long, default_value_t = 2)]
    pub convention: u8,
    #[arg(long, default_value_t = 1)]
    pub n_lines: usize,
    #[arg(long, default_value_t = 38.0)]
    pub line_duration_s: f64,
    #[arg(long, default_value_t = 100)]
    pub shots: u32,
    #[arg(long, default_value_t = 60e-6)]
    pub t_e_max_s: f64,
    #[arg(long, default_value_t = 61)]
    pub n_t_e: usize,
    #[arg(long, default_value_t = 0.0)]
    pub drive_detuning_hz: f64,
    /// Evolution time of a fringe scan.
    #[arg(long, default_value_t = 2e-6)]
    pub t_e_s: f64,
    #[arg(long, default_value_t = -1e6)]
    pub detuning_min_hz: f64,
    #[arg(long, default_value_t = 1e6)]
    pub detuning_max_hz: f64,
    #[arg(long, default_value_t = 100)]
    pub n_detuning: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EchoArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value_t = 10e-6)]
    pub t_e_min_s: f64,
    #[arg(long, default_value_t = 400e-6)]
    pub t_e_max_s: f64,
    #[arg(long, default_value_t = 10e-6)]
    pub t_e_step_s: f64,
    #[arg(long, default_value_t = 5000)]
    pub shots: u32,
}

#[derive(Debug, Args, Serialize)]
pub struct TrackArgs {
    /// Fringe dataset JSON from `simulate-ramsey --kind scan`.
    #[arg(long)]
    pub fringes: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CurveArgs {
    /// Decay curve JSON.
    #[arg(long)]
    pub curve: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct T2starArgs {
    /// JSON list of decay curves, one per line.
    #[arg(long)]
    pub lines: PathBuf,
    #[arg(long)]
    pub line_duration_s: f64,
    #[arg(long, default_value_t = 1)]
    pub bundle_offset: usize,
    /// Comma-separated measurement times.
    #[arg(long, value_delimiter = ',', required = true)]
    pub t_m_s: Vec<f64>,
    #[arg(long)]
    pub split_s: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ConvertArgs {
    /// Current or energy PSD model JSON.
    #[arg(long, conflicts_with = "trace")]
    pub psd: Option<PathBuf>,
    /// Binary SET current trace in pA.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct HyperfineArgs {
    /// Monte-Carlo oracle trials; 0 disables the oracle.
    #[arg(long, default_value_t = 0)]
    pub oracle_trials: usize,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Exit code for an error chain: configuration problems and numeric
/// failures are told apart.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<qdnoise::Error>() {
            return if e.is_config_error() || matches!(e, qdnoise::Error::Io(_)) {
                EXIT_CONFIG
            } else {
                EXIT_NUMERIC
            };
        }
    }
    EXIT_NUMERIC
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v = serde_json::from_str(&text)
        .map_err(qdnoise::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(v)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_csv_file(path: &Path, f: impl FnOnce(fs::File) -> qdnoise::Result<()>) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f(file).with_context(|| format!("writing {}", path.display()))
}

/// Config from `--config`, accepting either a bare config or a manifest.
pub fn load_config(cli: &Cli) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = match &cli.config {
        None => ScenarioConfig::default(),
        Some(path) => {
            let mut v: Value = read_json(path)?;
            if let Some(inner) = v.get_mut("config") {
                v = inner.take();
            }
            serde_json::from_value(v)
                .map_err(qdnoise::Error::from)
                .with_context(|| format!("config {}", path.display()))?
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = cli.scale {
        cfg.scale = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_trace(path: &Path, unit: QuantityUnit) -> anyhow::Result<NoiseTrace> {
    NoiseTrace::load_binary(path, unit).with_context(|| format!("loading trace {}", path.display()))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    let cfg = load_config(&cli)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let started = Instant::now();
    let details = dispatch(&cli, &cfg)?;
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "invocation": cli.command,
        "figure": cli.figure,
        "timestamp_unix_s": timestamp,
        "runtime_s": started.elapsed().as_secs_f64(),
        "threads": rayon::current_num_threads(),
        "config": cfg,
        "details": details,
    });
    write_json(&cli.out.join("manifest.json"), &manifest)
}

fn dispatch(cli: &Cli, cfg: &ScenarioConfig) -> anyhow::Result<Value> {
    let out = cli.out.as_path();
    let streams = SeedStreams::new(cfg.seed);
    match &cli.command {
        Command::Synth(a) => {
            let psd: CompositePsd = read_json(&a.psd)?;
            let t0 = Instant::now();
            let trace = synthesize(&psd, a.n_samples, a.sample_rate_hz, streams.derive_seed(Domain::Synthesis, 0))?;
            let synth_s = t0.elapsed().as_secs_f64();
            trace.save_binary(out.join("trace.bin"))?;
            if a.csv {
                write_csv_file(&out.join("trace.csv"), |f| trace.write_csv(f))?;
            }
            let fs = a.sample_rate_hz;
            let expected = psd.integrate(fs / a.n_samples as f64, fs / 2.0)?;
            Ok(json!({
                "n_samples": trace.len(),
                "sample_rate_hz": fs,
                "unit": trace.unit(),
                "synthesis_runtime_s": synth_s,
                "variance": trace.variance(),
                "variance_model": expected,
            }))
        }
        Command::Reproduce => {
            let name = cli.figure.as_deref().ok_or_else(|| usage("reproduce needs --figure"))?;
            let figures: Vec<Figure> = if name == "all" {
                Figure::ALL.to_vec()
            } else {
                vec![name.parse()?]
            };
            let mut summaries = serde_json::Map::new();
            for f in figures {
                log::info!("reproducing {f}");
                let r = reproduce(f, cfg, out)?;
                summaries.insert(f.name().into(), r.summary);
            }
            Ok(Value::Object(summaries))
        }
        Command::Welch(a) => {
            let trace = load_trace(&a.trace, QuantityUnit::from(a.unit.clone()))?;
            let settings = WelchSettings {
                segment_length: a.segment_length,
                overlap_fraction: a.overlap,
                window: match a.window {
                    WindowArg::Hann => Window::Hann,
                    WindowArg::Rect => Window::Rect,
                },
            };
            let est = welch_trace(&trace, &settings)?;
            write_csv_file(&out.join("psd.csv"), |f| est.write_csv(f))?;
            write_json(&out.join("psd.json"), &est)?;
            Ok(json!({
                "segment_length": est.segment_length,
                "n_segments_averaged": est.n_segments_averaged,
                "convention": est.convention,
            }))
        }
        Command::SimulateRamsey(a) => simulate_ramsey(a, cfg, &streams, out),
        Command::SimulateEcho(a) => {
            let trace = load_trace(&a.trace, QuantityUnit::DetuningHz)?;
            let n_t = ((a.t_e_max_s - a.t_e_min_s) / a.t_e_step_s).round() as usize + 1;
            let grid: Vec<f64> = (0..n_t).map(|i| a.t_e_min_s + i as f64 * a.t_e_step_s).collect();
            let total = (grid.len() * a.shots as usize) as f64;
            let dc = DecayConfig {
                sequence_kind: SequenceKind::Echo,
                shot_interval_s: (trace.duration() - 2.0 * a.t_e_max_s) / total,
                t_e_grid_s: grid,
                shots_per_point: a.shots,
                readout: Readout::Binomial,
                phase_mode: PhaseMode::Integrated,
                start_time_s: 0.0,
                drive_detuning_hz: 0.0,
            };
            let curve = simulate_decay(&dc, DetuningSource::Trace(&trace), &streams, 0)?;
            write_csv_file(&out.join("echo.csv"), |f| curve.write_csv(f))?;
            write_json(&out.join("echo.json"), &curve)?;
            Ok(json!({ "n_points": curve.p_up.len() }))
        }
        Command::Track(a) => {
            let data: FringeDataset = read_json(&a.fringes)?;
            let series = track_detuning(&data, &data.params, data.config.evolution_time_s)?;
            write_csv_file(&out.join("detuning.csv"), |f| series.write_csv(f))?;
            let n_valid = series.valid.iter().filter(|v| **v).count();
            Ok(json!({ "n_lines": series.len(), "n_valid": n_valid }))
        }
        Command::FitDecay(a) => {
            let curve: DecayCurve = read_json(&a.curve)?;
            let fit = fit_ramsey_decay(&curve)?;
            write_json(&out.join("fit.json"), &fit)?;
            Ok(json!({ "t2_star_s": fit.get("t2_star"), "converged": fit.converged }))
        }
        Command::FitEcho(a) => {
            let curve: DecayCurve = read_json(&a.curve)?;
            let fit = fit_echo_decay(&curve)?;
            write_json(&out.join("fit.json"), &fit)?;
            Ok(json!({
                "t2_echo_s": fit.get("t2_echo"),
                "alpha": fit.get("alpha"),
                "converged": fit.converged,
            }))
        }
        Command::T2starScan(a) => {
            let lines: Vec<DecayCurve> = read_json(&a.lines)?;
            let series = t2star_vs_tm(&lines, a.line_duration_s, a.bundle_offset, &a.t_m_s)?;
            write_csv_file(&out.join("t2star_tm.csv"), |f| series.write_csv(f))?;
            let t_e = lines[0].t_e_grid_s[lines[0].t_e_grid_s.len() - 1];
            let fit = fit_t2star_tm(&series, t_e, a.split_s).ok();
            Ok(json!({ "series": series, "fit": fit }))
        }
        Command::Convert(a) => match (&a.psd, &a.trace) {
            (Some(p), None) => {
                let psd: CompositePsd = read_json(p)?;
                let converted = convert_psd(&psd, &cfg.conversion)?;
                write_json(&out.join("psd_detuning.json"), &converted)?;
                Ok(json!({ "factor_hz_per_unit": cfg.conversion.factor_for(psd.unit_label())? }))
            }
            (None, Some(t)) => {
                let trace = load_trace(t, QuantityUnit::CurrentPa)?;
                let converted = detuning_from_current(&trace, &cfg.conversion)?;
                converted.save_binary(out.join("trace_detuning.bin"))?;
                Ok(json!({ "factor_hz_per_pa": cfg.conversion.hz_per_pa() }))
            }
            _ => Err(usage("convert needs exactly one of --psd or --trace")),
        },
        Command::Hyperfine(a) => {
            let h = &cfg.hyperfine;
            let species = h.species.clone().unwrap_or_else(|| device_baths(h.gamma_barrier));
            let oracle = (a.oracle_trials > 0).then_some((a.oracle_trials, &streams));
            let rows = bath_table(&species, &h.geometry, oracle)?;
            write_csv_file(&out.join("baths.csv"), |f| write_bath_table_csv(&rows, f))?;
            Ok(json!({ "baths": rows }))
        }
    }
}

fn simulate_ramsey(a: &RamseyArgs, cfg: &ScenarioConfig, streams: &SeedStreams, out: &Path) -> anyhow::Result<Value> {
    let trace = match &a.trace {
        Some(p) => Some(load_trace(p, QuantityUnit::DetuningHz)?),
        None => None,
    };
    match a.kind {
        RamseyKind::Scan => {
            let Some(trace) = trace else {
                bail!(usage("a fringe scan needs --trace"));
            };
            let scan = RamseyScanConfig {
                detuning_grid_hz: RamseyScanConfig::linear_grid(a.detuning_min_hz, a.detuning_max_hz, a.n_detuning),
                shots_per_point: a.shots,
                line_duration_s: a.line_duration_s,
                n_lines: a.n_lines,
                evolution_time_s: a.t_e_s,
            };
            let data = simulate_ramsey_scan(&cfg.pulse, &scan, &trace, streams, Readout::Binomial)?;
            write_csv_file(&out.join("fringes.csv"), |f| data.write_csv(f))?;
            write_json(&out.join("fringes.json"), &data)?;
            Ok(json!({ "n_lines": data.p_up.len() }))
        }
        RamseyKind::Decay => {
            let band = match &a.psd {
                Some(p) => Some(QuasiStaticBand {
                    psd: read_json(p)?,
                    f_lo_hz: a.f_lo_hz,
                    f_hi_hz: None,
                    convention: ConventionFactor::try_from(a.convention)?,
                }),
                None => None,
            };
            let source = match (&trace, &band) {
                (Some(t), Some(b)) => DetuningSource::TraceWithBand(t, b),
                (Some(t), None) => DetuningSource::Trace(t),
                (None, Some(b)) => DetuningSource::QuasiStatic(b),
                (None, None) => bail!(usage("a Ramsey decay needs --trace or --psd")),
            };
            let grid = RamseyScanConfig::linear_grid(0.0, a.t_e_max_s, a.n_t_e);
            let interval = match trace {
                Some(_) => a.line_duration_s / (grid.len() as f64 * a.shots as f64),
                None => 0.0,
            };
            let lines = (0..a.n_lines)
                .map(|j| {
                    let dc = DecayConfig {
                        sequence_kind: SequenceKind::Ramsey,
                        t_e_grid_s: grid.clone(),
                        shots_per_point: a.shots,
                        readout: Readout::Binomial,
                        phase_mode: PhaseMode::QuasiStatic,
                        start_time_s: j as f64 * a.line_duration_s,
                        shot_interval_s: interval,
                        drive_detuning_hz: a.drive_detuning_hz,
                    };
                    simulate_decay(&dc, source, streams, j as u64)
                })
                .collect::<qdnoise::Result<Vec<_>>>()?;
            let avg = DecayCurve::average(&lines)?;
            write_csv_file(&out.join("ramsey.csv"), |f| avg.write_csv(f))?;
            write_json(&out.join("ramsey.json"), &avg)?;
            write_json(&out.join("ramsey_lines.json"), &lines)?;
            Ok(json!({ "n_lines": lines.len() }))
        }
    }
}
