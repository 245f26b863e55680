//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; the process fails if any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use qdnoise::conversion::{convert_psd, detuning_from_current, ConversionChain};
use qdnoise::fitting::{fit_echo_decay, fit_ramsey_decay, t2star_prediction, EchoDecayModel, Model};
use qdnoise::hyperfine::{count_spinful, device_baths, ergodic_t2star, DotGeometry, DEVICE_GAMMA_BARRIER};
use qdnoise::psd::{CompositePsd, QuantityUnit};
use qdnoise::qubit::{
    fringe_probability, simulate_decay, DecayConfig, DecayCurve, DetuningSource, PhaseMode, PulseParams,
    QuasiStaticBand, Readout, SequenceKind,
};
use qdnoise::rng::SeedStreams;
use qdnoise::scenario::{reproduce, Figure, ScenarioConfig};
use qdnoise::spectral::{fit_broken_power_law, welch_psd, welch_trace, WelchSettings, Window};
use qdnoise::synth::{synthesize, ConventionFactor};

// Tolerances and runtime budgets.
const HYPERFINE_T2_REL: f64 = 0.05;
const HYPERFINE_NS_REL: f64 = 0.02;
const HYPERFINE_BUDGET: Duration = Duration::from_secs(1);
const ORACLE_ABS: f64 = 1e-10;
const ORACLE_SETS: usize = 1000;
const ORACLE_BUDGET: Duration = Duration::from_secs(1);
const ROUNDTRIP_EXPONENT_ABS: f64 = 0.1;
const ROUNDTRIP_SEEDS: u64 = 16;
const ROUNDTRIP_SAMPLES: usize = 1 << 20;
const ROUNDTRIP_BUDGET: Duration = Duration::from_secs(120);
const CROSSOVER_RANGE: (f64, f64) = (1.2, 1.8);
const CROSSOVER_BUDGET: Duration = Duration::from_secs(600);
const EQ3_REL: f64 = 0.10;
const EQ3_BUDGET: Duration = Duration::from_secs(300);
const FIG3B_RANGE: (f64, f64) = (18e-6, 24e-6);
const FIG3B_ANCHOR_REL: f64 = 1e-12;
const FIG3B_BUDGET: Duration = Duration::from_secs(120);
const ECHO_T_ABS: f64 = 4e-6;
const ECHO_ALPHA_ABS: f64 = 0.15;
const ECHO_SEEDS: u64 = 20;
const ECHO_BUDGET: Duration = Duration::from_secs(60);
const CONVERSION_REL: f64 = 1e-12;
const CONVERSION_BUDGET: Duration = Duration::from_secs(1);
const ANCHOR_FACTOR: f64 = 3.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn run(id: u32, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let o = f();
    let elapsed = t0.elapsed();
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let pass = o.pass && in_time;
    let budget_note = match budget {
        Some(b) => format!(" (runtime {:.2} s, budget {:.0} s)", elapsed.as_secs_f64(), b.as_secs_f64()),
        None => format!(" (runtime {:.2} s)", elapsed.as_secs_f64()),
    };
    println!(
        "[{}] criterion {id}: {name}: {}{budget_note}",
        if pass { "PASS" } else { "FAIL" },
        o.detail
    );
    pass
}

fn hyperfine_table() -> Outcome {
    let geometry = DotGeometry::device_default();
    let expect = [(9.6, 22e-6), (5.2, 30e-6), (3.7, 0.61e-6)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (s, (ns_ref, t_ref)) in device_baths(DEVICE_GAMMA_BARRIER).iter().zip(expect) {
        let ns = count_spinful(s, &geometry);
        let t = ergodic_t2star(s, &geometry).unwrap();
        ok &= rel(ns, ns_ref) <= HYPERFINE_NS_REL && rel(t, t_ref) <= HYPERFINE_T2_REL;
        parts.push(format!("{} N_S={ns:.3} T2*={:.3} us", s.label, t * 1e6));
    }
    outcome(ok, parts.join(", "))
}

/// `|<up| U_p U_f U_p |down>|^2` with explicit 2x2 matrices.
fn unitary_oracle(f_rabi: f64, t_p: f64, t_e: f64, df: f64) -> f64 {
    type M = [[C; 2]; 2];
    let mul = |a: &M, b: &M| -> M {
        let mut r = [[C::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        r
    };
    // H / h = (df sz + f_rabi sx) / 2, U = exp(-i 2 pi H t).
    let phi = df.hypot(f_rabi);
    let (nx, nz) = (f_rabi / phi, df / phi);
    let theta = PI * phi * t_p;
    let (c, s) = (theta.cos(), theta.sin());
    let mi = C::new(0.0, -s);
    let u_p: M = [
        [C::new(c, 0.0) + mi * nz, mi * nx],
        [mi * nx, C::new(c, 0.0) - mi * nz],
    ];
    let a = PI * df * t_e;
    let u_f: M = [
        [C::from_polar(1.0, -a), C::new(0.0, 0.0)],
        [C::new(0.0, 0.0), C::from_polar(1.0, a)],
    ];
    let u = mul(&u_p, &mul(&u_f, &u_p));
    u[0][1].norm_sqr()
}

fn eq1_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..ORACLE_SETS {
        let f_rabi = rng.random_range(0.1e6..5e6);
        let t_p = rng.random_range(20e-9..1e-6);
        let t_e = rng.random_range(0.0..20e-6);
        let df = rng.random_range(-5e6..5e6);
        let params = PulseParams::new(f_rabi, t_p).unwrap();
        let p = fringe_probability(&params, t_e, df);
        worst = worst.max((p - unitary_oracle(f_rabi, t_p, t_e, df)).abs());
    }
    outcome(worst <= ORACLE_ABS, format!("max |P - oracle| = {worst:.2e} over {ORACLE_SETS} sets"))
}

fn psd_round_trip() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for alpha in [1.0, 1.5, 2.0] {
        let psd = CompositePsd::single(QuantityUnit::DetuningHz, 1.0, alpha).unwrap();
        let mut sum = 0.0;
        for seed in 0..ROUNDTRIP_SEEDS {
            let trace = synthesize(&psd, ROUNDTRIP_SAMPLES, 1.0, seed).unwrap();
            let est = welch_trace(&trace, &WelchSettings::default()).unwrap();
            sum += fit_broken_power_law(&est, 1, None).unwrap().segments[0].exponent;
        }
        let mean = sum / ROUNDTRIP_SEEDS as f64;
        ok &= (mean - alpha).abs() <= ROUNDTRIP_EXPONENT_ABS;
        parts.push(format!("alpha {alpha} -> {mean:.3}"));
    }
    outcome(ok, parts.join(", "))
}

fn crossover(dir: &Path) -> Outcome {
    let cfg = ScenarioConfig::default();
    let r = reproduce(Figure::Fig1d, &cfg, dir).unwrap();
    let a = r.summary["high_band_exponent"].as_f64().unwrap();
    outcome(
        a > CROSSOVER_RANGE.0 && a < CROSSOVER_RANGE.1,
        format!(
            "high-band exponent {a:.3} from {} tracked lines at scale {}",
            r.summary["n_valid_lines"], cfg.scale
        ),
    )
}

fn eq3_consistency() -> Outcome {
    let s0 = 4.09e6;
    let alpha = 1.5;
    let t_e_ref = 20e-6;
    let psd = CompositePsd::single(QuantityUnit::DetuningHz, s0, alpha).unwrap();
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 1e-6).collect();
    let streams = SeedStreams::new(3);
    let mut fitted = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, t_m) in [6.0, 19.0, 60.0, 190.0, 600.0].into_iter().enumerate() {
        let band = QuasiStaticBand {
            psd: psd.clone(),
            f_lo_hz: 1.0 / t_m,
            f_hi_hz: None,
            convention: ConventionFactor::Two,
        };
        let cfg = DecayConfig {
            sequence_kind: SequenceKind::Ramsey,
            t_e_grid_s: grid.clone(),
            shots_per_point: 4000,
            readout: Readout::Binomial,
            phase_mode: PhaseMode::QuasiStatic,
            start_time_s: 0.0,
            shot_interval_s: 0.0,
            drive_detuning_hz: 0.0,
        };
        let curve = simulate_decay(&cfg, DetuningSource::QuasiStatic(&band), &streams, k as u64).unwrap();
        let t2 = fit_ramsey_decay(&curve).unwrap().get("t2_star");
        let pred = t2star_prediction(s0, alpha, t_m, t_e_ref).unwrap();
        worst = worst.max(rel(t2, pred));
        fitted.push(t2);
    }
    let decreasing = fitted.windows(2).all(|w| w[1] < w[0]);
    let list: Vec<String> = fitted.iter().map(|t| format!("{:.2}", t * 1e6)).collect();
    outcome(
        worst <= EQ3_REL && decreasing,
        format!("T2* [{}] us, max deviation {:.1}%, strictly decreasing: {decreasing}", list.join(", "), worst * 100.0),
    )
}

fn fig3b(dir: &Path) -> Outcome {
    let cfg = ScenarioConfig::default();
    let chain = ConversionChain::device_default();
    let r = reproduce(Figure::Fig3b, &cfg, dir).unwrap();
    let t2 = r.summary["t2star_s"].as_f64().unwrap();
    let density = r.summary["flicker_density_at_1hz_hz_per_sqrt_hz"].as_f64().unwrap();
    let anchor = 0.47 * chain.hz_per_micro_ev();
    let anchored = rel(density, anchor) <= FIG3B_ANCHOR_REL;
    outcome(
        t2 >= FIG3B_RANGE.0 && t2 <= FIG3B_RANGE.1 && anchored,
        format!(
            "T2* = {:.2} us; 1/f detuning density at 1 Hz {density:.2} Hz/sqrt(Hz) = 0.47 ueV/sqrt(Hz) x {:.1} Hz/ueV",
            t2 * 1e6,
            chain.hz_per_micro_ev()
        ),
    )
}

fn echo_fit() -> Outcome {
    let (t_true, a_true) = (128e-6, 1.003);
    let grid: Vec<f64> = (1..=40).map(|i| i as f64 * 10e-6).collect();
    let shots = 5000u32;
    let truth = [t_true, a_true, -0.5, 1.0];
    let (mut worst_t, mut worst_a): (f64, f64) = (0.0, 0.0);
    for seed in 0..ECHO_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let p: Vec<f64> = grid
            .iter()
            .map(|&t| {
                let p = EchoDecayModel.eval(t, &truth);
                Binomial::new(shots as u64, p).unwrap().sample(&mut rng) as f64 / shots as f64
            })
            .collect();
        let curve = DecayCurve::new(grid.clone(), p, shots, SequenceKind::Echo).unwrap();
        let fit = fit_echo_decay(&curve).unwrap();
        worst_t = worst_t.max((fit.get("t2_echo") - t_true).abs());
        worst_a = worst_a.max((fit.get("alpha") - a_true).abs());
    }
    outcome(
        worst_t <= ECHO_T_ABS && worst_a <= ECHO_ALPHA_ABS,
        format!(
            "worst |dT2echo| = {:.2} us, worst |dalpha| = {worst_a:.3} over {ECHO_SEEDS} seeds",
            worst_t * 1e6
        ),
    )
}

fn conversion_algebra() -> Outcome {
    let chain = ConversionChain::device_default();
    let k = chain.hz_per_pa();
    let psd = CompositePsd::two_slope(QuantityUnit::CurrentPa, 0.3, 1.0, 2.0, 1e-3).unwrap();
    let conv = convert_psd(&psd, &chain).unwrap();
    let exact = psd.segments().iter().zip(conv.segments()).all(|(a, b)| {
        a.exponent().to_bits() == b.exponent().to_bits() && b.amplitude_at_1hz() == a.amplitude_at_1hz() * (k * k)
    });
    let trace = synthesize(&psd, 1 << 14, 10.0, 5).unwrap();
    let det = detuning_from_current(&trace, &chain).unwrap();
    let a = welch_psd(trace.samples(), 10.0, 512, 0.5, Window::Hann).unwrap();
    let b = welch_psd(det.samples(), 10.0, 512, 0.5, Window::Hann).unwrap();
    let worst = a
        .densities
        .iter()
        .zip(&b.densities)
        .map(|(x, y)| rel(*y, k * k * x))
        .fold(0.0, f64::max);
    outcome(
        exact && worst <= CONVERSION_REL,
        format!("K = {k:.2} Hz/pA, amplitudes exact: {exact}, welch(convert) vs K^2 welch max rel {worst:.1e}"),
    )
}

fn determinism() -> Outcome {
    let mut cfg = ScenarioConfig::default();
    cfg.scale = 0.05;
    cfg.hyperfine.oracle_trials = 5000;
    let runs: Vec<tempfile::TempDir> = [1, 4]
        .into_iter()
        .map(|threads| {
            let dir = tempfile::tempdir().unwrap();
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                for f in Figure::ALL {
                    reproduce(f, &cfg, dir.path()).unwrap();
                }
            });
            dir
        })
        .collect();
    let mut names: Vec<_> = std::fs::read_dir(runs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let identical = names.iter().all(|n| {
        std::fs::read(runs[0].path().join(n)).unwrap() == std::fs::read(runs[1].path().join(n)).unwrap()
    });
    outcome(identical, format!("{} files byte-identical across runs with 1 and 4 threads", names.len()))
}

/// Converted charge noise against the synthetic detuning spectrum used for
/// the scan pipeline, in their overlapping band. Reported, not gated.
fn advisory_anchor() {
    let cfg = ScenarioConfig::default();
    let converted = convert_psd(&cfg.fig3b.charge_psd, &cfg.conversion).unwrap();
    let ratios: Vec<f64> = [1e-4, 1e-3, 3e-3]
        .iter()
        .map(|&f| cfg.fig1d.psd.eval(f).unwrap() / converted.eval(f).unwrap())
        .collect();
    let within = ratios.iter().all(|r| *r <= ANCHOR_FACTOR && *r >= 1.0 / ANCHOR_FACTOR);
    println!(
        "[INFO] advisory: detuning model / converted charge noise at 1e-4, 1e-3, 3e-3 Hz = {:.2}, {:.2}, {:.2} (x/÷{ANCHOR_FACTOR} band: {})",
        ratios[0],
        ratios[1],
        ratios[2],
        if within { "inside" } else { "outside" }
    );
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let results = [
        run(1, "hyperfine table", Some(HYPERFINE_BUDGET), hyperfine_table),
        run(2, "fringe formula vs unitary oracle", Some(ORACLE_BUDGET), eq1_oracle),
        run(3, "PSD round trip", Some(ROUNDTRIP_BUDGET), psd_round_trip),
        run(4, "crossover blending in the scan pipeline", Some(CROSSOVER_BUDGET), || crossover(dir.path())),
        run(5, "T2*(t_m) against the closed form", Some(EQ3_BUDGET), eq3_consistency),
        run(6, "charge-noise Ramsey decay", Some(FIG3B_BUDGET), || fig3b(dir.path())),
        run(7, "echo fit recovery", Some(ECHO_BUDGET), echo_fit),
        run(8, "conversion algebra", Some(CONVERSION_BUDGET), conversion_algebra),
        run(9, "determinism", None, determinism),
    ];
    advisory_anchor();
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
