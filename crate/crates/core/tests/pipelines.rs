use qdnoise::fitting::{fit_ramsey_decay, fit_t2star_tm, t2star_vs_tm};
use qdnoise::psd::{CompositePsd, QuantityUnit};
use qdnoise::qubit::{
    simulate_decay, simulate_ramsey_scan, DecayConfig, DetuningSource, PhaseMode, PulseParams, QuasiStaticBand,
    RamseyScanConfig, Readout, SequenceKind,
};
use qdnoise::rng::SeedStreams;
use qdnoise::scenario::{reproduce, Figure, ScenarioConfig};
use qdnoise::spectral::{track_detuning, welch_trace, WelchSettings};
use qdnoise::synth::{synthesize, ConventionFactor, NoiseTrace};
use qdnoise::Error;

#[test]
fn white_noise_level_survives_synthesis_and_welch() {
    let psd = CompositePsd::single(QuantityUnit::CurrentPa, 3.0, 0.0).unwrap();
    let trace = synthesize(&psd, 1 << 16, 50.0, 9).unwrap();
    let est = welch_trace(&trace, &WelchSettings::default()).unwrap();
    assert_eq!(est.unit_label, QuantityUnit::CurrentPa);
    let mean = est.densities.iter().sum::<f64>() / est.len() as f64;
    assert!((mean - 3.0).abs() < 0.05, "{mean}");
    // Parseval: the estimate integrates to the sample variance.
    assert!(((est.integral() - trace.variance()) / trace.variance()).abs() < 0.05);
}

#[test]
fn tracking_recovers_a_known_trace() {
    let params = PulseParams::default();
    let truth: Vec<f64> = (0..40).map(|i| 50e3 * (i as f64 / 6.0).sin()).collect();
    let trace = NoiseTrace::new(1.0 / 10.0, truth.clone(), 0, QuantityUnit::DetuningHz).unwrap();
    let scan = RamseyScanConfig {
        detuning_grid_hz: RamseyScanConfig::linear_grid(-1e6, 1e6, 100),
        shots_per_point: 100,
        line_duration_s: 10.0,
        n_lines: 39,
        evolution_time_s: 1e-6,
    };
    let data = simulate_ramsey_scan(&params, &scan, &trace, &SeedStreams::new(4), Readout::Binomial).unwrap();
    let series = track_detuning(&data, &params, 1e-6).unwrap();
    assert!(series.valid.iter().all(|v| *v));
    for (k, est) in series.delta_f_hz.iter().enumerate() {
        assert!((est - truth[k]).abs() < 10e3, "line {k}: {est} vs {}", truth[k]);
    }
    let back = series.to_trace().unwrap();
    assert_eq!(back.len(), 39);
}

#[test]
fn bundled_lines_give_decreasing_t2star() {
    let psd = CompositePsd::single(QuantityUnit::DetuningHz, 2e6, 2.0).unwrap();
    let line = 10.0;
    let n_lines = 64;
    let trace = synthesize(&psd, 1024, 1.0, 11).unwrap();
    let band = QuasiStaticBand {
        psd: psd.clone(),
        f_lo_hz: 0.5,
        f_hi_hz: None,
        convention: ConventionFactor::One,
    };
    let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 2e-6).collect();
    let streams = SeedStreams::new(5);
    let lines: Vec<_> = (0..n_lines)
        .map(|j| {
            let cfg = DecayConfig {
                sequence_kind: SequenceKind::Ramsey,
                t_e_grid_s: grid.clone(),
                shots_per_point: 50,
                readout: Readout::Binomial,
                phase_mode: PhaseMode::QuasiStatic,
                start_time_s: j as f64 * line,
                shot_interval_s: line / (41.0 * 50.0),
                drive_detuning_hz: 100e3,
            };
            simulate_decay(&cfg, DetuningSource::TraceWithBand(&trace, &band), &streams, j).unwrap()
        })
        .collect();
    let series = t2star_vs_tm(&lines, line, 4, &[10.0, 80.0, 640.0]).unwrap();
    assert_eq!(series.t_m_s, vec![10.0, 80.0, 640.0]);
    assert!(series.t2star_s.windows(2).all(|w| w[1] < w[0]), "{:?}", series.t2star_s);
    let single = fit_ramsey_decay(&lines[0]).unwrap();
    assert!(single.converged);
    // Three points cannot support a regime fit.
    let err = fit_t2star_tm(&series, 80e-6, None).unwrap_err();
    assert!(!err.is_config_error());
}

#[test]
fn stage_tags_name_the_failing_step() {
    let mut cfg = ScenarioConfig::default();
    cfg.scale = 0.1;
    cfg.fig2c.t_m_min_s = 1e7;
    cfg.fig2c.t_m_max_s = 1e8;
    let dir = tempfile::tempdir().unwrap();
    let err = reproduce(Figure::Fig2c, &cfg, dir.path()).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(*stage, "fit"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(!err.is_config_error());
    assert!(err.to_string().starts_with("fit: "));

    cfg.scale = 2.0;
    let err = reproduce(Figure::Fig3b, &cfg, dir.path()).unwrap_err();
    assert!(err.is_config_error());
}

#[test]
fn reproduce_writes_named_outputs() {
    let mut cfg = ScenarioConfig::default();
    cfg.scale = 0.1;
    let dir = tempfile::tempdir().unwrap();
    let r = reproduce(Figure::Fig3b, &cfg, dir.path()).unwrap();
    let names: Vec<String> = r
        .files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["fig3b_ramsey.csv", "fig3b_summary.json"]);
    let csv = std::fs::read_to_string(dir.path().join("fig3b_ramsey.csv")).unwrap();
    assert!(csv.starts_with("t_e_s,p_up,shots\n"));
    assert_eq!(csv.lines().count(), 62);
    assert_eq!(r.summary["shots_per_point"], 50);
}
