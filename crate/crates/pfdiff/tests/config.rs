use pfdiff::bench::{linear_fit, summarize, BenchRow};
use pfdiff::config::{ExperimentConfig, ModeArg, Overrides};
use pfdiff::error::CliError;
use pfdiff_core::sampler::SamplerMode;
use proptest::prelude::*;

fn write_config(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, text).unwrap();
    (dir, path)
}

#[test]
fn flags_override_file_override_defaults() {
    let (_d, path) = write_config(
        r#"
case = "case24_rts"
seed = 5
[sampler]
eta = 0.5
n_ddim_steps = 50
[train]
epochs = 12
"#,
    );
    let flags = Overrides {
        config: Some(path),
        eta: Some(0.0),
        ..Default::default()
    };
    let cfg = ExperimentConfig::resolve(&flags).unwrap();
    assert_eq!(cfg.case, "case24_rts");
    assert_eq!(cfg.sampler.eta, 0.0);
    assert_eq!(cfg.sampler.n_ddim_steps, 50);
    assert_eq!(cfg.train.epochs, 12);
    assert_eq!(cfg.train.batch_size, 128);
    assert_eq!((cfg.data.seed, cfg.train.seed, cfg.sampler.seed), (5, 5, 5));

    let flags = Overrides { seed: Some(9), mode: Some(ModeArg::Ddpm), no_clamp: true, project: true, ..flags };
    let cfg = ExperimentConfig::resolve(&flags).unwrap();
    assert_eq!((cfg.data.seed, cfg.train.seed, cfg.sampler.seed), (9, 9, 9));
    assert_eq!(cfg.sampler.mode, SamplerMode::Ddpm);
    assert!(!cfg.sampler.clamp_zero_injection);
    assert!(cfg.sampler.terminal_projection);
}

#[test]
fn guidance_flag() {
    let cfg = ExperimentConfig::resolve(&Overrides { guidance_lambda: Some(0.0), ..Default::default() }).unwrap();
    assert_eq!(cfg.sampler.guidance, None);
    let cfg = ExperimentConfig::resolve(&Overrides { guidance_lambda: Some(2.5), ..Default::default() }).unwrap();
    let g = cfg.sampler.guidance.unwrap();
    assert_eq!(g.lambda_max, 2.5);
    assert_eq!(g.max_step, 0.2);
}

#[test]
fn invalid_settings_rejected() {
    let (_d, path) = write_config("unknown_key = 1\n");
    let err = ExperimentConfig::resolve(&Overrides { config: Some(path), ..Default::default() }).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert_eq!(err.exit_code(), 2);

    for flags in [
        Overrides { eta: Some(1.5), ..Default::default() },
        Overrides { n_samples: Some(0), ..Default::default() },
    ] {
        let err = ExperimentConfig::resolve(&flags).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }
    for text in ["[bench]\nsizes = [500, 0]\n", "[bench]\nrepeats = 0\n"] {
        let (_d, path) = write_config(text);
        assert!(ExperimentConfig::resolve(&Overrides { config: Some(path), ..Default::default() }).is_err());
    }
}

#[test]
fn default_config_round_trips_through_toml() {
    let cfg = ExperimentConfig::default();
    let text = toml::to_string(&cfg).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
}

#[test]
fn exit_codes_follow_error_kind() {
    let numerical = CliError::Core(pfdiff_core::Error::Divergence { epoch: 3 });
    assert_eq!(numerical.exit_code(), 3);
    let validation = CliError::Core(pfdiff_core::Error::Validation("x".into()));
    assert_eq!(validation.exit_code(), 2);
}

proptest! {
    #[test]
    fn exact_lines_fit_perfectly(slope in 1e-5f64..1.0, intercept in -1.0f64..1.0) {
        let pts: Vec<(f64, f64)> = [500.0, 1000.0, 2000.0, 5000.0].iter().map(|&x| (x, slope * x + intercept)).collect();
        let fit = linear_fit(&pts).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9 * slope.max(1.0));
        prop_assert!((fit.intercept - intercept).abs() < 1e-6);
        prop_assert!((fit.r2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn r2_in_unit_interval(ys in prop::collection::vec(0.0f64..10.0, 4)) {
        let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect();
        let fit = linear_fit(&pts).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&fit.r2));
    }
}

#[test]
fn summary_reports_speedup_at_largest_size() {
    let row = |m: &str, n: usize, s: f64| BenchRow { method: m.into(), n_samples: n, steps: if m == "ddpm" { 1000 } else { 30 }, seconds: s, runs: 1 };
    let rows = vec![
        row("ddpm", 500, 10.0),
        row("ddpm", 1000, 20.0),
        row("ddim", 500, 0.5),
        row("ddim", 1000, 1.25),
    ];
    let s = summarize(&rows).unwrap();
    assert_eq!(s.largest_n, 1000);
    assert!((s.speedup - 16.0).abs() < 1e-12);
    assert!(s.linear);
    assert_eq!(s.methods[1].growth, vec![2.5]);
    assert!(linear_fit(&[(1.0, 1.0)]).is_err());
}
