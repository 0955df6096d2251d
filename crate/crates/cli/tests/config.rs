use ppm_cli::config::{self, DeloadConfig, ParameterFile, SynthConfig, WindRange};
use ppm_cli::CliError;
use ppm_control::sim::{ControllerKind, EventKind};
use proptest::prelude::*;

#[test]
fn bundled_parameters_match_the_compiled_set() {
    assert_eq!(ParameterFile::bundled().unwrap(), ParameterFile::reference());
}

#[test]
fn parameter_file_round_trips() {
    let p = ParameterFile::reference();
    let text = config::to_toml(&p).unwrap();
    assert_eq!(config::parse_toml::<ParameterFile>(&text, "t").unwrap(), p);
}

#[test]
fn synth_config_round_trips_with_an_inline_plant() {
    let mut cfg = SynthConfig { wind_speed: Some(9.5), q_ref: [0.05, 0.0], ..Default::default() };
    cfg.plant = Some(ParameterFile::reference());
    cfg.weight.corner_hz = 20.0;
    let text = config::to_toml(&cfg).unwrap();
    assert_eq!(config::parse_toml::<SynthConfig>(&text, "t").unwrap(), cfg);
}

#[test]
fn empty_synth_config_is_the_default() {
    assert_eq!(config::parse_toml::<SynthConfig>("", "t").unwrap(), SynthConfig::default());
}

#[test]
fn bundled_scenarios_parse_and_round_trip() {
    for (name, _) in config::BUNDLED_SCENARIOS {
        let sc = config::bundled_scenario(name).unwrap().unwrap();
        assert_eq!(sc.name, name);
        let text = config::to_toml(&sc).unwrap();
        assert_eq!(config::parse_scenario(&text, "t").unwrap(), sc);
    }
    assert!(config::bundled_scenario("scenario9").is_none());
}

#[test]
fn baseline_scenario_matches_the_fault_scenario() {
    let s2 = config::bundled_scenario("scenario2_short_circuit").unwrap().unwrap();
    let s4 = config::bundled_scenario("scenario4_baseline_comparison").unwrap().unwrap();
    assert_eq!(s2.events, s4.events);
    assert_eq!((s2.dt, s2.duration), (s4.dt, s4.duration));
    assert_eq!(s4.controller, ControllerKind::Coordinated);
    assert!(matches!(s2.events[0].kind, EventKind::ShortCircuit { .. }));
}

#[test]
fn unknown_fields_are_rejected() {
    let e = config::parse_toml::<SynthConfig>("gama = 3.0", "t").unwrap_err();
    assert!(matches!(e, CliError::Config(_)), "{e}");
    let text = config::REFERENCE_PARAMETERS.replace("[base]", "[base]\nspeed = 1.0");
    assert!(config::parse_toml::<ParameterFile>(&text, "t").is_err());
}

#[test]
fn non_positive_inertia_is_a_config_error() {
    let mut p = ParameterFile::reference();
    p.pmsg[1].h_t = 0.0;
    let cfg = SynthConfig { plant: Some(p), ..Default::default() };
    let e = cfg.validate().unwrap_err();
    assert_eq!(e.exit_code(), 2, "{e}");
    assert!(ppm_cli::commands::synthesize(&cfg).is_err());
}

#[test]
fn bad_synthesis_options_fail_validation() {
    let mut cfg = SynthConfig::default();
    cfg.synthesis.gamma_tol = 0.0;
    assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    let cfg = SynthConfig { wind_speed: Some(-3.0), ..Default::default() };
    assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
}

#[test]
fn empty_wind_range_is_rejected() {
    for w in [
        WindRange { start: 5.0, stop: 4.0, step: 0.5 },
        WindRange { start: 1.0, stop: 4.0, step: 0.0 },
        WindRange { start: 0.0, stop: 4.0, step: 1.0 },
    ] {
        assert!(matches!(w.speeds(), Err(CliError::Config(_))));
    }
    let cfg = DeloadConfig::default();
    let v = cfg.wind.speeds().unwrap();
    assert_eq!((v.len(), v[0], *v.last().unwrap()), (59, 1.0, 30.0));
}

#[test]
fn deload_config_defaults() {
    let cfg = config::parse_toml::<DeloadConfig>("", "t").unwrap();
    assert_eq!(cfg, DeloadConfig::default());
    assert_eq!(cfg.fraction, 0.10);
}

#[test]
fn scenario_file_loads_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    let (_, text) = config::BUNDLED_SCENARIOS[2];
    std::fs::write(&path, text).unwrap();
    let sc = config::load_scenario(path.to_str().unwrap()).unwrap();
    assert_eq!(sc, config::load_scenario("scenario3_frequency_services").unwrap());
    assert!(matches!(config::load_scenario("/no/such/file.toml"), Err(CliError::Config(_))));
}

proptest! {
    #[test]
    fn wind_range_covers_the_interval(start in 0.5f64..10.0, span in 0.0f64..20.0, step in 0.1f64..2.0) {
        let w = WindRange { start, stop: start + span, step };
        let v = w.speeds().unwrap();
        prop_assert_eq!(v[0], start);
        prop_assert!(*v.last().unwrap() <= start + span + 1e-9);
        prop_assert!(start + span - v.last().unwrap() < step);
        prop_assert!(v.windows(2).all(|p| (p[1] - p[0] - step).abs() < 1e-9));
    }

    #[test]
    fn weight_round_trips(corner in 1.0f64..500.0, order in 1usize..4, ratio in 2.0f64..100.0) {
        let mut cfg = SynthConfig::default();
        cfg.weight.corner_hz = corner;
        cfg.weight.order = order;
        cfg.weight.hf_ratio = ratio;
        let back: SynthConfig = config::parse_toml(&config::to_toml(&cfg).unwrap(), "t").unwrap();
        prop_assert_eq!(back, cfg);
    }
}
