use nalgebra::DMatrix;
use ppm_control::control_model::WeightConfig;
use ppm_control::network::Line;
use ppm_control::sim::*;
use ppm_control::Error;
use proptest::prelude::*;

fn scenario(controller: ControllerKind, duration: f64, events: Vec<Event>) -> Scenario {
    Scenario {
        name: "t".into(),
        duration,
        dt: 5e-5,
        stride: 20,
        controller,
        wind_speed: None,
        q_ref: [0.0; 2],
        vdc_ref: [ppm_control::reference::VDC_REF; 2],
        services: ServiceConfig::default(),
        vector: Default::default(),
        events,
    }
}

fn zero_gains() -> CoordinatedGains {
    let weight = WeightConfig::default();
    let n_w = weight.build().unwrap().a.nrows();
    CoordinatedGains { k: DMatrix::zeros(8, 21 + n_w + 6), weight }
}

fn fault(t: f64, t_clear: f64) -> Event {
    Event { time: t, kind: EventKind::ShortCircuit { line: Line::X1, fraction: 0.5, t_clear } }
}

fn max_drift(ts: &TimeSeries, names: &[&str]) -> f64 {
    names
        .iter()
        .map(|n| {
            let y = ts.channel(n).unwrap();
            y.iter().map(|v| (v - y[0]).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

const HELD: [&str; 10] =
    ["P1_pu", "Q1_pu", "vdc1_pu", "Omega1_pu", "P2_pu", "Q2_pu", "vdc2_pu", "Omega2_pu", "omega_f_pu", "Vr1_pu"];

#[test]
fn equilibrium_is_held_without_events() {
    let model = SimModel::reference();
    let g = zero_gains();
    for c in [ControllerKind::OpenLoop, ControllerKind::Coordinated, ControllerKind::Vector] {
        let ts = run(&scenario(c, 10.0, vec![]), &model, Some(&g)).unwrap();
        assert!(max_drift(&ts, &HELD) < 1e-6, "{c:?} drifted {}", max_drift(&ts, &HELD));
    }
}

#[test]
fn initial_point_sits_on_the_deload_curve() {
    let model = SimModel::reference();
    let ts = run(&scenario(ControllerKind::OpenLoop, 0.01, vec![]), &model, None).unwrap();
    let d = ppm_control::reference::deload();
    assert!((ts.channel("Omega1_pu").unwrap()[0] - d.omega_del).abs() < 1e-9);
    assert!((ts.channel("Pm1_pu").unwrap()[0] - d.p_mdel).abs() < 1e-9);
}

#[test]
fn load_step_lands_on_its_grid_sample() {
    let mut sc = scenario(ControllerKind::OpenLoop, 0.5, vec![Event { time: 0.25, kind: EventKind::LoadStep { dp_l: 0.3 } }]);
    sc.stride = 1;
    let ts = run(&sc, &SimModel::reference(), None).unwrap();
    let pl = ts.channel("PL_pu").unwrap();
    let i = ts.index_at(0.25);
    assert!((ts.time[i] - 0.25).abs() < 1e-12);
    assert!((pl[i] - pl[i - 1] - 0.3).abs() < 1e-12);
    assert!(pl[..i].iter().all(|v| *v == pl[0]));
    assert!(pl[i..].iter().all(|v| *v == pl[i]));
}

#[test]
fn restore_returns_the_initial_load() {
    let events = vec![
        Event { time: 0.1, kind: EventKind::LoadStep { dp_l: 0.3 } },
        Event { time: 0.2, kind: EventKind::RestoreLoad },
    ];
    let ts = run(&scenario(ControllerKind::OpenLoop, 0.3, events), &SimModel::reference(), None).unwrap();
    let pl = ts.channel("PL_pu").unwrap();
    assert_eq!(pl[0], *pl.last().unwrap());
}

#[test]
fn bad_events_are_rejected() {
    let model = SimModel::reference();
    let late = scenario(ControllerKind::OpenLoop, 1.0, vec![Event { time: 1.5, kind: EventKind::RestoreLoad }]);
    assert!(matches!(run(&late, &model, None), Err(Error::EventOutOfRange(_))));
    let unsorted = scenario(
        ControllerKind::OpenLoop,
        1.0,
        vec![Event { time: 0.5, kind: EventKind::RestoreLoad }, Event { time: 0.2, kind: EventKind::RestoreLoad }],
    );
    assert!(matches!(run(&unsorted, &model, None), Err(Error::EventOutOfRange(_))));
    let clear_first = scenario(ControllerKind::OpenLoop, 1.0, vec![fault(0.5, 0.4)]);
    assert!(matches!(run(&clear_first, &model, None), Err(Error::EventOutOfRange(_))));
    let chan = scenario(
        ControllerKind::OpenLoop,
        1.0,
        vec![Event { time: 0.5, kind: EventKind::ReferenceStep { channel: "X9".into(), value: 1.0 } }],
    );
    assert!(matches!(run(&chan, &model, None), Err(Error::MissingChannel(_))));
    let no_gain = scenario(ControllerKind::Coordinated, 1.0, vec![]);
    assert!(matches!(run(&no_gain, &model, None), Err(Error::Config(_))));
    let wrong = CoordinatedGains { k: DMatrix::zeros(8, 5), weight: WeightConfig::default() };
    assert!(matches!(run(&no_gain, &model, Some(&wrong)), Err(Error::DimensionMismatch(_))));
}

#[test]
fn scenario_parses_from_toml() {
    let src = r#"
        name = "fault"
        duration = 2.0
        dt = 5e-5
        controller = "vector"
        [services]
        droop = true
        [[events]]
        time = 0.5
        kind = "short_circuit"
        line = "X1"
        fraction = 0.5
        t_clear = 0.61
    "#;
    let sc: Scenario = toml::from_str(src).unwrap();
    assert_eq!(sc.events[0], fault(0.5, 0.61));
    assert!(sc.services.droop && !sc.services.inertia);
    assert_eq!(sc.stride, 200);
    let bad = src.replace("droop = true", "drop = true");
    assert!(toml::from_str::<Scenario>(&bad).is_err());
}

#[test]
fn unknown_channel_is_reported() {
    let ts = run(&scenario(ControllerKind::OpenLoop, 0.01, vec![]), &SimModel::reference(), None).unwrap();
    assert!(matches!(ts.channel("nope"), Err(Error::MissingChannel(_))));
    assert!(matches!(metrics_for(&ts, &["P1_pu", "nope"], 0.0, 0.01), Err(Error::MissingChannel(_))));
    assert_eq!(ts.names, channel_names());
    assert!(ts.names.iter().all(|n| n.ends_with("_pu") || n.ends_with("_deg") || n.ends_with("_pu_per_s")));
}

#[test]
fn reruns_are_bit_identical() {
    let sc = scenario(ControllerKind::Vector, 1.0, vec![fault(0.3, 0.41)]);
    let model = SimModel::reference();
    let a = run(&sc, &model, None).unwrap();
    let b = run(&sc, &model, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fault_depresses_the_faulted_side() {
    let sc = scenario(ControllerKind::Vector, 1.0, vec![fault(0.3, 0.41)]);
    let ts = run(&sc, &SimModel::reference(), None).unwrap();
    let m = metrics_for(&ts, &["Vr1_pu", "Vr2_pu"], 0.2, 1.0).unwrap();
    assert!(m.channels["Vr1_pu"].peak_deviation > 3.0 * m.channels["Vr2_pu"].peak_deviation);
    let v0 = ts.value_at("Vr1_pu", 0.0).unwrap();
    assert!((ts.value_at("Vr1_pu", 0.35).unwrap() - v0).abs() > 0.5);
}

#[test]
fn halving_dt_barely_moves_the_terminal_state() {
    let model = SimModel::reference();
    let mut sc = scenario(ControllerKind::OpenLoop, 0.5, vec![Event { time: 0.1, kind: EventKind::LoadStep { dp_l: 0.5 } }]);
    let a = run(&sc, &model, None).unwrap();
    sc.dt /= 2.0;
    let b = run(&sc, &model, None).unwrap();
    let scale = a.terminal_state.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let diff = a.terminal_state.iter().zip(&b.terminal_state).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(diff / scale < 1e-5, "relative change {}", diff / scale);
}

fn grid(t1: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| t1 * i as f64 / n as f64).collect()
}

#[test]
fn constant_channel_has_trivial_metrics() {
    let t = grid(10.0, 1000);
    let m = channel_metrics(&t, &vec![0.7; t.len()], Some(0.7));
    assert_eq!(m.settling_time, 0.0);
    assert_eq!(m.overshoot, 0.0);
    assert_eq!(m.peak_deviation, 0.0);
    assert_eq!(m.steady_state_error, 0.0);
    assert_eq!(m.oscillations, 0);
}

#[test]
fn first_order_settles_at_three_tau() {
    let tau = 1.0;
    let t = grid(20.0, 20_000);
    let y: Vec<f64> = t.iter().map(|t| 1.0 - (-t / tau).exp()).collect();
    let m = channel_metrics(&t, &y, Some(1.0));
    // last exit from |y − y_f| ≤ 0.05·(y_f − y_0), y_f = 1 − e^{−20}
    let yf = 1.0 - (-20.0_f64).exp();
    let exact = -tau * ((1.0 - yf) + 0.05 * yf).ln();
    assert!((m.settling_time - exact).abs() <= 1e-3, "{} vs {exact}", m.settling_time);
    assert!(m.overshoot == 0.0);
    assert!(m.steady_state_error < 3e-9);
    // a monotone curve crosses its own regression line twice
    assert_eq!(m.oscillations, 2);
}

#[test]
fn pulse_settles_on_its_excursion_band() {
    let t = grid(30.0, 30_000);
    let y: Vec<f64> = t.iter().map(|t| t * (-t).exp()).collect();
    let m = channel_metrics(&t, &y, None);
    // t·e^{−t} = 0.05·e^{−1} on the falling side, by bisection
    let band = 0.05 * (-1.0_f64).exp();
    let (mut a, mut b) = (1.0_f64, 30.0_f64);
    for _ in 0..100 {
        let c = 0.5 * (a + b);
        if c * (-c).exp() > band {
            a = c;
        } else {
            b = c;
        }
    }
    assert!((m.settling_time - a).abs() <= 1e-3, "{} vs {a}", m.settling_time);
    assert_eq!(m.overshoot, 0.0);
    assert!((m.peak_deviation - (-1.0_f64).exp()).abs() < 1e-6);
}

#[test]
fn sinusoid_crossings_count_half_cycles() {
    for cycles in [1usize, 3, 7, 12] {
        let t = grid(1.0, 10_000);
        let y: Vec<f64> = t.iter().map(|t| 0.3 * t + 2.0 + (std::f64::consts::TAU * cycles as f64 * t).sin()).collect();
        let n = zero_crossings(&t, &y) as i64;
        assert!((n - 2 * cycles as i64).abs() <= 1, "{cycles} cycles gave {n}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_affine_invariant(a in 0.1f64..10.0, b in -5.0f64..5.0, tau in 0.2f64..3.0, w in 1.0f64..8.0) {
        let t = grid(20.0, 4000);
        let y: Vec<f64> = t.iter().map(|t| 1.0 - (-t / tau).exp() * (w * t).cos()).collect();
        let z: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let (m, n) = (channel_metrics(&t, &y, None), channel_metrics(&t, &z, None));
        prop_assert_eq!(m.settling_time, n.settling_time);
        prop_assert_eq!(m.oscillations, n.oscillations);
        prop_assert!((m.overshoot - n.overshoot).abs() < 1e-9);
        prop_assert!((a * m.peak_deviation - n.peak_deviation).abs() < 1e-9 * a.max(1.0));
    }
}
