use ppm_control::network::{apply_short_circuit, clear_short_circuit, Line, NetworkCoupling, StarNetwork};
use ppm_control::plant::{
    self, gde_bus_voltage, idx, pitch_dynamics, ControlInput, DisturbanceInput, PitchState, PlantState, N_STATES,
};
use ppm_control::{reference, Error};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

mod common;
use common::{oracle, random_point, star_terminal};

#[test]
fn derivatives_match_term_by_term_oracle() {
    let params = reference::plant_params();
    let mut rng = StdRng::seed_from_u64(17);
    for _ in 0..100 {
        let (x, u, w) = random_point(&mut rng);
        let got = plant::pmsg_derivatives(
            &params,
            &PlantState::from_vector(x),
            &ControlInput(u),
            &DisturbanceInput::from_array(w),
        )
        .unwrap();
        let want = oracle(&params, &x, &u, w);
        for i in 0..N_STATES {
            let tol = 1e-12 * want[i].abs().max(1.0);
            assert!((got.x[i] - want[i]).abs() <= tol, "state {i}: {} vs {}", got.x[i], want[i]);
        }
    }
}

#[test]
fn healthy_coupling_matches_circuit() {
    let params = reference::plant_params();
    let net = &params.network;
    let mut rng = StdRng::seed_from_u64(4);
    for _ in 0..50 {
        let i2 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let want = star_terminal(&net.topology, net.turns, i2);
        for k in 0..2 {
            let (vd, vq) = net.terminal_voltage(k, i2);
            assert!((vd - want[k].0).abs() < 1e-12 && (vq - want[k].1).abs() < 1e-12);
        }
        let p = 1.5 * net.topology.v * (i2[0] / net.turns[0] + i2[2] / net.turns[1]);
        assert!((net.injected_power(i2) - p).abs() < 1e-12);
    }
}

#[test]
fn faulted_coupling_matches_nodal_analysis() {
    let t = StarNetwork { v: 1.0, x_inf: 0.02, x_1: 0.3, x_2: 0.25 };
    let n = [1.1, 0.9];
    let net = NetworkCoupling::from_topology(t, n).unwrap();
    let f = 0.4;
    let faulted = apply_short_circuit(&net, Line::X1, f).unwrap();
    let mut rng = StdRng::seed_from_u64(8);
    for _ in 0..20 {
        let i2 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let (i1d, i1q) = (i2[0] / n[0], i2[1] / n[0]);
        let (id2, iq2) = (i2[2] / n[1], i2[3] / n[1]);
        // PMSG1 sees only f·X1 to the grounded fault point
        let (vd, vq) = faulted.terminal_voltage(0, i2);
        assert!((vd + f * t.x_1 * i1q).abs() < 1e-12 && (vq - f * t.x_1 * i1d).abs() < 1e-12);
        // bus A: admittances to ground through (1−f)X1 and to B through X_inf
        let ya = 1.0 / ((1.0 - f) * t.x_1) + 1.0 / t.x_inf;
        // −j·ya·v_A = I_2 − j·V/X_inf
        let (vad, vaq) = ((t.v / t.x_inf - iq2) / ya, id2 / ya);
        let want = (vad - t.x_2 * iq2, vaq + t.x_2 * id2);
        let (vd2, vq2) = faulted.terminal_voltage(1, i2);
        assert!((vd2 - want.0).abs() < 1e-12 && (vq2 - want.1).abs() < 1e-12);
        // current A→B is (v_A − V)/(j X_inf); P = 1.5·V·Re
        let p = 1.5 * t.v * (vaq / t.x_inf);
        assert!((faulted.injected_power(i2) - p).abs() < 1e-12);
    }
    assert_eq!(clear_short_circuit(&faulted).unwrap(), net);
}

#[test]
fn grid_frequency_equation_is_affine() {
    let params = reference::plant_params();
    let op = plant::find_equilibrium(&reference::setpoints(), &params).unwrap();
    let eval = |wf: f64, pl: f64| {
        let mut s = op.state;
        s.x[idx::OMEGA_F] = wf;
        let mut w = op.disturbance;
        w.p_l = pl;
        plant::pmsg_derivatives(&params, &s, &op.input, &w).unwrap().x[idx::OMEGA_F]
    };
    let pl = op.disturbance.p_l;
    let two_h = 2.0 * params.gde.h;
    let d1 = eval(1.0, pl + 1.0) - eval(1.0, pl);
    assert!((d1 + 1.0 / two_h).abs() < 1e-12);
    let d2 = eval(1.01, pl) - eval(1.0, pl);
    assert!((d2 + 0.01 * params.gde.d_u / two_h).abs() < 1e-12);
}

#[test]
fn equilibrium_meets_setpoints() {
    let params = reference::plant_params();
    let sp = reference::setpoints();
    let op = plant::find_equilibrium(&sp, &params).unwrap();
    assert!(op.residual(&params).unwrap() < 1e-10);
    let y = op.outputs(&params).0;
    for k in 0..2 {
        assert!((y[3 * k] - sp[k].q_ref).abs() < 1e-9);
        assert!((y[3 * k + 1] - sp[k].p_ref).abs() < 1e-9);
        assert!((y[3 * k + 2] - sp[k].vdc_ref).abs() < 1e-9);
        assert!((op.state.get(k, idx::OMEGA) - sp[k].rotor_speed).abs() < 1e-9);
        assert!(op.input.0[4 * k..4 * k + 4].iter().all(|b| b.abs() <= 1.0));
    }
    assert!((op.state.omega_f() - 1.0).abs() < 1e-12);
}

#[test]
fn non_physical_states_are_rejected() {
    let params = reference::plant_params();
    let op = plant::find_equilibrium(&reference::setpoints(), &params).unwrap();
    for field in [idx::OMEGA, idx::VDC] {
        let mut s = op.state;
        s.x[idx::at(1, field)] = 0.0;
        let r = plant::pmsg_derivatives(&params, &s, &op.input, &op.disturbance);
        assert!(matches!(r, Err(Error::NonPhysicalState(_))));
    }
}

#[test]
fn modulation_limit_clamps() {
    let mut u = ControlInput([0.5, -1.5, 2.0, 0.0, 1.0, -1.0, 0.3, -0.99]);
    assert!(u.saturate());
    assert_eq!(u.0, [0.5, -1.0, 1.0, 0.0, 1.0, -1.0, 0.3, -0.99]);
    assert!(!u.saturate());
}

proptest! {
    #[test]
    fn bus_voltage_phases_sum_to_zero(theta in -100.0f64..100.0, v in 0.1f64..2.0) {
        let [a, b, c] = gde_bus_voltage(theta, v);
        prop_assert!((a + b + c).abs() < 1e-12);
        prop_assert!((a - v * theta.sin()).abs() < 1e-12);
    }

    #[test]
    fn pitch_stays_within_limits(
        start in 0.0f64..20.0,
        refs in proptest::collection::vec((-10.0f64..40.0, -10.0f64..40.0), 1..200),
        dt in 1e-4f64..0.05,
    ) {
        let pm = reference::pmsg();
        let params = [pm, pm];
        let mut pitch = PitchState([start, 20.0 - start]);
        for (r1, r2) in refs {
            let before = pitch.0;
            let rate = pitch_dynamics(&pitch, [r1, r2], &params);
            for k in 0..2 {
                prop_assert!(rate[k] >= pm.dbeta_min - 1e-12 && rate[k] <= pm.dbeta_max + 1e-12);
            }
            pitch.step([r1, r2], &params, dt);
            for k in 0..2 {
                prop_assert!(pitch.0[k] >= pm.beta_min && pitch.0[k] <= pm.beta_max);
                prop_assert!((pitch.0[k] - before[k]).abs() <= pm.dbeta_max.max(-pm.dbeta_min) * dt + 1e-12);
            }
        }
    }
}
