use nalgebra::{Complex, DMatrix};
use ppm_control::control_model::ExtendedSystem;
use ppm_control::hinf::{
    bounded_real_feasible, certify, closed_loop, controller_step, hinf_norm, spectral_abscissa, synthesize,
    theorem1_matrix, GammaStrategy, StateSpace, SynthesisOptions,
};
use ppm_control::Error;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// σ_max(G(jω)) from a plain complex solve, independent of the library.
fn sigma_oracle(sys: &StateSpace, w: f64) -> f64 {
    let n = sys.a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { Complex::new(0.0, w) } else { Complex::new(0.0, 0.0) };
        d - Complex::new(sys.a[(i, j)], 0.0)
    });
    let b = sys.b.map(|v| Complex::new(v, 0.0));
    let x = m.lu().solve(&b).expect("jωI - A singular");
    let g = sys.c.map(|v| Complex::new(v, 0.0)) * x + sys.d.map(|v| Complex::new(v, 0.0));
    g.singular_values().max()
}

/// Dense log grid 1e-4..1e6 rad/s with golden-section refinement around the
/// best sample.
fn grid_norm(sys: &StateSpace, points: usize) -> f64 {
    let (lo, hi) = (-4.0f64, 6.0f64);
    let mut best = (sigma_oracle(sys, 0.0), 0.0f64);
    let mut best_k = 0usize;
    for k in 0..points {
        let w = 10f64.powf(lo + (hi - lo) * k as f64 / (points - 1) as f64);
        let s = sigma_oracle(sys, w);
        if s > best.0 {
            best = (s, w);
            best_k = k;
        }
    }
    if best.1 > 0.0 {
        let step = (hi - lo) / (points - 1) as f64;
        let (mut a, mut b) = (lo + step * (best_k as f64 - 1.0), lo + step * (best_k as f64 + 1.0));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if sigma_oracle(sys, 10f64.powf(c)) > sigma_oracle(sys, 10f64.powf(d)) {
                b = d;
            } else {
                a = c;
            }
        }
        best.0 = best.0.max(sigma_oracle(sys, 10f64.powf(0.5 * (a + b))));
    }
    best.0
}

fn small_ext(a: DMatrix<f64>, b1: DMatrix<f64>, b2: DMatrix<f64>, c: DMatrix<f64>, d1: DMatrix<f64>) -> ExtendedSystem {
    let n = a.nrows();
    ExtendedSystem { a, b1, b2, c, d1, n_x: n, n_w3: 0, n_int: 0 }
}

fn random_stable(rng: &mut StdRng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
    let shift = spectral_abscissa(&m) + rng.gen_range(0.2..2.0);
    m - DMatrix::identity(n, n) * shift
}

#[test]
fn first_order_lag_norm_is_one() {
    let sys = StateSpace::new(
        DMatrix::from_element(1, 1, -1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(1, 1),
    )
    .unwrap();
    let n = hinf_norm(&sys, 1e-10).unwrap();
    assert!((n - 1.0).abs() < 1e-9, "{n}");
}

#[test]
fn resonant_second_order_peak() {
    // 10/(s² + 2ζs + 1) with ζ = 0.1
    let zeta: f64 = 0.1;
    let sys = StateSpace::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -2.0 * zeta]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[10.0, 0.0]),
        DMatrix::zeros(1, 1),
    )
    .unwrap();
    let expected = 10.0 / (2.0 * zeta * (1.0 - zeta * zeta).sqrt());
    let n = hinf_norm(&sys, 1e-10).unwrap();
    assert!((n - expected).abs() / expected < 1e-8, "{n} vs {expected}");
}

#[test]
fn static_gain_norm_is_largest_singular_value() {
    let d = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -0.3, 0.7, 4.0]);
    let sys = StateSpace::new(DMatrix::zeros(0, 0), DMatrix::zeros(0, 3), DMatrix::zeros(2, 0), d.clone()).unwrap();
    let n = hinf_norm(&sys, 1e-10).unwrap();
    assert!((n - d.singular_values().max()).abs() < 1e-12);
}

#[test]
fn unstable_system_is_rejected() {
    let sys = StateSpace::new(
        DMatrix::from_element(1, 1, 0.5),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(1, 1),
    )
    .unwrap();
    assert!(matches!(hinf_norm(&sys, 1e-8), Err(Error::UnstableSystem { .. })));
}

#[test]
fn norm_matches_dense_grid_on_random_systems() {
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..10 {
        let a = random_stable(&mut rng, 4);
        let b = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
        let sys = StateSpace::new(a, b, c, DMatrix::zeros(2, 2)).unwrap();
        let n = hinf_norm(&sys, 1e-9).unwrap();
        let g = grid_norm(&sys, 20_000);
        assert!(n >= g * (1.0 - 1e-9), "norm {n} below sampled {g}");
        assert!(n <= g * (1.0 + 1e-6), "norm {n} above sampled {g}");
    }
}

#[test]
fn scalar_plant_without_control_authority() {
    // ẋ = −x + w, z = x; no input reaches the loop so γ* = 1
    let ext = small_ext(
        DMatrix::from_element(1, 1, -1.0),
        DMatrix::zeros(1, 1),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::zeros(1, 1),
    );
    let res = synthesize(&ext, &SynthesisOptions::default()).unwrap();
    assert!((res.gamma - 1.0).abs() < 1e-3, "{}", res.gamma);
    assert!(certify(&ext, &res).passed);
}

#[test]
fn scalar_plant_with_control_penalty() {
    // ẋ = −x + u + w, z = [x; u]: |G(0)|² = (1 + k²)/(1 − k)², minimized at
    // k = −1 with γ* = 1/√2
    let ext = small_ext(
        DMatrix::from_element(1, 1, -1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    );
    let res = synthesize(&ext, &SynthesisOptions::default()).unwrap();
    let opt = 0.5f64.sqrt();
    assert!((res.gamma - opt).abs() / opt < 1e-3, "{}", res.gamma);
    assert!((res.k[(0, 0)] + 1.0).abs() < 0.1, "{}", res.k);
    let rep = certify(&ext, &res);
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn double_integrator_gamma_matches_frequency_sweep() {
    // ẋ1 = x2, ẋ2 = u + w, z = [x1; u]
    let ext = small_ext(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    );
    let res = synthesize(&ext, &SynthesisOptions::default()).unwrap();
    let cl = closed_loop(&ext, &res.k).unwrap();
    assert!(spectral_abscissa(&cl.a) < 0.0);
    let swept = grid_norm(&cl, 100_000);
    assert!(swept <= res.gamma * (1.0 + 1e-6), "{swept} > {}", res.gamma);
    assert!(res.gamma <= swept * 1.01, "γ {} vs sweep {swept}", res.gamma);
    assert!(certify(&ext, &res).passed);
}

#[test]
fn direct_and_bisection_agree_on_small_system() {
    let mut rng = StdRng::seed_from_u64(5);
    let a = random_stable(&mut rng, 3) + DMatrix::identity(3, 3) * 0.8;
    let ext = small_ext(
        a,
        DMatrix::from_fn(3, 1, |_, _| rng.gen_range(-1.0..1.0)),
        DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0)),
        DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    );
    let opts = SynthesisOptions { strategy: GammaStrategy::Both, ..Default::default() };
    let res = synthesize(&ext, &opts).unwrap();
    let gd = res.status.gamma_direct.unwrap();
    let gb = res.status.gamma_bisection.unwrap();
    assert!((gd - gb).abs() / gd < 1e-3, "direct {gd} bisection {gb}");
}

#[test]
fn certify_flags_unstable_zero_gain() {
    let ext = small_ext(
        DMatrix::from_element(1, 1, 0.3),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    );
    let mut res = synthesize(&ext, &SynthesisOptions::default()).unwrap();
    assert!(certify(&ext, &res).passed);
    res.k.fill(0.0);
    let rep = certify(&ext, &res);
    assert!(!rep.hurwitz && !rep.passed);
}

#[test]
fn certify_flags_halved_gamma() {
    let ext = small_ext(
        DMatrix::from_element(1, 1, -1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    );
    let mut res = synthesize(&ext, &SynthesisOptions::default()).unwrap();
    res.gamma *= 0.5;
    let rep = certify(&ext, &res);
    assert!(rep.hurwitz);
    assert!(!rep.norm_within_gamma && !rep.passed);
}

#[test]
fn controller_step_is_partitioned_product() {
    let k = DMatrix::from_fn(2, 6, |i, j| (i * 6 + j) as f64 - 3.5);
    let zero = controller_step(&k, &[0.0; 3], &[0.0], &[0.0; 2]).unwrap();
    assert!(zero.iter().all(|v| *v == 0.0));
    let int = [0.7, -1.3];
    let u = controller_step(&k, &[0.0; 3], &[0.0], &int).unwrap();
    let expected = k.columns(4, 2) * nalgebra::DVector::from_row_slice(&int);
    assert_eq!(u, expected);
    assert!(matches!(controller_step(&k, &[0.0; 2], &[0.0], &int), Err(Error::DimensionMismatch(_))));
}

#[test]
fn lmi_feasibility_matches_norm_bound() {
    let mut rng = StdRng::seed_from_u64(2024);
    for case in 0..50 {
        let a = random_stable(&mut rng, 3);
        let b1 = DMatrix::from_fn(3, 1, |_, _| rng.gen_range(-1.0..1.0));
        let k = DMatrix::from_fn(1, 3, |_, _| rng.gen_range(-0.3..0.3));
        let acl = &a + &b1 * &k;
        if spectral_abscissa(&acl) >= -0.05 {
            continue;
        }
        let b = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-1.0..1.0));
        let norm = hinf_norm(&StateSpace::new(acl.clone(), b.clone(), c.clone(), DMatrix::zeros(2, 2)).unwrap(), 1e-9)
            .unwrap();
        assert!(bounded_real_feasible(&acl, &b, &c, norm * 1.02).unwrap(), "case {case}: infeasible above the norm");
        assert!(!bounded_real_feasible(&acl, &b, &c, norm * 0.98).unwrap(), "case {case}: feasible below the norm");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Scaling X and W by c is a congruence of the LMI with γ-blocks
    // (cγ, γ/c), so the sign pattern carries over exactly.
    #[test]
    fn certificate_scaling_is_a_congruence(seed in 0u64..10_000, c in 0.05f64..20.0, gamma in 0.1f64..10.0) {
        let mut rng = StdRng::seed_from_u64(seed);
        let n = 3;
        let ext = small_ext(
            DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)),
            DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0)),
            DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0)),
            DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0)),
            DMatrix::from_fn(2, 1, |_, _| rng.gen_range(-1.0..1.0)),
        );
        let r = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let x = &r * r.transpose() + DMatrix::identity(n, n) * 0.1;
        let w = DMatrix::from_fn(1, n, |_, _| rng.gen_range(-1.0..1.0));
        let scaled = theorem1_matrix(&ext, &(&x * c), &(&w * c), gamma);
        let mut reference = theorem1_matrix(&ext, &x, &w, gamma);
        let m = reference.nrows();
        for i in n..n + 2 {
            reference[(i, i)] = -c * gamma;
        }
        for i in n + 2..m {
            reference[(i, i)] = -gamma / c;
        }
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i != j { 0.0 } else if (n..n + 2).contains(&i) { c.sqrt() } else { 1.0 / c.sqrt() }
        });
        let back = &t * &scaled * &t;
        prop_assert!((&back - &reference).amax() <= 1e-12 * reference.amax().max(1.0));
        let e1 = scaled.symmetric_eigenvalues().max();
        let e2 = reference.symmetric_eigenvalues().max();
        prop_assert_eq!(e1 < 0.0, e2 < 0.0);
    }
}
