//! Independent right-hand side of the plant, shared by test targets.

use ppm_control::network::StarNetwork;
use ppm_control::params::PlantParams;
use ppm_control::plant::N_STATES;
use rand::rngs::StdRng;
use rand::Rng;

/// Terminal voltages of the healthy star, written from the circuit:
/// v_rk = j X_k I_k + j X_inf (I_1 + I_2) + V with I_k = i_2k / n_k.
pub fn star_terminal(t: &StarNetwork, n: [f64; 2], i2: [f64; 4]) -> [(f64, f64); 2] {
    let i = [(i2[0] / n[0], i2[1] / n[0]), (i2[2] / n[1], i2[3] / n[1])];
    let (sd, sq) = (i[0].0 + i[1].0, i[0].1 + i[1].1);
    let x = [t.x_1, t.x_2];
    let mut out = [(0.0, 0.0); 2];
    for k in 0..2 {
        out[k] = (t.v - x[k] * i[k].1 - t.x_inf * sq, x[k] * i[k].0 + t.x_inf * sd);
    }
    out
}

/// Right-hand side of the two-PMSG + grid model evaluated term by term.
pub fn oracle(p: &PlantParams, x: &[f64; N_STATES], u: &[f64; 8], w: [f64; 3]) -> [f64; N_STATES] {
    let wfb = p.base.omega_fb;
    let ob = p.base.omega_b;
    let wf = x[20];
    let i2 = [x[2], x[3], x[12], x[13]];
    let vr = star_terminal(&p.network.topology, p.network.turns, i2);
    let mut d = [0.0; N_STATES];
    for k in 0..2 {
        let m = &p.pmsg[k];
        let s = &x[10 * k..10 * k + 10];
        let b = &u[4 * k..4 * k + 4];
        let (i1d, i1q, i2d, i2q, vcd, vcq, isd, isq, vdc, om) =
            (s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], s[8], s[9]);
        let pp = m.pole_pairs as f64;
        let o = &mut d[10 * k..10 * k + 10];
        o[0] = -wfb * m.r1f * i1d / m.l1f + wfb * wf * i1q - wfb * vcd / m.l1f + 0.5 * wfb * b[0] * vdc / m.l1f;
        o[1] = -wfb * m.r1f * i1q / m.l1f - wfb * wf * i1d - wfb * vcq / m.l1f + 0.5 * wfb * b[1] * vdc / m.l1f;
        o[2] = -wfb * m.r2f * i2d / m.l2f + wfb * wf * i2q + wfb * vcd / m.l2f - wfb / m.l2f / m.n * vr[k].0;
        o[3] = -wfb * m.r2f * i2q / m.l2f - wfb * wf * i2d + wfb * vcq / m.l2f - wfb / m.l2f / m.n * vr[k].1;
        o[4] = wfb * i1d / m.cf - wfb * i2d / m.cf + wfb * wf * vcq;
        o[5] = wfb * i1q / m.cf - wfb * i2q / m.cf - wfb * wf * vcd;
        o[6] = -wfb * m.rs * isd / m.ls + ob * pp * om * isq - 0.5 * wfb * b[2] * vdc / m.ls;
        o[7] = -wfb * m.rs * isq / m.ls - ob * pp * om * isd + ob * pp * m.psi_f * om / m.ls
            - 0.5 * wfb * b[3] * vdc / m.ls;
        let c = wfb * 3.0 / (4.0 * m.cdc);
        o[8] = -c * b[0] * i1d - c * b[1] * i1q + c * b[2] * isd + c * b[3] * isq;
        o[9] = w[k] / (2.0 * m.h_t * om)
            - ob / wfb * 1.5 * pp * m.psi_f * isq / (2.0 * m.h_t)
            - m.d_l * om / (2.0 * m.h_t);
    }
    // lossless star: everything injected reaches bus B
    let v = p.network.topology.v;
    let p_e = 1.5 * v * (i2[0] / p.network.turns[0] + i2[2] / p.network.turns[1]);
    let g = &p.gde;
    d[20] = (g.p_m_rest + p_e - w[2] - g.d_u * (wf - 1.0)) / (2.0 * g.h);
    d
}

pub fn random_point(rng: &mut StdRng) -> ([f64; N_STATES], [f64; 8], [f64; 3]) {
    let mut x = [0.0; N_STATES];
    for k in 0..2 {
        for j in 0..8 {
            x[10 * k + j] = rng.gen_range(-1.5..1.5);
        }
        x[10 * k + 8] = rng.gen_range(1.5..3.5);
        x[10 * k + 9] = rng.gen_range(0.3..1.3);
    }
    x[20] = rng.gen_range(0.95..1.05);
    let mut u = [0.0; 8];
    for b in u.iter_mut() {
        *b = rng.gen_range(-1.0..1.0);
    }
    let w = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(6000.0..7500.0)];
    (x, u, w)
}
