//! Plane-wave solver against analytic and transfer-matrix references.

mod common;

use std::f64::consts::PI;

use common::{empty_lattice_error, quarter_wave_like, stack_edge_error};
use slowlight::lattice::StructureParams;
use slowlight::pwe::Solver;

fn small_edge_solver() -> Solver {
    let mut p = StructureParams::paper_unperturbed();
    p.n_rows = 4;
    p.w_vac = 500.0;
    p.grid.ny = p.default_ny(32);
    Solver::new(&p, 3.0).unwrap()
}

#[test]
fn empty_lattice_at_oblique_k() {
    for k in [[0.0, 0.0], [0.01, 0.004], [PI / 200.0, 0.002], [-0.007, 0.0031]] {
        let err = empty_lattice_error(k, 14);
        assert!(err < 1e-6, "k = {k:?}: {err:e}");
    }
}

#[test]
fn stack_band_edges_match_transfer_matrix() {
    let err = stack_edge_error(&quarter_wave_like(), 16.0);
    assert!(err < 5e-3, "{err:e}");
}

#[test]
fn stack_converges_with_order() {
    let s = quarter_wave_like();
    let coarse = stack_edge_error(&s, 6.0);
    let fine = stack_edge_error(&s, 16.0);
    assert!(fine < coarse, "{fine:e} vs {coarse:e}");
}

#[test]
fn time_reversal_pairs_k_and_minus_k() {
    let solver = small_edge_solver();
    for s in [0.3, 0.71] {
        let k = s * PI / solver.map.a;
        let fwd = solver.op.solve_k([k, 0.0], 8).unwrap();
        let bwd = solver.op.solve_k([-k, 0.0], 8).unwrap();
        for b in 0..8 {
            assert!((fwd.freqs[b] - bwd.freqs[b]).abs() < 1e-9 * fwd.freqs[b]);
            assert!((fwd.vg[b] + bwd.vg[b]).abs() < 1e-7, "{} {}", fwd.vg[b], bwd.vg[b]);
        }
    }
}

#[test]
fn hellmann_feynman_matches_finite_difference() {
    let solver = small_edge_solver();
    let a = solver.map.a;
    let k = 0.63 * PI / a;
    let h = 1e-5 * PI / a;
    let mid = solver.solve_k(k, 6).unwrap();
    let up = solver.solve_k(k + h, 6).unwrap();
    let dn = solver.solve_k(k - h, 6).unwrap();
    let two_pi_over_c = 2.0 * PI * 1e12 / slowlight::constants::C_NM;
    for b in 0..6 {
        // skip near-degenerate pairs where sorted order swaps
        let gap = (0..6).filter(|&j| j != b).map(|j| (mid.freqs[j] - mid.freqs[b]).abs()).fold(f64::INFINITY, f64::min);
        if gap < 1.0 {
            continue;
        }
        let fd = (up.freqs[b] - dn.freqs[b]) / (2.0 * h) * two_pi_over_c;
        assert!((fd - mid.vg[b]).abs() < 1e-5 * mid.vg[b].abs().max(1e-3), "band {b}: {fd} vs {}", mid.vg[b]);
    }
}

#[test]
fn eigenvectors_and_modes_are_normalized() {
    let solver = small_edge_solver();
    let sol = solver.solve_k(0.8 * PI / solver.map.a, 4).unwrap();
    for b in 0..4 {
        let norm: f64 = (0..sol.vectors.nrows()).map(|i| {
            let v = sol.vectors.read(i, b);
            v.re * v.re + v.im * v.im
        }).sum();
        assert!((norm - 1.0).abs() < 1e-10);
        let mode = solver.mode_from(&sol, b);
        assert!((mode.energy_integral(&solver.map) - 1.0).abs() < 1e-8);
        let f3 = solver.extend(&mode);
        assert!((f3.energy_integral(&solver.map) - 1.0).abs() < 1e-8);
    }
}
