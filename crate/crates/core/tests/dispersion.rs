use std::f64::consts::PI;

use dynhomog_core::dispersion::{find_branches, quasi_static_limit, residual, ScanParams};
use dynhomog_core::homogenizer::Homogenizer;
use dynhomog_core::oracle::{band_gaps, exact_dispersion};
use dynhomog_core::spectral::SpectralBasis;
use dynhomog_core::unit_cell::{build_cell, discretize, reference_from_average, UnitCell};
use dynhomog_core::Error;

fn bilayer() -> UnitCell {
    build_cell(&[(1.0, 1.0, 0.5), (4.0, 1.0 / 16.0, 0.5)]).unwrap()
}

fn homogenizer(cell: &UnitCell, counts: &[usize], n_max: usize) -> Homogenizer {
    let d = discretize(cell, counts, reference_from_average(cell), 1e-9).unwrap();
    Homogenizer::new(&d, SpectralBasis::new(n_max).unwrap(), 1e-8).unwrap()
}

#[test]
fn residual_changes_sign_across_the_exact_first_branch() {
    let cell = bilayer();
    let h = homogenizer(&cell, &[15, 15], 15);
    let q = PI / 2.0;
    let w = exact_dispersion(&cell, q, 1).unwrap()[0];
    let lo = residual(&h, 0.98 * w, q).unwrap();
    let hi = residual(&h, 1.02 * w, q).unwrap();
    assert!(lo * hi < 0.0, "R({}) = {lo}, R({}) = {hi}", 0.98 * w, 1.02 * w);
}

#[test]
fn one_root_below_the_first_gap_and_none_inside() {
    let cell = bilayer();
    let h = homogenizer(&cell, &[15, 15], 15);
    let q = PI;
    let exact = exact_dispersion(&cell, q, 1).unwrap()[0];
    let gaps = band_gaps(&cell, 6.0 * exact);
    let (g_lo, g_hi) = gaps[0];
    assert!(g_lo >= exact * (1.0 - 1e-9), "gap {g_lo}..{g_hi}, branch {exact}");
    let scan = ScanParams::new(0.05 * exact, g_hi).unwrap();
    let roots = find_branches(&h, q, 1, &scan).unwrap();
    assert!(((roots[0].omega - exact) / exact).abs() < 0.02);
    let inside = ScanParams::new(g_lo * 1.03, g_hi * 0.97).unwrap();
    match find_branches(&h, q, 1, &inside) {
        Err(Error::InsufficientRoots { found: 0, .. }) => {}
        other => panic!("expected no roots inside the gap, got {other:?}"),
    }
}

#[test]
fn homogeneous_lowest_root_is_linear() {
    let cell = build_cell(&[(2.0, 0.125, 1.0)]).unwrap();
    let h = homogenizer(&cell, &[3], 6);
    for q in [0.3, 1.1, 2.9] {
        let scan = ScanParams::new(0.1, 12.0).unwrap();
        let r = find_branches(&h, q, 1, &scan).unwrap();
        assert!((r[0].omega - 2.0 * q).abs() <= 1e-8 * 2.0 * q, "{}", r[0].omega);
        assert!((r[0].d_eff.re - 0.125).abs() < 1e-12);
        assert!((r[0].rho_eff.re - 2.0).abs() < 1e-12);
    }
}

#[test]
fn three_layer_quasi_static_limit_is_the_volume_average() {
    let cell = build_cell(&[(1.0, 1.0, 1.0 / 3.0), (2.0, 2.0, 1.0 / 3.0), (3.0, 3.0, 1.0 / 3.0)]).unwrap();
    let h = homogenizer(&cell, &[8, 8, 8], 10);
    let (d, rho) = quasi_static_limit(&h).unwrap();
    assert!((d.re - 2.0).abs() < 0.01, "{d}");
    assert!((rho.re - 2.0).abs() < 0.01, "{rho}");
    let slope = exact_dispersion(&cell, 1e-3, 1).unwrap()[0] / 1e-3;
    assert!((slope - 1.0 / (d.re * rho.re).sqrt()).abs() < 0.01 * slope);
}

#[test]
fn roots_are_certified_and_ordered() {
    let cell = bilayer();
    let h = homogenizer(&cell, &[5, 5], 8);
    let q = PI / 4.0;
    let scan = ScanParams::new(0.01, 12.0).unwrap();
    let roots = find_branches(&h, q, 2, &scan).unwrap();
    assert!(roots[0].omega < roots[1].omega);
    for (k, r) in roots.iter().enumerate() {
        assert_eq!(r.branch, k + 1);
        assert!(r.product_defect() < 1e-8);
        let lo = residual(&h, r.omega * (1.0 - 1e-6), q).unwrap();
        let hi = residual(&h, r.omega * (1.0 + 1e-6), q).unwrap();
        assert!(lo * hi <= 0.0);
    }
}
