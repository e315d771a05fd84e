use ndarray::Array2;
use proptest::prelude::*;

use pwspeckle::metrics::{analytic_rotation_field, repe, rve, zone_mask, RepeMap};
use pwspeckle::phantom::rotate_offset;
use pwspeckle::tracking::DisplacementField;

fn vec2() -> impl Strategy<Value = [f64; 2]> {
    [-1e-3..1e-3f64, -1e-3..1e-3f64]
}

fn map(values: Vec<f64>) -> RepeMap {
    let n = values.len();
    RepeMap {
        values: Array2::from_shape_vec((1, n), values).unwrap(),
        mask: Array2::from_elem((1, n), true),
        centers_x: (0..n).map(|i| i as f64).collect(),
        centers_z: vec![0.0],
    }
}

proptest! {
    #[test]
    fn repe_ignores_scale_and_rotation(e in vec2(), t in vec2(), k in 1e-3..1e3f64, angle in -3.2..3.2f64) {
        prop_assume!(t[0].hypot(t[1]) > 1e-9);
        let base = repe(e, t).unwrap();
        let scaled = repe([k * e[0], k * e[1]], [k * t[0], k * t[1]]).unwrap();
        let (ex, ez) = rotate_offset(e[0], e[1], angle);
        let (tx, tz) = rotate_offset(t[0], t[1], angle);
        let turned = repe([ex, ez], [tx, tz]).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0));
        prop_assert!((base - turned).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn zero_estimate_has_unit_error(t in vec2()) {
        prop_assume!(t[0].hypot(t[1]) > 1e-9);
        prop_assert!((repe([0.0, 0.0], t).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rve_grows_with_the_threshold(values in prop::collection::vec(0.0..3.0f64, 1..50), a in 0.0..3.0f64, b in 0.0..3.0f64) {
        let m = map(values);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let r_lo = rve(&m, lo).unwrap();
        let r_hi = rve(&m, hi).unwrap();
        prop_assert!((0.0..=1.0).contains(&r_lo));
        prop_assert!(r_lo <= r_hi);
        prop_assert_eq!(rve(&m, 3.0).unwrap(), 1.0);
    }

    #[test]
    fn rotation_magnitude_depends_only_on_radius(r in 0.1e-3..6e-3f64, phi in 0.0..6.3f64, omega in -5.0..5.0f64) {
        prop_assume!(omega.abs() > 1e-3);
        let c = [2e-3, 20e-3];
        let dt = 0.01;
        let f = analytic_rotation_field(c, omega, dt, &[c[0] + r * phi.cos(), c[0] + r], &[c[1] + r * phi.sin()]);
        let g = analytic_rotation_field(c, omega, dt, &[c[0] + r], &[c[1]]);
        let m1 = f.u_x[[0, 0]].hypot(f.u_z[[0, 0]]);
        let m2 = g.u_x[[0, 0]].hypot(g.u_z[[0, 0]]);
        let chord = 2.0 * r * (omega * dt / 2.0).sin().abs();
        // Positions near 20 mm carry rounding of a few 1e-18 m.
        let tol = 1e-12 * chord + 1e-16;
        prop_assert!((m1 - chord).abs() < tol);
        prop_assert!((m2 - chord).abs() < tol);
    }
}

#[test]
fn perfect_estimate_gives_zero_map() {
    let mut xs: Vec<f64> = (0..9).map(|i| -2e-3 + i as f64 * 0.5e-3).collect();
    let mut zs: Vec<f64> = (0..9).map(|i| 18e-3 + i as f64 * 0.5e-3).collect();
    xs[4] = 0.0;
    zs[4] = 20e-3;
    let truth = analytic_rotation_field([0.0, 20e-3], 2.0, 0.01, &xs, &zs);
    let m = RepeMap::from_fields(&truth, &truth).unwrap();
    // The rotation center is a grid node with zero motion.
    assert_eq!(m.count(), 80);
    assert_eq!(m.mean().unwrap(), 0.0);
    assert_eq!(rve(&m, 0.0).unwrap(), 1.0);
    let zero = DisplacementField::zeros(xs.clone(), zs.clone());
    let m0 = RepeMap::from_fields(&zero, &truth).unwrap();
    assert!((m0.mean().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(rve(&m0, 0.99).unwrap(), 0.0);
}

#[test]
fn zone_is_an_annulus() {
    let xs: Vec<f64> = (0..41).map(|i| -2e-3 + i as f64 * 0.1e-3).collect();
    let zs = xs.clone();
    let mask = zone_mask(&xs, &zs, [0.0, 0.0], 1.5e-3, 0.3e-3, 0.2e-3).unwrap();
    for ((i, j), m) in mask.indexed_iter() {
        let r = xs[j].hypot(zs[i]);
        if r < 0.29e-3 || r > 1.31e-3 {
            assert!(!m);
        }
        if r > 0.31e-3 && r < 1.29e-3 {
            assert!(m);
        }
    }
    assert!(zone_mask(&xs, &zs, [0.0, 0.0], 1e-3, 0.6e-3, 0.5e-3).is_err());
}

#[test]
fn averaging_keeps_cells_defined_anywhere() {
    let mut a = map(vec![1.0, 2.0, 3.0]);
    let b = map(vec![3.0, 4.0, 5.0]);
    a.mask[[0, 2]] = false;
    let avg = RepeMap::average(&[a, b]).unwrap();
    assert_eq!(avg.values.row(0).to_vec(), vec![2.0, 3.0, 5.0]);
    assert_eq!(avg.count(), 3);
}
