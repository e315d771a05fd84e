use num_complex::Complex64;
use proptest::prelude::*;

use pwspeckle::beamform::{combine, compound, das_reconstruct, envelope_on_tracking_grid, IQImage};
use pwspeckle::config::{plan_sequence, ImageGrid, ProbeConfig};
use pwspeckle::phantom::{MotionLaw, Scatterer, ScattererPhantom};
use pwspeckle::simulate::{simulate_channel_data, ChannelData, PulseModel};

fn probe(elements: usize) -> ProbeConfig {
    let mut p = ProbeConfig::ge9ld();
    p.element_count = elements;
    p.aperture = (elements - 1) as f64 * p.pitch;
    p
}

fn points(pts: &[(f64, f64, f64)]) -> ScattererPhantom {
    ScattererPhantom::new(
        pts.iter()
            .map(|&(x, z, a)| Scatterer {
                position: [x, 0.0, z],
                amplitude: a,
                group: None,
            })
            .collect(),
        MotionLaw::Static,
    )
}

fn sim(p: &ProbeConfig, ph: &ScattererPhantom, angle: f64, z_max: f64) -> ChannelData {
    let pulse = PulseModel::for_probe(p);
    simulate_channel_data(ph, p, angle, &pulse, (0.0, 2.2 * z_max / p.sound_speed)).unwrap()
}

/// Grid of `λ/4` pixels laterally and `λ/8` axially around `(x, z)`.
fn grid_around(p: &ProbeConfig, x: f64, z: f64, half_x: f64, half_z: f64) -> ImageGrid {
    let l = p.wavelength();
    ImageGrid::covering((x - half_x, x + half_x), (z - half_z, z + half_z), l / 4.0, l / 8.0).unwrap()
}

fn max_norm(img: &IQImage) -> f64 {
    img.pixels.iter().fold(0.0f64, |m, v| m.max(v.norm()))
}

fn peak(img: &IQImage) -> (usize, usize) {
    let mut best = ((0, 0), 0.0);
    for (ij, v) in img.pixels.indexed_iter() {
        if v.norm() > best.1 {
            best = (ij, v.norm());
        }
    }
    best.0
}

/// Lateral −6 dB width of the envelope through the peak row, in pixels,
/// with linear interpolation between samples.
fn lateral_width(img: &IQImage) -> f64 {
    let (r, c) = peak(img);
    let row: Vec<f64> = img.pixels.row(r).iter().map(|v| v.norm()).collect();
    let half = row[c] / 2.0;
    let mut left = c as f64;
    for j in (0..c).rev() {
        if row[j] < half {
            left = j as f64 + (half - row[j]) / (row[j + 1] - row[j]);
            break;
        }
    }
    let mut right = c as f64;
    for j in c + 1..row.len() {
        if row[j] < half {
            right = j as f64 - (half - row[j]) / (row[j - 1] - row[j]);
            break;
        }
    }
    right - left
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn reconstruction_is_linear(
        x1 in -2e-3..2e-3f64, z1 in 10e-3..14e-3f64,
        x2 in -2e-3..2e-3f64, z2 in 10e-3..14e-3f64,
        a in -3.0..3.0f64, b in -3.0..3.0f64,
        angle in -0.1..0.1f64,
    ) {
        let p = probe(32);
        let g = grid_around(&p, 0.0, 12e-3, 2.5e-3, 2.5e-3);
        let d1 = sim(&p, &points(&[(x1, z1, 1.0)]), angle, 16e-3);
        let d2 = sim(&p, &points(&[(x2, z2, -0.7)]), angle, 16e-3);
        let lhs = das_reconstruct(&d1.linear_combination(a, &d2, b).unwrap(), &p, &g).unwrap();
        let rhs = combine(
            &das_reconstruct(&d1, &p, &g).unwrap(), a,
            &das_reconstruct(&d2, &p, &g).unwrap(), b,
        ).unwrap();
        let scale = max_norm(&lhs).max(max_norm(&rhs)).max(1e-30);
        let err = lhs.pixels.iter().zip(rhs.pixels.iter()).fold(0.0f64, |m, (u, v)| m.max((u - v).norm()));
        prop_assert!(err <= 1e-9 * scale, "err {err} scale {scale}");
    }

    #[test]
    fn compounding_copies_is_identity(n in 1usize..6, seed in 0u64..1000) {
        let g = ImageGrid::from_counts(0.0, 1e-3, 1e-4, 1e-4, 7, 5);
        let mut img = IQImage::zeros(g);
        for (k, v) in img.pixels.iter_mut().enumerate() {
            let t = (seed as f64 + k as f64) * 0.37;
            *v = Complex64::new(t.sin(), t.cos() * 2.0);
        }
        let out = compound(&vec![img.clone(); n]).unwrap();
        for (u, v) in out.pixels.iter().zip(img.pixels.iter()) {
            prop_assert!((u - v).norm() <= 1e-12 * v.norm().max(1.0));
        }
    }

    #[test]
    fn lateral_shift_moves_the_peak(m in -8i32..8) {
        let p = probe(64);
        let g = grid_around(&p, 0.0, 15e-3, 2e-3, 1e-3);
        let base = das_reconstruct(&sim(&p, &points(&[(0.0, 15e-3, 1.0)]), 0.0, 18e-3), &p, &g).unwrap();
        let dx = m as f64 * g.dx;
        let shifted = das_reconstruct(&sim(&p, &points(&[(dx, 15e-3, 1.0)]), 0.0, 18e-3), &p, &g).unwrap();
        let (r0, c0) = peak(&base);
        let (r1, c1) = peak(&shifted);
        prop_assert_eq!(c1 as i64 - c0 as i64, m as i64);
        prop_assert!((r1 as i64 - r0 as i64).abs() <= 1);
    }
}

#[test]
fn compounding_rejects_mismatched_grids() {
    let a = IQImage::zeros(ImageGrid::from_counts(0.0, 1e-3, 1e-4, 1e-4, 4, 4));
    let b = IQImage::zeros(ImageGrid::from_counts(0.0, 1e-3, 1e-4, 1e-4, 5, 4));
    assert!(compound(&[a, b]).is_err());
    assert!(compound(&[]).is_err());
}

#[test]
fn steering_narrows_the_point_spread_function() {
    let p = probe(64);
    let ph = points(&[(0.0, 15e-3, 1.0)]);
    let g = grid_around(&p, 0.0, 15e-3, 2.5e-3, 1e-3);
    let frame = |n: usize| {
        let seq = plan_sequence(&p, n, 9000.0).unwrap();
        let imgs: Vec<IQImage> = seq
            .angles
            .iter()
            .map(|a| das_reconstruct(&sim(&p, &ph, *a, 18e-3), &p, &g).unwrap())
            .collect();
        compound(&imgs).unwrap()
    };
    let w1 = lateral_width(&frame(1));
    let w9 = lateral_width(&frame(9));
    assert!(w9 < w1, "9 angles {w9} px, 1 angle {w1} px");
}

#[test]
fn point_is_localized_at_depth() {
    let p = ProbeConfig::ge9ld();
    let (x, z) = (1.3e-3, 30e-3);
    let ph = points(&[(x, z, 1.0)]);
    let g = grid_around(&p, 0.0, 30e-3, 3e-3, 1.5e-3);
    let img = das_reconstruct(&sim(&p, &ph, 0.0, 33e-3), &p, &g).unwrap();
    let (r, c) = peak(&img);
    assert!((g.x(c) - x).abs() <= g.dx, "lateral {}", g.x(c) - x);
    assert!((g.z(r) - z).abs() <= 2.0 * g.dz, "axial {}", g.z(r) - z);
}

#[test]
fn envelope_keeps_every_second_row() {
    let g = ImageGrid::from_counts(0.0, 1e-3, 1e-4, 5e-5, 3, 7);
    let mut img = IQImage::zeros(g);
    for ((r, c), v) in img.pixels.indexed_iter_mut() {
        *v = Complex64::new(r as f64, c as f64);
    }
    let env = envelope_on_tracking_grid(&img).unwrap();
    assert_eq!(env.pixels.dim(), (3, 3));
    assert!((env.grid.dz - 1e-4).abs() < 1e-15);
    for ((r, c), v) in env.pixels.indexed_iter() {
        assert!((v - Complex64::new(2.0 * r as f64, c as f64).norm()).abs() < 1e-12);
    }
}
