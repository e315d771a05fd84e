use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pwspeckle::beamform::EnvelopeImage;
use pwspeckle::bspline::Spline2;
use pwspeckle::config::ImageGrid;
use pwspeckle::tracking::subpixel::gaussian_2d_offset;
use pwspeckle::tracking::zncc::zncc_surface_direct;
use pwspeckle::tracking::{track, track_passes, zncc_surface, DisplacementField, TrackingParams};

fn random(seed: u64, h: usize, w: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
}

/// Blurred noise magnitude, a cheap stand-in for an envelope image.
fn speckle(seed: u64, h: usize, w: usize) -> Array2<f64> {
    let raw = random(seed, h + 6, w + 6).mapv(|v| v - 0.5);
    let k = [0.05, 0.12, 0.2, 0.26, 0.2, 0.12, 0.05];
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut acc = 0.0;
        for (a, ka) in k.iter().enumerate() {
            for (b, kb) in k.iter().enumerate() {
                acc += ka * kb * raw[[i + a, j + b]];
            }
        }
        acc.abs() + 0.01
    })
}

const PX: f64 = 0.1e-3;

fn image(pixels: Array2<f64>) -> EnvelopeImage {
    let (h, w) = pixels.dim();
    EnvelopeImage {
        grid: ImageGrid::from_counts(-4e-3, 10e-3, PX, PX, w, h),
        pixels,
    }
}

/// Frames of one speckle pattern where every pixel of the second frame
/// shows the content that sat `disp(z, x)` pixels earlier in the first.
fn moved_pair(seed: u64, n: usize, disp: impl Fn(f64, f64) -> (f64, f64)) -> (EnvelopeImage, EnvelopeImage) {
    let pad = 12;
    let big = speckle(seed, n + 2 * pad, n + 2 * pad);
    let spline = Spline2::new(big.view());
    let p = pad as f64;
    let a = Array2::from_shape_fn((n, n), |(i, j)| big[[i + pad, j + pad]]);
    let b = Array2::from_shape_fn((n, n), |(i, j)| {
        let (dz, dx) = disp(i as f64, j as f64);
        spline.eval(i as f64 + p - dz, j as f64 + p - dx)
    });
    (image(a), image(b))
}

fn params() -> TrackingParams {
    TrackingParams {
        pass_window_sizes: vec![2.5e-3, 1.7e-3],
        ..TrackingParams::standard()
    }
}

/// Interior cells, a window away from the image border.
fn interior(f: &DisplacementField, img: &EnvelopeImage, guard: f64) -> Vec<(usize, usize)> {
    let g = img.grid;
    let mut out = Vec::new();
    for (i, z) in f.centers_z.iter().enumerate() {
        for (j, x) in f.centers_x.iter().enumerate() {
            if *z - g.z_min > guard && g.z_max - *z > guard && *x - g.x_min > guard && g.x_max - *x > guard {
                out.push((i, j));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fft_surface_matches_direct_sums(seed in 0u64..1_000_000, h in 3usize..14, w in 3usize..14, mz in 0usize..5, mx in 0usize..5) {
        let a = random(seed, h, w);
        let b = random(seed + 1, h, w);
        let mz = mz.min(h - 1);
        let mx = mx.min(w - 1);
        let fast = zncc_surface(a.view(), b.view(), [mz, mx]).unwrap();
        let slow = zncc_surface_direct(a.view(), b.view(), [mz, mx]).unwrap();
        for (u, v) in fast.values.iter().zip(slow.values.iter()) {
            prop_assert!((u - v).abs() < 1e-6, "{u} vs {v}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zncc_is_bounded(seed in 0u64..1_000_000, h in 4usize..20, w in 4usize..20) {
        let a = random(seed, h, w);
        let b = random(seed ^ 0xabcdef, h, w);
        let s = zncc_surface(a.view(), b.view(), [h / 2, w / 2]).unwrap();
        prop_assert!(s.values.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        let own = zncc_surface(a.view(), a.view(), [h / 2, w / 2]).unwrap();
        prop_assert!((own.value_at([0, 0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zncc_ignores_gain_and_offset(seed in 0u64..1_000_000, gain in 0.01..100.0f64, offset in -50.0..50.0f64) {
        let a = random(seed, 12, 10);
        let b = random(seed + 7, 12, 10);
        let b2 = b.mapv(|v| gain * v + offset);
        let s1 = zncc_surface(a.view(), b.view(), [3, 3]).unwrap();
        let s2 = zncc_surface(a.view(), b2.view(), [3, 3]).unwrap();
        for (u, v) in s1.values.iter().zip(s2.values.iter()) {
            prop_assert!((u - v).abs() < 1e-9);
        }
        let neg = b.mapv(|v| -v);
        let s3 = zncc_surface(a.view(), neg.view(), [3, 3]).unwrap();
        for (u, v) in s1.values.iter().zip(s3.values.iter()) {
            prop_assert!((u + v).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_peak_is_recovered_exactly(
        dy in -0.49..0.49f64, dx in -0.49..0.49f64,
        sy in 0.6..3.0f64, sx in 0.6..3.0f64, rho in -0.5..0.5f64,
        amp in 0.1..10.0f64,
    ) {
        let mut n = [[0.0; 3]; 3];
        for (r, row) in n.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                let y = (r as f64 - 1.0 - dy) / sy;
                let x = (c as f64 - 1.0 - dx) / sx;
                *v = amp * (-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * (1.0 - rho * rho))).exp();
            }
        }
        let [oy, ox] = gaussian_2d_offset(&n).unwrap();
        prop_assert!((oy - dy).abs() < 1e-6 && (ox - dx).abs() < 1e-6, "{oy},{ox} vs {dy},{dx}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn same_frame_gives_zero_motion(seed in 0u64..10_000) {
        let img = image(speckle(seed, 70, 70));
        let f = track(&img, &img, &params()).unwrap();
        prop_assert!(f.u_x.iter().chain(f.u_z.iter()).all(|v| v.abs() < 1e-9 * PX));
    }

    #[test]
    fn swapping_frames_negates_the_field(seed in 0u64..10_000, dz in -2.5..2.5f64, dx in -2.5..2.5f64) {
        let (a, b) = moved_pair(seed, 70, |_, _| (dz, dx));
        let fwd = track(&a, &b, &params()).unwrap();
        let back = track(&b, &a, &params()).unwrap();
        for (i, j) in interior(&fwd, &a, 1.5e-3) {
            prop_assert!((fwd.u_z[[i, j]] + back.u_z[[i, j]]).abs() < 0.15 * PX);
            prop_assert!((fwd.u_x[[i, j]] + back.u_x[[i, j]]).abs() < 0.15 * PX);
            prop_assert!((fwd.u_z[[i, j]] - dz * PX).abs() < 0.15 * PX);
            prop_assert!((fwd.u_x[[i, j]] - dx * PX).abs() < 0.15 * PX);
        }
    }
}

#[test]
fn later_passes_do_not_lose_accuracy() {
    // Slow rotation about the image center: windows of the first pass
    // average a visibly varying displacement.
    let n = 90;
    let c = (n as f64 - 1.0) / 2.0;
    let angle = 0.05;
    let disp = move |i: f64, j: f64| {
        let (y, x) = (i - c, j - c);
        let (s, co) = f64::sin_cos(angle);
        (-s * x + co * y - y, co * x + s * y - x)
    };
    let (a, b) = moved_pair(11, n, disp);
    let p = TrackingParams {
        pass_window_sizes: vec![3.0e-3, 2.2e-3, 1.6e-3],
        ..TrackingParams::standard()
    };
    let passes = track_passes(&a, &b, &p).unwrap();
    assert_eq!(passes.len(), 3);
    let rms: Vec<f64> = passes
        .iter()
        .map(|f| {
            let cells = interior(f, &a, 1.6e-3);
            let sum: f64 = cells
                .iter()
                .map(|&(i, j)| {
                    let zi = (f.centers_z[i] - a.grid.z_min) / PX;
                    let xj = (f.centers_x[j] - a.grid.x_min) / PX;
                    let (tz, tx) = disp(zi, xj);
                    (f.u_z[[i, j]] / PX - tz).powi(2) + (f.u_x[[i, j]] / PX - tx).powi(2)
                })
                .sum();
            (sum / cells.len() as f64).sqrt()
        })
        .collect();
    for w in rms.windows(2) {
        assert!(w[1] <= w[0] * 1.05 + 0.01, "{rms:?}");
    }
    assert!(rms[2] < 0.2, "{rms:?}");
}
