use proptest::prelude::*;

use pwspeckle::config::ProbeConfig;
use pwspeckle::phantom::{advance_motion, MotionLaw, Rotor, Scatterer, ScattererPhantom};
use pwspeckle::simulate::{simulate_channel_data, ChannelData, PulseModel};

fn probe() -> ProbeConfig {
    let mut p = ProbeConfig::ge9ld();
    p.element_count = 32;
    p.aperture = 31.0 * p.pitch;
    p
}

fn window() -> (f64, f64) {
    (0.0, 2.0 * 25e-3 / 1540.0)
}

fn phantom(points: &[(f64, f64, f64)]) -> ScattererPhantom {
    ScattererPhantom::new(
        points
            .iter()
            .map(|&(x, z, a)| Scatterer {
                position: [x, 0.0, z],
                amplitude: a,
                group: None,
            })
            .collect(),
        MotionLaw::Static,
    )
}

fn sim(ph: &ScattererPhantom, angle: f64) -> ChannelData {
    let p = probe();
    simulate_channel_data(ph, &p, angle, &PulseModel::for_probe(&p), window()).unwrap()
}

fn max_abs(d: &ChannelData) -> f64 {
    d.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn point() -> impl Strategy<Value = (f64, f64, f64)> {
    (-3e-3..3e-3f64, 8e-3..18e-3f64, -2.0..2.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn echoes_superpose(a in prop::collection::vec(point(), 1..5), b in prop::collection::vec(point(), 1..5), angle in -0.1..0.1f64) {
        let pa = phantom(&a);
        let pb = phantom(&b);
        let union = sim(&pa.merged(&pb), angle);
        let sum = sim(&pa, angle).linear_combination(1.0, &sim(&pb, angle), 1.0).unwrap();
        let scale = max_abs(&union).max(1e-30);
        let err = (&union.samples - &sum.samples).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(err <= 1e-9 * scale, "err {err} scale {scale}");
    }

    #[test]
    fn amplitudes_scale_the_data(p in prop::collection::vec(point(), 1..4), k in -5.0..5.0f64) {
        let base = phantom(&p);
        let scaled = phantom(&p.iter().map(|&(x, z, a)| (x, z, k * a)).collect::<Vec<_>>());
        let d0 = sim(&base, 0.0);
        let d1 = sim(&scaled, 0.0);
        let scale = max_abs(&d0).max(1e-30) * k.abs().max(1.0);
        let err = (&d1.samples - &(&d0.samples * k)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(err <= 1e-9 * scale);
    }

    #[test]
    fn deeper_scatterer_arrives_later(z in 10e-3..15e-3f64, k in 1usize..12) {
        // Moving a point under the probe center down by c·k/(2 fs) delays
        // the central element's echo by about k samples.
        let p = probe();
        let dz = p.sound_speed * k as f64 / (2.0 * p.sampling_frequency);
        let x = 0.5 * p.pitch;
        let d0 = sim(&phantom(&[(x, z, 1.0)]), 0.0);
        let d1 = sim(&phantom(&[(x, z + dz, 1.0)]), 0.0);
        let e = p.element_count / 2;
        let a = d0.samples.column(e).to_vec();
        let b = d1.samples.column(e).to_vec();
        let corr = |lag: usize| -> f64 {
            let n = a.len() - lag;
            let num: f64 = (0..n).map(|i| a[i] * b[i + lag]).sum();
            let na: f64 = a[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = b[lag..].iter().map(|v| v * v).sum::<f64>().sqrt();
            num / (na * nb)
        };
        let best = (0..k + 4).max_by(|i, j| corr(*i).total_cmp(&corr(*j))).unwrap();
        prop_assert_eq!(best, k);
        prop_assert!(corr(k) > 0.99);
    }

    #[test]
    fn rotation_keeps_distances(
        pts in prop::collection::vec((-5e-3..5e-3f64, 10e-3..20e-3f64), 2..8),
        omega in -20.0..20.0f64,
        dt in 0.0..0.05f64,
    ) {
        let rotor = Rotor { center: [0.0, 15e-3], angular_velocity: omega };
        let ph = ScattererPhantom::new(
            pts.iter()
                .map(|&(x, z)| Scatterer { position: [x, 0.1e-3, z], amplitude: 1.0, group: Some(0) })
                .collect(),
            MotionLaw::RigidRotation { rotors: vec![rotor] },
        );
        let moved = advance_motion(&ph, dt).unwrap();
        let d = |s: &[Scatterer], i: usize, j: usize| {
            (s[i].position[0] - s[j].position[0]).hypot(s[i].position[2] - s[j].position[2])
        };
        for i in 0..pts.len() {
            prop_assert_eq!(moved.scatterers[i].position[1], 0.1e-3);
            let r0 = (pts[i].0).hypot(pts[i].1 - 15e-3);
            let s = &moved.scatterers[i].position;
            let r1 = s[0].hypot(s[2] - 15e-3);
            prop_assert!((r0 - r1).abs() < 1e-12);
            for j in 0..i {
                prop_assert!((d(&ph.scatterers, i, j) - d(&moved.scatterers, i, j)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn advancing_twice_equals_advancing_once() {
    let ph = ScattererPhantom::new(
        vec![Scatterer {
            position: [2e-3, 0.0, 17e-3],
            amplitude: 1.0,
            group: Some(0),
        }],
        MotionLaw::RigidRotation {
            rotors: vec![Rotor {
                center: [0.0, 15e-3],
                angular_velocity: 3.0,
            }],
        },
    );
    let twice = advance_motion(&advance_motion(&ph, 0.01).unwrap(), 0.02).unwrap();
    let once = advance_motion(&ph, 0.03).unwrap();
    for (a, b) in twice.scatterers[0].position.iter().zip(once.scatterers[0].position) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn empty_window_is_rejected() {
    let p = probe();
    let ph = phantom(&[(0.0, 10e-3, 1.0)]);
    assert!(simulate_channel_data(&ph, &p, 0.0, &PulseModel::for_probe(&p), (1e-5, 1e-5)).is_err());
}
