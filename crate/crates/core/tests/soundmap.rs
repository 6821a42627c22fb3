mod common;

use std::collections::HashMap;
use std::f64::consts::PI;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use wasn_core::geometry::angle_diff_deg;
use wasn_core::propagate::{render_scene, MultichannelClip, RenderOptions};
use wasn_core::scene::{
    make_uca, ArrayGeometry, Area, MicrophoneArray, Scene, SceneRecord, SourceClass, SourceEvent,
};
use wasn_core::soundmap::{soundmap_features, srp_phat_map, SoundmapConfig};
use wasn_core::{Error, Point2};

fn render_one(node: Point2, src: Point2, seed: u64) -> Scene {
    let rec = SceneRecord {
        scene_id: "t".into(),
        area: Area::new(300.0, 300.0).unwrap(),
        nodes: vec![node],
        sources: vec![SourceEvent {
            class: SourceClass::Siren,
            position: src,
            spl: 100.0,
            signal_id: "x".into(),
        }],
        seed,
    };
    Scene::from_record(&rec, &ArrayGeometry::default()).unwrap()
}

fn clip_for(scene: &Scene, signal: &[f64], noise: Option<f64>) -> MultichannelClip {
    let signals = HashMap::from([("x".to_string(), signal.to_vec())]);
    let opts = RenderOptions {
        noise_spl: noise,
        ..RenderOptions::default()
    };
    render_scene(scene, &signals, &opts).unwrap().remove(0)
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

#[test]
fn noiseless_source_north_of_node() {
    let node = Point2::new(100.0, 100.0);
    let scene = render_one(node, Point2::new(100.0, 160.0), 1);
    let clip = clip_for(&scene, &white_noise(8000, 4), None);
    let f = srp_phat_map(&clip, &scene.nodes[0], &SoundmapConfig::default()).unwrap();
    assert_eq!((f.num_subbands(), f.num_angles()), (6, 360));
    let est = f.angles[argmax(&f.full_band())];
    assert!(angle_diff_deg(est, 90.0).abs() <= 2.0, "{est}");
    for row in &f.map {
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo == 0.0 && hi == 1.0);
    }
}

#[test]
fn band_limited_source_dominates_its_band() {
    // 30 random-phase tones inside the third band (1347–2010 Hz), over a
    // 40 dB noise floor so the empty bands see incoherent noise only
    let cfg = SoundmapConfig::default();
    let (lo, hi) = (cfg.subband_edges[2], cfg.subband_edges[3]);
    let mut r = rng(8);
    let tones: Vec<(f64, f64)> = (0..30)
        .map(|_| (r.random_range(lo + 40.0..hi - 40.0), r.random_range(0.0..2.0 * PI)))
        .collect();
    let signal: Vec<f64> = (0..8000)
        .map(|i| {
            let t = i as f64 / 8000.0;
            tones.iter().map(|(f, p)| (2.0 * PI * f * t + p).cos()).sum()
        })
        .collect();
    let scene = render_one(Point2::new(50.0, 50.0), Point2::new(90.0, 20.0), 2);
    let clip = clip_for(&scene, &signal, Some(40.0));
    let f = srp_phat_map(&clip, &scene.nodes[0], &cfg).unwrap();
    let peak = |b: usize| f.raw[b].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(peak(2) >= 10.0 * peak(5), "{} vs {}", peak(2), peak(5));
}

#[test]
fn silence_is_flat_and_too_few_channels_errors() {
    let a = make_uca(8, 0.11, Point2::default()).unwrap();
    let clip = MultichannelClip {
        node_id: 0,
        samples: vec![vec![0.0; 8000]; 8],
        sample_rate: 8000,
    };
    let f = srp_phat_map(&clip, &a, &SoundmapConfig::default()).unwrap();
    for row in &f.map {
        assert!(row.iter().all(|v| (v - row[0]).abs() < 1e-6));
    }
    let mono = MultichannelClip {
        node_id: 0,
        samples: vec![vec![0.0; 8000]],
        sample_rate: 8000,
    };
    let one = MicrophoneArray::new(Point2::default(), 0.11, vec![0.0]);
    if let Ok(one) = one {
        assert!(matches!(
            srp_phat_map(&mono, &one, &SoundmapConfig::default()),
            Err(Error::TooFewChannels(1))
        ));
    }
    assert!(srp_phat_map(&mono, &a, &SoundmapConfig::default()).is_err());
}

#[test]
fn five_nodes_stack_in_order_and_permute() {
    let rec = SceneRecord {
        scene_id: "t".into(),
        area: Area::new(140.0, 140.0).unwrap(),
        nodes: vec![
            Point2::new(10.0, 10.0),
            Point2::new(130.0, 10.0),
            Point2::new(70.0, 70.0),
            Point2::new(10.0, 130.0),
            Point2::new(130.0, 130.0),
        ],
        sources: vec![SourceEvent {
            class: SourceClass::Scream,
            position: Point2::new(40.0, 95.0),
            spl: 100.0,
            signal_id: "x".into(),
        }],
        seed: 5,
    };
    let scene = Scene::from_record(&rec, &ArrayGeometry::default()).unwrap();
    let clips = render_scene(
        &scene,
        &HashMap::from([("x".to_string(), white_noise(8000, 2))]),
        &RenderOptions::with_noise(45.0),
    )
    .unwrap();
    let cfg = SoundmapConfig::default();
    let maps = soundmap_features(&clips, &scene.nodes, &cfg).unwrap();
    assert_eq!(maps.len(), 5);
    assert!(maps.iter().all(|m| m.raw.len() == 6 && m.raw.iter().all(|r| r.len() == 360)));
    for (i, m) in maps.iter().enumerate() {
        assert_eq!(m.node_id, i);
        let truth = scene.nodes[i].center.bearing_to(rec.sources[0].position);
        assert!(angle_diff_deg(m.angles[argmax(&m.full_band())], truth).abs() <= 2.0);
    }

    let perm = [3, 0, 4, 2, 1];
    let pc: Vec<_> = perm.iter().map(|&i| clips[i].clone()).collect();
    let pa: Vec<_> = perm.iter().map(|&i| scene.nodes[i].clone()).collect();
    let pm = soundmap_features(&pc, &pa, &cfg).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(pm[k].raw, maps[i].raw);
    }

    // the same clip on two identical arrays yields identical slices
    let twin = soundmap_features(
        &[clips[2].clone(), clips[2].clone()],
        &[scene.nodes[2].clone(), scene.nodes[2].clone()],
        &cfg,
    )
    .unwrap();
    assert_eq!(twin[0].raw, twin[1].raw);

    assert!(matches!(
        soundmap_features(&clips[..4], &scene.nodes, &cfg),
        Err(Error::MismatchedNodes(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn rotation_shifts_the_argmax(theta in 0u32..360, delta in 1u32..360, seed in any::<u64>()) {
        let cfg = SoundmapConfig::default();
        let node = Point2::new(150.0, 150.0);
        let signal = white_noise(8000, seed);
        let at = |deg: f64| {
            let r = deg.to_radians();
            Point2::new(150.0 + 60.0 * r.cos(), 150.0 + 60.0 * r.sin())
        };
        let base_angles: Vec<f64> = (0..8).map(|u| 45.0 * u as f64).collect();
        let run = |rot: f64| {
            let mut scene = render_one(node, at(f64::from(theta) + rot), seed);
            let mut angles: Vec<f64> = base_angles.iter().map(|a| (a + rot) % 360.0).collect();
            angles.sort_by(f64::total_cmp);
            scene.nodes[0] = MicrophoneArray::new(node, 0.11, angles).unwrap();
            let clip = clip_for(&scene, &signal, None);
            let f = srp_phat_map(&clip, &scene.nodes[0], &cfg).unwrap();
            f.angles[argmax(&f.full_band())]
        };
        let a = run(0.0);
        let b = run(f64::from(delta));
        prop_assert!(angle_diff_deg(b - a, f64::from(delta)).abs() <= 1.0, "{} {}", a, b);
    }

    #[test]
    fn phat_map_ignores_clip_scale(scale in 1e-3f64..1e3, seed in any::<u64>()) {
        let scene = render_one(Point2::new(20.0, 30.0), Point2::new(80.0, 10.0), seed);
        let clip = clip_for(&scene, &white_noise(8000, seed), Some(50.0));
        let mut scaled = clip.clone();
        scaled.samples.iter_mut().flatten().for_each(|v| *v *= scale);
        let cfg = SoundmapConfig::default();
        let a = srp_phat_map(&clip, &scene.nodes[0], &cfg).unwrap();
        let b = srp_phat_map(&scaled, &scene.nodes[0], &cfg).unwrap();
        for (u, v) in a.map.iter().flatten().zip(b.map.iter().flatten()) {
            prop_assert!((u - v).abs() < 1e-6);
        }
    }
}
