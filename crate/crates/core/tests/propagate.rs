mod common;

use std::collections::HashMap;

use common::*;
use proptest::prelude::*;
use wasn_core::propagate::{
    atmospheric_alpha, attenuation_db, divergence_db, render_scene, render_source_to_mic,
    spl_to_amplitude, AttenuationModel, RenderOptions,
};
use wasn_core::scene::{ArrayGeometry, Area, Scene, SceneRecord, SourceClass, SourceEvent};
use wasn_core::Point2;

const FS: f64 = 8000.0;

#[test]
fn divergence_examples() {
    assert_eq!(divergence_db(1.0).unwrap(), 11.0);
    assert!((divergence_db(100.0).unwrap() - 51.0).abs() < 1e-12);
    assert!((divergence_db(2.0).unwrap() - 17.0206).abs() < 5e-5);
    assert!(divergence_db(0.0).is_err());
    assert!(divergence_db(-3.0).is_err());
}

#[test]
fn alpha_matches_independent_oracle() {
    let m = AttenuationModel::default();
    assert_eq!(atmospheric_alpha(0.0, &m).unwrap(), 0.0);
    assert!(atmospheric_alpha(-1.0, &m).is_err());
    let a1k = atmospheric_alpha(1000.0, &m).unwrap();
    let oracle = iso_alpha_oracle(1000.0, 20.0, 70.0, 101.325);
    assert!((a1k / oracle - 1.0).abs() < 0.005, "{a1k} vs {oracle}");
    for f in [20.0, 63.0, 250.0, 777.0, 2000.0, 3999.0] {
        let a = atmospheric_alpha(f, &m).unwrap();
        assert!((a / iso_alpha_oracle(f, 20.0, 70.0, 101.325) - 1.0).abs() < 1e-9);
    }
    // other conditions too, so a transcription slip in the humidity or
    // temperature terms cannot hide behind the default model
    let cold = AttenuationModel {
        temperature_c: 0.0,
        humidity: 30.0,
        ..m
    };
    let a = atmospheric_alpha(2000.0, &cold).unwrap();
    assert!((a / iso_alpha_oracle(2000.0, 0.0, 30.0, 101.325) - 1.0).abs() < 1e-9);
}

#[test]
fn alpha_reproduces_published_octave_table() {
    // octave-band values at 20 °C / 70 % RH, dB/km, as tabulated (1 decimal)
    let table = [0.1, 0.3, 1.1, 2.8, 5.0, 9.0, 22.9, 76.6];
    let m = AttenuationModel::default();
    for (n, &expected) in table.iter().enumerate() {
        // exact midband frequencies 1000·10^(0.3(n-4))
        let f = 1000.0 * 10f64.powf(0.3 * (n as f64 - 4.0));
        let a = atmospheric_alpha(f, &m).unwrap();
        assert!(
            (a - expected).abs() <= 0.05 + 0.005 * expected,
            "{f:.1} Hz: {a:.3} vs {expected}"
        );
    }
}

#[test]
fn alpha_increases_with_frequency() {
    let m = AttenuationModel::default();
    let a = |f| atmospheric_alpha(f, &m).unwrap();
    assert!(a(4000.0) > a(1000.0) && a(1000.0) > a(250.0));
    let mut prev = 0.0;
    for k in 1..=400 {
        let v = a(k as f64 * 10.0);
        assert!(v > prev);
        prev = v;
    }
}

#[test]
fn attenuation_examples() {
    let m = AttenuationModel::default();
    let a1 = attenuation_db(1000.0, 1.0, &m).unwrap();
    assert!((a1 - (11.0 + atmospheric_alpha(1000.0, &m).unwrap() / 1000.0)).abs() < 1e-12);
    assert!((attenuation_db(0.0, 100.0, &m).unwrap() - 51.0).abs() < 1e-12);
    assert!(attenuation_db(2000.0, 200.0, &m).unwrap() > attenuation_db(500.0, 200.0, &m).unwrap());
    assert!(attenuation_db(1000.0, 0.0, &m).is_err());
}

#[test]
fn spl_examples() {
    assert!((spl_to_amplitude(94.0) - 1.0024).abs() < 1e-4);
    assert!((spl_to_amplitude(0.0) - 20e-6).abs() < 1e-18);
    assert!((spl_to_amplitude(120.0) - 20.0).abs() < 1e-9);
}

#[test]
fn onset_is_delayed_by_time_of_flight() {
    let mut impulse = vec![0.0; 12000];
    impulse[0] = 1.0;
    let m = AttenuationModel::default();
    let y = render_source_to_mic(&impulse, 8000, Point2::new(343.0, 0.0), Point2::default(), &m)
        .unwrap();
    let peak = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap()
        .0;
    assert_eq!(peak, 8000);
    let before: f64 = y[..7900].iter().map(|v| v * v).sum();
    let total: f64 = y.iter().map(|v| v * v).sum();
    assert!(before / total < 1e-6);
}

#[test]
fn doubling_distance_loses_at_least_six_db() {
    let m = AttenuationModel::default();
    let s = white_noise(16000, 3);
    for d in [5.0, 40.0, 120.0] {
        let near = render_source_to_mic(&s, 8000, Point2::new(d, 0.0), Point2::default(), &m).unwrap();
        let far =
            render_source_to_mic(&s, 8000, Point2::new(2.0 * d, 0.0), Point2::default(), &m).unwrap();
        let skip = (2.0 * d / 343.0 * FS).ceil() as usize + 64;
        let ratio = rms(&far[skip..]) / rms(&near[skip..]);
        assert!(ratio <= 10f64.powf(-6.02 / 20.0) * 1.001, "d={d}: {ratio}");
        // absorption adds at most a few dB over these spans
        assert!(ratio > 10f64.powf(-6.02 / 20.0) * 0.6);
    }
}

#[test]
fn one_metre_tone_loses_eleven_db() {
    let s = tone(1000.0, 8000, FS, 0.3);
    let y = render_source_to_mic(
        &s,
        8000,
        Point2::new(1.0, 0.0),
        Point2::default(),
        &AttenuationModel::default(),
    )
    .unwrap();
    let ratio = rms(&y[100..]) / rms(&s[100..]);
    assert!((ratio / 10f64.powf(-11.0 / 20.0) - 1.0).abs() < 0.01, "{ratio}");
}

#[test]
fn tone_amplitude_matches_closed_form() {
    let m = AttenuationModel::default();
    for (f, d) in [(31.0, 2.0), (440.0, 57.0), (1900.0, 150.0), (3700.0, 280.0)] {
        let s = tone(f, 16000, FS, 0.0);
        let y = render_source_to_mic(&s, 8000, Point2::new(0.0, d), Point2::default(), &m).unwrap();
        let start = (d / 343.0 * FS).ceil() as usize + 400;
        let amp = tone_amplitude(&y, f, FS, start..16000 - 10);
        let expected_db = attenuation_db(f, d, &m).unwrap();
        let err_db = 20.0 * amp.log10() + expected_db;
        assert!(err_db.abs() < 0.1, "f={f} d={d}: {err_db} dB");
    }
}

#[test]
fn co_located_source_is_rejected() {
    let s = vec![1.0; 100];
    let p = Point2::new(3.0, 4.0);
    assert!(render_source_to_mic(&s, 8000, p, p, &AttenuationModel::default()).is_err());
}

fn scene_with(sources: Vec<SourceEvent>, nodes: Vec<Point2>) -> Scene {
    let rec = SceneRecord {
        scene_id: "t".into(),
        area: Area::new(200.0, 200.0).unwrap(),
        nodes,
        sources,
        seed: 11,
    };
    Scene::from_record(&rec, &ArrayGeometry::default()).unwrap()
}

fn event(pos: Point2, id: &str) -> SourceEvent {
    SourceEvent {
        class: SourceClass::Siren,
        position: pos,
        spl: 100.0,
        signal_id: id.into(),
    }
}

#[test]
fn noise_only_scene_has_calibrated_rms() {
    let scene = scene_with(vec![], vec![Point2::new(10.0, 10.0), Point2::new(100.0, 100.0)]);
    let clips = render_scene(&scene, &HashMap::new(), &RenderOptions::with_noise(60.0)).unwrap();
    let target = spl_to_amplitude(60.0);
    for clip in &clips {
        assert_eq!(clip.num_channels(), 8);
        assert_eq!(clip.len(), 8000);
        for ch in &clip.samples {
            assert!((rms(ch) / target - 1.0).abs() < 0.05);
        }
    }
}

#[test]
fn missing_signal_is_reported() {
    let scene = scene_with(vec![event(Point2::new(50.0, 50.0), "synth:siren:1")], vec![Point2::new(0.0, 0.0)]);
    let err = render_scene(&scene, &HashMap::new(), &RenderOptions::default()).unwrap_err();
    assert!(matches!(err, wasn_core::Error::MissingSignal(_)));
}

#[test]
fn nearest_mic_leads_farthest_by_geometry() {
    let src = Point2::new(150.0, 60.0);
    let node = Point2::new(40.0, 120.0);
    let scene = scene_with(vec![event(src, "noise")], vec![node]);
    let signals = HashMap::from([("noise".to_string(), white_noise(8000, 5))]);
    let clip = &render_scene(&scene, &signals, &RenderOptions::default()).unwrap()[0];
    let mics = scene.nodes[0].mic_positions();
    let d: Vec<f64> = mics.iter().map(|m| m.distance(src)).collect();
    let near = (0..8).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
    let far = (0..8).max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
    let expected = (d[far] - d[near]) / 343.0 * FS;
    let lag = xcorr_lag(&clip.samples[near], &clip.samples[far], 8);
    assert!((lag - expected).abs() <= 0.5, "lag {lag} vs {expected}");
}

#[test]
fn snr_falls_as_node_moves_away() {
    let src = Point2::new(10.0, 10.0);
    let signals = HashMap::from([("noise".to_string(), white_noise(8000, 9))]);
    let mut snrs = Vec::new();
    for d in [20.0, 60.0, 180.0] {
        let scene = scene_with(vec![event(src, "noise")], vec![Point2::new(10.0 + d, 10.0)]);
        let clean = render_scene(&scene, &signals, &RenderOptions::default()).unwrap();
        let noisy = render_scene(&scene, &signals, &RenderOptions::with_noise(50.0)).unwrap();
        let s = rms(&clean[0].samples[0]);
        let noise: Vec<f64> = noisy[0].samples[0]
            .iter()
            .zip(&clean[0].samples[0])
            .map(|(a, b)| a - b)
            .collect();
        snrs.push(20.0 * (s / rms(&noise)).log10());
    }
    assert!(snrs[0] > snrs[1] && snrs[1] > snrs[2], "{snrs:?}");
}

#[test]
fn render_is_finite_and_bounded() {
    let scene = scene_with(
        vec![SourceEvent {
            spl: 140.0,
            ..event(Point2::new(41.0, 40.0), "noise")
        }],
        vec![Point2::new(40.0, 40.0)],
    );
    let signals = HashMap::from([("noise".to_string(), white_noise(8000, 1))]);
    let clips = render_scene(&scene, &signals, &RenderOptions::with_noise(70.0)).unwrap();
    let bound = spl_to_amplitude(140.0) * 10.0;
    for v in clips[0].samples.iter().flatten() {
        assert!(v.is_finite() && v.abs() < bound);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rendering_is_linear(seed in any::<u64>(), x in 1.0f64..150.0, y in 1.0f64..150.0) {
        let m = AttenuationModel::default();
        let s1 = white_noise(2000, seed);
        let s2 = tone(700.0, 2000, FS, 1.0);
        let sum: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
        let src = Point2::new(x, y);
        let r = |s: &[f64]| render_source_to_mic(s, 8000, src, Point2::default(), &m).unwrap();
        let (r1, r2, rs) = (r(&s1), r(&s2), r(&sum));
        let scale = rs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..rs.len() {
            prop_assert!((rs[i] - r1[i] - r2[i]).abs() <= 1e-9 * scale.max(1e-12));
        }
    }
}
