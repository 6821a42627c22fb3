//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// ISO 9613-1 pure-tone absorption in dB/km, transcribed independently of
/// the library: saturation pressure via the triple-point form, then the
/// oxygen and nitrogen relaxation frequencies.
pub fn iso_alpha_oracle(f: f64, temp_c: f64, rh: f64, p_kpa: f64) -> f64 {
    let t = temp_c + 273.15;
    let t_ref = 293.15;
    let t_triple = 273.16;
    let p_rel = p_kpa / 101.325;
    let psat_rel = 10f64.powf(-6.8346 * (t_triple / t).powf(1.261) + 4.6151);
    let h = rh * psat_rel / p_rel;
    let tr = t / t_ref;
    let fro = p_rel * (24.0 + 40400.0 * h * (0.02 + h) / (0.391 + h));
    let frn = p_rel / tr.sqrt() * (9.0 + 280.0 * h * (-4.170 * (tr.powf(-1.0 / 3.0) - 1.0)).exp());
    let classical = 1.84e-11 / p_rel * tr.sqrt();
    let oxygen = 0.01275 * (-2239.1 / t).exp() / (fro + f * f / fro);
    let nitrogen = 0.1068 * (-3352.0 / t).exp() / (frn + f * f / frn);
    8.686 * f * f * (classical + tr.powf(-2.5) * (oxygen + nitrogen)) * 1000.0
}

pub fn white_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn tone(f: f64, len: usize, fs: f64, phase: f64) -> Vec<f64> {
    (0..len).map(|i| (2.0 * PI * f * i as f64 / fs + phase).cos()).collect()
}

/// Amplitude of the `f` Hz component of `y[range]` by least squares on a
/// cosine/sine pair.
pub fn tone_amplitude(y: &[f64], f: f64, fs: f64, range: std::ops::Range<usize>) -> f64 {
    let (mut cc, mut ss, mut cs, mut yc, mut ys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in range {
        let w = 2.0 * PI * f * i as f64 / fs;
        let (s, c) = w.sin_cos();
        cc += c * c;
        ss += s * s;
        cs += c * s;
        yc += y[i] * c;
        ys += y[i] * s;
    }
    let det = cc * ss - cs * cs;
    let a = (yc * ss - ys * cs) / det;
    let b = (ys * cc - yc * cs) / det;
    a.hypot(b)
}

/// Lag (samples, sub-sample by parabolic interpolation) by which `b` trails
/// `a`, searched over `-max_lag..=max_lag` with a brute-force correlation.
pub fn xcorr_lag(a: &[f64], b: &[f64], max_lag: i64) -> f64 {
    let n = a.len().min(b.len()) as i64;
    let r = |lag: i64| -> f64 {
        (0..n)
            .filter(|&t| t + lag >= 0 && t + lag < n)
            .map(|t| a[t as usize] * b[(t + lag) as usize])
            .sum()
    };
    let values: Vec<(i64, f64)> = (-max_lag..=max_lag).map(|l| (l, r(l))).collect();
    let (best, peak) = values
        .iter()
        .copied()
        .fold((0, f64::NEG_INFINITY), |acc, (l, v)| if v > acc.1 { (l, v) } else { acc });
    if best.abs() == max_lag {
        return best as f64;
    }
    let (lo, hi) = (r(best - 1), r(best + 1));
    let denom = lo - 2.0 * peak + hi;
    if denom.abs() < f64::EPSILON {
        return best as f64;
    }
    best as f64 + 0.5 * (lo - hi) / denom
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform angle in degrees.
pub fn random_angle(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.0..360.0)
}

/// Node layout and target of a sampled single-target scene.
pub fn layout(area: wasn_core::scene::Area, seed: u64) -> (Vec<wasn_core::Point2>, wasn_core::Point2) {
    let s = wasn_core::scene::sample_scene(area, &wasn_core::scene::ClassMix::targets_only(), seed)
        .expect("sampling succeeds");
    let target = s.target().expect("one target").position;
    (s.node_centers(), target)
}

/// Exact bearings perturbed by zero-mean Gaussian noise of `sigma` degrees.
pub fn noisy_bearings(
    nodes: &[wasn_core::Point2],
    source: wasn_core::Point2,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> wasn_core::localize::BearingSet {
    let mut set = wasn_core::localize::BearingSet::exact(nodes, source);
    for b in &mut set.bearings {
        let e: f64 = StandardNormal.sample(rng);
        b.bearing = wasn_core::geometry::wrap_deg(b.bearing + sigma * e);
    }
    set
}

/// Brute-force consensus oracle: the 1 m lattice point maximizing the
/// Gaussian-kernel agreement `Σ exp(-Δ²/2σ²)` of all bearings, where Δ is
/// the angular miss of each bearing. Ties keep the first point in x-major
/// order.
pub fn grid_consensus(
    set: &wasn_core::localize::BearingSet,
    area: wasn_core::scene::Area,
    sigma: f64,
) -> wasn_core::Point2 {
    let mut best = (f64::NEG_INFINITY, wasn_core::Point2::default());
    for x in 0..=area.width as i64 {
        for y in 0..=area.height as i64 {
            let g = wasn_core::Point2::new(x as f64, y as f64);
            let mut score = 0.0;
            for b in &set.bearings {
                if g == b.node {
                    continue;
                }
                let to = (g.y - b.node.y).atan2(g.x - b.node.x).to_degrees();
                let d = ((to - b.bearing + 540.0).rem_euclid(360.0)) - 180.0;
                score += (-d * d / (2.0 * sigma * sigma)).exp();
            }
            if score > best.0 {
                best = (score, g);
            }
        }
    }
    best.1
}
