//! Source waveforms: built-in synthetic stand-ins for each class and WAV
//! ingestion, all normalized to unit RMS.
//!
//! Signal ids are `synth:<class>:<hex seed>` or `wav:<path>`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scene::{Scene, SourceClass};

/// Resolves signal ids to unit-RMS waveforms of a fixed base length.
#[derive(Debug, Clone)]
pub struct SignalResolver {
    pub sample_rate: u32,
    pub base_len: usize,
    /// Relative `wav:` paths are resolved against this directory.
    pub wav_root: Option<PathBuf>,
}

impl SignalResolver {
    pub fn new(sample_rate: u32, base_len: usize) -> Self {
        Self {
            sample_rate,
            base_len,
            wav_root: None,
        }
    }

    pub fn resolve(&self, id: &str) -> Result<Vec<f64>> {
        if let Some(rest) = id.strip_prefix("synth:") {
            let (class, seed) = rest
                .split_once(':')
                .ok_or_else(|| Error::MissingSignal(id.to_owned()))?;
            let class: SourceClass = class
                .parse()
                .map_err(|_| Error::MissingSignal(id.to_owned()))?;
            let seed = u64::from_str_radix(seed, 16)
                .map_err(|_| Error::MissingSignal(id.to_owned()))?;
            Ok(synthesize(class, self.base_len, self.sample_rate, seed))
        } else if let Some(path) = id.strip_prefix("wav:") {
            let mut p = PathBuf::from(path);
            if p.is_relative() {
                if let Some(root) = &self.wav_root {
                    p = root.join(p);
                }
            }
            let mut sig = read_wav_mono(&p, self.sample_rate)?;
            normalize_rms(&mut sig);
            Ok(sig)
        } else {
            Err(Error::MissingSignal(id.to_owned()))
        }
    }

    /// Resolves every signal a scene refers to.
    pub fn resolve_scene(&self, scene: &Scene) -> Result<HashMap<String, Vec<f64>>> {
        let mut out = HashMap::new();
        for s in &scene.sources {
            if !out.contains_key(&s.signal_id) {
                out.insert(s.signal_id.clone(), self.resolve(&s.signal_id)?);
            }
        }
        Ok(out)
    }
}

/// Synthetic waveform for `class`, `len` samples, unit RMS.
pub fn synthesize(class: SourceClass, len: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class.index() as u64) << 56));
    let fs = sample_rate as f64;
    let mut sig = match class {
        SourceClass::Siren => siren(len, fs, &mut rng),
        SourceClass::Scream => scream(len, fs, &mut rng),
        SourceClass::Gunshot => gunshot(len, fs, &mut rng),
        SourceClass::Interfering => park_texture(len, fs, &mut rng),
    };
    normalize_rms(&mut sig);
    sig
}

/// Two tones a fixed ratio apart, frequency-modulated by a slow sine sweep.
fn siren(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = rng.random_range(600.0..900.0);
    let depth = rng.random_range(150.0..300.0);
    let rate = rng.random_range(0.5..4.0);
    let ratio = rng.random_range(1.2..1.5);
    let phase0 = rng.random_range(0.0..2.0 * PI);
    let (mut p1, mut p2) = (0.0, 0.0);
    (0..len)
        .map(|i| {
            let t = i as f64 / fs;
            let f = base + depth * (2.0 * PI * rate * t + phase0).sin();
            p1 += 2.0 * PI * f / fs;
            p2 += 2.0 * PI * f * ratio / fs;
            p1.sin() + 0.7 * p2.sin() + 0.2 * (2.0 * p1).sin()
        })
        .collect()
}

/// Harmonic voice with a jittering pitch plus a band of noise, under a
/// burst envelope.
fn scream(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut f0: f64 = rng.random_range(450.0..800.0);
    let center = f0;
    let onset = rng.random_range(0.0..0.1) * fs;
    let sustain = rng.random_range(0.5..0.85) * fs;
    let noise = bandpass_noise(len, fs, 1200.0, 3200.0, rng);
    let mut phase = 0.0;
    (0..len)
        .map(|i| {
            // bounded random walk on the pitch
            f0 += rng.random_range(-4.0..4.0) + 0.002 * (center - f0);
            phase += 2.0 * PI * f0 / fs;
            let mut v = 0.0;
            for h in 1..=6 {
                if f0 * h as f64 >= fs / 2.0 {
                    break;
                }
                v += (h as f64 * phase).sin() / h as f64;
            }
            let x = i as f64;
            let env = if x < onset {
                0.05
            } else {
                let u = (x - onset) / sustain;
                let shape = if u < 0.05 {
                    u / 0.05
                } else if u < 1.0 {
                    1.0
                } else {
                    (-(u - 1.0) * 8.0).exp()
                };
                shape.max(0.05)
            };
            env * (v + 0.6 * noise[i])
        })
        .collect()
}

/// Broadband noise impulse with an exponential tail.
fn gunshot(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let onset = (rng.random_range(0.02..0.3) * fs) as usize;
    let tau = rng.random_range(0.02..0.06) * fs;
    let echo = onset + (rng.random_range(0.08..0.2) * fs) as usize;
    (0..len)
        .map(|i| {
            let n: f64 = StandardNormal.sample(rng);
            let main = if i >= onset {
                (-((i - onset) as f64) / tau).exp()
            } else {
                0.0
            };
            let tail = if i >= echo {
                0.25 * (-((i - echo) as f64) / (2.0 * tau)).exp()
            } else {
                0.0
            };
            n * (main + tail + 0.003)
        })
        .collect()
}

/// Low-passed rumble, chirping "bird" calls and a few barks.
fn park_texture(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = bandpass_noise(len, fs, 60.0, 900.0, rng);
    for v in &mut out {
        *v *= 0.7;
    }
    let chirps = rng.random_range(3..9);
    for _ in 0..chirps {
        let start = rng.random_range(0..len.max(1));
        let dur = (rng.random_range(0.03..0.12) * fs) as usize;
        let f_start = rng.random_range(2000.0..3500.0);
        let f_end = rng.random_range(1500.0..3800.0);
        let amp = rng.random_range(0.5..1.5);
        let mut phase = 0.0;
        for k in 0..dur.min(len - start) {
            let u = k as f64 / dur as f64;
            let f = f_start + (f_end - f_start) * u;
            phase += 2.0 * PI * f / fs;
            out[start + k] += amp * (PI * u).sin() * phase.sin();
        }
    }
    let barks = rng.random_range(0..3);
    for _ in 0..barks {
        let start = rng.random_range(0..len.max(1));
        let dur = (0.15 * fs) as usize;
        let f0 = rng.random_range(250.0..500.0);
        for k in 0..dur.min(len - start) {
            let t = k as f64 / fs;
            let env = (-t * 25.0).exp();
            out[start + k] += 1.5
                * env
                * (1..=5)
                    .map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64)
                    .sum::<f64>();
        }
    }
    out
}

/// White noise through a crude two-pole band-pass (cascaded one-pole HP/LP).
fn bandpass_noise(len: usize, fs: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a_hp = (-2.0 * PI * lo / fs).exp();
    let a_lp = (-2.0 * PI * hi / fs).exp();
    let (mut hp_prev_in, mut hp_prev_out, mut lp1, mut lp2) = (0.0, 0.0, 0.0, 0.0);
    (0..len)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            let hp = a_hp * (hp_prev_out + x - hp_prev_in);
            hp_prev_in = x;
            hp_prev_out = hp;
            lp1 = (1.0 - a_lp) * hp + a_lp * lp1;
            lp2 = (1.0 - a_lp) * lp1 + a_lp * lp2;
            lp2
        })
        .collect()
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn normalize_rms(x: &mut [f64]) {
    let r = rms(x);
    if r > 0.0 {
        for v in x.iter_mut() {
            *v /= r;
        }
    }
}

/// Loops `signal` to `target_len` samples, joining repetitions with an
/// equal-power crossfade of `xfade` samples.
pub fn extend_with_crossfade(signal: &[f64], target_len: usize, xfade: usize) -> Vec<f64> {
    if signal.is_empty() {
        return vec![0.0; target_len];
    }
    if signal.len() >= target_len {
        return signal[..target_len].to_vec();
    }
    let xfade = xfade.min(signal.len() / 2);
    let period = signal.len() - xfade;
    let mut out = vec![0.0; target_len];
    let mut start = 0usize;
    while start < target_len {
        let has_next = start + period < target_len;
        for (k, &s) in signal.iter().enumerate() {
            let i = start + k;
            if i >= target_len {
                break;
            }
            let mut gain = 1.0;
            if start > 0 && k < xfade {
                gain *= (0.5 * PI * (k as f64 + 0.5) / xfade as f64).sin();
            }
            if has_next && k >= period {
                gain *= (0.5 * PI * ((k - period) as f64 + 0.5) / xfade as f64).cos();
            }
            out[i] += s * gain;
        }
        start += period;
    }
    out
}

/// Reads a WAV file and mixes it down to mono, as Pa-equivalent floats.
pub fn read_wav_mono(path: &Path, expected_rate: u32) -> Result<Vec<f64>> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    if spec.sample_rate != expected_rate {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: format!(
                "sample rate {} Hz, expected {} Hz",
                spec.sample_rate, expected_rate
            ),
        });
    }
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    Ok(interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_signals_are_unit_rms_and_deterministic() {
        for class in SourceClass::ALL {
            let a = synthesize(class, 8000, 8000, 42);
            let b = synthesize(class, 8000, 8000, 42);
            assert_eq!(a, b);
            assert!((rms(&a) - 1.0).abs() < 1e-9, "{class}");
            assert!(a.iter().all(|v| v.is_finite()));
            let c = synthesize(class, 8000, 8000, 43);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn resolver_parses_ids() {
        let r = SignalResolver::new(8000, 800);
        assert_eq!(r.resolve("synth:siren:00ff").unwrap().len(), 800);
        assert!(matches!(r.resolve("synth:bogus:1"), Err(Error::MissingSignal(_))));
        assert!(matches!(r.resolve("foo"), Err(Error::MissingSignal(_))));
    }

    #[test]
    fn crossfade_extension_keeps_level() {
        let sig = synthesize(SourceClass::Interfering, 8000, 8000, 3);
        let ext = extend_with_crossfade(&sig, 20_000, 400);
        assert_eq!(ext.len(), 20_000);
        assert_eq!(&ext[..7600], &sig[..7600]);
        let r = rms(&ext);
        assert!((r - 1.0).abs() < 0.1, "rms {r}");
    }

    #[test]
    fn crossfade_of_constant_is_smooth() {
        let sig = vec![1.0; 100];
        let ext = extend_with_crossfade(&sig, 350, 20);
        // equal-power fade of identical content peaks at sqrt(2) mid-fade
        assert!(ext.iter().all(|v| (0.99..=1.42).contains(v)));
    }
}
