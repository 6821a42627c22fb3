//! Direct-path outdoor propagation: exact time of flight, spherical
//! divergence and pure-tone atmospheric absorption, applied per FFT bin.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::scene::{splitmix64, Scene};
use crate::signals::extend_with_crossfade;
use crate::SPEED_OF_SOUND;

/// Reference sound pressure, Pa.
pub const P_REF: f64 = 20e-6;

/// Atmospheric conditions and propagation constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttenuationModel {
    pub temperature_c: f64,
    /// Relative humidity in percent, (0, 100].
    pub humidity: f64,
    pub pressure_kpa: f64,
    pub reference_distance: f64,
    pub speed_of_sound: f64,
}

impl Default for AttenuationModel {
    fn default() -> Self {
        Self {
            temperature_c: 20.0,
            humidity: 70.0,
            pressure_kpa: 101.325,
            reference_distance: 1.0,
            speed_of_sound: SPEED_OF_SOUND,
        }
    }
}

impl AttenuationModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.humidity > 0.0 && self.humidity <= 100.0) {
            return Err(Error::invalid(format!(
                "relative humidity must be in (0, 100], got {}",
                self.humidity
            )));
        }
        if !(self.pressure_kpa > 0.0 && self.speed_of_sound > 0.0 && self.reference_distance > 0.0)
        {
            return Err(Error::invalid("pressure, c and d0 must be positive"));
        }
        Ok(())
    }

    /// Pure-tone absorption coefficient in dB/km (ISO 9613-1 relaxation model).
    pub fn alpha_db_per_km(&self, f: f64) -> f64 {
        const T0: f64 = 293.15;
        const T01: f64 = 273.16;
        const P_R: f64 = 101.325;

        let t = self.temperature_c + 273.15;
        let pa = self.pressure_kpa / P_R;
        let c_sat = -6.8346 * (T01 / t).powf(1.261) + 4.6151;
        // molar concentration of water vapour, %
        let h = self.humidity * 10f64.powf(c_sat) / pa;
        let fr_o = pa * (24.0 + 4.04e4 * h * (0.02 + h) / (0.391 + h));
        let fr_n = pa
            * (t / T0).powf(-0.5)
            * (9.0 + 280.0 * h * (-4.170 * ((t / T0).powf(-1.0 / 3.0) - 1.0)).exp());
        let f2 = f * f;
        let db_per_m = 8.686
            * f2
            * (1.84e-11 / pa * (t / T0).sqrt()
                + (t / T0).powf(-2.5)
                    * (0.01275 * (-2239.1 / t).exp() / (fr_o + f2 / fr_o)
                        + 0.1068 * (-3352.0 / t).exp() / (fr_n + f2 / fr_n)));
        db_per_m * 1000.0
    }
}

/// Geometric divergence `20·log10(d/d0) + 11` dB with d0 = 1 m.
pub fn divergence_db(d: f64) -> Result<f64> {
    divergence_db_with(d, 1.0)
}

fn divergence_db_with(d: f64, d0: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::invalid(format!("distance must be > 0, got {d}")));
    }
    Ok(20.0 * (d / d0).log10() + 11.0)
}

pub fn atmospheric_alpha(f: f64, model: &AttenuationModel) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(Error::invalid(format!("frequency must be >= 0, got {f}")));
    }
    model.validate()?;
    Ok(model.alpha_db_per_km(f))
}

/// Total attenuation `A_div + α_f·d/1000` in dB.
pub fn attenuation_db(f: f64, d: f64, model: &AttenuationModel) -> Result<f64> {
    Ok(divergence_db_with(d, model.reference_distance)? + atmospheric_alpha(f, model)? * d / 1000.0)
}

/// RMS pressure in Pa for a level in dB re 20 µPa.
pub fn spl_to_amplitude(spl: f64) -> f64 {
    P_REF * 10f64.powf(spl / 20.0)
}

pub fn amplitude_to_spl(rms: f64) -> f64 {
    20.0 * (rms / P_REF).log10()
}

/// Sampled M-channel pressure signal for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelClip {
    pub node_id: usize,
    /// `samples[m][i]`: microphone m, sample i, in Pa.
    pub samples: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl MultichannelClip {
    pub fn num_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes a 32-bit float WAV with one channel per microphone.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: self.num_channels() as u16,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
        for i in 0..self.len() {
            for ch in &self.samples {
                w.write_sample(ch[i] as f32).map_err(|e| wav_err(path, e))?;
            }
        }
        w.finalize().map_err(|e| wav_err(path, e))
    }

    pub fn read_wav(path: &Path, node_id: usize) -> Result<Self> {
        let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
        let spec = reader.spec();
        if spec.sample_format != hound::SampleFormat::Float || spec.bits_per_sample != 32 {
            return Err(Error::Format {
                path: path.to_owned(),
                reason: "expected 32-bit float samples".into(),
            });
        }
        let channels = spec.channels as usize;
        let interleaved: Vec<f32> = reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?;
        let mut samples = vec![Vec::with_capacity(interleaved.len() / channels); channels];
        for frame in interleaved.chunks_exact(channels) {
            for (ch, &v) in samples.iter_mut().zip(frame) {
                ch.push(f64::from(v));
            }
        }
        Ok(Self {
            node_id,
            samples,
            sample_rate: spec.sample_rate,
        })
    }
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    }
}

/// A source waveform already transformed to the frequency domain, ready to
/// be delayed and attenuated for any number of receivers.
pub struct SourceSpectrum {
    spectrum: Vec<Complex64>,
    /// Absorption in dB/km for bins 0..=n/2.
    alpha: Vec<f64>,
    ifft: Arc<dyn Fft<f64>>,
    sample_rate: f64,
    model: AttenuationModel,
}

impl SourceSpectrum {
    /// `fft_len` must be at least `signal.len()` plus the largest delay (in
    /// samples) that will be rendered, or the delayed copy wraps around.
    pub fn new(
        signal: &[f64],
        sample_rate: u32,
        fft_len: usize,
        model: &AttenuationModel,
        planner: &mut FftPlanner<f64>,
    ) -> Result<Self> {
        model.validate()?;
        if fft_len < signal.len() {
            return Err(Error::invalid("FFT length shorter than the signal"));
        }
        let fs = sample_rate as f64;
        let mut spectrum: Vec<Complex64> = signal
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(fft_len)
            .collect();
        planner.plan_fft_forward(fft_len).process(&mut spectrum);
        let alpha = (0..=fft_len / 2)
            .map(|k| model.alpha_db_per_km(k as f64 * fs / fft_len as f64))
            .collect();
        Ok(Self {
            spectrum,
            alpha,
            ifft: planner.plan_fft_inverse(fft_len),
            sample_rate: fs,
            model: *model,
        })
    }

    pub fn fft_len(&self) -> usize {
        self.spectrum.len()
    }

    /// Pressure at distance `d`, first `out_len` samples of the timeline.
    pub fn render(&self, d: f64, out_len: usize) -> Result<Vec<f64>> {
        let a_div = divergence_db_with(d, self.model.reference_distance)?;
        let n = self.fft_len();
        let delay = d / self.model.speed_of_sound;
        let mut buf: Vec<Complex64> = self
            .spectrum
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                // signed frequency of bin k; the Nyquist bin is kept real
                let (bin, f_signed) = if k <= n / 2 {
                    let f = k as f64 * self.sample_rate / n as f64;
                    (k, if 2 * k == n { 0.0 } else { f })
                } else {
                    (n - k, -((n - k) as f64) * self.sample_rate / n as f64)
                };
                let atten_db = a_div + self.alpha[bin] * d / 1000.0;
                let gain = 10f64.powf(-atten_db / 20.0);
                let phase = -2.0 * PI * f_signed * delay;
                s * Complex64::from_polar(gain, phase)
            })
            .collect();
        self.ifft.process(&mut buf);
        let scale = 1.0 / n as f64;
        Ok(buf.iter().take(out_len).map(|c| c.re * scale).collect())
    }
}

/// Smallest power of two holding the signal plus `max_delay_samples` and a guard band.
pub fn fft_len_for(signal_len: usize, max_delay_samples: f64) -> usize {
    const GUARD: usize = 1024;
    (signal_len + max_delay_samples.ceil() as usize + GUARD).next_power_of_two()
}

/// Renders `signal` (Pa, referenced to the source) as received at `mic`.
///
/// The output has the same length as the input and shares its time origin,
/// so a source at 343 m starts exactly 1 s into the output.
pub fn render_source_to_mic(
    signal: &[f64],
    sample_rate: u32,
    src: Point2,
    mic: Point2,
    model: &AttenuationModel,
) -> Result<Vec<f64>> {
    let d = src.distance(mic);
    if !(d > 0.0) {
        return Err(Error::invalid("source and microphone are co-located"));
    }
    let delay = d / model.speed_of_sound * sample_rate as f64;
    let n = fft_len_for(signal.len(), delay);
    let mut planner = FftPlanner::new();
    SourceSpectrum::new(signal, sample_rate, n, model, &mut planner)?.render(d, signal.len())
}

/// Rendering knobs for a whole scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Background noise level per microphone in dB; `None` renders noiseless clips.
    pub noise_spl: Option<f64>,
    pub model: AttenuationModel,
    /// Crossfade used when looping source waveforms, seconds.
    pub crossfade: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            noise_spl: None,
            model: AttenuationModel::default(),
            crossfade: 0.05,
        }
    }
}

impl RenderOptions {
    pub fn with_noise(noise_spl: f64) -> Self {
        Self {
            noise_spl: Some(noise_spl),
            ..Self::default()
        }
    }
}

/// Renders every node of `scene` (anechoic, direct path only).
///
/// Sources are unit-RMS waveforms scaled to their level, looped to cover
/// `duration` plus the longest time of flight, and the final `duration`
/// seconds of the timeline are kept so every node hears the steady signal.
pub fn render_scene(
    scene: &Scene,
    signals: &HashMap<String, Vec<f64>>,
    opts: &RenderOptions,
) -> Result<Vec<MultichannelClip>> {
    let fs = scene.sample_rate;
    let out_len = (scene.duration * fs as f64).round() as usize;
    let max_delay = scene.max_time_of_flight() * fs as f64;
    let skip = max_delay.ceil() as usize;
    let timeline = out_len + skip;
    let xfade = (opts.crossfade * fs as f64).round() as usize;
    let n = fft_len_for(timeline, max_delay);

    let mut planner = FftPlanner::new();
    let spectra = scene
        .sources
        .iter()
        .map(|src| {
            let base = signals
                .get(&src.signal_id)
                .ok_or_else(|| Error::MissingSignal(src.signal_id.clone()))?;
            let amp = spl_to_amplitude(src.spl);
            let looped: Vec<f64> = extend_with_crossfade(base, timeline, xfade)
                .into_iter()
                .map(|v| v * amp)
                .collect();
            SourceSpectrum::new(&looped, fs, n, &opts.model, &mut planner)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut clips = scene
        .nodes
        .par_iter()
        .enumerate()
        .map(|(node_id, node)| {
            let samples = node
                .mic_positions()
                .into_iter()
                .map(|mic| {
                    let mut acc = vec![0.0; out_len];
                    for (src, spec) in scene.sources.iter().zip(&spectra) {
                        let d = src.position.distance(mic);
                        if !(d > 0.0) {
                            return Err(Error::invalid(format!(
                                "source at {:?} coincides with a microphone",
                                src.position
                            )));
                        }
                        let y = spec.render(d, timeline)?;
                        for (a, v) in acc.iter_mut().zip(&y[skip..]) {
                            *a += v;
                        }
                    }
                    Ok(acc)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MultichannelClip {
                node_id,
                samples,
                sample_rate: fs,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    if let Some(noise_spl) = opts.noise_spl {
        add_background_noise(&mut clips, noise_spl, splitmix64(scene.seed ^ 0x6E_6F69_7365));
    }
    Ok(clips)
}

/// Adds independent white Gaussian noise with RMS `spl_to_amplitude(noise_spl)`.
pub fn add_background_noise(clips: &mut [MultichannelClip], noise_spl: f64, seed: u64) {
    let sigma = spl_to_amplitude(noise_spl);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for clip in clips {
        for ch in &mut clip.samples {
            for v in ch.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
}
