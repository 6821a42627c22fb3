//! Fourth-order gammatone filterbank on the ERB-rate scale and the
//! log-energy gammatonegram built on it.
//!
//! Each channel is the complex gammatone
//! `t^(n-1) e^(-2πbt) e^(j2πf_c t)`, whose real part is the classic
//! `t^(n-1) e^(-2πbt) cos(2πf_c t)` impulse response. Channel energy is
//! taken from the complex output, which keeps the passband centred on f_c
//! even when the bandwidth is comparable to f_c (low channels) or the band
//! touches Nyquist.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::stft::hamming;
use crate::error::{Error, Result};

pub const GAMMATONE_ORDER: i32 = 4;
/// Log floor for gammatonegram energies, Pa².
pub const GTGRAM_EPSILON: f64 = 1e-12;
/// Impulse responses are truncated once the envelope falls below this
/// fraction of its peak.
const TRUNCATION: f64 = 1e-5;

/// ERB-rate of `f` Hz: `21.4·log10(1 + 0.00437·f)`.
pub fn erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

fn inverse_erb_rate(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

/// `count` centre frequencies uniformly spaced in ERB-rate from `fmin` to `fmax`.
pub fn erb_center_frequencies(count: usize, fmin: f64, fmax: f64) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::invalid("need at least 2 gammatone channels"));
    }
    if !(fmin > 0.0 && fmin < fmax && fmax.is_finite()) {
        return Err(Error::invalid(format!(
            "bad frequency range [{fmin}, {fmax}]"
        )));
    }
    let (lo, hi) = (erb_rate(fmin), erb_rate(fmax));
    let step = (hi - lo) / (count - 1) as f64;
    let mut out: Vec<f64> = (0..count)
        .map(|i| inverse_erb_rate(lo + step * i as f64))
        .collect();
    // pin the endpoints exactly
    out[0] = fmin;
    out[count - 1] = fmax;
    Ok(out)
}

/// Equivalent bandwidth parameter `b = 1.019·(24.7 + 0.108·f_c)`.
pub fn gammatone_bandwidth(fc: f64) -> f64 {
    1.019 * (24.7 + 0.108 * fc)
}

pub struct GammatoneBank {
    pub center_freqs: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub order: i32,
    pub sample_rate: u32,
    taps: Vec<Vec<Complex64>>,
    spectra: Mutex<HashMap<usize, Arc<Vec<Vec<Complex64>>>>>,
}

impl std::fmt::Debug for GammatoneBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GammatoneBank")
            .field("channels", &self.num_channels())
            .field("order", &self.order)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl Default for GammatoneBank {
    /// 64 channels from 20 Hz to 4 kHz at 8 kHz.
    fn default() -> Self {
        Self::new(64, 20.0, 4000.0, crate::SAMPLE_RATE).expect("default bank parameters are valid")
    }
}

impl GammatoneBank {
    pub fn new(num_channels: usize, fmin: f64, fmax: f64, sample_rate: u32) -> Result<Self> {
        if fmax > sample_rate as f64 / 2.0 {
            return Err(Error::invalid(format!(
                "fmax {fmax} Hz above Nyquist for {sample_rate} Hz"
            )));
        }
        let center_freqs = erb_center_frequencies(num_channels, fmin, fmax)?;
        let bandwidths: Vec<f64> = center_freqs.iter().map(|&f| gammatone_bandwidth(f)).collect();
        let taps = center_freqs
            .iter()
            .zip(&bandwidths)
            .map(|(&fc, &b)| impulse_response(fc, b, sample_rate as f64))
            .collect();
        Ok(Self {
            center_freqs,
            bandwidths,
            order: GAMMATONE_ORDER,
            sample_rate,
            taps,
            spectra: Mutex::new(HashMap::new()),
        })
    }

    pub fn num_channels(&self) -> usize {
        self.center_freqs.len()
    }

    /// FIR taps of channel `ch` (complex; the real part is the gammatone).
    pub fn taps(&self, ch: usize) -> &[Complex64] {
        &self.taps[ch]
    }

    /// Magnitude response of channel `ch` at `f` Hz (DTFT of the taps).
    pub fn magnitude_response(&self, ch: usize, f: f64) -> f64 {
        let w = -2.0 * PI * f / self.sample_rate as f64;
        self.taps[ch]
            .iter()
            .enumerate()
            .map(|(i, &g)| g * Complex64::from_polar(1.0, w * i as f64))
            .sum::<Complex64>()
            .norm()
    }

    fn filter_spectra(&self, nfft: usize, planner: &mut FftPlanner<f64>) -> Arc<Vec<Vec<Complex64>>> {
        let mut cache = self.spectra.lock().expect("spectra cache poisoned");
        cache
            .entry(nfft)
            .or_insert_with(|| {
                let fft = planner.plan_fft_forward(nfft);
                Arc::new(
                    self.taps
                        .iter()
                        .map(|t| {
                            let mut buf = t.clone();
                            buf.resize(nfft, Complex64::new(0.0, 0.0));
                            fft.process(&mut buf);
                            buf
                        })
                        .collect(),
                )
            })
            .clone()
    }

    /// Complex channel outputs, each the same length as `signal` (causal,
    /// tail discarded).
    pub fn filter(&self, signal: &[f64]) -> Vec<Vec<Complex64>> {
        let max_taps = self.taps.iter().map(Vec::len).max().unwrap_or(1);
        let nfft = (signal.len() + max_taps).next_power_of_two();
        let mut planner = FftPlanner::new();
        let spectra = self.filter_spectra(nfft, &mut planner);
        let mut x: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        x.resize(nfft, Complex64::new(0.0, 0.0));
        planner.plan_fft_forward(nfft).process(&mut x);
        let ifft = planner.plan_fft_inverse(nfft);
        let scale = 1.0 / nfft as f64;
        spectra
            .iter()
            .map(|h| {
                let mut y: Vec<Complex64> = x.iter().zip(h).map(|(a, b)| a * b).collect();
                ifft.process(&mut y);
                y.truncate(signal.len());
                y.iter_mut().for_each(|v| *v *= scale);
                y
            })
            .collect()
    }
}

/// Truncated complex gammatone normalized to unit gain at `fc`.
fn impulse_response(fc: f64, b: f64, fs: f64) -> Vec<Complex64> {
    let n1 = GAMMATONE_ORDER - 1;
    let envelope = |t: f64| t.powi(n1) * (-2.0 * PI * b * t).exp();
    let peak = envelope(n1 as f64 / (2.0 * PI * b));
    let t_peak = n1 as f64 / (2.0 * PI * b);
    let mut taps = Vec::new();
    let mut i = 0usize;
    loop {
        let t = i as f64 / fs;
        let e = envelope(t);
        if t > t_peak && e < TRUNCATION * peak {
            break;
        }
        taps.push(Complex64::from_polar(e, 2.0 * PI * fc * t));
        i += 1;
    }
    let w = -2.0 * PI * fc / fs;
    let gain = taps
        .iter()
        .enumerate()
        .map(|(i, &g)| g * Complex64::from_polar(1.0, w * i as f64))
        .sum::<Complex64>()
        .norm();
    taps.iter_mut().for_each(|g| *g /= gain);
    taps
}

/// Log-compressed gammatone energies, D frames × H channels.
#[derive(Debug, Clone, PartialEq)]
pub struct GtgramFeature {
    pub node_id: usize,
    /// `matrix[d][h]`.
    pub matrix: Vec<Vec<f64>>,
    pub frame_dur: f64,
    pub hop: f64,
}

impl GtgramFeature {
    pub fn num_frames(&self) -> usize {
        self.matrix.len()
    }

    pub fn num_channels(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }
}

/// Frames each channel's output energy `|y|²` under a Hamming window and
/// takes `ln(ε + E)`. Defaults: 100 ms frames, 50 ms hop.
pub fn gtgram(
    signal: &[f64],
    bank: &GammatoneBank,
    frame_dur: f64,
    hop: f64,
    node_id: usize,
) -> Result<GtgramFeature> {
    if signal.is_empty() {
        return Err(Error::invalid("empty signal"));
    }
    let fs = bank.sample_rate as f64;
    let frame_len = (frame_dur * fs).round() as usize;
    let hop_len = (hop * fs).round() as usize;
    if frame_len == 0 || hop_len == 0 {
        return Err(Error::invalid("frame and hop must span at least one sample"));
    }
    if signal.len() < frame_len {
        return Err(Error::invalid(format!(
            "signal of {} samples shorter than one {frame_len}-sample frame",
            signal.len()
        )));
    }
    let window = hamming(frame_len);
    let num_frames = (signal.len() - frame_len) / hop_len + 1;
    let channels = bank.filter(signal);
    let mut matrix = vec![vec![0.0; bank.num_channels()]; num_frames];
    for (h, y) in channels.iter().enumerate() {
        for (d, row) in matrix.iter_mut().enumerate() {
            let start = d * hop_len;
            let energy: f64 = y[start..start + frame_len]
                .iter()
                .zip(&window)
                .map(|(v, w)| w * v.norm_sqr())
                .sum();
            row[h] = (GTGRAM_EPSILON + energy).ln();
        }
    }
    Ok(GtgramFeature {
        node_id,
        matrix,
        frame_dur,
        hop,
    })
}
