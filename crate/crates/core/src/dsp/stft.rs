use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// One-sided spectra of Hamming-windowed frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Stft {
    /// `frames[t][k]` for frame t and bin k in `0..=frame_len/2`.
    pub frames: Vec<Vec<Complex64>>,
    pub frame_len: usize,
    pub hop: usize,
}

impl Stft {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Centre frequency of bin `k` in Hz.
    pub fn bin_freq(&self, k: usize, sample_rate: f64) -> f64 {
        k as f64 * sample_rate / self.frame_len as f64
    }
}

/// `floor((L - frame_len)/hop) + 1` frames of `frame_len/2 + 1` bins each.
pub fn stft(signal: &[f64], frame_len: usize, hop: usize) -> Result<Stft> {
    if frame_len == 0 || hop == 0 {
        return Err(Error::invalid("frame length and hop must be positive"));
    }
    if frame_len > signal.len() {
        return Err(Error::invalid(format!(
            "frame length {frame_len} exceeds signal length {}",
            signal.len()
        )));
    }
    let window = hamming(frame_len);
    let fft = FftPlanner::new().plan_fft_forward(frame_len);
    let num_frames = (signal.len() - frame_len) / hop + 1;
    let bins = frame_len / 2 + 1;
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let frames = (0..num_frames)
        .map(|t| {
            let start = t * hop;
            let mut buf: Vec<Complex64> = signal[start..start + frame_len]
                .iter()
                .zip(&window)
                .map(|(x, w)| Complex64::new(x * w, 0.0))
                .collect();
            fft.process_with_scratch(&mut buf, &mut scratch);
            buf.truncate(bins);
            buf
        })
        .collect();
    Ok(Stft {
        frames,
        frame_len,
        hop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_and_bin_counts() {
        let s = stft(&vec![0.0; 8000], 256, 128).unwrap();
        assert_eq!(s.num_frames(), 61);
        assert_eq!(s.num_bins(), 129);
        assert!(s.frames.iter().all(|f| f.len() == 129));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(stft(&[0.0; 10], 0, 1).is_err());
        assert!(stft(&[0.0; 10], 4, 0).is_err());
        assert!(stft(&[0.0; 10], 16, 4).is_err());
    }

    #[test]
    fn bin_centred_tone_peaks_in_its_bin() {
        let k0 = 20;
        let sig: Vec<f64> = (0..4000)
            .map(|i| (2.0 * PI * k0 as f64 * i as f64 / 256.0).cos())
            .collect();
        let s = stft(&sig, 256, 128).unwrap();
        for frame in &s.frames {
            let arg = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .unwrap()
                .0;
            assert_eq!(arg, k0);
        }
    }

    #[test]
    fn hamming_endpoints() {
        let w = hamming(5);
        assert!((w[0] - 0.08).abs() < 1e-12);
        assert!((w[2] - 1.0).abs() < 1e-12);
        assert!((w[4] - 0.08).abs() < 1e-12);
    }
}
