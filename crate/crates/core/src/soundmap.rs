//! Sub-band SRP-PHAT soundmaps: steered response power of each node's
//! circular array over a grid of bearings, split into frequency sub-bands.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::dsp::{stft, Stft};
use crate::error::{Error, Result};
use crate::propagate::MultichannelClip;
use crate::scene::MicrophoneArray;
use crate::SPEED_OF_SOUND;

/// Guard added to the PHAT denominator so silence does not divide by zero.
pub const PHAT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SoundmapConfig {
    /// Sub-band edges in Hz (F + 1 values, increasing).
    pub subband_edges: Vec<f64>,
    /// Steering bearings in degrees.
    pub angles: Vec<f64>,
    pub frame_len: usize,
    pub hop: usize,
    pub speed_of_sound: f64,
}

impl Default for SoundmapConfig {
    /// 6 equal-width bands over 20–4000 Hz, 1° steps, 256-sample frames at 50 % overlap.
    fn default() -> Self {
        Self {
            subband_edges: linear_subband_edges(20.0, 4000.0, 6),
            angles: (0..360).map(f64::from).collect(),
            frame_len: 256,
            hop: 128,
            speed_of_sound: SPEED_OF_SOUND,
        }
    }
}

impl SoundmapConfig {
    pub fn num_subbands(&self) -> usize {
        self.subband_edges.len().saturating_sub(1)
    }

    fn validate(&self) -> Result<()> {
        if self.subband_edges.len() < 2 || self.subband_edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("sub-band edges must be increasing, at least 2 values"));
        }
        if self.angles.is_empty() {
            return Err(Error::invalid("no steering angles"));
        }
        if self.frame_len < 2 || self.hop == 0 {
            return Err(Error::invalid("bad STFT frame/hop"));
        }
        Ok(())
    }
}

/// `count` equal-width bands between `fmin` and `fmax`.
pub fn linear_subband_edges(fmin: f64, fmax: f64, count: usize) -> Vec<f64> {
    let step = (fmax - fmin) / count as f64;
    let mut edges: Vec<f64> = (0..=count).map(|i| fmin + step * i as f64).collect();
    edges[count] = fmax;
    edges
}

/// Far-field delay of each microphone relative to the array centre for a
/// plane wave arriving from bearing `theta_deg`: `-(r/c)·cos(θ - φ_u)`.
pub fn steering_delays(array: &MicrophoneArray, theta_deg: f64, speed_of_sound: f64) -> Vec<f64> {
    let theta = theta_deg.to_radians();
    array
        .mic_angles
        .iter()
        .map(|phi| -(array.radius / speed_of_sound) * (theta - phi.to_radians()).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoundmapFeature {
    pub node_id: usize,
    /// Frame-averaged steered power, `raw[f][u]`, before normalization.
    pub raw: Vec<Vec<f64>>,
    /// `raw` min-max normalized to [0, 1] per sub-band.
    pub map: Vec<Vec<f64>>,
    pub subband_edges: Vec<f64>,
    pub angles: Vec<f64>,
}

impl SoundmapFeature {
    pub fn from_raw(
        node_id: usize,
        raw: Vec<Vec<f64>>,
        subband_edges: Vec<f64>,
        angles: Vec<f64>,
    ) -> Self {
        let map = raw.iter().map(|row| normalize_row(row)).collect();
        Self {
            node_id,
            raw,
            map,
            subband_edges,
            angles,
        }
    }

    pub fn num_subbands(&self) -> usize {
        self.raw.len()
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    /// Raw power summed over all sub-bands.
    pub fn full_band(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_angles()];
        for row in &self.raw {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

/// Shifts a row so its minimum is 0 and scales its maximum to 1; a flat
/// row maps to all zeros.
fn normalize_row(row: &[f64]) -> Vec<f64> {
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if !(span > 0.0) || !span.is_finite() {
        return vec![0.0; row.len()];
    }
    row.iter().map(|v| (v - min) / span).collect()
}

/// SRP-PHAT soundmap of one node.
///
/// For every microphone pair the PHAT-weighted cross-spectrum
/// `X_u X_v* / (|X_u X_v*| + ε)` is averaged over STFT frames, then steered
/// to each bearing and the real part summed over the bins of each sub-band.
pub fn srp_phat_map(
    clip: &MultichannelClip,
    array: &MicrophoneArray,
    cfg: &SoundmapConfig,
) -> Result<SoundmapFeature> {
    cfg.validate()?;
    let m = clip.num_channels();
    if m < 2 {
        return Err(Error::TooFewChannels(m));
    }
    if m != array.num_mics() {
        return Err(Error::MismatchedNodes(format!(
            "clip has {m} channels, array has {} microphones",
            array.num_mics()
        )));
    }
    let spectra: Vec<Stft> = clip
        .samples
        .iter()
        .map(|ch| stft(ch, cfg.frame_len, cfg.hop))
        .collect::<Result<_>>()?;
    let fs = clip.sample_rate as f64;
    let df = fs / cfg.frame_len as f64;
    let num_frames = spectra[0].num_frames() as f64;
    let nbands = cfg.num_subbands();

    // bins grouped by sub-band; the top edge is inclusive
    let fmax = *cfg.subband_edges.last().unwrap();
    let bands: Vec<Vec<usize>> = (0..nbands)
        .map(|b| {
            let (lo, hi) = (cfg.subband_edges[b], cfg.subband_edges[b + 1]);
            (0..spectra[0].num_bins())
                .filter(|&k| {
                    let f = k as f64 * df;
                    f >= lo && (f < hi || (b == nbands - 1 && f <= fmax))
                })
                .collect()
        })
        .collect();

    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|u| (u + 1..m).map(move |v| (u, v)))
        .collect();
    let cross: Vec<Vec<Complex64>> = pairs
        .iter()
        .map(|&(u, v)| {
            let mut acc = vec![Complex64::new(0.0, 0.0); spectra[0].num_bins()];
            for (fu, fv) in spectra[u].frames.iter().zip(&spectra[v].frames) {
                for (a, (xu, xv)) in acc.iter_mut().zip(fu.iter().zip(fv)) {
                    let c = xu * xv.conj();
                    *a += c / (c.norm() + PHAT_EPSILON);
                }
            }
            acc.iter_mut().for_each(|a| *a /= num_frames);
            acc
        })
        .collect();

    let columns: Vec<Vec<f64>> = cfg
        .angles
        .par_iter()
        .map(|&theta| {
            let tau = steering_delays(array, theta, cfg.speed_of_sound);
            let mut power = vec![0.0; nbands];
            for (&(u, v), r) in pairs.iter().zip(&cross) {
                let dtau = tau[u] - tau[v];
                let step = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * df * dtau);
                for (p, bins) in power.iter_mut().zip(&bands) {
                    let Some(&first) = bins.first() else { continue };
                    let mut rot = Complex64::from_polar(
                        1.0,
                        2.0 * std::f64::consts::PI * first as f64 * df * dtau,
                    );
                    let mut acc = 0.0;
                    for &k in bins {
                        acc += (r[k] * rot).re;
                        rot *= step;
                    }
                    *p += acc;
                }
            }
            power
        })
        .collect();

    let raw = (0..nbands)
        .map(|b| columns.iter().map(|col| col[b]).collect())
        .collect();
    Ok(SoundmapFeature::from_raw(
        clip.node_id,
        raw,
        cfg.subband_edges.clone(),
        cfg.angles.clone(),
    ))
}

/// Soundmaps for all nodes, in node order (N × F × U).
pub fn soundmap_features(
    clips: &[MultichannelClip],
    arrays: &[MicrophoneArray],
    cfg: &SoundmapConfig,
) -> Result<Vec<SoundmapFeature>> {
    if clips.len() != arrays.len() {
        return Err(Error::MismatchedNodes(format!(
            "{} clips for {} arrays",
            clips.len(),
            arrays.len()
        )));
    }
    clips
        .iter()
        .zip(arrays)
        .map(|(clip, array)| srp_phat_map(clip, array, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use crate::scene::make_uca;

    #[test]
    fn steering_delay_values() {
        let a = make_uca(8, 0.11, Point2::default()).unwrap();
        let r_c = 0.11 / 343.0;
        for u in 0..8 {
            let phi = a.mic_angles[u];
            assert!((steering_delays(&a, phi, 343.0)[u] + r_c).abs() < 1e-15);
            assert!(steering_delays(&a, (phi + 90.0) % 360.0, 343.0)[u].abs() < 1e-15);
            assert!((steering_delays(&a, (phi + 180.0) % 360.0, 343.0)[u] - r_c).abs() < 1e-15);
        }
        assert!((r_c - 3.207e-4).abs() < 1e-7);
    }

    #[test]
    fn default_config_is_6_by_360() {
        let c = SoundmapConfig::default();
        assert_eq!(c.num_subbands(), 6);
        assert_eq!(c.angles.len(), 360);
        assert_eq!(c.subband_edges[0], 20.0);
        assert_eq!(c.subband_edges[6], 4000.0);
    }

    #[test]
    fn silence_gives_flat_map() {
        let a = make_uca(8, 0.11, Point2::default()).unwrap();
        let clip = MultichannelClip {
            node_id: 0,
            samples: vec![vec![0.0; 8000]; 8],
            sample_rate: 8000,
        };
        let f = srp_phat_map(&clip, &a, &SoundmapConfig::default()).unwrap();
        for row in &f.map {
            let first = row[0];
            assert!(row.iter().all(|v| (v - first).abs() < 1e-6));
        }
    }

    #[test]
    fn single_channel_is_rejected() {
        let a = make_uca(8, 0.11, Point2::default()).unwrap();
        let clip = MultichannelClip {
            node_id: 0,
            samples: vec![vec![0.0; 8000]; 1],
            sample_rate: 8000,
        };
        assert!(matches!(
            srp_phat_map(&clip, &a, &SoundmapConfig::default()),
            Err(Error::TooFewChannels(1))
        ));
    }

    #[test]
    fn mismatched_node_lists() {
        let a = make_uca(8, 0.11, Point2::default()).unwrap();
        assert!(matches!(
            soundmap_features(&[], &[a], &SoundmapConfig::default()),
            Err(Error::MismatchedNodes(_))
        ));
    }
}
