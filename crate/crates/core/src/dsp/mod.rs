//! Short-time Fourier analysis and the gammatone filterbank.

mod gammatone;
mod stft;

pub use gammatone::{
    erb_center_frequencies, erb_rate, gtgram, GammatoneBank, GtgramFeature, GTGRAM_EPSILON,
};
pub use stft::{hamming, stft, Stft};
