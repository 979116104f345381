//! Classical reference schemes: Gray-coded QAM, multi-use QAM schemes with
//! minimum-distance decoding, linear transmission of Gaussian sources, and
//! amplifier power scaling with pre-distortion.

mod gaussian;
mod predistortion;
mod qam;
mod schemes;

use thiserror::Error;

pub use gaussian::{mmse_gain, scalar_mmse, RepetitionGaussian, UncodedGaussian};
pub use predistortion::{invert_amplitude, power_scale, predistort};
pub use qam::{bits_to_label, label_to_bits, QamConstellation};
pub use schemes::{
    bit_error, payload_bits, payload_label, ChannelUse, DecodeMetric, JointDecoder, MultiUseScheme, INTERLEAVE_8,
    SCHEME_NAMES,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("unsupported QAM order {0}")]
    Order(usize),
    #[error("expected {expected} bits, got {got}")]
    BitCount { expected: usize, got: usize },
    #[error("unknown scheme {0:?}")]
    UnknownScheme(String),
    #[error("invalid scheme: {0}")]
    Scheme(String),
    #[error("amplitude {amplitude} outside the invertible range [0, {max}]")]
    OutOfRange { amplitude: f64, max: f64 },
}

/// Standard normal tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Exact bit error rate of Gray-coded 16QAM with unit mean power over
/// complex AWGN of variance `noise_var`.
pub fn gray16_ber(noise_var: f64) -> f64 {
    let a = 1.0 / 10f64.sqrt();
    let s = (noise_var / 2.0).sqrt();
    0.25 * (3.0 * q_function(a / s) + 2.0 * q_function(3.0 * a / s) - q_function(5.0 * a / s))
}

/// Exact bit error rate of Gray QPSK (unit power): `Q(sqrt(2 * SNR_dim))`
/// with `SNR_dim = (1/2) / (noise_var / 2)`.
pub fn qpsk_ber(noise_var: f64) -> f64 {
    q_function((1.0 / noise_var).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::snr_to_noise_var;

    #[test]
    fn q_function_values() {
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
        assert!((q_function(1.0) - 0.158_655_253_931_457).abs() < 1e-12);
        assert!((q_function(3.0) - 0.001_349_898_031_630_1).abs() < 1e-12);
    }

    #[test]
    fn ber_formulas() {
        // high-noise limit: every bit is a coin flip
        assert!((gray16_ber(1e12) - 0.5).abs() < 1e-6);
        assert!(gray16_ber(snr_to_noise_var(30.0, 1.0)) < 1e-12);
        assert!((qpsk_ber(snr_to_noise_var(0.0, 1.0)) - q_function(1.0)).abs() < 1e-15);
    }
}
