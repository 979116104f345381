use num_complex::Complex64;

use super::BaselineError;

/// Square QAM with per-axis Gray labels.
///
/// A label of `k` bits splits into the first `k/2` bits (real axis) and the
/// last `k/2` bits (imaginary axis), most significant first. Axis level `i`
/// (from the most negative amplitude) carries Gray code `i ^ (i >> 1)`, so
/// 16QAM levels `[00, 01, 11, 10]` sit at `[-3, -1, 1, 3] / sqrt(10)`.
/// QPSK uses the sign convention bit 0 -> `+1`, so `00` maps to
/// `(1 + j) / sqrt(2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QamConstellation {
    order: usize,
    bits_per_axis: usize,
    /// Indexed by the integer label (first bit most significant).
    points: Vec<Complex64>,
}

impl QamConstellation {
    pub fn new(order: usize) -> Result<Self, BaselineError> {
        let bits = order.trailing_zeros() as usize;
        if order < 4 || !order.is_power_of_two() || !bits.is_multiple_of(2) {
            return Err(BaselineError::Order(order));
        }
        let m = bits / 2;
        let levels = 1usize << m;
        let scale = (3.0 / (2.0 * (order as f64 - 1.0))).sqrt();
        let amp = |label: usize| -> f64 {
            if m == 1 {
                return if label == 0 { 1.0 } else { -1.0 };
            }
            let i = gray_to_index(label);
            2.0 * i as f64 - (levels as f64 - 1.0)
        };
        let points = (0..order)
            .map(|label| {
                let xl = label >> m;
                let yl = label & (levels - 1);
                Complex64::new(amp(xl), amp(yl)) * scale
            })
            .collect();
        Ok(Self { order, bits_per_axis: m, points })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits(&self) -> usize {
        2 * self.bits_per_axis
    }

    pub fn bits_per_axis(&self) -> usize {
        self.bits_per_axis
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, label: usize) -> Complex64 {
        self.points[label]
    }

    /// Maps `bits` (each 0 or 1, first bit most significant) to a point.
    pub fn modulate(&self, bits: &[u8]) -> Result<Complex64, BaselineError> {
        if bits.len() != self.bits() {
            return Err(BaselineError::BitCount { expected: self.bits(), got: bits.len() });
        }
        Ok(self.points[bits_to_label(bits)])
    }

    /// Label of the nearest point.
    pub fn demodulate(&self, y: Complex64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (label, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_sqr();
            if d < best.0 {
                best = (d, label);
            }
        }
        best.1
    }

    pub fn mean_power(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.order as f64
    }

    pub fn max_amplitude(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

fn gray_to_index(mut g: usize) -> usize {
    let mut i = g;
    while g > 0 {
        g >>= 1;
        i ^= g;
    }
    i
}

pub fn bits_to_label(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | (b & 1) as usize)
}

pub fn label_to_bits(label: usize, k: usize) -> Vec<u8> {
    (0..k).map(|i| ((label >> (k - 1 - i)) & 1) as u8).collect()
}
