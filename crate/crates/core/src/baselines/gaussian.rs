use num_complex::Complex64;

/// Uncoded transmission of two unit-variance reals on one complex use:
/// `x = sqrt(P_max / 2) (d1 + j d2)`, so the symbol power is `P_max` on
/// average, and a per-dimension linear MMSE receiver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncodedGaussian {
    pub p_max: f64,
}

impl UncodedGaussian {
    pub fn per_dim_power(&self) -> f64 {
        self.p_max / 2.0
    }

    pub fn encode(&self, d: [f64; 2]) -> Complex64 {
        Complex64::new(d[0], d[1]) * self.per_dim_power().sqrt()
    }

    /// `noise_var` is the complex noise variance; each dimension sees half.
    pub fn estimate(&self, y: Complex64, noise_var: f64) -> [f64; 2] {
        let g = mmse_gain(self.per_dim_power(), noise_var / 2.0);
        [g * y.re, g * y.im]
    }

    /// Per-variable MSE, `1 / (1 + P_dim / sigma_dim^2)`.
    pub fn mse(&self, noise_var: f64) -> f64 {
        scalar_mmse(self.per_dim_power(), noise_var / 2.0)
    }
}

/// One unit-variance real repeated on both dimensions,
/// `x = sqrt(P_max / 2) (d + j d)`, combined with MMSE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RepetitionGaussian {
    pub p_max: f64,
}

impl RepetitionGaussian {
    pub fn per_dim_power(&self) -> f64 {
        self.p_max / 2.0
    }

    pub fn encode(&self, d: f64) -> Complex64 {
        Complex64::new(d, d) * self.per_dim_power().sqrt()
    }

    pub fn estimate(&self, y: Complex64, noise_var: f64) -> f64 {
        let (p, s2) = (self.per_dim_power(), noise_var / 2.0);
        if s2 == 0.0 {
            return (y.re + y.im) / (2.0 * p.sqrt());
        }
        p.sqrt() * (y.re + y.im) / (2.0 * p + s2)
    }

    /// `1 / (1 + 2 P_dim / sigma_dim^2)`.
    pub fn mse(&self, noise_var: f64) -> f64 {
        scalar_mmse(2.0 * self.per_dim_power(), noise_var / 2.0)
    }
}

/// Linear MMSE gain for `y = sqrt(p) d + n`, `d ~ N(0, 1)`, `n ~ N(0, s2)`.
pub fn mmse_gain(p: f64, s2: f64) -> f64 {
    p.sqrt() / (p + s2)
}

/// MMSE of a unit-variance Gaussian seen at signal power `p`, noise `s2`.
pub fn scalar_mmse(p: f64, s2: f64) -> f64 {
    if s2 == 0.0 {
        return 0.0;
    }
    1.0 / (1.0 + p / s2)
}
