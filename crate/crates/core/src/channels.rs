//! Channel simulators: AWGN with fixed complex fading, a travelling-wave
//! tube amplifier (TWTA) in front of AWGN, and multiple-access superposition.
//!
//! Symbols travel on the tape as `[batch, 2]` tensors holding `(re, im)`.
//! Noise is drawn outside the tape and enters as a constant, so gradients
//! flow through the signal path only.
//!
//! SNR convention: `SNR = P_max / sigma^2` with `sigma^2` the total complex
//! noise variance, i.e. `sigma^2 / 2` per real dimension.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, PairMap, Tape, Tensor, Var};
use crate::rng::standard_normal;

pub type ComplexSymbol = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("noise variance must be non-negative, got {0}")]
    NegativeVariance(f64),
    #[error("expected {expected} transmitters, got {got}")]
    UserCount { expected: usize, got: usize },
    #[error("fading coefficient must be non-zero")]
    ZeroFading,
    #[error("TWTA parameters must be positive")]
    InvalidTwta,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Noise variance of the complex AWGN for a given SNR in dB.
pub fn snr_to_noise_var(snr_db: f64, p_max: f64) -> f64 {
    p_max / 10f64.powf(snr_db / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Saleh-type amplifier: `A(r) = a_r r / (1 + b_r r^2)`,
/// `Psi(r) = a_p r^2 / (1 + b_p r^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwtaParams {
    pub alpha_rho: f64,
    pub beta_rho: f64,
    pub alpha_psi: f64,
    pub beta_psi: f64,
}

impl Default for TwtaParams {
    fn default() -> Self {
        Self { alpha_rho: 2.1587, beta_rho: 1.1517, alpha_psi: 4.003, beta_psi: 9.1040 }
    }
}

impl TwtaParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let all = [self.alpha_rho, self.beta_rho, self.alpha_psi, self.beta_psi];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(ChannelError::InvalidTwta)
        }
    }

    pub fn amplitude(&self, rho: f64) -> f64 {
        self.alpha_rho * rho / (1.0 + self.beta_rho * rho * rho)
    }

    pub fn phase(&self, rho: f64) -> f64 {
        self.alpha_psi * rho * rho / (1.0 + self.beta_psi * rho * rho)
    }

    /// Input amplitude at which `A` peaks; `A` is invertible below it.
    pub fn saturation_input(&self) -> f64 {
        1.0 / self.beta_rho.sqrt()
    }

    /// Largest output amplitude, `A(saturation_input())`.
    pub fn peak_amplitude(&self) -> f64 {
        self.alpha_rho / (2.0 * self.beta_rho.sqrt())
    }

    pub fn distort(&self, x: ComplexSymbol) -> ComplexSymbol {
        let s = x.norm_sqr();
        let gain = self.alpha_rho / (1.0 + self.beta_rho * s);
        let psi = self.alpha_psi * s / (1.0 + self.beta_psi * s);
        x * gain * Complex64::from_polar(1.0, psi)
    }
}

impl PairMap for TwtaParams {
    // out = g(s) R(Psi(s)) x with s = |x|^2, g(s) = A(r)/r. Both g and Psi
    // are smooth in s, so the Jacobian at the origin is alpha_rho * I.
    fn eval(&self, x: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let [a, b] = x;
        let s = a * a + b * b;
        let den_g = 1.0 + self.beta_rho * s;
        let g = self.alpha_rho / den_g;
        let dg_ds = -self.alpha_rho * self.beta_rho / (den_g * den_g);
        let den_p = 1.0 + self.beta_psi * s;
        let psi = self.alpha_psi * s / den_p;
        let dpsi_ds = self.alpha_psi / (den_p * den_p);
        let (sn, cs) = psi.sin_cos();
        // R x and J R x (rotation by a further 90 degrees)
        let rx = [cs * a - sn * b, sn * a + cs * b];
        let jrx = [-rx[1], rx[0]];
        let out = [g * rx[0], g * rx[1]];
        let mut jac = [[0.0; 2]; 2];
        let grad_s = [2.0 * a, 2.0 * b];
        let rot = [[cs, -sn], [sn, cs]];
        for i in 0..2 {
            for j in 0..2 {
                jac[i][j] = g * rot[i][j] + rx[i] * dg_ds * grad_s[j] + g * jrx[i] * dpsi_ds * grad_s[j];
            }
        }
        (out, jac)
    }

    fn name(&self) -> &'static str {
        "twta"
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChannelKind {
    Awgn,
    TwtaAwgn(TwtaParams),
    MacAwgn,
}

/// Channel model plus one fading coefficient per transmitter.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    pub fading: Vec<Complex64>,
}

impl ChannelSpec {
    pub fn awgn() -> Self {
        Self { kind: ChannelKind::Awgn, fading: vec![Complex64::new(1.0, 0.0)] }
    }

    pub fn twta(params: TwtaParams) -> Self {
        Self { kind: ChannelKind::TwtaAwgn(params), fading: vec![Complex64::new(1.0, 0.0)] }
    }

    pub fn mac(users: usize) -> Self {
        Self { kind: ChannelKind::MacAwgn, fading: vec![Complex64::new(1.0, 0.0); users] }
    }

    pub fn users(&self) -> usize {
        self.fading.len()
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.fading.is_empty() {
            return Err(ChannelError::UserCount { expected: 1, got: 0 });
        }
        if self.fading.iter().any(|h| h.norm() == 0.0 || !h.is_finite()) {
            return Err(ChannelError::ZeroFading);
        }
        match self.kind {
            ChannelKind::Awgn | ChannelKind::TwtaAwgn(_) if self.fading.len() != 1 => {
                Err(ChannelError::UserCount { expected: 1, got: self.fading.len() })
            }
            ChannelKind::TwtaAwgn(p) => p.validate(),
            _ => Ok(()),
        }
    }

    /// Passes one channel use through the channel on the tape. `normals` is
    /// a `[batch, 2]` block of standard normal draws.
    pub fn apply(&self, tape: &mut Tape, xs: &[Var], noise_var: f64, normals: &Tensor) -> Result<Var, ChannelError> {
        if xs.len() != self.fading.len() {
            return Err(ChannelError::UserCount { expected: self.fading.len(), got: xs.len() });
        }
        match &self.kind {
            ChannelKind::TwtaAwgn(p) => {
                let amp = twta_distort(tape, xs[0], *p)?;
                awgn_apply_with(tape, amp, self.fading[0], noise_var, normals)
            }
            ChannelKind::Awgn | ChannelKind::MacAwgn => mac_combine_with(tape, xs, &self.fading, noise_var, normals),
        }
    }
}

fn fading_matrix(h: Complex64) -> Tensor {
    // (re, im) row vector times this matrix is h * x.
    Tensor::from_rows(&[[h.re, h.im], [-h.im, h.re]])
}

fn scaled_by_fading(tape: &mut Tape, x: Var, h: Complex64) -> Result<Var, ChannelError> {
    if h == Complex64::new(1.0, 0.0) {
        return Ok(x);
    }
    let m = tape.constant(fading_matrix(h))?;
    Ok(tape.matmul(x, m)?)
}

fn add_noise(tape: &mut Tape, y: Var, noise_var: f64, normals: &Tensor) -> Result<Var, ChannelError> {
    if noise_var < 0.0 || noise_var.is_nan() {
        return Err(ChannelError::NegativeVariance(noise_var));
    }
    if noise_var == 0.0 {
        return Ok(y);
    }
    let sd = (noise_var / 2.0).sqrt();
    let n = tape.constant(normals.map(|u| u * sd))?;
    Ok(tape.add(y, n)?)
}

/// `y = h x + n` with pre-drawn standard normals.
pub fn awgn_apply_with(
    tape: &mut Tape,
    x: Var,
    h: Complex64,
    noise_var: f64,
    normals: &Tensor,
) -> Result<Var, ChannelError> {
    let hx = scaled_by_fading(tape, x, h)?;
    add_noise(tape, hx, noise_var, normals)
}

/// `y = h x + n` drawing the noise from `rng`.
pub fn awgn_apply<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    h: Complex64,
    noise_var: f64,
    rng: &mut R,
) -> Result<Var, ChannelError> {
    let normals = draw_normals(rng, tape.value(x).rows());
    awgn_apply_with(tape, x, h, noise_var, &normals)
}

/// Amplifier distortion of every symbol, differentiable in `x`.
pub fn twta_distort(tape: &mut Tape, x: Var, params: TwtaParams) -> Result<Var, ChannelError> {
    let map: Arc<dyn PairMap> = Arc::new(params);
    Ok(tape.pair_map(x, &map)?)
}

/// `y = sum_m h_m x_m + n` with a single noise draw.
pub fn mac_combine_with(
    tape: &mut Tape,
    xs: &[Var],
    hs: &[Complex64],
    noise_var: f64,
    normals: &Tensor,
) -> Result<Var, ChannelError> {
    if xs.is_empty() || xs.len() != hs.len() {
        return Err(ChannelError::UserCount { expected: hs.len().max(1), got: xs.len() });
    }
    let mut y = scaled_by_fading(tape, xs[0], hs[0])?;
    for (&x, &h) in xs.iter().zip(hs).skip(1) {
        let hx = scaled_by_fading(tape, x, h)?;
        y = tape.add(y, hx)?;
    }
    add_noise(tape, y, noise_var, normals)
}

pub fn mac_combine<R: Rng + ?Sized>(
    tape: &mut Tape,
    xs: &[Var],
    hs: &[Complex64],
    noise_var: f64,
    rng: &mut R,
) -> Result<Var, ChannelError> {
    let rows = xs.first().map_or(0, |&x| tape.value(x).rows());
    let normals = draw_normals(rng, rows);
    mac_combine_with(tape, xs, hs, noise_var, &normals)
}

/// `[rows, 2]` standard normals, row-major.
pub fn draw_normals<R: Rng + ?Sized>(rng: &mut R, rows: usize) -> Tensor {
    Tensor::new(vec![rows, 2], crate::rng::normals(rng, rows * 2)).expect("shape")
}

/// Off-tape `y = h x + n` on complex samples.
pub fn awgn_complex<R: Rng + ?Sized>(
    xs: &[ComplexSymbol],
    h: Complex64,
    noise_var: f64,
    rng: &mut R,
) -> Result<Vec<ComplexSymbol>, ChannelError> {
    if noise_var < 0.0 || noise_var.is_nan() {
        return Err(ChannelError::NegativeVariance(noise_var));
    }
    let sd = (noise_var / 2.0).sqrt();
    Ok(xs
        .iter()
        .map(|&x| {
            let re = standard_normal(rng);
            let im = standard_normal(rng);
            h * x + Complex64::new(re, im) * sd
        })
        .collect())
}
