use num_complex::Complex64;

use super::BaselineError;
use crate::channels::TwtaParams;

/// Smallest input amplitude `rho` on the rising branch with `A(rho) = target`.
pub fn invert_amplitude(target: f64, p: &TwtaParams) -> Result<f64, BaselineError> {
    let peak = p.peak_amplitude();
    if !(0.0..=peak * (1.0 + 1e-12)).contains(&target) {
        return Err(BaselineError::OutOfRange { amplitude: target, max: peak });
    }
    let (mut lo, mut hi) = (0.0, p.saturation_input());
    if target >= peak {
        return Ok(hi);
    }
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if p.amplitude(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if mid == lo && mid == hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Input that the amplifier maps to `x`: amplitude inverted on the rising
/// branch, phase pre-rotated by `-Psi`.
pub fn predistort(x: Complex64, p: &TwtaParams) -> Result<Complex64, BaselineError> {
    let r = x.norm();
    if r == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let rho = invert_amplitude(r, p)?;
    Ok(Complex64::from_polar(rho, x.arg() - p.phase(rho)))
}

/// Factor that puts the largest constellation amplitude at the amplifier's
/// peak output amplitude.
pub fn power_scale(max_amplitude: f64, p: &TwtaParams) -> f64 {
    p.peak_amplitude() / max_amplitude
}
