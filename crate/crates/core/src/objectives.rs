//! Training objectives: per-use distortion, the weighted multi-use loss with
//! a relu power penalty, and the multi-user sum.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("expected {expected} per-use terms, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid loss weights: {0}")]
    Weights(String),
    #[error("multi-user loss needs at least one user")]
    NoUsers,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Per-use weights `alpha_t`, penalty weight `lambda` and power cap.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: Vec<f64>,
    pub lambda: f64,
    pub p_max: f64,
}

impl LossWeights {
    pub fn new(alpha: Vec<f64>, lambda: f64, p_max: f64) -> Result<Self, ObjectiveError> {
        let lw = Self { alpha, lambda, p_max };
        lw.validate()?;
        Ok(lw)
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !(*a >= 0.0)) {
            return Err(ObjectiveError::Weights("alpha must be non-negative and non-empty".into()));
        }
        if !self.alpha.iter().any(|&a| a > 0.0) {
            return Err(ObjectiveError::Weights("at least one alpha must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(ObjectiveError::Weights("lambda must be non-negative".into()));
        }
        if !(self.p_max > 0.0) {
            return Err(ObjectiveError::Weights("p_max must be positive".into()));
        }
        Ok(())
    }

    pub fn channel_uses(&self) -> usize {
        self.alpha.len()
    }
}

/// Cross-entropy between bits and estimated probabilities, summed over the
/// payload and averaged over the batch.
pub fn bce_step_loss(tape: &mut Tape, bits: Var, probs: Var) -> Result<Var, ObjectiveError> {
    Ok(tape.bce(bits, probs)?)
}

/// Squared error summed over the payload and averaged over the batch.
pub fn mse_step_loss(tape: &mut Tape, target: Var, estimate: Var) -> Result<Var, ObjectiveError> {
    Ok(tape.mse(target, estimate)?)
}

/// `lambda * sum_t relu(mean_power[t] - p_max)`.
pub fn power_penalty(tape: &mut Tape, mean_power: &[Var], lw: &LossWeights) -> Result<Var, ObjectiveError> {
    if mean_power.len() != lw.channel_uses() {
        return Err(ObjectiveError::Length { expected: lw.channel_uses(), got: mean_power.len() });
    }
    let mut total: Option<Var> = None;
    for &p in mean_power {
        let excess = tape.affine(p, 1.0, -lw.p_max)?;
        let r = tape.relu(excess)?;
        total = Some(match total {
            Some(t) => tape.add(t, r)?,
            None => r,
        });
    }
    Ok(tape.scale(total.expect("at least one use"), lw.lambda)?)
}

/// `sum_t alpha_t * step_losses[t] + power_penalty`.
pub fn progtr_loss(
    tape: &mut Tape,
    step_losses: &[Var],
    mean_power: &[Var],
    lw: &LossWeights,
) -> Result<Var, ObjectiveError> {
    if step_losses.len() != lw.channel_uses() {
        return Err(ObjectiveError::Length { expected: lw.channel_uses(), got: step_losses.len() });
    }
    let mut total = power_penalty(tape, mean_power, lw)?;
    for (&l, &a) in step_losses.iter().zip(&lw.alpha) {
        let w = tape.scale(l, a)?;
        total = tape.add(total, w)?;
    }
    Ok(total)
}

/// Sum of per-user losses.
pub fn multiuser_loss(tape: &mut Tape, per_user: &[Var]) -> Result<Var, ObjectiveError> {
    let (&first, rest) = per_user.split_first().ok_or(ObjectiveError::NoUsers)?;
    let mut total = first;
    for &l in rest {
        total = tape.add(total, l)?;
    }
    Ok(total)
}
