//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records each primitive as it is evaluated. Parameters live in
//! a [`ParameterSet`] outside the tape and are copied onto it once per
//! forward pass; [`Tape::backward`] accumulates into their `grad` fields.

mod adam;
mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{
    analytic_gradients, compare_gradients, gradient_check, relative_error, GradCheckConfig, GradCheckReport,
};
pub use layers::{Dense, GruCell, GruStack};
pub use params::{ParamId, Parameter, ParameterSet};
pub use tape::{Gradients, PairMap, Tape, Var, ACTIVATION_CLAMP, PROB_CLAMP};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value at node {node} ({op}) during {phase}")]
    NonFinite { node: usize, op: &'static str, phase: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("optimizer state covers {state} parameters but the set has {params}")]
    OptimizerMismatch { state: usize, params: usize },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut ps = ParameterSet::new();
        let x = ps.add("x", Tensor::vector(vec![1.0, -2.0, 3.0])).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&ps, x).unwrap();
        let sq = tape.mul(xv, xv).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get(x).grad.data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut ps = ParameterSet::new();
        let w = ps.add("w", Tensor::scalar(0.0)).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&ps, w).unwrap();
        let s = tape.sigmoid(wv).unwrap();
        tape.backward(s, &mut ps).unwrap();
        assert_eq!(ps.get(w).grad.data(), &[0.25]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut ps = ParameterSet::new();
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(v, &mut ps), Err(AutodiffError::NotScalar(_))));
    }

    #[test]
    fn nan_is_reported_with_node() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(f64::MAX)).unwrap();
        let err = tape.affine(a, 10.0, 0.0).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { node: 1, op: "affine", phase: "forward" }));
    }

    #[test]
    fn clamped_activations_have_zero_slope() {
        let mut ps = ParameterSet::new();
        let w = ps.add("w", Tensor::vector(vec![40.0, -31.0, 0.5])).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&ps, w).unwrap();
        let s = tape.sigmoid(wv).unwrap();
        let t = tape.tanh(wv).unwrap();
        let st = tape.add(s, t).unwrap();
        let loss = tape.sum_all(st).unwrap();
        tape.backward(loss, &mut ps).unwrap();
        let g = ps.get(w).grad.data();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
        assert!(g[2] > 0.0);
    }

    #[test]
    fn parameters_are_recorded_once() {
        let mut ps = ParameterSet::new();
        let w = ps.add("w", Tensor::scalar(2.0)).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&ps, w).unwrap();
        let b = tape.param(&ps, w).unwrap();
        assert_eq!(a, b);
        let p = tape.mul(a, b).unwrap();
        tape.backward(p, &mut ps).unwrap();
        assert_eq!(ps.get(w).grad.data(), &[4.0]);
    }

    #[test]
    fn linear_function_checks_exactly() {
        let mut ps = ParameterSet::new();
        let w = ps.add("w", Tensor::from_rows(&[[0.5, -1.0], [2.0, 3.0]])).unwrap();
        let report = gradient_check(
            &mut ps,
            |tape, ps| {
                let x = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [-0.5, 0.25]]))?;
                let wv = tape.param(ps, w)?;
                let y = tape.matmul(x, wv)?;
                tape.sum_all(y)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-10, "{report:?}");
        assert!(report.passed());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParameterSet::new();
        ps.add("a", Tensor::scalar(0.0)).unwrap();
        assert!(ps.add("a", Tensor::scalar(1.0)).is_err());
    }
}
