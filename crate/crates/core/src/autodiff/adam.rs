use super::{AutodiffError, ParameterSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for one [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        let m: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { config, v: m.clone(), m, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of every parameter, then zeroes the
    /// gradients. When `mask` is given, only parameters with `mask[i]` set
    /// are moved (and their moments updated); all gradients are still zeroed.
    pub fn step(&mut self, params: &mut ParameterSet, mask: Option<&[bool]>) -> Result<(), AutodiffError> {
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.value.shape()) {
            return Err(AutodiffError::OptimizerMismatch { state: self.m.len(), params: params.len() });
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if mask.is_some_and(|mk| !mk[i]) {
                p.grad.fill(0.0);
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let g = p.grad.data();
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }

    pub fn moments_finite(&self) -> bool {
        self.m.iter().chain(&self.v).all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParameterSet {
        let mut ps = ParameterSet::new();
        ps.add("w", Tensor::vector(vec![value])).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = single(1.5);
        let mut st = AdamState::new(&ps, AdamConfig::default());
        for _ in 0..5 {
            st.step(&mut ps, None).unwrap();
        }
        assert_eq!(ps.iter().next().unwrap().value.data(), &[1.5]);
        assert_eq!(st.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        for g in [3.0, -0.02] {
            let mut ps = single(0.0);
            ps.iter_mut().next().unwrap().grad = Tensor::vector(vec![g]);
            let mut st = AdamState::new(&ps, AdamConfig { lr: 0.01, ..Default::default() });
            st.step(&mut ps, None).unwrap();
            let w = ps.iter().next().unwrap().value.data()[0];
            assert!((w + 0.01 * f64::signum(g)).abs() < 1e-8, "{w}");
            assert_eq!(ps.iter().next().unwrap().grad.data(), &[0.0]);
        }
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_trace() {
        // f(w) = (w - 2)^2, grad = 2(w - 2)
        let cfg = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut ps = single(-1.0);
        let mut st = AdamState::new(&ps, cfg);

        let (mut w, mut m, mut v) = (-1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * (w - 2.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);

            let cur = ps.iter().next().unwrap().value.data()[0];
            ps.iter_mut().next().unwrap().grad = Tensor::vector(vec![2.0 * (cur - 2.0)]);
            st.step(&mut ps, None).unwrap();
            assert!((ps.iter().next().unwrap().value.data()[0] - w).abs() < 1e-15);
        }
        assert!(st.moments_finite());
    }

    #[test]
    fn mismatched_state_is_an_error() {
        let ps = single(0.0);
        let mut st = AdamState::new(&ps, AdamConfig::default());
        let mut other = ParameterSet::new();
        other.add("a", Tensor::vector(vec![0.0])).unwrap();
        other.add("b", Tensor::vector(vec![0.0])).unwrap();
        assert!(matches!(st.step(&mut other, None), Err(AutodiffError::OptimizerMismatch { .. })));
    }

    #[test]
    fn mask_freezes_parameters() {
        let mut ps = ParameterSet::new();
        ps.add("a", Tensor::vector(vec![0.0])).unwrap();
        ps.add("b", Tensor::vector(vec![0.0])).unwrap();
        for p in ps.iter_mut() {
            p.grad = Tensor::vector(vec![1.0]);
        }
        let mut st = AdamState::new(&ps, AdamConfig::default());
        st.step(&mut ps, Some(&[true, false])).unwrap();
        let vals: Vec<f64> = ps.iter().map(|p| p.value.data()[0]).collect();
        assert!(vals[0] < 0.0);
        assert_eq!(vals[1], 0.0);
    }
}
