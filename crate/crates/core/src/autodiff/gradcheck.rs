//! Central-difference verification of tape gradients.

use super::{AutodiffError, ParamId, ParameterSet, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Half-width of the central difference.
    pub eps: f64,
    /// Relative error above which a coordinate is reported.
    pub tol: f64,
    /// Lower bound on the denominator of the relative error, so coordinates
    /// whose true gradient is ~0 are judged by absolute error instead.
    pub denom_floor: f64,
    /// Check at most this many evenly spaced coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-5, tol: 1e-4, denom_floor: 1e-6, max_coords_per_param: None }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Names of parameters with at least one coordinate above tolerance.
    pub offending: Vec<String>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.offending.is_empty()
    }
}

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Gradients of the scalar built by `f`, one tensor per parameter.
pub fn analytic_gradients<F>(params: &mut ParameterSet, f: &mut F) -> Result<Vec<Tensor>, AutodiffError>
where
    F: FnMut(&mut Tape, &ParameterSet) -> Result<Var, AutodiffError>,
{
    params.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    tape.backward(loss, params)?;
    let grads = params.grads();
    params.zero_grads();
    Ok(grads)
}

fn eval<F>(params: &ParameterSet, f: &mut F) -> Result<f64, AutodiffError>
where
    F: FnMut(&mut Tape, &ParameterSet) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(AutodiffError::NotScalar(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares `analytic` against central differences of `f`.
pub fn compare_gradients<F>(
    params: &mut ParameterSet,
    analytic: &[Tensor],
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, AutodiffError>
where
    F: FnMut(&mut Tape, &ParameterSet) -> Result<Var, AutodiffError>,
{
    let mut report = GradCheckReport::default();
    for pid in 0..params.len() {
        let id = ParamId(pid);
        let n = params.get(id).value.len();
        let stride = match cfg.max_coords_per_param {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        let mut bad = false;
        for idx in (0..n).step_by(stride) {
            let orig = params.get(id).value.data()[idx];
            params.get_mut(id).value.data_mut()[idx] = orig + cfg.eps;
            let up = eval(params, &mut f);
            params.get_mut(id).value.data_mut()[idx] = orig - cfg.eps;
            let down = eval(params, &mut f);
            params.get_mut(id).value.data_mut()[idx] = orig;
            let numeric = (up? - down?) / (2.0 * cfg.eps);
            let err = relative_error(analytic[pid].data()[idx], numeric, cfg.denom_floor);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((params.get(id).name.clone(), idx));
            }
            bad |= err > cfg.tol;
        }
        if bad {
            report.offending.push(params.get(id).name.clone());
        }
    }
    Ok(report)
}

/// Backward pass versus central differences for every (sampled) coordinate.
pub fn gradient_check<F>(
    params: &mut ParameterSet,
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, AutodiffError>
where
    F: FnMut(&mut Tape, &ParameterSet) -> Result<Var, AutodiffError>,
{
    let analytic = analytic_gradients(params, &mut f)?;
    compare_gradients(params, &analytic, f, cfg)
}
