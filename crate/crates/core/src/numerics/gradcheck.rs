use super::{Graph, NumericsError, Tensor, Var};

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` at `x` with central differences and
/// returns the largest relative error over all components.
pub fn check_gradients<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var, NumericsError>,
{
    check_gradients_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps, None)
}

/// Worst discrepancies found by [`gradient_report`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradReport {
    /// Max of [`relative_error`] over probed components.
    pub max_relative: f64,
    /// Max of `|analytic − numeric|`.
    pub max_absolute: f64,
    /// Relative error with the denominator floored at `1e-5` instead of
    /// `1e-8`, which discounts components so small that round-off in the
    /// function value dominates their difference quotient.
    pub max_relative_coarse: f64,
    pub probed: usize,
}

/// Multi-input version of [`check_gradients`]. With `max_per_input`, only
/// that many evenly strided components of each input are probed.
pub fn check_gradients_many<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_per_input: Option<usize>,
) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    Ok(gradient_report(f, inputs, eps, max_per_input)?.max_relative)
}

/// Central-difference comparison of the tape gradients of `f` against every
/// probed component of every input.
pub fn gradient_report<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_per_input: Option<usize>,
) -> Result<GradReport, NumericsError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64, NumericsError> {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut report = GradReport::default();
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(&g, *var);
        let n = inputs[k].numel();
        let stride = match max_per_input {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            report.max_relative = report.max_relative.max(relative_error(a, numeric));
            report.max_absolute = report.max_absolute.max((a - numeric).abs());
            let coarse = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            report.max_relative_coarse = report.max_relative_coarse.max(coarse);
            report.probed += 1;
        }
    }
    Ok(report)
}
