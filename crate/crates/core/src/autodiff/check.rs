use super::{Gradients, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Floor for the relative-error denominator.
const REL_ERR_FLOOR: f64 = 1e-8;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central differences of `f` around `value`, one entry at a time.
pub fn finite_diff_grad<F>(value: &DenseTensor, eps: f64, mut f: F) -> Result<DenseTensor>
where
    F: FnMut(&DenseTensor) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut out = DenseTensor::zeros(value.shape().clone());
    let mut probe = value.clone();
    for i in 0..value.len() {
        let x = value.data()[i];
        probe.data_mut()[i] = x + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = x - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = x;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("objective is not finite near entry {i}")));
        }
        out.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(out)
}

/// A model with a scalar objective evaluated two independent ways: a plain forward
/// computation, and a taped forward pass whose adjoints give the gradient.
pub trait Differentiable: Parameterized + Clone {
    type Input: ?Sized;

    fn loss(&self, input: &Self::Input) -> Result<f64>;

    /// Parameter gradients of [`Differentiable::loss`] via the tape. `fault` names an
    /// op whose adjoint should be sign-flipped (negative-control hook).
    fn loss_gradients(&self, input: &Self::Input, fault: Option<&str>) -> Result<Gradients>;
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    pub fault: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

/// Compares taped gradients against central differences for every parameter.
pub fn grad_check<M: Differentiable>(model: &M, input: &M::Input, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::invalid("grad_check tolerance must be positive"));
    }
    let analytic = model.loss_gradients(input, opts.fault.as_deref())?;
    let mut probe = model.clone();
    let names: Vec<String> = model.parameters().iter().map(|p| p.name().to_string()).collect();
    let mut params = Vec::with_capacity(names.len());
    for name in names {
        let original = probe
            .parameter(&name)
            .map(|p| p.value().clone())
            .ok_or_else(|| Error::invalid(format!("parameter {name} vanished")))?;
        let numeric = finite_diff_grad(&original, opts.eps, |v| {
            if let Some(p) = probe.parameter_mut(&name) {
                // shapes match by construction
                let _ = p.set_value(v.clone());
            }
            probe.loss(input).unwrap_or(f64::NAN)
        })?;
        if let Some(p) = probe.parameter_mut(&name) {
            p.set_value(original.clone())?;
        }
        let zeros = DenseTensor::zeros(original.shape().clone());
        let a = analytic.get(&name).unwrap_or(&zeros);
        let max_rel_err = a
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max);
        params.push(ParamCheck {
            name,
            max_rel_err,
            passed: max_rel_err < opts.tol,
        });
    }
    Ok(GradCheckReport { tol: opts.tol, params })
}
