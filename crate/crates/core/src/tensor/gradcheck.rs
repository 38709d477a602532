//! Central finite-difference gradient checker.
//!
//! Only the forward pass of the function under test is used to build the
//! numeric estimate, so it stays independent of every backward closure.

use super::Tensor;
use crate::error::Result;

/// Step used for the central difference.
pub const FD_STEP: f64 = 1e-6;

/// Gradients smaller than this are compared on an absolute scale; below it
/// the finite-difference estimate is dominated by cancellation noise.
pub const GRAD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (tensor index, element index, analytic, numeric) of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Check the gradient of a scalar function of fresh leaf tensors built from
/// `inputs`.
pub fn check_gradients<F>(inputs: &[(Vec<f64>, Vec<usize>)], f: F) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves = inputs.iter().map(|(d, s)| Tensor::parameter(d.clone(), s)).collect::<Result<Vec<_>>>()?;
    check_parameter_gradients(&leaves, None, || f(&leaves))
}

/// Check the gradient of `f` with respect to existing leaf parameters.
/// `max_per_tensor` limits the probed elements per tensor to an evenly spaced
/// subset (always including the first and last element).
pub fn check_parameter_gradients<F>(params: &[Tensor], max_per_tensor: Option<usize>, f: F) -> Result<GradReport>
where
    F: Fn() -> Result<Tensor>,
{
    params.iter().for_each(Tensor::zero_grad);
    f()?.backward()?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()])).collect();

    let mut report = GradReport { checked: 0, max_rel_error: 0.0, worst: None };
    for (ti, p) in params.iter().enumerate() {
        let n = p.numel();
        let probes: Vec<usize> = match max_per_tensor {
            Some(m) if m < n && m >= 2 => (0..m).map(|i| i * (n - 1) / (m - 1)).collect(),
            Some(1) if n > 1 => vec![0],
            _ => (0..n).collect(),
        };
        let base = p.to_vec();
        for &i in &probes {
            let mut probe = base.clone();
            probe[i] = base[i] + FD_STEP;
            p.assign(&probe)?;
            let plus = f()?.item();
            probe[i] = base[i] - FD_STEP;
            p.assign(&probe)?;
            let minus = f()?.item();
            p.assign(&base)?;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic[ti][i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((ti, i, analytic[ti][i], numeric));
                }
            }
        }
    }
    params.iter().for_each(Tensor::zero_grad);
    Ok(report)
}
