//! Gaussian conditional likelihood: the probability a quantized value
//! lands in its unit interval under N(mu, sigma^2).

use super::EntropyParams;
use crate::detmath;
use crate::error::{CoreError, CoreResult};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// p = Phi((v + 1/2 - mu)/sigma) - Phi((v - 1/2 - mu)/sigma), elementwise,
/// differentiable w.r.t. value, mu and sigma.
///
/// `likelihood_floor > 0` clamps from below (used in the loss so logs stay
/// finite); pass 0.0 to evaluate the unclamped model mass.
pub fn gaussian_likelihood<S: Scalar>(
    value: &Tensor<S>,
    params: &EntropyParams<S>,
    likelihood_floor: f64,
) -> CoreResult<Tensor<S>> {
    if value.shape() != params.mu.shape() || value.shape() != params.sigma.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "gaussian_likelihood",
            lhs: value.shape(),
            rhs: params.mu.shape(),
        });
    }
    let half = S::from_real(0.5);
    let centered = value.sub(&params.mu)?;
    let hi = centered
        .add_scalar(half)?
        .div(&params.sigma)?
        .normal_cdf()?;
    let lo = centered
        .add_scalar(-half)?
        .div(&params.sigma)?
        .normal_cdf()?;
    let p = hi.sub(&lo)?;
    if likelihood_floor > 0.0 {
        p.clamp_min(S::from_real(likelihood_floor))
    } else {
        Ok(p)
    }
}

/// Deterministic interval mass of N(0, sigma^2) over [r-1/2, r+1/2],
/// evaluated with the platform-independent normal CDF. This is the
/// coding-path twin of [`gaussian_likelihood`].
pub fn gaussian_interval_mass(r: f64, sigma: f64) -> f64 {
    detmath::normal_cdf((r + 0.5) / sigma) - detmath::normal_cdf((r - 0.5) / sigma)
}
