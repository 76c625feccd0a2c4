//! Probability models for quantized latents: the uneven channel-group
//! schedule, train/inference quantizers, the Gaussian conditional and the
//! factorized hyperprior density.

mod factorized;
mod gaussian;

pub use factorized::{
    factorized_init, factorized_likelihood, factorized_logit, factorized_param_shapes,
    FactorizedEval, FACTORIZED_HIDDEN, FACTORIZED_LAYERS, FACTORIZED_PARAM_COUNT,
};
pub use gaussian::{gaussian_interval_mass, gaussian_likelihood};

use crate::detmath;
use crate::error::{CoreError, CoreResult};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorData};

/// Default lower bound for the Gaussian scale parameter.
pub const SIGMA_FLOOR: f64 = 0.04;
/// Default lower bound applied to likelihoods inside the loss.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

/// Ordered channel counts partitioning the latent channels into
/// autoregressive slices.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSchedule {
    pub n: usize,
    pub k: f64,
    pub total: usize,
    pub counts: Vec<usize>,
}

impl GroupSchedule {
    /// Channels carried by slices 1..i (exclusive prefix for stage i+1).
    pub fn prefix(&self, i: usize) -> usize {
        self.counts[..i].iter().sum()
    }
}

/// Power schedule: stage sizes proportional to i^k, integerized by
/// largest-remainder rounding (remainder ties go to the later stage)
/// with a minimum of one channel per stage.
pub fn build_schedule(m: usize, n: usize, k: f64) -> CoreResult<GroupSchedule> {
    if n < 2 {
        return Err(CoreError::Invalid(format!(
            "schedule needs at least 2 stages, got {n}"
        )));
    }
    if m < n {
        return Err(CoreError::Invalid(format!(
            "cannot split {m} channels into {n} stages"
        )));
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(k >= 0.0) {
        return Err(CoreError::Invalid(format!(
            "schedule exponent must be >= 0, got {k}"
        )));
    }
    // i^k through the deterministic exp/ln so integerization is
    // platform-independent.
    let weights: Vec<f64> = (1..=n)
        .map(|i| {
            if k == 0.0 {
                1.0
            } else {
                detmath::exp(k * detmath::ln(i as f64))
            }
        })
        .collect();
    let wsum: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| m as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    // Sort by fractional part descending; equal fractions favor the
    // later (larger) stage.
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(b.cmp(&a))
    });
    for &i in order.iter().take(m - assigned) {
        counts[i] += 1;
    }
    // Raise empty stages by borrowing from the earliest maximal stage,
    // which preserves both the total and monotonicity.
    while let Some(zero) = counts.iter().position(|&c| c == 0) {
        let max = *counts.iter().max().unwrap();
        let donor = counts.iter().position(|&c| c == max).unwrap();
        counts[donor] -= 1;
        counts[zero] += 1;
    }
    debug_assert_eq!(counts.iter().sum::<usize>(), m);
    Ok(GroupSchedule {
        n,
        k,
        total: m,
        counts,
    })
}

/// Per-element Gaussian parameters produced by an entropy network stage.
pub struct EntropyParams<S: Scalar> {
    pub mu: Tensor<S>,
    pub sigma: Tensor<S>,
}

impl<S: Scalar> EntropyParams<S> {
    /// mu plus raw scale; sigma = softplus(raw) + floor.
    pub fn from_raw(mu: Tensor<S>, sigma_raw: &Tensor<S>, sigma_floor: f64) -> CoreResult<Self> {
        let sigma = sigma_raw.softplus()?.add_scalar(S::from_real(sigma_floor))?;
        Ok(EntropyParams { mu, sigma })
    }
}

/// Training quantizer: additive uniform noise in (-1/2, 1/2), identity
/// gradient, deterministic under the stream key.
pub fn quantize_train<S: Scalar>(y: &Tensor<S>, key: u64) -> CoreResult<Tensor<S>> {
    y.add_uniform_noise(key)
}

/// Inference quantizer: integer residuals round(y - mu) (ties to even)
/// and the de-quantized reconstruction residual + mu.
pub fn quantize_infer<S: Scalar>(
    y: &TensorData<S>,
    mu: &TensorData<S>,
) -> CoreResult<(Vec<i32>, TensorData<S>)> {
    if y.shape != mu.shape {
        return Err(CoreError::ShapeMismatch {
            op: "quantize_infer",
            lhs: y.shape.clone(),
            rhs: mu.shape.clone(),
        });
    }
    let mut residuals = Vec::with_capacity(y.data.len());
    let mut y_hat = Vec::with_capacity(y.data.len());
    for (&yv, &mv) in y.data.iter().zip(&mu.data) {
        let r = (yv.to_real() - mv.to_real()).round_ties_even();
        residuals.push(r as i32);
        y_hat.push(S::from_real(r + mv.to_real()));
    }
    Ok((residuals, TensorData::new(y.shape.clone(), y_hat)?))
}
