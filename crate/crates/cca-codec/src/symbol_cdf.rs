//! Integer CDFs for coded symbols: Gaussian residuals (mean removed by
//! residual coding, so centered on zero) and factorized hyperprior bins.
//!
//! All probability evaluation goes through the deterministic math in
//! cca-core, so encoder and decoder build identical integer tables on
//! any platform.

use cca_core::entropy::{gaussian_interval_mass, FactorizedEval};

use crate::error::{CodecError, CodecResult};
use crate::rans::{quantize_cdf_offset, QuantizedCdf};

/// Default residual clamp: symbols live in [-127, 127].
pub const RESIDUAL_CLAMP: u32 = 127;
/// Default probability precision.
pub const PRECISION: u8 = 16;

fn trimmed_cdf(pmf_full: Vec<f64>, r_clamp: u32, precision: u8) -> CodecResult<QuantizedCdf> {
    // Bins carrying less than 1/256 of one quantized count would each
    // consume a forced unit count while contributing nothing; prune them
    // and renormalize. Out-of-support symbols saturate at encode time.
    let threshold = 1.0 / (1u64 << precision) as f64 / 256.0;
    let kept: Vec<f64> = pmf_full
        .iter()
        .map(|&p| if p < threshold { 0.0 } else { p })
        .collect();
    let first_nz = kept.iter().position(|&p| p > 0.0);
    let last_nz = kept.iter().rposition(|&p| p > 0.0);
    let (mut lo, mut hi) = match (first_nz, last_nz) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(CodecError::Invalid(
                "probability model places no mass on the coded range".into(),
            ))
        }
    };
    // The coder needs at least two bins; grow toward the heavier side.
    if lo == hi {
        if lo == 0 || (hi + 1 < kept.len() && pmf_full[hi + 1] >= pmf_full[lo - 1]) {
            hi += 1;
        } else {
            lo -= 1;
        }
    }
    // Interior gaps (possible for learned densities) stay encodable.
    let mut pmf: Vec<f64> = kept[lo..=hi].to_vec();
    for p in pmf.iter_mut() {
        if *p == 0.0 {
            *p = threshold;
        }
    }
    let sum: f64 = pmf.iter().sum();
    for p in pmf.iter_mut() {
        *p /= sum;
    }
    quantize_cdf_offset(&pmf, precision, lo as i32 - r_clamp as i32)
}

/// CDF of round(y - mu) under N(0, sigma^2) interval masses with tails
/// folded into the edge bins, trimmed to the nonzero support.
pub fn build_symbol_cdf(sigma: f64, r_clamp: u32, precision: u8) -> CodecResult<QuantizedCdf> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(sigma > 0.0) {
        return Err(CodecError::Invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let r = r_clamp as i64;
    let mut pmf = Vec::with_capacity(2 * r_clamp as usize + 1);
    for v in -r..=r {
        let p = if v == -r {
            // Left tail folded in: everything below -R + 1/2.
            cca_core::detmath::normal_cdf((v as f64 + 0.5) / sigma)
        } else if v == r {
            1.0 - cca_core::detmath::normal_cdf((v as f64 - 0.5) / sigma)
        } else {
            gaussian_interval_mass(v as f64, sigma)
        };
        pmf.push(p.max(0.0));
    }
    trimmed_cdf(pmf, r_clamp, precision)
}

/// Per-channel CDF of round(z) under the factorized density.
pub fn build_factorized_cdf(
    eval: &FactorizedEval,
    channel: usize,
    r_clamp: u32,
    precision: u8,
) -> CodecResult<QuantizedCdf> {
    if channel >= eval.channels() {
        return Err(CodecError::Invalid(format!(
            "channel {channel} out of range ({})",
            eval.channels()
        )));
    }
    let r = r_clamp as i64;
    let mut pmf = Vec::with_capacity(2 * r_clamp as usize + 1);
    for v in -r..=r {
        let p = if v == -r {
            eval.cdf(channel, v as f64 + 0.5)
        } else if v == r {
            1.0 - eval.cdf(channel, v as f64 - 0.5)
        } else {
            eval.interval_mass(channel, v as f64)
        };
        pmf.push(p.max(0.0));
    }
    trimmed_cdf(pmf, r_clamp, precision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn floored_sigma_concentrates_the_center_bin() {
        let cdf = build_symbol_cdf(0.04, RESIDUAL_CLAMP, PRECISION).unwrap();
        // Support collapses to the center and at most a forced neighbor.
        assert!(cdf.symbols() <= 3, "support {}", cdf.symbols());
        let (slot, clamped) = cdf.slot_for(0);
        assert!(!clamped);
        assert!(cdf.freq(slot) >= 65534, "center freq {}", cdf.freq(slot));
    }

    #[test]
    fn unit_sigma_center_bin_matches_oracle() {
        let cdf = build_symbol_cdf(1.0, RESIDUAL_CLAMP, PRECISION).unwrap();
        let n = Normal::new(0.0, 1.0).unwrap();
        let p0 = n.cdf(0.5) - n.cdf(-0.5);
        let (slot, clamped) = cdf.slot_for(0);
        assert!(!clamped);
        let want = (p0 * 65536.0).round() as i64;
        assert!(
            (cdf.freq(slot) as i64 - want).abs() <= 2,
            "freq {} vs oracle {want}",
            cdf.freq(slot)
        );
    }

    #[test]
    fn symmetric_counts_for_symmetric_bins() {
        let cdf = build_symbol_cdf(2.5, RESIDUAL_CLAMP, PRECISION).unwrap();
        for r in 1..=10i32 {
            let (sp, _) = cdf.slot_for(r);
            let (sm, _) = cdf.slot_for(-r);
            let diff = cdf.freq(sp) as i64 - cdf.freq(sm) as i64;
            assert!(diff.abs() <= 1, "r={r}: {diff}");
        }
    }

    #[test]
    fn totals_are_exact_and_bins_positive_inside_support() {
        for &sigma in &[0.04, 0.011f64.sqrt(), 0.5, 1.0, 3.0, 10.0, 200.0] {
            let cdf = build_symbol_cdf(sigma.max(0.04), RESIDUAL_CLAMP, PRECISION).unwrap();
            assert_eq!(*cdf.cdf.last().unwrap(), 65536);
            for s in 0..cdf.symbols() {
                assert!(cdf.freq(s) >= 1, "sigma {sigma}: empty bin inside support");
            }
        }
    }

    #[test]
    fn kl_between_pmf_and_quantized_counts_is_small() {
        // Random pmfs: quantization to 16 bits costs < 1e-3 bits.
        let key = cca_core::rng::derive_key(&[0x6a]);
        for t in 0..50u64 {
            let n = 2 + cca_core::rng::uniform_index(key, 3 * t, 40);
            let mut pmf: Vec<f64> = (0..n)
                .map(|i| 0.05 + cca_core::rng::uniform_pm_half(key, t * 1000 + i as u64) + 0.5)
                .collect();
            let sum: f64 = pmf.iter().sum();
            for p in pmf.iter_mut() {
                *p /= sum;
            }
            let cdf = crate::rans::quantize_cdf(&pmf, 16).unwrap();
            let mut kl = 0.0;
            for (i, &p) in pmf.iter().enumerate() {
                let q = cdf.freq(i) as f64 / 65536.0;
                kl += p * (p / q).log2();
            }
            assert!(kl.abs() < 1e-3, "KL {kl}");
        }
    }
}
