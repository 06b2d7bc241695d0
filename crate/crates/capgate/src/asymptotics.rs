//! Normal-theory asymptotics of the approval probability.
//!
//! For a normal population with a uniquely active specification side, the
//! plug-in estimator satisfies `√n (Ĉ − C_true) ⇒ N(0, σ_C²)` with
//!
//! ```text
//! σ_C² = 1/9 + C_true²/2,
//! ```
//!
//! the two terms coming from the sampling noise of the mean and of the
//! standard deviation respectively. Consequently the probability of clearing a
//! threshold `c0` behaves like `Φ(√n (C_true − c0)/σ_C)`: exactly 1/2 at the
//! boundary, and converging to a 0/1 step only at rate `1/√n`. This module
//! turns that limit into operational quantities — the instability band where
//! approval is effectively a coin flip, and the sample-size-aware margin that
//! caps the false-acceptance risk.
//!
//! All functions take `σ_C` as an explicit input (closed form or empirical),
//! so alternative variance estimates can be injected without changing any
//! formula downstream.

use crate::dist::{normal_cdf, normal_quantile};
use crate::error::{require_finite, Error, Result};

fn require_sigma_c(sigma_c: f64) -> Result<f64> {
    if sigma_c.is_finite() && sigma_c > 0.0 {
        Ok(sigma_c)
    } else {
        Err(Error::InvalidParameter(format!(
            "sigma_c must be positive and finite, got {sigma_c}"
        )))
    }
}

fn require_n(n: usize) -> Result<f64> {
    if n < 2 {
        Err(Error::SampleTooSmall { min: 2, got: n })
    } else {
        Ok(n as f64)
    }
}

/// Closed-form asymptotic scale `σ_C = √(1/9 + c²/2)` of `√n (Ĉ − c)`.
///
/// Valid under a uniquely active specification side. Defined for any finite
/// `c` (the variance depends on `c` only through `c²`); `c = 0` gives exactly
/// 1/3, the pure mean-noise floor.
pub fn sigma_c_closed_form(cpk: f64) -> Result<f64> {
    require_finite(cpk, "cpk")?;
    Ok((1.0 / 9.0 + 0.5 * cpk * cpk).sqrt())
}

/// Large-sample approximation of `SD(Ĉ)`: `σ_C(c)/√n`.
pub fn estimator_sd_approx(cpk: f64, n: usize) -> Result<f64> {
    let sqrt_n = require_n(n)?.sqrt();
    Ok(sigma_c_closed_form(cpk)? / sqrt_n)
}

/// Asymptotic approval probability `Φ(√n (cpk_true − c0)/σ_C)`.
///
/// Equals exactly 1/2 when `cpk_true == c0`, for every `n`.
pub fn acceptance_prob_asymptotic(cpk_true: f64, c0: f64, n: usize, sigma_c: f64) -> Result<f64> {
    require_finite(cpk_true, "cpk_true")?;
    require_finite(c0, "c0")?;
    let sigma_c = require_sigma_c(sigma_c)?;
    let sqrt_n = require_n(n)?.sqrt();
    Ok(normal_cdf(sqrt_n * (cpk_true - c0) / sigma_c))
}

/// The local limit of the approval probability in the `1/√n` neighborhood of
/// the threshold: for `cpk_true = c0 + h/√n`, approval → `Φ(h/σ_C)`.
pub fn local_limit(h: f64, sigma_c: f64) -> Result<f64> {
    require_finite(h, "h")?;
    let sigma_c = require_sigma_c(sigma_c)?;
    Ok(normal_cdf(h / sigma_c))
}

/// The interval of true index values whose approval probability stays within
/// `1/2 ± epsilon` — the coin-flip zone.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InstabilityBand {
    pub c0: f64,
    pub n: usize,
    pub epsilon: f64,
    pub lower: f64,
    pub upper: f64,
    pub half_width: f64,
}

/// Computes the instability band around `c0`.
///
/// A true index `c` has asymptotic approval probability within
/// `[1/2 − ε, 1/2 + ε]` iff `|c − c0| ≤ σ_C Φ⁻¹(1/2 + ε)/√n`. With `ε = 0.45`
/// the band spans approval probabilities 5%…95% — decisions inside it carry
/// double-digit flip risk in both directions.
pub fn instability_band(c0: f64, n: usize, sigma_c: f64, epsilon: f64) -> Result<InstabilityBand> {
    require_finite(c0, "c0")?;
    let sigma_c = require_sigma_c(sigma_c)?;
    let nf = require_n(n)?;
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 0.5), got {epsilon}"
        )));
    }
    let half_width = sigma_c * normal_quantile(0.5 + epsilon)? / nf.sqrt();
    Ok(InstabilityBand {
        c0,
        n,
        epsilon,
        lower: c0 - half_width,
        upper: c0 + half_width,
        half_width,
    })
}

/// A risk-adjusted approval margin: accept only when the *estimated* index
/// clears `c0 + margin`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MarginCalibration {
    pub c0: f64,
    pub n: usize,
    pub sigma_c: f64,
    pub alpha: f64,
    /// Standard-normal quantile `Φ⁻¹(1 − α)`.
    pub kappa: f64,
    /// `κ σ_C / √n`.
    pub margin: f64,
    /// `c0 + margin`.
    pub adjusted_threshold: f64,
}

/// Calibrates the margin so a process sitting exactly at `c0` is accepted with
/// probability at most `α` (asymptotically): `margin = Φ⁻¹(1−α) σ_C/√n`.
pub fn calibrate_margin(c0: f64, n: usize, sigma_c: f64, alpha: f64) -> Result<MarginCalibration> {
    require_finite(c0, "c0")?;
    let sigma_c = require_sigma_c(sigma_c)?;
    let nf = require_n(n)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let kappa = normal_quantile(1.0 - alpha)?;
    let margin = kappa * sigma_c / nf.sqrt();
    Ok(MarginCalibration {
        c0,
        n,
        sigma_c,
        alpha,
        kappa,
        margin,
        adjusted_threshold: c0 + margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_scale_reference_values() {
        // √(1/9 + c²/2) at frozen reference points (22-digit arithmetic).
        let cases = [
            (0.0, 1.0 / 3.0),
            (0.5, 0.4859126579037750392395),
            (1.0, 0.7817359599705715924276),
            (1.33, 0.997778087107103746256),
            (1.6208, 1.193569198291875790777),
        ];
        for (c, want) in cases {
            let got = sigma_c_closed_form(c).unwrap();
            assert!((got - want).abs() < 1e-15, "sigma_c({c}) = {got:.18}");
            // Even in c.
            assert_eq!(sigma_c_closed_form(-c).unwrap(), got);
        }
        assert!(sigma_c_closed_form(f64::NAN).is_err());
    }

    #[test]
    fn estimator_sd_reference_value() {
        let got = estimator_sd_approx(1.33, 32).unwrap();
        let want = 0.997778087107103746256 / 32f64.sqrt();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.1764).abs() < 5e-5, "got {got}");
        assert!(estimator_sd_approx(1.33, 1).is_err());
    }

    #[test]
    fn boundary_acceptance_is_exactly_one_half() {
        for n in [2, 32, 200, 2000] {
            let p = acceptance_prob_asymptotic(1.33, 1.33, n, 1.0).unwrap();
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn acceptance_matches_local_limit_parameterization() {
        let (c0, n, sigma) = (1.33, 64, 0.997778087107103746256);
        for h in [-2.0, -0.5, 0.0, 0.7, 3.1] {
            let c = c0 + h / (n as f64).sqrt();
            let a = acceptance_prob_asymptotic(c, c0, n, sigma).unwrap();
            let b = local_limit((n as f64).sqrt() * (c - c0), sigma).unwrap();
            assert!((a - b).abs() < 1e-12, "h = {h}");
        }
    }

    #[test]
    fn acceptance_is_monotone_in_true_index() {
        let mut last = 0.0;
        for i in 0..100 {
            let c = 0.8 + i as f64 * 0.012;
            let p = acceptance_prob_asymptotic(c, 1.33, 32, 1.0).unwrap();
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn instability_band_reference_case() {
        // ε = 0.45 spans approval probabilities 5%…95%.
        let band = instability_band(1.33, 32, 1.0, 0.45).unwrap();
        assert!((band.half_width - 0.290771788419168521682).abs() < 1e-12);
        assert!((band.lower - 1.039228211580831478318).abs() < 1e-12);
        assert!((band.upper - 1.620771788419168521682).abs() < 1e-12);
        // Symmetric about the threshold.
        assert!((band.upper - band.c0 - (band.c0 - band.lower)).abs() < 1e-12);
    }

    #[test]
    fn instability_band_shrinks_at_root_n_rate() {
        let b32 = instability_band(1.33, 32, 1.0, 0.45).unwrap();
        let b128 = instability_band(1.33, 128, 1.0, 0.45).unwrap();
        let ratio = b32.half_width / b128.half_width;
        assert!((ratio - 2.0).abs() < 1e-12, "ratio = {ratio}");
        assert!(instability_band(1.33, 32, 1.0, 0.5).is_err());
        assert!(instability_band(1.33, 32, 1.0, 0.0).is_err());
        assert!(instability_band(1.33, 32, -1.0, 0.45).is_err());
    }

    #[test]
    fn margin_calibration_reference_case() {
        let cal = calibrate_margin(1.33, 32, 1.0, 0.05).unwrap();
        assert!((cal.kappa - 1.644853626951472714864).abs() < 1e-12);
        assert!((cal.margin - 0.290771788419168521682).abs() < 1e-12);
        assert!((cal.adjusted_threshold - 1.620771788419168521682).abs() < 1e-12);
        // The margin equals the ε = 0.45 instability half-width: the adjusted
        // threshold sits exactly at the top of the coin-flip zone.
        let band = instability_band(1.33, 32, 1.0, 0.45).unwrap();
        assert!((cal.adjusted_threshold - band.upper).abs() < 1e-15);
    }

    #[test]
    fn margin_scales_inversely_with_root_n() {
        let a = calibrate_margin(1.33, 50, 0.9, 0.05).unwrap();
        let b = calibrate_margin(1.33, 200, 0.9, 0.05).unwrap();
        assert!((a.margin / b.margin - 2.0).abs() < 1e-12);
        // Tighter risk cap, larger margin.
        let strict = calibrate_margin(1.33, 50, 0.9, 0.01).unwrap();
        assert!(strict.margin > a.margin);
        assert!(calibrate_margin(1.33, 50, 0.9, 0.0).is_err());
        assert!(calibrate_margin(1.33, 50, 0.9, 1.0).is_err());
    }
}
