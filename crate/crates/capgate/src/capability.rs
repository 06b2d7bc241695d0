//! Capability indices: classical `C_pk` and percentile-based `C_Npk`.
//!
//! The classical index compares the distance from the process center to each
//! specification limit against three standard deviations:
//!
//! ```text
//! C_pu = (USL − μ) / 3σ,   C_pl = (μ − LSL) / 3σ,   C_pk = min(C_pu, C_pl).
//! ```
//!
//! The percentile-based index replaces `μ ± 3σ` with the median and the
//! 0.135% / 99.865% quantiles, so that it reduces *exactly* to `C_pk` for
//! normal populations while remaining meaningful for skewed ones:
//!
//! ```text
//! C_Npk = min( (USL − P50) / (P99.865 − P50),  (P50 − LSL) / (P50 − P0.135) ).
//! ```
//!
//! Plug-in estimators use the sample mean, the (n−1)-denominator standard
//! deviation, and median-unbiased interpolated sample quantiles. This module
//! also calibrates `(ProcessModel, SpecLimits)` pairs that realize an exact
//! target index — the ground truth every Monte Carlo experiment is driven by.

use crate::dist::ProcessModel;
use crate::error::{require_finite, Error, Result};

/// Two capability ratios closer than this are treated as tied; asymptotics
/// that assume a uniquely active specification side refuse tied inputs.
pub const SIDE_TIE_TOLERANCE: f64 = 1e-9;

/// Lower tail probability of the percentile index: exactly `Φ(−3)`.
pub const LOWER_TAIL_P: f64 = 0.001349898031630094526652;
/// Upper tail probability of the percentile index: exactly `Φ(3)`.
pub const UPPER_TAIL_P: f64 = 0.9986501019683699054733;

/// Minimum sample size for the percentile-based estimator.
pub const MIN_CNPK_SAMPLE: usize = 20;

/// A specification interval. At least one limit is finite, `lsl < usl`, and
/// neither is NaN. One-sided specs use `−∞` or `+∞` for the absent limit.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpecLimits {
    lsl: f64,
    usl: f64,
}

impl SpecLimits {
    /// Builds a validated specification interval.
    pub fn new(lsl: f64, usl: f64) -> Result<Self> {
        if lsl.is_nan() || usl.is_nan() {
            return Err(Error::InvalidParameter(
                "specification limits must not be NaN".into(),
            ));
        }
        if !lsl.is_finite() && !usl.is_finite() {
            return Err(Error::InvalidParameter(
                "at least one specification limit must be finite".into(),
            ));
        }
        if !(lsl < usl) {
            return Err(Error::InvalidParameter(format!(
                "lower limit must be strictly below upper limit, got [{lsl}, {usl}]"
            )));
        }
        Ok(SpecLimits { lsl, usl })
    }

    /// Upper-sided spec: only `usl` binds.
    pub fn upper_only(usl: f64) -> Result<Self> {
        SpecLimits::new(f64::NEG_INFINITY, usl)
    }

    /// Lower-sided spec: only `lsl` binds.
    pub fn lower_only(lsl: f64) -> Result<Self> {
        SpecLimits::new(lsl, f64::INFINITY)
    }

    pub fn lsl(&self) -> f64 {
        self.lsl
    }

    pub fn usl(&self) -> f64 {
        self.usl
    }

    /// True when both limits are finite.
    pub fn is_two_sided(&self) -> bool {
        self.lsl.is_finite() && self.usl.is_finite()
    }
}

/// Sample size, mean, and (n−1)-denominator standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Computes the sample summary. Requires `n ≥ 2`, all values finite, and
/// non-zero spread.
pub fn summarize(xs: &[f64]) -> Result<SampleSummary> {
    if xs.len() < 2 {
        return Err(Error::SampleTooSmall {
            min: 2,
            got: xs.len(),
        });
    }
    for &x in xs {
        if !x.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "measurements must be finite, got {x}"
            )));
        }
    }
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    let sd = (ss / (n - 1) as f64).sqrt();
    if sd == 0.0 {
        return Err(Error::ZeroVariance { n });
    }
    Ok(SampleSummary { n, mean, sd })
}

/// Which specification side determines the index value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveSide {
    Upper,
    Lower,
    /// `|C_pu − C_pl| ≤` [`SIDE_TIE_TOLERANCE`]: no uniquely active side.
    Tied,
}

/// A capability index with its one-sided components.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CapabilityEstimate {
    /// Upper ratio `(USL − μ)/3σ`; `+∞` when there is no upper limit.
    pub cpu: f64,
    /// Lower ratio `(μ − LSL)/3σ`; `+∞` when there is no lower limit.
    pub cpl: f64,
    /// `min(cpu, cpl)`.
    pub cpk: f64,
    pub active_side: ActiveSide,
}

fn classify_sides(cpu: f64, cpl: f64) -> ActiveSide {
    if (cpu - cpl).abs() <= SIDE_TIE_TOLERANCE {
        ActiveSide::Tied
    } else if cpu < cpl {
        ActiveSide::Upper
    } else {
        ActiveSide::Lower
    }
}

/// `C_pk` from known population parameters `(μ, σ)`.
pub fn cpk_point(mean: f64, sd: f64, spec: &SpecLimits) -> Result<CapabilityEstimate> {
    require_finite(mean, "mean")?;
    require_finite(sd, "sd")?;
    if sd <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sd must be positive, got {sd}"
        )));
    }
    let cpu = (spec.usl - mean) / (3.0 * sd);
    let cpl = (mean - spec.lsl) / (3.0 * sd);
    Ok(CapabilityEstimate {
        cpu,
        cpl,
        cpk: cpu.min(cpl),
        active_side: classify_sides(cpu, cpl),
    })
}

/// Plug-in `Ĉ_pk` from a sample: sample mean and (n−1)-denominator sd.
///
/// Errors on `n < 2`, non-finite values, and zero spread.
pub fn estimate_cpk(xs: &[f64], spec: &SpecLimits) -> Result<(SampleSummary, CapabilityEstimate)> {
    let summary = summarize(xs)?;
    let est = cpk_point(summary.mean, summary.sd, spec)?;
    Ok((summary, est))
}

/// The three quantiles entering the percentile-based index, strictly ordered.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuantileTriple {
    /// 0.135% quantile (`Φ(−3)` tail mass).
    pub p00135: f64,
    /// Median.
    pub p50: f64,
    /// 99.865% quantile (`Φ(3)` tail mass).
    pub p99865: f64,
}

impl QuantileTriple {
    /// Validates strict ordering `p00135 < p50 < p99865`.
    pub fn new(p00135: f64, p50: f64, p99865: f64) -> Result<Self> {
        require_finite(p00135, "p00135")?;
        require_finite(p50, "p50")?;
        require_finite(p99865, "p99865")?;
        if !(p00135 < p50 && p50 < p99865) {
            return Err(Error::DegenerateSpread(format!(
                "quantiles must be strictly increasing, got ({p00135}, {p50}, {p99865})"
            )));
        }
        Ok(QuantileTriple {
            p00135,
            p50,
            p99865,
        })
    }

    /// Exact population quantiles of `N(mean, sd²)`: `(μ − 3σ, μ, μ + 3σ)`.
    ///
    /// On these triples the percentile index coincides with `C_pk` to floating
    /// point rounding — the identity that makes the two indices comparable.
    pub fn exact_normal(mean: f64, sd: f64) -> Result<Self> {
        require_finite(mean, "mean")?;
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sd must be positive and finite, got {sd}"
            )));
        }
        QuantileTriple::new(mean - 3.0 * sd, mean, mean + 3.0 * sd)
    }

    /// Exact population quantiles of `shift + exp(N(log_mean, log_sd²))`.
    pub fn exact_lognormal(shift: f64, log_mean: f64, log_sd: f64) -> Result<Self> {
        require_finite(shift, "shift")?;
        require_finite(log_mean, "log_mean")?;
        if !(log_sd > 0.0 && log_sd.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "log_sd must be positive and finite, got {log_sd}"
            )));
        }
        QuantileTriple::new(
            shift + (log_mean - 3.0 * log_sd).exp(),
            shift + log_mean.exp(),
            shift + (log_mean + 3.0 * log_sd).exp(),
        )
    }
}

/// Percentile-based index `C_Npk` from known quantiles.
pub fn cnpk_point(q: &QuantileTriple, spec: &SpecLimits) -> Result<f64> {
    let upper = (spec.usl - q.p50) / (q.p99865 - q.p50);
    let lower = (q.p50 - spec.lsl) / (q.p50 - q.p00135);
    Ok(upper.min(lower))
}

/// Interpolated sample quantile, median-unbiased variant.
///
/// Uses the plotting position `h = (n + 1/3)p + 1/3` clamped to `[1, n]` with
/// linear interpolation between order statistics — approximately unbiased for
/// the population quantile regardless of the underlying continuous law.
///
/// `sorted` must be ascending (caller's responsibility) and non-empty;
/// `p ∈ [0, 1]`. Note that for tail probabilities like 0.135% the position
/// clamps to the sample minimum until `n ≈ 1/p`, so extreme quantiles from
/// small samples are extrapolative.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::SampleTooSmall { min: 1, got: 0 });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "quantile probability must lie in [0, 1], got {p}"
        )));
    }
    let n = sorted.len();
    let h = ((n as f64 + 1.0 / 3.0) * p + 1.0 / 3.0).clamp(1.0, n as f64);
    let j = h.floor() as usize; // 1-based lower order statistic
    let g = h - j as f64;
    if j >= n {
        Ok(sorted[n - 1])
    } else {
        Ok(sorted[j - 1] + g * (sorted[j] - sorted[j - 1]))
    }
}

/// Plug-in `Ĉ_Npk` from a sample via interpolated quantiles.
///
/// Requires `n ≥ 20`; errors if the interpolated quantiles tie (degenerate
/// spread). The 0.135%/99.865% quantiles are extrapolative below `n ≈ 741`;
/// estimates from such samples carry the full small-sample volatility this
/// crate exists to quantify.
pub fn estimate_cnpk(xs: &[f64], spec: &SpecLimits) -> Result<f64> {
    if xs.len() < MIN_CNPK_SAMPLE {
        return Err(Error::SampleTooSmall {
            min: MIN_CNPK_SAMPLE,
            got: xs.len(),
        });
    }
    for &x in xs {
        if !x.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "measurements must be finite, got {x}"
            )));
        }
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
    let lo = empirical_quantile(&sorted, LOWER_TAIL_P)?;
    let md = empirical_quantile(&sorted, 0.5)?;
    let hi = empirical_quantile(&sorted, UPPER_TAIL_P)?;
    let triple = QuantileTriple::new(lo, md, hi)?;
    cnpk_point(&triple, spec)
}

/// How specification limits are placed around the population when calibrating
/// a ground-truth index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Only the upper side binds at the target; the lower side (when present)
    /// sits at twice the distance, guaranteeing a uniquely active side.
    OneSided,
    /// Both sides bind symmetrically at the target: the tied, maximally
    /// unstable configuration.
    Centered,
}

/// Distribution family for simulation, with its shape parameter.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelFamily {
    Normal,
    /// Zero-shift, unit-median lognormal with the given log-scale.
    ShiftedLognormal { log_sd: f64 },
}

/// Builds a `(model, spec)` pair whose *population* index equals `target`
/// exactly (to 1e-12).
///
/// * `Normal`: standard normal population. One-sided: `USL = 3·target`, no
///   lower limit. Centered: `USL = −LSL = 3·target` (tied sides).
/// * `ShiftedLognormal`: unit-median population (`shift = 0, log_mean = 0`),
///   limits placed from the *exact* 0.135%/50%/99.865% quantiles so the
///   percentile-based index hits the target; for this skewed family the
///   classical `C_pk` deliberately differs. One-sided puts the lower limit at
///   twice the quantile distance (uniquely active upper side); centered ties
///   both sides at the target.
pub fn calibrate_model(
    target: f64,
    mode: CalibrationMode,
    family: ModelFamily,
) -> Result<(ProcessModel, SpecLimits)> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::Calibration(format!(
            "target index must be positive and finite, got {target}"
        )));
    }
    let (model, spec) = match family {
        ModelFamily::Normal => {
            let model = ProcessModel::normal(0.0, 1.0)?;
            let spec = match mode {
                CalibrationMode::OneSided => SpecLimits::upper_only(3.0 * target)?,
                CalibrationMode::Centered => SpecLimits::new(-3.0 * target, 3.0 * target)?,
            };
            (model, spec)
        }
        ModelFamily::ShiftedLognormal { log_sd } => {
            let model = ProcessModel::shifted_lognormal(0.0, 0.0, log_sd)?;
            let q = QuantileTriple::exact_lognormal(0.0, 0.0, log_sd)?;
            let usl = q.p50 + target * (q.p99865 - q.p50);
            let lsl = match mode {
                CalibrationMode::OneSided => q.p50 - 2.0 * target * (q.p50 - q.p00135),
                CalibrationMode::Centered => q.p50 - target * (q.p50 - q.p00135),
            };
            (model, SpecLimits::new(lsl, usl)?)
        }
    };
    // Post-condition: the achieved population index matches the target.
    let achieved = match family {
        ModelFamily::Normal => cpk_point(0.0, 1.0, &spec)?.cpk,
        ModelFamily::ShiftedLognormal { log_sd } => {
            let q = QuantileTriple::exact_lognormal(0.0, 0.0, log_sd)?;
            cnpk_point(&q, &spec)?
        }
    };
    if (achieved - target).abs() > 1e-12 {
        return Err(Error::Calibration(format!(
            "achieved index {achieved} misses target {target}"
        )));
    }
    Ok((model, spec))
}
