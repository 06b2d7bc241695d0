//! Approval decision rules.
//!
//! Four ways to turn an estimated capability index into an accept/reject
//! decision, ordered from naive to risk-aware:
//!
//! 1. **Deterministic** — accept iff `Ĉ ≥ c0`. The industry default; at the
//!    boundary it is a fair coin.
//! 2. **Margin-adjusted** — accept iff `Ĉ ≥ c0 + κ σ_C/√n`, capping the
//!    asymptotic false-acceptance probability of a boundary process at `α`.
//! 3. **Lower confidence bound** — accept iff `Ĉ − Φ⁻¹(1−α) σ_C(Ĉ)/√n ≥ c0`,
//!    the same idea with the scale evaluated at the estimate.
//! 4. **Predictive probability** — accept iff the estimated probability that a
//!    fresh re-qualification with the same `n` would clear `c0` is at least
//!    `p_min`; either the asymptotic plug-in formula or a nested Monte Carlo.
//!
//! Every decision reports its `statistic` and `cutoff`; `accept` is always
//! exactly `statistic ≥ cutoff`, so downstream consumers can re-derive and
//! audit the comparison.

use crate::asymptotics::{calibrate_margin, sigma_c_closed_form, MarginCalibration};
use crate::capability::{estimate_cpk, ActiveSide, CapabilityEstimate, SampleSummary, SpecLimits};
use crate::dist::{normal_cdf, normal_quantile, ProcessModel};
use crate::error::{require_finite, Error, Result};
use crate::rng::SeedPath;

/// Maximum redraw attempts when a nested resample has zero variance.
const MAX_DEGENERATE_ATTEMPTS: u64 = 100;

/// The outcome of applying a rule: `accept` is exactly `statistic ≥ cutoff`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Decision {
    pub accept: bool,
    pub statistic: f64,
    pub cutoff: f64,
}

impl Decision {
    fn from_comparison(statistic: f64, cutoff: f64) -> Self {
        Decision {
            accept: statistic >= cutoff,
            statistic,
            cutoff,
        }
    }
}

/// Accept iff the estimated index clears the raw threshold.
pub fn decide_deterministic(est: &CapabilityEstimate, c0: f64) -> Decision {
    Decision::from_comparison(est.cpk, c0)
}

/// Accept iff the estimated index clears the margin-adjusted threshold.
pub fn decide_margin(est: &CapabilityEstimate, cal: &MarginCalibration) -> Decision {
    Decision::from_comparison(est.cpk, cal.adjusted_threshold)
}

/// Accept iff the asymptotic one-sided lower confidence bound for the true
/// index clears `c0`.
///
/// The bound is `Ĉ − Φ⁻¹(1−α) σ_C(Ĉ)/√n` with the closed-form scale evaluated
/// at the estimate. Requires a uniquely active specification side: tied
/// estimates have no valid closed-form scale and return an error.
pub fn decide_lcb(
    summary: &SampleSummary,
    est: &CapabilityEstimate,
    c0: f64,
    alpha: f64,
) -> Result<Decision> {
    require_finite(c0, "c0")?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if est.active_side == ActiveSide::Tied {
        return Err(Error::TiedSides);
    }
    let sigma_c = sigma_c_closed_form(est.cpk)?;
    let lcb = est.cpk - normal_quantile(1.0 - alpha)? * sigma_c / (summary.n as f64).sqrt();
    Ok(Decision::from_comparison(lcb, c0))
}

/// How the predictive re-qualification probability is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMethod {
    /// `Φ(√n (Ĉ − c0)/σ_C(Ĉ))` — algebraically the same accept region as the
    /// lower-confidence-bound rule at `α = 1 − p_min`.
    PlugInAsymptotic,
    /// Re-simulates `inner_reps` qualifications from the fitted normal model
    /// and counts how many clear `c0`. Needs no asymptotics and tolerates tied
    /// sides.
    NestedMonteCarlo,
}

/// Accept iff the estimated probability that an independent re-qualification
/// (same `n`) clears `c0` is at least `p_min`.
///
/// `statistic` is the estimated probability, `cutoff` is `p_min`. The nested
/// Monte Carlo method reconstructs the specification limits from the reported
/// ratios, fits `N(mean, sd²)`, and replays the full estimate-and-compare
/// pipeline on `inner_reps` fresh samples drawn from `seed` (child `k` is
/// inner replicate `k`, grandchild `a` its redraw attempt).
pub fn decide_probability(
    summary: &SampleSummary,
    est: &CapabilityEstimate,
    c0: f64,
    p_min: f64,
    method: ProbabilityMethod,
    inner_reps: usize,
    seed: &SeedPath,
) -> Result<Decision> {
    require_finite(c0, "c0")?;
    if !(p_min > 0.0 && p_min < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "p_min must lie in (0, 1), got {p_min}"
        )));
    }
    match method {
        ProbabilityMethod::PlugInAsymptotic => {
            if est.active_side == ActiveSide::Tied {
                return Err(Error::TiedSides);
            }
            let sigma_c = sigma_c_closed_form(est.cpk)?;
            let p = normal_cdf((summary.n as f64).sqrt() * (est.cpk - c0) / sigma_c);
            Ok(Decision::from_comparison(p, p_min))
        }
        ProbabilityMethod::NestedMonteCarlo => {
            if inner_reps < 100 {
                return Err(Error::InvalidParameter(format!(
                    "inner_reps must be at least 100, got {inner_reps}"
                )));
            }
            let spec = reconstruct_spec(summary, est)?;
            let model = ProcessModel::normal(summary.mean, summary.sd)?;
            let mut buf = vec![0.0; summary.n];
            let mut cleared: usize = 0;
            for k in 0..inner_reps {
                let rep_seed = seed.child(k as u64);
                let mut found = None;
                for attempt in 0..MAX_DEGENERATE_ATTEMPTS {
                    let mut stream = rep_seed.child(attempt).stream();
                    model.sample_into(&mut stream, &mut buf);
                    match estimate_cpk(&buf, &spec) {
                        Ok((_, e)) => {
                            found = Some(e);
                            break;
                        }
                        Err(Error::ZeroVariance { .. }) => continue,
                        Err(other) => return Err(other),
                    }
                }
                let Some(estimate) = found else {
                    return Err(Error::Computation(format!(
                        "inner replicate {k}: {MAX_DEGENERATE_ATTEMPTS} consecutive \
                         zero-variance samples"
                    )));
                };
                if estimate.cpk >= c0 {
                    cleared += 1;
                }
            }
            let p = cleared as f64 / inner_reps as f64;
            Ok(Decision::from_comparison(p, p_min))
        }
    }
}

/// Rebuilds the specification interval implied by `(summary, est)`:
/// `USL = mean + 3 sd · cpu` and `LSL = mean − 3 sd · cpl`, with infinite
/// ratios mapping back to one-sided limits.
fn reconstruct_spec(summary: &SampleSummary, est: &CapabilityEstimate) -> Result<SpecLimits> {
    let usl = if est.cpu.is_finite() {
        summary.mean + 3.0 * summary.sd * est.cpu
    } else {
        f64::INFINITY
    };
    let lsl = if est.cpl.is_finite() {
        summary.mean - 3.0 * summary.sd * est.cpl
    } else {
        f64::NEG_INFINITY
    };
    SpecLimits::new(lsl, usl)
}

/// Which decision rule a simulation should apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Deterministic,
    Margin,
    LowerConfidenceBound,
    Probability,
}

/// A fully parameterized decision rule, applicable to any `(summary, est)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecisionRuleSpec {
    pub kind: RuleKind,
    /// Contractual threshold.
    pub c0: f64,
    /// Risk level for margin and lower-confidence-bound rules.
    pub alpha: f64,
    /// Probability floor for the predictive rule.
    pub p_min: f64,
    pub method: ProbabilityMethod,
    /// Inner replications for the nested Monte Carlo method.
    pub inner_reps: usize,
    /// Scale used by the margin rule; `None` means the closed form at `c0`.
    pub margin_sigma_c: Option<f64>,
}

impl DecisionRuleSpec {
    fn base(kind: RuleKind, c0: f64) -> Self {
        DecisionRuleSpec {
            kind,
            c0,
            alpha: 0.05,
            p_min: 0.95,
            method: ProbabilityMethod::PlugInAsymptotic,
            inner_reps: 1000,
            margin_sigma_c: None,
        }
    }

    pub fn deterministic(c0: f64) -> Self {
        Self::base(RuleKind::Deterministic, c0)
    }

    pub fn margin(c0: f64, alpha: f64) -> Self {
        DecisionRuleSpec {
            alpha,
            ..Self::base(RuleKind::Margin, c0)
        }
    }

    /// Margin rule with an explicitly chosen scale (e.g. an empirical σ_C).
    pub fn margin_with_sigma(c0: f64, alpha: f64, sigma_c: f64) -> Self {
        DecisionRuleSpec {
            alpha,
            margin_sigma_c: Some(sigma_c),
            ..Self::base(RuleKind::Margin, c0)
        }
    }

    pub fn lower_confidence_bound(c0: f64, alpha: f64) -> Self {
        DecisionRuleSpec {
            alpha,
            ..Self::base(RuleKind::LowerConfidenceBound, c0)
        }
    }

    pub fn probability(c0: f64, p_min: f64, method: ProbabilityMethod, inner_reps: usize) -> Self {
        DecisionRuleSpec {
            p_min,
            method,
            inner_reps,
            ..Self::base(RuleKind::Probability, c0)
        }
    }

    /// Validates the parameters relevant to `kind`.
    pub fn validate(&self) -> Result<()> {
        require_finite(self.c0, "c0")?;
        match self.kind {
            RuleKind::Deterministic => {}
            RuleKind::Margin | RuleKind::LowerConfidenceBound => {
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "alpha must lie in (0, 1), got {}",
                        self.alpha
                    )));
                }
                if let Some(s) = self.margin_sigma_c {
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(Error::InvalidParameter(format!(
                            "margin sigma_c must be positive and finite, got {s}"
                        )));
                    }
                }
            }
            RuleKind::Probability => {
                if !(self.p_min > 0.0 && self.p_min < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "p_min must lie in (0, 1), got {}",
                        self.p_min
                    )));
                }
                if self.method == ProbabilityMethod::NestedMonteCarlo && self.inner_reps < 100 {
                    return Err(Error::InvalidParameter(format!(
                        "inner_reps must be at least 100, got {}",
                        self.inner_reps
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Applies a rule to one qualification outcome. `seed` is consumed only by the
/// nested Monte Carlo probability method.
pub fn apply_rule(
    rule: &DecisionRuleSpec,
    summary: &SampleSummary,
    est: &CapabilityEstimate,
    seed: &SeedPath,
) -> Result<Decision> {
    rule.validate()?;
    match rule.kind {
        RuleKind::Deterministic => Ok(decide_deterministic(est, rule.c0)),
        RuleKind::Margin => {
            let sigma_c = match rule.margin_sigma_c {
                Some(s) => s,
                None => sigma_c_closed_form(rule.c0)?,
            };
            let cal = calibrate_margin(rule.c0, summary.n, sigma_c, rule.alpha)?;
            Ok(decide_margin(est, &cal))
        }
        RuleKind::LowerConfidenceBound => decide_lcb(summary, est, rule.c0, rule.alpha),
        RuleKind::Probability => decide_probability(
            summary,
            est,
            rule.c0,
            rule.p_min,
            rule.method,
            rule.inner_reps,
            seed,
        ),
    }
}
