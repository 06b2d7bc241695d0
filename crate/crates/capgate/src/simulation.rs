//! The Monte Carlo engine: misclassification risk, risk surfaces, scaling
//! collapse, sampling-distribution histograms, empirical σ_C, and decision-rule
//! acceptance surfaces.
//!
//! Every operation is a pure function of its inputs and a [`SeedPath`]:
//! replicate `r` of a unit of work always draws from `seed.child(r)`, a
//! degenerate (zero-variance) sample is redrawn from `seed.child(r).child(a)`
//! for attempts `a = 0, 1, …, 99`, and grid cell `(row, col)` works under
//! `base_seed.child(row).child(col)`. Because no stream ever depends on
//! scheduling, serial and parallel runs produce bit-identical results; rayon
//! only decides who computes which replicate, never what is computed.
//!
//! Grid cells run sequentially while replicates within a cell run in parallel:
//! a single cell already saturates the thread pool, and the sequential outer
//! loop keeps error attribution and memory use simple.

use rayon::prelude::*;

use crate::asymptotics::sigma_c_closed_form;
use crate::capability::{
    calibrate_model, estimate_cnpk, estimate_cpk, CalibrationMode, CapabilityEstimate,
    ModelFamily, SampleSummary, SpecLimits, MIN_CNPK_SAMPLE,
};
use crate::decision::{decide_lcb, decide_margin, decide_probability, DecisionRuleSpec, RuleKind};
use crate::dist::{normal_cdf, ProcessModel};
use crate::error::{require_finite, Error, Result};
use crate::rng::SeedPath;

/// Replicates per parallel work chunk; fixed so chunk boundaries (and thus
/// which replicate lands where) never depend on thread count.
const CHUNK: usize = 128;

/// Maximum redraw attempts for a zero-variance sample before erroring out.
const MAX_DEGENERATE_ATTEMPTS: u64 = 100;

/// Child label reserved for a replicate's nested-decision stream. Labels
/// `0..100` are sampling attempts, so this can never collide.
const NESTED_DECISION_LABEL: u64 = 1000;

/// Which plug-in estimator the simulation replays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Cpk,
    Cnpk,
}

/// Model family, spec-limit placement, and estimator for a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub family: ModelFamily,
    pub calibration: CalibrationMode,
    pub estimator: EstimatorKind,
}

impl Default for SimConfig {
    /// One-sided normal with the classical estimator: the configuration under
    /// which the asymptotic theory is exact (uniquely active side).
    fn default() -> Self {
        SimConfig {
            family: ModelFamily::Normal,
            calibration: CalibrationMode::OneSided,
            estimator: EstimatorKind::Cpk,
        }
    }
}

impl SimConfig {
    fn min_n(&self) -> usize {
        match self.estimator {
            // The misclassification operator needs a handful of degrees of
            // freedom even for the classical estimator.
            EstimatorKind::Cpk => 4,
            EstimatorKind::Cnpk => MIN_CNPK_SAMPLE,
        }
    }

    fn validate_n(&self, n: usize) -> Result<()> {
        if n < self.min_n() {
            return Err(Error::SampleTooSmall {
                min: self.min_n(),
                got: n,
            });
        }
        Ok(())
    }
}

/// Misclassification regime relative to the threshold.
///
/// `Type1` (false acceptance) applies when the true index is below `c0`;
/// `Type2` (false rejection) when it is at or above `c0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisclassType {
    Type1,
    Type2,
}

/// Monte Carlo estimate of approval and misclassification probabilities at one
/// `(cpk_true, n)` point.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MisclassEstimate {
    pub cpk_true: f64,
    pub n: usize,
    pub reps: usize,
    /// Fraction of replicates whose estimated index cleared `c0`.
    pub p_accept: f64,
    /// `p_accept` below the threshold (false acceptance), `1 − p_accept` at or
    /// above it (false rejection).
    pub misclass: f64,
    pub misclass_type: MisclassType,
    /// Binomial standard error `√(p(1−p)/reps)` with `p = misclass`.
    pub mc_se: f64,
    /// Total zero-variance redraws across all replicates.
    pub degenerate_retries: u64,
}

fn validate_reps(reps: usize, min: usize) -> Result<()> {
    if reps < min {
        return Err(Error::InvalidParameter(format!(
            "reps must be at least {min}, got {reps}"
        )));
    }
    Ok(())
}

/// Evaluates one replicate: draw a sample of size `n`, compute the configured
/// index, redrawing (with the attempt-labelled sub-seed) on degenerate samples.
/// Returns the index value and the number of redraws used.
fn replicate_index_value(
    model: &ProcessModel,
    spec: &SpecLimits,
    n: usize,
    estimator: EstimatorKind,
    rep_seed: &SeedPath,
    buf: &mut Vec<f64>,
) -> Result<(f64, u64)> {
    buf.resize(n, 0.0);
    for attempt in 0..MAX_DEGENERATE_ATTEMPTS {
        let mut stream = rep_seed.child(attempt).stream();
        model.sample_into(&mut stream, buf);
        let outcome = match estimator {
            EstimatorKind::Cpk => estimate_cpk(buf, spec).map(|(_, est)| est.cpk),
            EstimatorKind::Cnpk => estimate_cnpk(buf, spec),
        };
        match outcome {
            Ok(value) => return Ok((value, attempt)),
            Err(Error::ZeroVariance { .. }) | Err(Error::DegenerateSpread(_)) => continue,
            Err(other) => return Err(other),
        }
    }
    Err(Error::Computation(format!(
        "{MAX_DEGENERATE_ATTEMPTS} consecutive degenerate samples (n = {n})"
    )))
}

/// Like [`replicate_index_value`] but keeps the full summary/estimate pair;
/// classical estimator only (decision rules are defined on it).
fn replicate_cpk_estimate(
    model: &ProcessModel,
    spec: &SpecLimits,
    n: usize,
    rep_seed: &SeedPath,
    buf: &mut Vec<f64>,
) -> Result<(SampleSummary, CapabilityEstimate, u64)> {
    buf.resize(n, 0.0);
    for attempt in 0..MAX_DEGENERATE_ATTEMPTS {
        let mut stream = rep_seed.child(attempt).stream();
        model.sample_into(&mut stream, buf);
        match estimate_cpk(buf, spec) {
            Ok((summary, est)) => return Ok((summary, est, attempt)),
            Err(Error::ZeroVariance { .. }) => continue,
            Err(other) => return Err(other),
        }
    }
    Err(Error::Computation(format!(
        "{MAX_DEGENERATE_ATTEMPTS} consecutive degenerate samples (n = {n})"
    )))
}

/// Runs `reps` independent replicates in parallel, writing replicate `r`'s
/// result into slot `r`. Chunked so results are bit-identical for any thread
/// count; returns the outputs plus the total degenerate-redraw count.
fn collect_replicates<T, F>(reps: usize, seed: &SeedPath, eval: F) -> Result<(Vec<T>, u64)>
where
    T: Send + Default + Clone,
    F: Fn(usize, &SeedPath, &mut Vec<f64>) -> Result<(T, u64)> + Sync,
{
    let mut out = vec![T::default(); reps];
    let retries = out
        .par_chunks_mut(CHUNK)
        .enumerate()
        .map(|(chunk_index, chunk)| -> Result<u64> {
            let mut buf: Vec<f64> = Vec::new();
            let mut retries = 0u64;
            for (offset, slot) in chunk.iter_mut().enumerate() {
                let rep = chunk_index * CHUNK + offset;
                let (value, r) = eval(rep, &seed.child(rep as u64), &mut buf)
                    .map_err(|e| e.in_context(format!("replicate {rep}")))?;
                *slot = value;
                retries += r;
            }
            Ok(retries)
        })
        .try_reduce(|| 0u64, |a, b| Ok(a + b))?;
    Ok((out, retries))
}

/// Collects the per-replicate index values for a calibrated configuration.
fn collect_index_values(
    cpk_true: f64,
    n: usize,
    reps: usize,
    config: &SimConfig,
    seed: &SeedPath,
) -> Result<(Vec<f64>, u64)> {
    config.validate_n(n)?;
    let (model, spec) = calibrate_model(cpk_true, config.calibration, config.family)?;
    collect_replicates(reps, seed, |_rep, rep_seed, buf| {
        replicate_index_value(&model, &spec, n, config.estimator, rep_seed, buf)
    })
}

/// Monte Carlo misclassification probability at one `(cpk_true, n)` point.
///
/// Calibrates a population whose index is exactly `cpk_true`, replays `reps`
/// qualifications of size `n` (replicate `r` drawing from `seed.child(r)`),
/// and counts how many estimated indices clear `c0`. Requires `reps ≥ 1000`
/// and `n ≥ 4` (`n ≥ 20` for the percentile estimator).
pub fn estimate_misclass(
    cpk_true: f64,
    n: usize,
    c0: f64,
    reps: usize,
    config: &SimConfig,
    seed: &SeedPath,
) -> Result<MisclassEstimate> {
    validate_reps(reps, 1000)?;
    require_finite(c0, "c0")?;
    let (values, degenerate_retries) = collect_index_values(cpk_true, n, reps, config, seed)?;
    let accepted = values.iter().filter(|&&v| v >= c0).count();
    let p_accept = accepted as f64 / reps as f64;
    let (misclass, misclass_type) = if cpk_true < c0 {
        (p_accept, MisclassType::Type1)
    } else {
        (1.0 - p_accept, MisclassType::Type2)
    };
    let mc_se = (misclass * (1.0 - misclass) / reps as f64).sqrt();
    Ok(MisclassEstimate {
        cpk_true,
        n,
        reps,
        p_accept,
        misclass,
        misclass_type,
        mc_se,
        degenerate_retries,
    })
}

fn validate_grid_f64(grid: &[f64], name: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} must be non-empty")));
    }
    for w in grid.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

fn validate_grid_n(grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("n_grid must be non-empty".into()));
    }
    for w in grid.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidParameter(format!(
                "n_grid must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Misclassification probabilities over a `(cpk_true, n)` grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RiskSurface {
    pub c0: f64,
    pub reps: usize,
    pub config: SimConfig,
    pub cpk_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub base_seed: SeedPath,
    /// Row-major: `cells[row * n_grid.len() + col]` is
    /// `(cpk_grid[row], n_grid[col])`.
    pub cells: Vec<MisclassEstimate>,
}

impl RiskSurface {
    /// The cell at `(cpk_grid[row], n_grid[col])`.
    pub fn cell(&self, row: usize, col: usize) -> &MisclassEstimate {
        &self.cells[row * self.n_grid.len() + col]
    }
}

/// Evaluates [`estimate_misclass`] on every grid cell; cell `(row, col)` works
/// under `base_seed.child(row).child(col)`, so the surface is reproducible
/// cell-by-cell and in total regardless of execution order.
pub fn risk_surface(
    cpk_grid: &[f64],
    n_grid: &[usize],
    c0: f64,
    reps: usize,
    config: &SimConfig,
    base_seed: &SeedPath,
) -> Result<RiskSurface> {
    validate_grid_f64(cpk_grid, "cpk_grid")?;
    validate_grid_n(n_grid)?;
    let mut cells = Vec::with_capacity(cpk_grid.len() * n_grid.len());
    for (row, &cpk_true) in cpk_grid.iter().enumerate() {
        for (col, &n) in n_grid.iter().enumerate() {
            let cell_seed = base_seed.child(row as u64).child(col as u64);
            let cell = estimate_misclass(cpk_true, n, c0, reps, config, &cell_seed)
                .map_err(|e| e.in_context(format!("cell (cpk_true={cpk_true}, n={n})")))?;
            cells.push(cell);
        }
    }
    Ok(RiskSurface {
        c0,
        reps,
        config: *config,
        cpk_grid: cpk_grid.to_vec(),
        n_grid: n_grid.to_vec(),
        base_seed: base_seed.clone(),
        cells,
    })
}

/// Where the collapse gets its scale parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaCSource {
    /// `√(1/9 + c0²/2)`.
    ClosedForm,
    /// [`sigma_c_empirical`] at the threshold, per sample size.
    Empirical,
}

/// One point of the scaling collapse: Monte Carlo acceptance at
/// `cpk_true = c0 + z σ_C/√n` against the theoretical limit `Φ(z)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CollapsePoint {
    pub z: f64,
    pub n: usize,
    pub p_mc: f64,
    pub phi_z: f64,
    /// `p_mc − phi_z`.
    pub residual: f64,
}

/// A `(z, n)` cell whose implied `cpk_true` was non-positive and therefore
/// unsimulatable.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SkippedCollapseCell {
    pub z: f64,
    pub n: usize,
    pub cpk_true: f64,
}

/// The σ_C used for one sample size.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SigmaByN {
    pub n: usize,
    pub sigma_c: f64,
}

/// Scaling-collapse results over a `z` grid and a set of sample sizes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalingCollapse {
    pub c0: f64,
    pub reps: usize,
    pub sigma_c_source: SigmaCSource,
    pub base_seed: SeedPath,
    pub sigma_by_n: Vec<SigmaByN>,
    pub points: Vec<CollapsePoint>,
    pub skipped: Vec<SkippedCollapseCell>,
}

/// Tests the `√n` scaling law: for each `(z, n)` the true index is placed at
/// `c0 + z σ_C/√n` and the Monte Carlo acceptance probability is compared with
/// the limit `Φ(z)`, which depends on `z` alone.
///
/// Runs the default one-sided normal configuration (the regime where the limit
/// theorem applies). Cells whose implied index is non-positive are skipped and
/// reported. Cell `(n index i, z index j)` works under
/// `seed.child(0).child(i).child(j)`; empirical σ_C estimation for sample size
/// `i` works under `seed.child(1).child(i)`. Requires `reps ≥ 10⁴`.
pub fn scaling_collapse(
    z_grid: &[f64],
    n_list: &[usize],
    c0: f64,
    reps: usize,
    sigma_c_source: SigmaCSource,
    base_seed: &SeedPath,
) -> Result<ScalingCollapse> {
    validate_reps(reps, 10_000)?;
    require_finite(c0, "c0")?;
    if z_grid.is_empty() {
        return Err(Error::InvalidParameter("z_grid must be non-empty".into()));
    }
    for &z in z_grid {
        require_finite(z, "z")?;
    }
    validate_grid_n(n_list)?;
    let config = SimConfig::default();
    let mut sigma_by_n = Vec::with_capacity(n_list.len());
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for (i, &n) in n_list.iter().enumerate() {
        let sigma_c = match sigma_c_source {
            SigmaCSource::ClosedForm => sigma_c_closed_form(c0)?,
            SigmaCSource::Empirical => {
                sigma_c_empirical(c0, n, &config, reps, &base_seed.child(1).child(i as u64))
                    .map_err(|e| e.in_context(format!("empirical sigma_c at n={n}")))?
            }
        };
        sigma_by_n.push(SigmaByN { n, sigma_c });
        let sqrt_n = (n as f64).sqrt();
        for (j, &z) in z_grid.iter().enumerate() {
            let cpk_true = c0 + z * sigma_c / sqrt_n;
            if cpk_true <= 0.0 {
                skipped.push(SkippedCollapseCell { z, n, cpk_true });
                continue;
            }
            let cell_seed = base_seed.child(0).child(i as u64).child(j as u64);
            let est = estimate_misclass(cpk_true, n, c0, reps, &config, &cell_seed)
                .map_err(|e| e.in_context(format!("collapse cell (z={z}, n={n})")))?;
            let phi_z = normal_cdf(z);
            points.push(CollapsePoint {
                z,
                n,
                p_mc: est.p_accept,
                phi_z,
                residual: est.p_accept - phi_z,
            });
        }
    }
    Ok(ScalingCollapse {
        c0,
        reps,
        sigma_c_source,
        base_seed: base_seed.clone(),
        sigma_by_n,
        points,
        skipped,
    })
}

/// Fixed-width histogram of the estimator's sampling distribution for one `n`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EstimateHistogram {
    pub n: usize,
    /// Count per bin; bin `k` covers `[origin + k·width, origin + (k+1)·width)`
    /// (last bin closed). Counts sum to `reps` exactly.
    pub counts: Vec<u64>,
    /// Exact Monte Carlo share of estimates strictly below the threshold.
    pub share_below: f64,
}

/// Sampling distributions of the estimated index across sample sizes, on a
/// common fixed-width grid for overlay comparison.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SamplingDistribution {
    pub cpk_true: f64,
    pub c0: f64,
    pub reps: usize,
    pub bin_width: f64,
    /// Left edge of bin 0.
    pub origin: f64,
    pub base_seed: SeedPath,
    pub histograms: Vec<EstimateHistogram>,
}

/// Simulates the sampling distribution of `Ĉ_pk` (default one-sided normal
/// configuration) for each sample size, binning all of them on a common grid.
///
/// The bin width follows the robust-spread rule `2·IQR·reps^{−1/3}` computed
/// from the *first* sample size, so overlays across `n` share their grid. The
/// `n`-th list entry works under `seed.child(i)` with the usual replicate
/// children. Requires `reps ≥ 10⁴`.
pub fn sampling_distribution(
    cpk_true: f64,
    n_list: &[usize],
    c0: f64,
    reps: usize,
    base_seed: &SeedPath,
) -> Result<SamplingDistribution> {
    validate_reps(reps, 10_000)?;
    require_finite(c0, "c0")?;
    validate_grid_n(n_list)?;
    let config = SimConfig::default();
    let mut all_values: Vec<Vec<f64>> = Vec::with_capacity(n_list.len());
    for (i, &n) in n_list.iter().enumerate() {
        let (values, _) =
            collect_index_values(cpk_true, n, reps, &config, &base_seed.child(i as u64))
                .map_err(|e| e.in_context(format!("sampling distribution at n={n}")))?;
        all_values.push(values);
    }

    // Freedman–Diaconis-style width from the first sample size.
    let mut first_sorted = all_values[0].clone();
    first_sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
    let iqr = crate::capability::empirical_quantile(&first_sorted, 0.75)?
        - crate::capability::empirical_quantile(&first_sorted, 0.25)?;
    let bin_width = 2.0 * iqr / (reps as f64).cbrt();
    if !(bin_width > 0.0) {
        return Err(Error::Computation(
            "histogram bin width degenerated to zero (no spread in estimates)".into(),
        ));
    }
    let origin = all_values
        .iter()
        .flat_map(|v| v.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let top = all_values
        .iter()
        .flat_map(|v| v.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let n_bins = (((top - origin) / bin_width).ceil() as usize).max(1);

    let histograms = n_list
        .iter()
        .zip(&all_values)
        .map(|(&n, values)| {
            let mut counts = vec![0u64; n_bins];
            let mut below = 0usize;
            for &v in values {
                let idx = (((v - origin) / bin_width).floor() as usize).min(n_bins - 1);
                counts[idx] += 1;
                if v < c0 {
                    below += 1;
                }
            }
            EstimateHistogram {
                n,
                counts,
                share_below: below as f64 / reps as f64,
            }
        })
        .collect();

    Ok(SamplingDistribution {
        cpk_true,
        c0,
        reps,
        bin_width,
        origin,
        base_seed: base_seed.clone(),
        histograms,
    })
}

/// Monte Carlo estimate of the dispersion of `√n (Ĉ − cpk_true)`: the sample
/// standard deviation (reps−1 denominator) across `reps` replicates.
///
/// Requires `reps ≥ 10⁴`. Note the closed form `√(1/9 + c²/2)` is the limit of
/// this quantity only under a uniquely active side; centered (tied) or skewed
/// configurations measure genuinely different dispersions.
pub fn sigma_c_empirical(
    cpk_true: f64,
    n: usize,
    config: &SimConfig,
    reps: usize,
    seed: &SeedPath,
) -> Result<f64> {
    validate_reps(reps, 10_000)?;
    let (values, _) = collect_index_values(cpk_true, n, reps, config, seed)?;
    let sqrt_n = (n as f64).sqrt();
    let mean = values
        .iter()
        .map(|v| sqrt_n * (v - cpk_true))
        .sum::<f64>()
        / reps as f64;
    let ss = values
        .iter()
        .map(|v| {
            let d = sqrt_n * (v - cpk_true) - mean;
            d * d
        })
        .sum::<f64>();
    Ok((ss / (reps - 1) as f64).sqrt())
}

/// Acceptance probability of a decision rule at one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RuleSurfaceCell {
    pub cpk_true: f64,
    pub n: usize,
    pub reps: usize,
    pub accept_prob: f64,
    pub degenerate_retries: u64,
}

/// Acceptance probabilities of one decision rule over a `(cpk_true, n)` grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RuleSurface {
    pub rule: DecisionRuleSpec,
    pub config: SimConfig,
    pub reps: usize,
    pub cpk_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub base_seed: SeedPath,
    /// Row-major like [`RiskSurface::cells`].
    pub cells: Vec<RuleSurfaceCell>,
}

impl RuleSurface {
    pub fn cell(&self, row: usize, col: usize) -> &RuleSurfaceCell {
        &self.cells[row * self.n_grid.len() + col]
    }
}

/// Fraction of replicates a decision rule accepts, per grid cell.
///
/// Seeding matches [`risk_surface`] exactly (cell `(row, col)` →
/// `base_seed.child(row).child(col)`, replicate `r` → `.child(r)`, attempt `a`
/// → `.child(a)`), so a deterministic rule's acceptance surface is
/// bit-identical to `1` minus/plus the corresponding risk surface. The nested
/// Monte Carlo probability rule draws its inner replicates from the reserved
/// child label 1000 of each replicate seed. Requires the classical estimator
/// (rules are defined on `Ĉ_pk`) and `reps ≥ 1000`.
pub fn rule_acceptance_surface(
    rule: &DecisionRuleSpec,
    cpk_grid: &[f64],
    n_grid: &[usize],
    reps: usize,
    config: &SimConfig,
    base_seed: &SeedPath,
) -> Result<RuleSurface> {
    rule.validate()?;
    validate_reps(reps, 1000)?;
    if config.estimator != EstimatorKind::Cpk {
        return Err(Error::InvalidParameter(
            "decision rules are defined on the classical estimator; \
             set estimator = cpk"
                .into(),
        ));
    }
    validate_grid_f64(cpk_grid, "cpk_grid")?;
    validate_grid_n(n_grid)?;

    let mut cells = Vec::with_capacity(cpk_grid.len() * n_grid.len());
    for (row, &cpk_true) in cpk_grid.iter().enumerate() {
        for (col, &n) in n_grid.iter().enumerate() {
            config.validate_n(n)?;
            let (model, spec) = calibrate_model(cpk_true, config.calibration, config.family)
                .map_err(|e| e.in_context(format!("cell (cpk_true={cpk_true}, n={n})")))?;
            // The margin rule's adjusted threshold depends only on (c0, n, α),
            // so it is resolved once per cell.
            let margin_cal = match rule.kind {
                RuleKind::Margin => {
                    let sigma_c = match rule.margin_sigma_c {
                        Some(s) => s,
                        None => sigma_c_closed_form(rule.c0)?,
                    };
                    Some(crate::asymptotics::calibrate_margin(
                        rule.c0, n, sigma_c, rule.alpha,
                    )?)
                }
                _ => None,
            };
            let cell_seed = base_seed.child(row as u64).child(col as u64);
            let (accepts, degenerate_retries): (Vec<bool>, u64) =
                collect_replicates(reps, &cell_seed, |_rep, rep_seed, buf| {
                    let (summary, est, retries) =
                        replicate_cpk_estimate(&model, &spec, n, rep_seed, buf)?;
                    let decision = match rule.kind {
                        RuleKind::Deterministic => {
                            crate::decision::decide_deterministic(&est, rule.c0)
                        }
                        RuleKind::Margin => {
                            decide_margin(&est, margin_cal.as_ref().expect("resolved above"))
                        }
                        RuleKind::LowerConfidenceBound => {
                            decide_lcb(&summary, &est, rule.c0, rule.alpha)?
                        }
                        RuleKind::Probability => decide_probability(
                            &summary,
                            &est,
                            rule.c0,
                            rule.p_min,
                            rule.method,
                            rule.inner_reps,
                            &rep_seed.child(NESTED_DECISION_LABEL),
                        )?,
                    };
                    Ok((decision.accept, retries))
                })
                .map_err(|e| e.in_context(format!("cell (cpk_true={cpk_true}, n={n})")))?;
            let accepted = accepts.iter().filter(|&&a| a).count();
            cells.push(RuleSurfaceCell {
                cpk_true,
                n,
                reps,
                accept_prob: accepted as f64 / reps as f64,
                degenerate_retries,
            });
        }
    }
    Ok(RuleSurface {
        rule: *rule,
        config: *config,
        reps,
        cpk_grid: cpk_grid.to_vec(),
        n_grid: n_grid.to_vec(),
        base_seed: base_seed.clone(),
        cells,
    })
}
