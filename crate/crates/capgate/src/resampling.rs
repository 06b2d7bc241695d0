//! Bootstrap decision-instability analysis of real (or synthetic) measurement
//! datasets: per-dimension flip rates, dataset-level summaries, and the binned
//! instability-vs-distance curve.
//!
//! A dimension's flip rate measures *conditional* decision instability given
//! the one dataset that was actually observed — how often the accept/reject
//! verdict would flip under bootstrap replication of that dataset. It is not
//! the population misclassification probability (which conditions on the true
//! index instead) and is bounded by 0.5 by construction.

use rayon::prelude::*;

use crate::capability::{empirical_quantile, estimate_cpk};
use crate::dataset::DimensionRecord;
use crate::error::{require_finite, Error, Result};
use crate::rng::SeedPath;

/// Default number of bootstrap resamples.
pub const DEFAULT_BOOTSTRAP_REPS: usize = 5000;

/// Bootstrap verdict-stability summary for one dimension.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BootstrapSummary {
    pub dimension_id: String,
    /// Measurements in the dimension (resample size).
    pub n: usize,
    /// Requested resamples (the denominator excludes `skipped`).
    pub reps: usize,
    /// Index estimated from the original measurements.
    pub cpk_hat: f64,
    /// Fraction of retained resamples whose re-estimated index cleared `c0`.
    pub p_hat: f64,
    /// `min(p_hat, 1 − p_hat)`: 0 when the verdict is perfectly stable, 0.5
    /// when approval and rejection occur equally often.
    pub flip_rate: f64,
    /// Resamples that stayed zero-variance even after one retry.
    pub skipped: usize,
    pub seed: SeedPath,
}

/// Nonparametric bootstrap of the approval decision for one dimension.
///
/// Draws `reps` with-replacement resamples of size `n` from the raw
/// measurements and re-estimates the index on each. Resample `b` draws from
/// `seed.child(b).child(0)`; a zero-variance resample is retried once from
/// `seed.child(b).child(1)` and skipped (and counted) if still degenerate,
/// so discretized gauge data cannot abort the analysis. Requires
/// `reps ≥ 1000`; all-identical measurements are an error (no resample could
/// ever succeed).
pub fn bootstrap_dimension(
    record: &DimensionRecord,
    c0: f64,
    reps: usize,
    seed: &SeedPath,
) -> Result<BootstrapSummary> {
    require_finite(c0, "c0")?;
    if reps < 1000 {
        return Err(Error::InvalidParameter(format!(
            "reps must be at least 1000, got {reps}"
        )));
    }
    let xs = &record.measurements;
    let n = xs.len();
    let (_, original) = estimate_cpk(xs, &record.spec)?;

    let mut resample = vec![0.0; n];
    let mut accepted = 0usize;
    let mut skipped = 0usize;
    for b in 0..reps {
        let mut verdict = None;
        for attempt in 0..2u64 {
            let mut stream = seed.child(b as u64).child(attempt).stream();
            for slot in resample.iter_mut() {
                *slot = xs[stream.next_index(n)];
            }
            match estimate_cpk(&resample, &record.spec) {
                Ok((_, est)) => {
                    verdict = Some(est.cpk >= c0);
                    break;
                }
                Err(Error::ZeroVariance { .. }) => continue,
                Err(other) => return Err(other),
            }
        }
        match verdict {
            Some(true) => accepted += 1,
            Some(false) => {}
            None => skipped += 1,
        }
    }
    let retained = reps - skipped;
    if retained == 0 {
        return Err(Error::Computation(format!(
            "every bootstrap resample of dimension {:?} was degenerate",
            record.dimension_id
        )));
    }
    let p_hat = accepted as f64 / retained as f64;
    Ok(BootstrapSummary {
        dimension_id: record.dimension_id.clone(),
        n,
        reps,
        cpk_hat: original.cpk,
        p_hat,
        flip_rate: p_hat.min(1.0 - p_hat),
        skipped,
        seed: seed.clone(),
    })
}

/// Dataset-level flip-rate statistics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetStats {
    pub median_flip: f64,
    /// Share of dimensions with flip rate above 0.20.
    pub share_above_020: f64,
    /// Share of dimensions with flip rate above 0.30.
    pub share_above_030: f64,
    /// 90th percentile of the flip-rate distribution.
    pub percentile_90: f64,
}

/// A dimension the analysis had to drop, with the reason.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RecordFailure {
    pub dimension_id: String,
    pub message: String,
}

/// Full-dataset bootstrap analysis.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetAnalysis {
    pub c0: f64,
    pub reps: usize,
    pub base_seed: SeedPath,
    pub summaries: Vec<BootstrapSummary>,
    pub stats: DatasetStats,
    /// Per-dimension failures; never fatal to the rest of the dataset.
    pub failures: Vec<RecordFailure>,
}

/// FNV-1a hash of the dimension id: gives every dimension a stable derived
/// seed that depends only on its name, not on its position in the file.
fn dimension_seed_label(dimension_id: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for byte in dimension_id.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bootstraps every dimension of a dataset (in parallel; dimension order and
/// results are schedule-independent because each dimension's seed is
/// `base_seed.child(fnv1a(dimension_id))`) and aggregates flip-rate
/// statistics. Per-dimension errors are collected, not fatal; the analysis
/// fails only when no dimension at all could be summarized.
pub fn analyze_dataset(
    records: &[DimensionRecord],
    c0: f64,
    reps: usize,
    base_seed: &SeedPath,
) -> Result<DatasetAnalysis> {
    if records.is_empty() {
        return Err(Error::InvalidParameter(
            "dataset analysis needs at least one dimension".into(),
        ));
    }
    // Parameter problems hit every dimension identically; reject them here
    // instead of demoting them to a wall of per-dimension failures.
    require_finite(c0, "c0")?;
    if reps < 1000 {
        return Err(Error::InvalidParameter(format!(
            "reps must be at least 1000, got {reps}"
        )));
    }
    let outcomes: Vec<std::result::Result<BootstrapSummary, RecordFailure>> = records
        .par_iter()
        .map(|record| {
            let seed = base_seed.child(dimension_seed_label(&record.dimension_id));
            bootstrap_dimension(record, c0, reps, &seed).map_err(|e| RecordFailure {
                dimension_id: record.dimension_id.clone(),
                message: e.to_string(),
            })
        })
        .collect();

    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(s) => summaries.push(s),
            Err(f) => failures.push(f),
        }
    }
    if summaries.is_empty() {
        return Err(Error::Computation(
            "no dimension produced a bootstrap summary".into(),
        ));
    }

    let mut flips: Vec<f64> = summaries.iter().map(|s| s.flip_rate).collect();
    flips.sort_by(|a, b| a.partial_cmp(b).expect("flip rates are finite"));
    let m = flips.len() as f64;
    let stats = DatasetStats {
        median_flip: empirical_quantile(&flips, 0.5)?,
        share_above_020: flips.iter().filter(|&&f| f > 0.20).count() as f64 / m,
        share_above_030: flips.iter().filter(|&&f| f > 0.30).count() as f64 / m,
        percentile_90: empirical_quantile(&flips, 0.9)?,
    };
    Ok(DatasetAnalysis {
        c0,
        reps,
        base_seed: base_seed.clone(),
        summaries,
        stats,
        failures,
    })
}

/// How curve bins are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningKind {
    /// Equal-count bins over the observed distances.
    Quantile,
}

/// One bin of the instability curve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InstabilityBin {
    /// Smallest observed distance in the bin.
    pub distance_lo: f64,
    /// Largest observed distance in the bin.
    pub distance_hi: f64,
    pub mean_flip: f64,
    pub q25_flip: f64,
    pub q75_flip: f64,
    pub count: usize,
}

/// Bin-averaged flip rate as a function of distance from the threshold.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InstabilityCurve {
    pub c0: f64,
    pub binning: BinningKind,
    pub max_distance: f64,
    pub bins: Vec<InstabilityBin>,
}

/// Bins dimensions by `|cpk_hat − c0|` into `n_bins` equal-count (quantile)
/// bins, truncated at `max_distance`, and reports each bin's mean and
/// interquartile flip rate. Requires `n_bins ≥ 2` and at least `n_bins`
/// dimensions within range.
pub fn instability_curve(
    summaries: &[BootstrapSummary],
    c0: f64,
    n_bins: usize,
    max_distance: f64,
) -> Result<InstabilityCurve> {
    require_finite(c0, "c0")?;
    if n_bins < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_bins must be at least 2, got {n_bins}"
        )));
    }
    if !(max_distance > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "max_distance must be positive, got {max_distance}"
        )));
    }
    // Sort by (distance, id) so the partition is deterministic even with tied
    // distances.
    let mut in_range: Vec<(f64, &str, f64)> = summaries
        .iter()
        .map(|s| ((s.cpk_hat - c0).abs(), s.dimension_id.as_str(), s.flip_rate))
        .filter(|(d, _, _)| *d <= max_distance)
        .collect();
    if in_range.len() < n_bins {
        return Err(Error::InvalidParameter(format!(
            "need at least {n_bins} dimensions within distance {max_distance} of the \
             threshold, found {}",
            in_range.len()
        )));
    }
    in_range.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("distances are finite")
            .then_with(|| a.1.cmp(b.1))
    });

    let m = in_range.len();
    let mut bins = Vec::with_capacity(n_bins);
    for k in 0..n_bins {
        let start = k * m / n_bins;
        let end = (k + 1) * m / n_bins;
        let chunk = &in_range[start..end];
        let mut flips: Vec<f64> = chunk.iter().map(|(_, _, f)| *f).collect();
        flips.sort_by(|a, b| a.partial_cmp(b).expect("flip rates are finite"));
        bins.push(InstabilityBin {
            distance_lo: chunk.first().expect("chunks are non-empty").0,
            distance_hi: chunk.last().expect("chunks are non-empty").0,
            mean_flip: flips.iter().sum::<f64>() / flips.len() as f64,
            q25_flip: empirical_quantile(&flips, 0.25)?,
            q75_flip: empirical_quantile(&flips, 0.75)?,
            count: chunk.len(),
        });
    }
    Ok(InstabilityCurve {
        c0,
        binning: BinningKind::Quantile,
        max_distance,
        bins,
    })
}
