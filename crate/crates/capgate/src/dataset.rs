//! Measurement-dataset ingestion and screening: long-format CSV parsing and
//! writing, Anderson–Darling normality screening, threshold-concentration
//! tables, and a synthetic-dataset generator for end-to-end exercises.
//!
//! The on-disk format is tidy CSV with header
//! `dimension_id,lsl,usl,nominal,value`: one row per measurement, spec limits
//! and nominal repeated on every row of a dimension. `nominal` may be empty;
//! `inf`/`-inf` express unilateral limits. All rows of one dimension must be
//! contiguous and must carry identical limits and nominal.

use std::fmt::Write as _;
use std::path::Path;

use crate::capability::{summarize, CalibrationMode, ModelFamily, SpecLimits};
use crate::dist::normal_cdf;
use crate::error::{require_finite, Error, Result};
use crate::rng::SeedPath;

/// Supported dataset serializations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// Tidy CSV, one measurement per row.
    LongCsv,
}

/// One measured dimension: identifier, tolerance limits, optional nominal,
/// and its raw measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionRecord {
    pub dimension_id: String,
    pub spec: SpecLimits,
    /// Carried as metadata only; capability indices never use it.
    pub nominal: Option<f64>,
    pub measurements: Vec<f64>,
}

impl DimensionRecord {
    /// Validates the record invariants: non-empty id, at least two finite
    /// measurements.
    pub fn new(
        dimension_id: impl Into<String>,
        spec: SpecLimits,
        nominal: Option<f64>,
        measurements: Vec<f64>,
    ) -> Result<Self> {
        let dimension_id = dimension_id.into();
        if dimension_id.is_empty() {
            return Err(Error::InvalidParameter("dimension_id must be non-empty".into()));
        }
        if measurements.len() < 2 {
            return Err(Error::SampleTooSmall {
                min: 2,
                got: measurements.len(),
            });
        }
        for &v in &measurements {
            require_finite(v, "measurement")?;
        }
        if let Some(nom) = nominal {
            require_finite(nom, "nominal")?;
        }
        Ok(DimensionRecord {
            dimension_id,
            spec,
            nominal,
            measurements,
        })
    }

    pub fn n(&self) -> usize {
        self.measurements.len()
    }
}

const CSV_HEADER: [&str; 5] = ["dimension_id", "lsl", "usl", "nominal", "value"];

fn schema_err(line: u64, message: impl Into<String>) -> Error {
    Error::Schema {
        line,
        message: message.into(),
    }
}

fn parse_field(raw: &str, what: &str, line: u64) -> Result<f64> {
    let value: f64 = raw
        .trim()
        .parse()
        .map_err(|_| schema_err(line, format!("{what} is not a number: {raw:?}")))?;
    if value.is_nan() {
        return Err(schema_err(line, format!("{what} must not be NaN")));
    }
    Ok(value)
}

struct PendingDimension {
    id: String,
    lsl: f64,
    usl: f64,
    nominal: Option<f64>,
    first_line: u64,
    last_line: u64,
    values: Vec<f64>,
}

impl PendingDimension {
    fn finish(self) -> Result<DimensionRecord> {
        let spec = SpecLimits::new(self.lsl, self.usl).map_err(|e| {
            schema_err(
                self.first_line,
                format!("dimension {:?}: {e}", self.id),
            )
        })?;
        if self.values.len() < 2 {
            return Err(schema_err(
                self.last_line,
                format!(
                    "dimension {:?} has {} measurement(s); at least 2 required",
                    self.id,
                    self.values.len()
                ),
            ));
        }
        DimensionRecord::new(self.id, spec, self.nominal, self.values)
    }
}

/// Reads a measurement dataset, validating schema, per-dimension spec
/// consistency, and contiguity of dimension blocks. Errors carry the
/// 1-based line number of the offending row.
pub fn parse_dimensions(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<DimensionRecord>> {
    let path = path.as_ref();
    let DatasetFormat::LongCsv = format;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => schema_err(1, format!("cannot read CSV: {other:?}")),
        })?;

    {
        let headers = reader
            .headers()
            .map_err(|e| schema_err(1, format!("cannot read header: {e}")))?;
        let got: Vec<&str> = headers.iter().map(str::trim).collect();
        if got != CSV_HEADER {
            return Err(schema_err(
                1,
                format!(
                    "header must be exactly {:?}, got {:?}",
                    CSV_HEADER.join(","),
                    got.join(",")
                ),
            ));
        }
    }

    let mut records: Vec<DimensionRecord> = Vec::new();
    let mut seen_ids: std::collections::HashSet<String> = std::collections::HashSet::new();
    let mut pending: Option<PendingDimension> = None;

    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, csv::Position::line);
            schema_err(line, format!("malformed CSV row: {e}"))
        })?;
        let line = row.position().map_or(0, csv::Position::line);
        if row.len() != CSV_HEADER.len() {
            return Err(schema_err(
                line,
                format!("expected {} fields, got {}", CSV_HEADER.len(), row.len()),
            ));
        }
        let id = row[0].trim().to_string();
        if id.is_empty() {
            return Err(schema_err(line, "dimension_id must be non-empty"));
        }
        let lsl = parse_field(&row[1], "lsl", line)?;
        let usl = parse_field(&row[2], "usl", line)?;
        let nominal_raw = row[3].trim();
        let nominal = if nominal_raw.is_empty() {
            None
        } else {
            let nom = parse_field(nominal_raw, "nominal", line)?;
            if !nom.is_finite() {
                return Err(schema_err(line, "nominal must be finite"));
            }
            Some(nom)
        };
        let value = parse_field(&row[4], "value", line)?;
        if !value.is_finite() {
            return Err(schema_err(line, "measurement value must be finite"));
        }

        let same_block = pending.as_ref().is_some_and(|p| p.id == id);
        if same_block {
            let p = pending.as_mut().expect("checked above");
            let consistent = p.lsl.to_bits() == lsl.to_bits()
                && p.usl.to_bits() == usl.to_bits()
                && match (p.nominal, nominal) {
                    (None, None) => true,
                    (Some(a), Some(b)) => a.to_bits() == b.to_bits(),
                    _ => false,
                };
            if !consistent {
                return Err(schema_err(
                    line,
                    format!(
                        "inconsistent spec for dimension {id:?}: first declared at line {}",
                        p.first_line
                    ),
                ));
            }
            p.values.push(value);
            p.last_line = line;
        } else {
            if let Some(done) = pending.take() {
                records.push(done.finish()?);
            }
            if !seen_ids.insert(id.clone()) {
                return Err(schema_err(
                    line,
                    format!(
                        "duplicate dimension block: rows for dimension {id:?} must be contiguous"
                    ),
                ));
            }
            pending = Some(PendingDimension {
                id,
                lsl,
                usl,
                nominal,
                first_line: line,
                last_line: line,
                values: vec![value],
            });
        }
    }
    if let Some(done) = pending.take() {
        records.push(done.finish()?);
    }
    Ok(records)
}

/// Formats a float for CSV: shortest decimal that parses back to the same
/// bits (`inf`/`-inf` included), so write→parse round trips are lossless.
fn format_value(v: f64) -> String {
    format!("{v}")
}

/// Renders records to the long CSV format read by [`parse_dimensions`]
/// (the in-memory counterpart of [`write_dimensions`]).
pub fn render_dimensions(records: &[DimensionRecord], format: DatasetFormat) -> Result<String> {
    let DatasetFormat::LongCsv = format;
    let mut out = String::new();
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    for rec in records {
        let nominal = rec.nominal.map(format_value).unwrap_or_default();
        for &v in &rec.measurements {
            // Ids are written verbatim; commas/quotes in ids are not supported
            // by this schema, so reject rather than silently quote.
            if rec.dimension_id.contains([',', '"', '\n']) {
                return Err(Error::InvalidParameter(format!(
                    "dimension_id {:?} contains CSV metacharacters",
                    rec.dimension_id
                )));
            }
            writeln!(
                &mut out,
                "{},{},{},{},{}",
                rec.dimension_id,
                format_value(rec.spec.lsl()),
                format_value(rec.spec.usl()),
                nominal,
                format_value(v)
            )
            .expect("writing to a String cannot fail");
        }
    }
    Ok(out)
}

/// Writes records in the long CSV format read by [`parse_dimensions`].
pub fn write_dimensions(
    records: &[DimensionRecord],
    path: impl AsRef<Path>,
    format: DatasetFormat,
) -> Result<()> {
    let path = path.as_ref();
    let out = render_dimensions(records, format)?;
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Outcome of a normality screen.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalityResult {
    /// Small-sample-corrected Anderson–Darling statistic.
    pub statistic: f64,
    pub alpha: f64,
    /// True when the statistic stays below the critical value at `alpha`.
    pub pass: bool,
}

/// Critical values for the Anderson–Darling statistic with mean and variance
/// estimated from the sample, after the small-sample correction
/// `A²·(1 + 0.75/n + 2.25/n²)`.
const AD_CRITICAL: [(f64, f64); 5] = [
    (0.15, 0.576),
    (0.10, 0.656),
    (0.05, 0.787),
    (0.025, 0.918),
    (0.01, 1.092),
];

fn ad_critical_value(alpha: f64) -> Result<f64> {
    for (a, cv) in AD_CRITICAL {
        if (alpha - a).abs() < 1e-12 {
            return Ok(cv);
        }
    }
    let supported: Vec<String> = AD_CRITICAL.iter().map(|(a, _)| a.to_string()).collect();
    Err(Error::InvalidParameter(format!(
        "unsupported normality alpha {alpha}; supported levels: {}",
        supported.join(", ")
    )))
}

/// Anderson–Darling normality test with mean and variance estimated from the
/// data (the tail-sensitive choice for capability work). Requires `n ≥ 8`;
/// a constant sample is a zero-variance error.
pub fn normality_test(measurements: &[f64], alpha: f64) -> Result<NormalityResult> {
    if measurements.len() < 8 {
        return Err(Error::SampleTooSmall {
            min: 8,
            got: measurements.len(),
        });
    }
    let critical = ad_critical_value(alpha)?;
    let summary = summarize(measurements)?;
    let n = measurements.len();
    let mut w: Vec<f64> = measurements
        .iter()
        .map(|x| (x - summary.mean) / summary.sd)
        .collect();
    w.sort_by(|a, b| a.partial_cmp(b).expect("standardized values are finite"));

    let nf = n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        // Both tails through the complementary form keeps full precision for
        // extreme standardized values; floor avoids ln(0) for |w| beyond the
        // underflow point (the statistic is then astronomically large anyway).
        let lower = normal_cdf(w[i]).max(f64::MIN_POSITIVE);
        let upper = normal_cdf(-w[n - 1 - i]).max(f64::MIN_POSITIVE);
        sum += (2 * i + 1) as f64 * (lower.ln() + upper.ln());
    }
    let a_squared = -nf - sum / nf;
    let corrected = a_squared * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    Ok(NormalityResult {
        statistic: corrected,
        alpha,
        pass: corrected < critical,
    })
}

/// One cumulative concentration band around the threshold.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConcentrationBand {
    pub half_width: f64,
    /// Number of estimates with `|cpk_hat − c0| ≤ half_width`.
    pub count: usize,
    /// `count / total`.
    pub share: f64,
}

/// Cumulative concentration of reported indices around the threshold.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConcentrationTable {
    pub c0: f64,
    pub bands: Vec<ConcentrationBand>,
    pub total: usize,
}

/// Counts how many reported estimates fall within `±half_width` of the
/// threshold, for each band. Bands must be sorted ascending (counts are then
/// nondecreasing by construction); the estimate list must be non-empty.
pub fn concentration_table(
    estimates: &[(String, f64)],
    c0: f64,
    half_widths: &[f64],
) -> Result<ConcentrationTable> {
    require_finite(c0, "c0")?;
    if estimates.is_empty() {
        return Err(Error::InvalidParameter(
            "concentration table needs at least one estimate".into(),
        ));
    }
    if half_widths.is_empty() {
        return Err(Error::InvalidParameter("half_widths must be non-empty".into()));
    }
    for w in half_widths.windows(2) {
        if !(w[0] <= w[1]) {
            return Err(Error::InvalidParameter(format!(
                "half_widths must be sorted ascending, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    for &(_, cpk_hat) in estimates {
        require_finite(cpk_hat, "cpk_hat")?;
    }
    if !(half_widths[0] >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "half_widths must be non-negative, got {}",
            half_widths[0]
        )));
    }
    let total = estimates.len();
    let bands = half_widths
        .iter()
        .map(|&half_width| {
            let count = estimates
                .iter()
                .filter(|(_, cpk_hat)| (cpk_hat - c0).abs() <= half_width)
                .count();
            ConcentrationBand {
                half_width,
                count,
                share: count as f64 / total as f64,
            }
        })
        .collect();
    Ok(ConcentrationTable { c0, bands, total })
}

/// The standard band list: fixed widths plus the one-sided 95% instability
/// half-width `Φ⁻¹(0.95)·σ_C/√n`, sorted ascending.
pub fn default_half_widths(sigma_c: f64, n: usize) -> Result<Vec<f64>> {
    if !(sigma_c > 0.0 && sigma_c.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma_c must be positive and finite, got {sigma_c}"
        )));
    }
    if n < 2 {
        return Err(Error::SampleTooSmall { min: 2, got: n });
    }
    let kappa = crate::dist::normal_quantile(0.95)?;
    let mut widths = vec![0.01, 0.02, 0.05, 0.10, 0.15, 0.20];
    widths.push(kappa * sigma_c / (n as f64).sqrt());
    widths.sort_by(|a, b| a.partial_cmp(b).expect("finite widths"));
    Ok(widths)
}

/// One group request for the synthetic-dataset generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthGroupSpec {
    /// Index the calibrated population attains exactly.
    pub true_cpk: f64,
    /// Measurements per dimension.
    pub n: usize,
    /// Number of dimensions to generate.
    pub count: usize,
    pub family: ModelFamily,
    pub calibration: CalibrationMode,
}

/// Generates dimension records from calibrated populations, for end-to-end
/// exercises with known ground truth.
///
/// Dimension `idx` of group `g` draws from `base_seed.child(g).child(idx)`,
/// and its id encodes the group's true index and sample size (e.g.
/// `g00_cpk1.33_n32_r0007`) so downstream oracles can recover the truth. The
/// nominal is the population median.
pub fn generate_synthetic_dataset(
    groups: &[SynthGroupSpec],
    base_seed: &SeedPath,
) -> Result<Vec<DimensionRecord>> {
    if groups.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one synthetic group is required".into(),
        ));
    }
    let mut records = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        if group.count == 0 {
            return Err(Error::InvalidParameter(format!(
                "group {g}: count must be at least 1"
            )));
        }
        if group.n < 2 {
            return Err(Error::SampleTooSmall {
                min: 2,
                got: group.n,
            });
        }
        let (model, spec) =
            crate::capability::calibrate_model(group.true_cpk, group.calibration, group.family)
                .map_err(|e| e.in_context(format!("synthetic group {g}")))?;
        let nominal = model.median();
        for idx in 0..group.count {
            let mut stream = base_seed.child(g as u64).child(idx as u64).stream();
            let measurements = model.sample(&mut stream, group.n);
            let dimension_id = format!(
                "g{g:02}_cpk{}_n{}_r{idx:04}",
                group.true_cpk, group.n
            );
            records.push(DimensionRecord::new(
                dimension_id,
                spec,
                Some(nominal),
                measurements,
            )?);
        }
    }
    Ok(records)
}
