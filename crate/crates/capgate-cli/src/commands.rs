//! The eight subcommands: argument definitions (clap) and their
//! implementations. Every command stages its outputs in an [`OutputSet`] and
//! commits them together with a run manifest; nothing touches disk until the
//! whole computation has succeeded.

use std::path::PathBuf;

use capgate::asymptotics::{calibrate_margin, sigma_c_closed_form};
use capgate::capability::{
    estimate_cnpk, estimate_cpk, ActiveSide, CalibrationMode, ModelFamily,
};
use capgate::dataset::{
    concentration_table, default_half_widths, generate_synthetic_dataset, normality_test,
    parse_dimensions, render_dimensions, ConcentrationTable, DatasetFormat, DimensionRecord,
    NormalityResult, SynthGroupSpec,
};
use capgate::decision::{decide_lcb, DecisionRuleSpec, ProbabilityMethod, RuleKind};
use capgate::dist::normal_cdf;
use capgate::resampling::{analyze_dataset, instability_curve, DatasetAnalysis};
use capgate::rng::SeedPath;
use capgate::simulation::{
    risk_surface, rule_acceptance_surface, scaling_collapse, sigma_c_empirical, EstimatorKind,
    MisclassType, RiskSurface, RuleSurface, ScalingCollapse, SigmaCSource, SimConfig,
};
use capgate::{Error, Result};

use crate::output::{csv_num, OutputSet};

/// Resolved global options shared by every command.
pub struct Ctx {
    pub seed: u64,
    pub c0: f64,
    pub out: PathBuf,
    pub format: FileFormat,
    pub gnuplot: bool,
    pub started_at: chrono::DateTime<chrono::Utc>,
}

impl Ctx {
    fn base_seed(&self) -> SeedPath {
        SeedPath::new(self.seed)
    }

    fn outputs(&self) -> OutputSet {
        OutputSet::new(&self.out)
    }

    /// Commands that emit no plot data reject `--gnuplot-script` outright.
    fn forbid_gnuplot(&self, command: &str) -> Result<()> {
        if self.gnuplot {
            return Err(Error::InvalidParameter(format!(
                "`{command}` emits no plot data; --gnuplot-script does not apply"
            )));
        }
        Ok(())
    }

    /// Plot scripts read the CSV data file, so they require `--format csv`.
    fn gnuplot_wants_csv(&self) -> Result<()> {
        if self.gnuplot && self.format != FileFormat::Csv {
            return Err(Error::InvalidParameter(
                "--gnuplot-script requires --format csv (the script reads the CSV file)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FileFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FamilyArg {
    Normal,
    Lognormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CalibrationArg {
    OneSided,
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EstimatorArg {
    Cpk,
    Cnpk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SigmaSourceArg {
    ClosedForm,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodArg {
    PlugIn,
    Nested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RuleArg {
    Deterministic,
    Margin,
    Lcb,
    Probability,
}

fn model_family(family: FamilyArg, log_sd: f64) -> ModelFamily {
    match family {
        FamilyArg::Normal => ModelFamily::Normal,
        FamilyArg::Lognormal => ModelFamily::ShiftedLognormal { log_sd },
    }
}

fn calibration_mode(c: CalibrationArg) -> CalibrationMode {
    match c {
        CalibrationArg::OneSided => CalibrationMode::OneSided,
        CalibrationArg::Centered => CalibrationMode::Centered,
    }
}

fn estimator_kind(e: EstimatorArg) -> EstimatorKind {
    match e {
        EstimatorArg::Cpk => EstimatorKind::Cpk,
        EstimatorArg::Cnpk => EstimatorKind::Cnpk,
    }
}

fn family_name(f: FamilyArg) -> &'static str {
    match f {
        FamilyArg::Normal => "normal",
        FamilyArg::Lognormal => "lognormal",
    }
}

fn calibration_name(c: CalibrationArg) -> &'static str {
    match c {
        CalibrationArg::OneSided => "one_sided",
        CalibrationArg::Centered => "centered",
    }
}

fn estimator_name(e: EstimatorArg) -> &'static str {
    match e {
        EstimatorArg::Cpk => "cpk",
        EstimatorArg::Cnpk => "cnpk",
    }
}

fn misclass_type_name(t: MisclassType) -> &'static str {
    match t {
        MisclassType::Type1 => "type1",
        MisclassType::Type2 => "type2",
    }
}

fn rule_kind_name(k: RuleKind) -> &'static str {
    match k {
        RuleKind::Deterministic => "deterministic",
        RuleKind::Margin => "margin",
        RuleKind::LowerConfidenceBound => "lcb",
        RuleKind::Probability => "probability",
    }
}

/// Builds an inclusive arithmetic grid; tolerates the usual floating-point
/// shortfall at the upper end.
fn build_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "grid step must be positive and finite, got {step}"
        )));
    }
    if !(max >= min) || !min.is_finite() || !max.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "grid bounds must be finite with max ≥ min, got [{min}, {max}]"
        )));
    }
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| min + step * i as f64).collect())
}

fn require_input_file(path: &std::path::Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::InvalidParameter(format!(
            "input file {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

/// Estimate capability indices, decisions, threshold concentration, and
/// normality screening for a measurement dataset (always writes JSON).
#[derive(Debug, clap::Args)]
pub struct EstimateArgs {
    /// Long-format measurement CSV (dimension_id,lsl,usl,nominal,value).
    pub input: PathBuf,
    /// Significance level of the normality screen (0.15/0.10/0.05/0.025/0.01).
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Confidence level parameter of the reported lower confidence bound.
    #[arg(long, default_value_t = 0.05)]
    pub lcb_alpha: f64,
}

#[derive(serde::Serialize)]
struct DimensionEstimate {
    dimension_id: String,
    n: usize,
    mean: f64,
    sd: f64,
    /// Per-side ratios; one-sided limits make the absent side `null`.
    cpu: f64,
    cpl: f64,
    cpk_hat: f64,
    active_side: ActiveSide,
    /// Percentile-based index; `null` when `n < 20` or percentile ties.
    cnpk_hat: Option<f64>,
    /// Plain threshold verdict `cpk_hat ≥ c0`.
    accept_threshold: bool,
    /// Normal-theory lower confidence bound and its verdict (`null` when the
    /// two sides are tied, where the bound's variance formula is invalid).
    lcb: Option<f64>,
    accept_lcb: Option<bool>,
    /// Plug-in asymptotic probability that a replicate study accepts.
    prob_above_c0: Option<f64>,
    /// `null` when `n < 8` (screen not applicable).
    normality: Option<NormalityResult>,
}

#[derive(serde::Serialize)]
struct FailureNote {
    dimension_id: String,
    message: String,
}

#[derive(serde::Serialize)]
struct NormalityTally {
    screened: usize,
    passed: usize,
    failed: usize,
    /// Dimensions too small for the screen (`n < 8`).
    unscreened: usize,
}

#[derive(serde::Serialize)]
struct EstimateReport {
    c0: f64,
    normality_alpha: f64,
    lcb_alpha: f64,
    dimension_count: usize,
    dimensions: Vec<DimensionEstimate>,
    failures: Vec<FailureNote>,
    /// Concentration of estimated indices around the threshold; the scaled
    /// boundary band uses the median sample size below.
    concentration: ConcentrationTable,
    concentration_reference_n: usize,
    normality: NormalityTally,
}

pub fn run_estimate(ctx: &Ctx, args: &EstimateArgs) -> Result<()> {
    ctx.forbid_gnuplot("estimate")?;
    require_input_file(&args.input)?;
    let records = parse_dimensions(&args.input, DatasetFormat::LongCsv)?;
    if records.is_empty() {
        return Err(Error::InvalidParameter(
            "input dataset contains no dimensions".into(),
        ));
    }

    let mut dimensions = Vec::new();
    let mut failures = Vec::new();
    for record in &records {
        match estimate_one(record, ctx.c0, args) {
            Ok(d) => dimensions.push(d),
            Err(e) => failures.push(FailureNote {
                dimension_id: record.dimension_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    if dimensions.is_empty() {
        return Err(Error::InvalidParameter(
            "no dimension could be estimated (see failures in the input data)".into(),
        ));
    }

    let estimates: Vec<(String, f64)> = dimensions
        .iter()
        .map(|d| (d.dimension_id.clone(), d.cpk_hat))
        .collect();
    let mut ns: Vec<usize> = dimensions.iter().map(|d| d.n).collect();
    ns.sort_unstable();
    let reference_n = ns[(ns.len() - 1) / 2];
    let widths = default_half_widths(sigma_c_closed_form(ctx.c0)?, reference_n)?;
    let concentration = concentration_table(&estimates, ctx.c0, &widths)?;

    let screened: Vec<&DimensionEstimate> =
        dimensions.iter().filter(|d| d.normality.is_some()).collect();
    let passed = screened
        .iter()
        .filter(|d| d.normality.as_ref().is_some_and(|r| r.pass))
        .count();
    let normality = NormalityTally {
        screened: screened.len(),
        passed,
        failed: screened.len() - passed,
        unscreened: dimensions.len() - screened.len(),
    };

    let report = EstimateReport {
        c0: ctx.c0,
        normality_alpha: args.alpha,
        lcb_alpha: args.lcb_alpha,
        dimension_count: dimensions.len(),
        dimensions,
        failures,
        concentration,
        concentration_reference_n: reference_n,
        normality,
    };

    let mut out = ctx.outputs();
    out.add_json("estimate.json", &report)?;
    out.commit(
        "estimate",
        serde_json::json!({
            "input": args.input.display().to_string(),
            "c0": ctx.c0,
            "alpha": args.alpha,
            "lcb_alpha": args.lcb_alpha,
        }),
        ctx.seed,
        ctx.started_at,
    )
}

fn estimate_one(record: &DimensionRecord, c0: f64, args: &EstimateArgs) -> Result<DimensionEstimate> {
    let (summary, est) = estimate_cpk(&record.measurements, &record.spec)?;
    let cnpk_hat = estimate_cnpk(&record.measurements, &record.spec).ok();
    let normality = if record.n() >= 8 {
        Some(normality_test(&record.measurements, args.alpha)?)
    } else {
        None
    };
    let (lcb, accept_lcb, prob_above_c0) = if est.active_side == ActiveSide::Tied {
        (None, None, None)
    } else {
        let decision = decide_lcb(&summary, &est, c0, args.lcb_alpha)?;
        let sigma_c = sigma_c_closed_form(est.cpk)?;
        let prob = normal_cdf((summary.n as f64).sqrt() * (est.cpk - c0) / sigma_c);
        (Some(decision.statistic), Some(decision.accept), Some(prob))
    };
    Ok(DimensionEstimate {
        dimension_id: record.dimension_id.clone(),
        n: summary.n,
        mean: summary.mean,
        sd: summary.sd,
        cpu: est.cpu,
        cpl: est.cpl,
        cpk_hat: est.cpk,
        active_side: est.active_side,
        cnpk_hat,
        accept_threshold: est.cpk >= c0,
        lcb,
        accept_lcb,
        prob_above_c0,
        normality,
    })
}

// ---------------------------------------------------------------------------
// surface
// ---------------------------------------------------------------------------

/// Monte Carlo misclassification-risk surface over a (true C_pk, n) grid.
#[derive(Debug, clap::Args)]
pub struct SurfaceArgs {
    #[arg(long, default_value_t = 1.13)]
    pub cpk_min: f64,
    #[arg(long, default_value_t = 1.53)]
    pub cpk_max: f64,
    #[arg(long, default_value_t = 0.02)]
    pub cpk_step: f64,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64, 128])]
    pub n: Vec<usize>,
    /// Replicates per grid cell.
    #[arg(long, default_value_t = 20_000)]
    pub reps: usize,
    #[arg(long, value_enum, default_value = "normal")]
    pub family: FamilyArg,
    /// Log-scale standard deviation (lognormal family only).
    #[arg(long, default_value_t = 0.25)]
    pub log_sd: f64,
    #[arg(long, value_enum, default_value = "one-sided")]
    pub calibration: CalibrationArg,
    #[arg(long, value_enum, default_value = "cpk")]
    pub estimator: EstimatorArg,
}

fn surface_csv(s: &RiskSurface) -> String {
    let mut out =
        String::from("cpk_true,n,reps,p_accept,misclass,misclass_type,mc_se,degenerate_retries\n");
    for c in &s.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_num(c.cpk_true),
            c.n,
            c.reps,
            csv_num(c.p_accept),
            csv_num(c.misclass),
            misclass_type_name(c.misclass_type),
            csv_num(c.mc_se),
            c.degenerate_retries
        ));
    }
    out
}

fn surface_gnuplot(n_grid: &[usize]) -> String {
    let mut out = String::from(
        "# Misclassification probability vs true capability, one curve per n.\n\
         set datafile separator ','\n\
         set key autotitle columnhead outside\n\
         set xlabel 'true C_pk'\n\
         set ylabel 'misclassification probability'\n\
         plot \\\n",
    );
    let lines: Vec<String> = n_grid
        .iter()
        .map(|n| {
            format!(
                "  'surface.csv' using 1:($2 == {n} ? $5 : NaN) with linespoints title 'n = {n}'"
            )
        })
        .collect();
    out.push_str(&lines.join(", \\\n"));
    out.push('\n');
    out
}

pub fn run_surface(ctx: &Ctx, args: &SurfaceArgs) -> Result<()> {
    ctx.gnuplot_wants_csv()?;
    let grid = build_grid(args.cpk_min, args.cpk_max, args.cpk_step)?;
    let config = SimConfig {
        family: model_family(args.family, args.log_sd),
        calibration: calibration_mode(args.calibration),
        estimator: estimator_kind(args.estimator),
    };
    let surface = risk_surface(&grid, &args.n, ctx.c0, args.reps, &config, &ctx.base_seed())?;

    let mut out = ctx.outputs();
    match ctx.format {
        FileFormat::Json => out.add_json("surface.json", &surface)?,
        FileFormat::Csv => out.add_text("surface.csv", surface_csv(&surface)),
    }
    if ctx.gnuplot {
        out.add_text("surface.gp", surface_gnuplot(&args.n));
    }
    out.commit(
        "surface",
        serde_json::json!({
            "c0": ctx.c0,
            "cpk_min": args.cpk_min,
            "cpk_max": args.cpk_max,
            "cpk_step": args.cpk_step,
            "n": args.n,
            "reps": args.reps,
            "family": family_name(args.family),
            "log_sd": args.log_sd,
            "calibration": calibration_name(args.calibration),
            "estimator": estimator_name(args.estimator),
            "format": if ctx.format == FileFormat::Json { "json" } else { "csv" },
        }),
        ctx.seed,
        ctx.started_at,
    )
}

// ---------------------------------------------------------------------------
// collapse
// ---------------------------------------------------------------------------

/// Scaling collapse: Monte Carlo acceptance at z-scaled offsets vs Φ(z).
#[derive(Debug, clap::Args)]
pub struct CollapseArgs {
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub z_min: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub z_max: f64,
    /// Number of z grid points (inclusive endpoints).
    #[arg(long, default_value_t = 25)]
    pub z_points: usize,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256])]
    pub n: Vec<usize>,
    /// Replicates per point.
    #[arg(long, default_value_t = 100_000)]
    pub reps: usize,
    /// Where σ_C comes from: the closed form or a per-n Monte Carlo estimate.
    #[arg(long, value_enum, default_value = "closed-form")]
    pub sigma_source: SigmaSourceArg,
}

fn collapse_csv(c: &ScalingCollapse) -> String {
    let mut out = String::from("z,n,p_mc,phi_z,residual\n");
    for p in &c.points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_num(p.z),
            p.n,
            csv_num(p.p_mc),
            csv_num(p.phi_z),
            csv_num(p.residual)
        ));
    }
    out
}

fn collapse_gnuplot(n_list: &[usize]) -> String {
    let mut out = String::from(
        "# Acceptance probability vs z: all sample sizes should fall on Φ(z).\n\
         set datafile separator ','\n\
         set key autotitle columnhead outside\n\
         set xlabel 'z'\n\
         set ylabel 'acceptance probability'\n\
         plot \\\n",
    );
    let mut lines: Vec<String> = n_list
        .iter()
        .map(|n| {
            format!("  'collapse.csv' using 1:($2 == {n} ? $3 : NaN) with points title 'n = {n}'")
        })
        .collect();
    lines.push("  norm(x) with lines title 'limit curve'".to_string());
    out.push_str(&lines.join(", \\\n"));
    out.push('\n');
    out
}

#[derive(serde::Serialize)]
struct CollapseMeta<'a> {
    c0: f64,
    reps: usize,
    sigma_c_source: SigmaCSource,
    sigma_by_n: &'a [capgate::simulation::SigmaByN],
    skipped: &'a [capgate::simulation::SkippedCollapseCell],
}

pub fn run_collapse(ctx: &Ctx, args: &CollapseArgs) -> Result<()> {
    ctx.gnuplot_wants_csv()?;
    if args.z_points < 2 {
        return Err(Error::InvalidParameter(format!(
            "z-points must be at least 2, got {}",
            args.z_points
        )));
    }
    if !(args.z_max > args.z_min) {
        return Err(Error::InvalidParameter(format!(
            "z-max must exceed z-min, got [{}, {}]",
            args.z_min, args.z_max
        )));
    }
    let span = args.z_max - args.z_min;
    let z_grid: Vec<f64> = (0..args.z_points)
        .map(|i| args.z_min + span * i as f64 / (args.z_points - 1) as f64)
        .collect();
    let source = match args.sigma_source {
        SigmaSourceArg::ClosedForm => SigmaCSource::ClosedForm,
        SigmaSourceArg::Empirical => SigmaCSource::Empirical,
    };
    let collapse = scaling_collapse(&z_grid, &args.n, ctx.c0, args.reps, source, &ctx.base_seed())?;

    let mut out = ctx.outputs();
    match ctx.format {
        FileFormat::Json => out.add_json("collapse.json", &collapse)?,
        FileFormat::Csv => {
            out.add_text("collapse.csv", collapse_csv(&collapse));
            out.add_json(
                "collapse_meta.json",
                &CollapseMeta {
                    c0: collapse.c0,
                    reps: collapse.reps,
                    sigma_c_source: collapse.sigma_c_source,
                    sigma_by_n: &collapse.sigma_by_n,
                    skipped: &collapse.skipped,
                },
            )?;
        }
    }
    if ctx.gnuplot {
        out.add_text("collapse.gp", collapse_gnuplot(&args.n));
    }
    out.commit(
        "collapse",
        serde_json::json!({
            "c0": ctx.c0,
            "z_min": args.z_min,
            "z_max": args.z_max,
            "z_points": args.z_points,
            "n": args.n,
            "reps": args.reps,
            "sigma_source": match args.sigma_source {
                SigmaSourceArg::ClosedForm => "closed_form",
                SigmaSourceArg::Empirical => "empirical",
            },
        }),
        ctx.seed,
        ctx.started_at,
    )
}

// ---------------------------------------------------------------------------
// rules
// ---------------------------------------------------------------------------

/// Acceptance curves of the approval rules over a true-capability grid.
#[derive(Debug, clap::Args)]
pub struct RulesArgs {
    #[arg(long, default_value_t = 1.13)]
    pub cpk_min: f64,
    #[arg(long, default_value_t = 1.73)]
    pub cpk_max: f64,
    #[arg(long, default_value_t = 0.02)]
    pub cpk_step: f64,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [32usize])]
    pub n: Vec<usize>,
    /// Replicates per grid cell.
    #[arg(long, default_value_t = 20_000)]
    pub reps: usize,
    /// Rules to evaluate (default: all four).
    #[arg(long, value_delimiter = ',', value_enum)]
    pub rules: Option<Vec<RuleArg>>,
    /// Risk level of the margin and LCB rules.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Acceptance probability floor of the probability rule.
    #[arg(long, default_value_t = 0.95)]
    pub p_min: f64,
    /// How the probability rule evaluates its probability.
    #[arg(long, value_enum, default_value = "plug-in")]
    pub method: MethodArg,
    /// Inner replicates of the nested probability method.
    #[arg(long, default_value_t = 500)]
    pub inner_reps: usize,
    /// Override σ_C in the margin rule (default: closed form at c0).
    #[arg(long)]
    pub margin_sigma_c: Option<f64>,
    #[arg(long, value_enum, default_value = "normal")]
    pub family: FamilyArg,
    /// Log-scale standard deviation (lognormal family only).
    #[arg(long, default_value_t = 0.25)]
    pub log_sd: f64,
    #[arg(long, value_enum, default_value = "one-sided")]
    pub calibration: CalibrationArg,
}

fn rules_csv(surfaces: &[RuleSurface]) -> String {
    let mut out = String::from("rule,cpk_true,n,reps,accept_prob,degenerate_retries\n");
    for s in surfaces {
        for c in &s.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                rule_kind_name(s.rule.kind),
                csv_num(c.cpk_true),
                c.n,
                c.reps,
                csv_num(c.accept_prob),
                c.degenerate_retries
            ));
        }
    }
    out
}

fn rules_gnuplot(rules: &[RuleArg], first_n: usize) -> String {
    let mut out = format!(
        "# Acceptance probability vs true capability at n = {first_n}, one curve per rule.\n\
         set datafile separator ','\n\
         set key autotitle columnhead outside\n\
         set xlabel 'true C_pk'\n\
         set ylabel 'acceptance probability'\n\
         plot \\\n"
    );
    let lines: Vec<String> = rules
        .iter()
        .map(|r| {
            let name = match r {
                RuleArg::Deterministic => "deterministic",
                RuleArg::Margin => "margin",
                RuleArg::Lcb => "lcb",
                RuleArg::Probability => "probability",
            };
            format!(
                "  'rules.csv' using 2:(strcol(1) eq '{name}' && $3 == {first_n} ? $5 : NaN) \
                 with linespoints title '{name}'"
            )
        })
        .collect();
    out.push_str(&lines.join(", \\\n"));
    out.push('\n');
    out
}

pub fn run_rules(ctx: &Ctx, args: &RulesArgs) -> Result<()> {
    ctx.gnuplot_wants_csv()?;
    let grid = build_grid(args.cpk_min, args.cpk_max, args.cpk_step)?;
    let config = SimConfig {
        family: model_family(args.family, args.log_sd),
        calibration: calibration_mode(args.calibration),
        estimator: EstimatorKind::Cpk,
    };
    let selected = args.rules.clone().unwrap_or_else(|| {
        vec![
            RuleArg::Deterministic,
            RuleArg::Margin,
            RuleArg::Lcb,
            RuleArg::Probability,
        ]
    });
    if selected.is_empty() {
        return Err(Error::InvalidParameter("at least one rule is required".into()));
    }

    let mut surfaces = Vec::new();
    for rule_arg in &selected {
        let rule = match rule_arg {
            RuleArg::Deterministic => DecisionRuleSpec::deterministic(ctx.c0),
            RuleArg::Margin => match args.margin_sigma_c {
                Some(s) => DecisionRuleSpec::margin_with_sigma(ctx.c0, args.alpha, s),
                None => DecisionRuleSpec::margin(ctx.c0, args.alpha),
            },
            RuleArg::Lcb => DecisionRuleSpec::lower_confidence_bound(ctx.c0, args.alpha),
            RuleArg::Probability => DecisionRuleSpec::probability(
                ctx.c0,
                args.p_min,
                match args.method {
                    MethodArg::PlugIn => ProbabilityMethod::PlugInAsymptotic,
                    MethodArg::Nested => ProbabilityMethod::NestedMonteCarlo,
                },
                args.inner_reps,
            ),
        };
        // Every rule sees the same cell seeds, so curves are paired samples.
        let surface = rule_acceptance_surface(
            &rule,
            &grid,
            &args.n,
            args.reps,
            &config,
            &ctx.base_seed(),
        )
        .map_err(|e| e.in_context(format!("rule {}", rule_kind_name(rule.kind))))?;
        surfaces.push(surface);
    }

    let mut out = ctx.outputs();
    match ctx.format {
        FileFormat::Json => out.add_json("rules.json", &surfaces)?,
        FileFormat::Csv => out.add_text("rules.csv", rules_csv(&surfaces)),
    }
    if ctx.gnuplot {
        out.add_text("rules.gp", rules_gnuplot(&selected, args.n[0]));
    }
    out.commit(
        "rules",
        serde_json::json!({
            "c0": ctx.c0,
            "cpk_min": args.cpk_min,
            "cpk_max": args.cpk_max,
            "cpk_step": args.cpk_step,
            "n": args.n,
            "reps": args.reps,
            "rules": selected.iter().map(|r| match r {
                RuleArg::Deterministic => "deterministic",
                RuleArg::Margin => "margin",
                RuleArg::Lcb => "lcb",
                RuleArg::Probability => "probability",
            }).collect::<Vec<_>>(),
            "alpha": args.alpha,
            "p_min": args.p_min,
            "method": match args.method { MethodArg::PlugIn => "plug_in", MethodArg::Nested => "nested" },
            "inner_reps": args.inner_reps,
            "margin_sigma_c": args.margin_sigma_c,
            "family": family_name(args.family),
            "log_sd": args.log_sd,
            "calibration": calibration_name(args.calibration),
        }),
        ctx.seed,
        ctx.started_at,
    )
}

// ---------------------------------------------------------------------------
// bootstrap
// ---------------------------------------------------------------------------

/// Bootstrap flip-rate analysis of a measurement dataset.
#[derive(Debug, clap::Args)]
pub struct BootstrapArgs {
    /// Long-format measurement CSV (dimension_id,lsl,usl,nominal,value).
    pub input: PathBuf,
    /// Bootstrap resamples per dimension.
    #[arg(long, default_value_t = 5000)]
    pub reps: usize,
    /// Also emit the binned instability curve with this many quantile bins.
    #[arg(long)]
    pub curve_bins: Option<usize>,
    /// Distance cutoff |cpk_hat − c0| for the curve.
    #[arg(long, default_value_t = 2.0)]
    pub max_distance: f64,
}

fn flips_csv(analysis: &DatasetAnalysis) -> String {
    let mut out = String::from("dimension_id,n,reps,cpk_hat,p_hat,flip_rate,skipped\n");
    for s in &analysis.summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.dimension_id,
            s.n,
            s.reps,
            csv_num(s.cpk_hat),
            csv_num(s.p_hat),
            csv_num(s.flip_rate),
            s.skipped
        ));
    }
    out
}

fn curve_csv(curve: &capgate::resampling::InstabilityCurve) -> String {
    let mut out = String::from("distance_lo,distance_hi,mean_flip,q25_flip,q75_flip,count\n");
    for b in &curve.bins {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_num(b.distance_lo),
            csv_num(b.distance_hi),
            csv_num(b.mean_flip),
            csv_num(b.q25_flip),
            csv_num(b.q75_flip),
            b.count
        ));
    }
    out
}

fn bootstrap_gnuplot(c0: f64) -> String {
    format!(
        "# Conditional decision instability vs distance from the threshold.\n\
         set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel '|estimated C_pk - {c0}|'\n\
         set ylabel 'flip rate'\n\
         plot 'flips.csv' using (abs($4 - {c0})):6 with points title 'dimensions'\n"
    )
}

#[derive(serde::Serialize)]
struct BootstrapStats<'a> {
    c0: f64,
    reps: usize,
    stats: &'a capgate::resampling::DatasetStats,
    failures: &'a [capgate::resampling::RecordFailure],
}

pub fn run_bootstrap(ctx: &Ctx, args: &BootstrapArgs) -> Result<()> {
    ctx.gnuplot_wants_csv()?;
    require_input_file(&args.input)?;
    let records = parse_dimensions(&args.input, DatasetFormat::LongCsv)?;
    let analysis = analyze_dataset(&records, ctx.c0, args.reps, &ctx.base_seed())?;
    let curve = match args.curve_bins {
        Some(bins) => Some(instability_curve(
            &analysis.summaries,
            ctx.c0,
            bins,
            args.max_distance,
        )?),
        None => None,
    };

    let mut out = ctx.outputs();
    match ctx.format {
        FileFormat::Json => {
            out.add_json("bootstrap.json", &analysis)?;
            if let Some(curve) = &curve {
                out.add_json("curve.json", curve)?;
            }
        }
        FileFormat::Csv => {
            out.add_text("flips.csv", flips_csv(&analysis));
            out.add_json(
                "bootstrap_stats.json",
                &BootstrapStats {
                    c0: analysis.c0,
                    reps: analysis.reps,
                    stats: &analysis.stats,
                    failures: &analysis.failures,
                },
            )?;
            if let Some(curve) = &curve {
                out.add_text("curve.csv", curve_csv(curve));
            }
        }
    }
    if ctx.gnuplot {
        out.add_text("bootstrap.gp", bootstrap_gnuplot(ctx.c0));
    }
    out.commit(
        "bootstrap",
        serde_json::json!({
            "input": args.input.display().to_string(),
            "c0": ctx.c0,
            "reps": args.reps,
            "curve_bins": args.curve_bins,
            "max_distance": args.max_distance,
        }),
        ctx.seed,
        ctx.started_at,
    )
}

// ---------------------------------------------------------------------------
// margin
// ---------------------------------------------------------------------------

/// Risk-adjusted approval margin: κ, the margin κ·σ_C/√n, and the adjusted
/// threshold (JSON to stdout and margin.json).
#[derive(Debug, clap::Args)]
pub struct MarginArgs {
    /// Sample size the margin is calibrated for.
    #[arg(long)]
    pub n: usize,
    /// Boundary acceptance level the margin calibrates to.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// σ_C override (default: closed form √(1/9 + c0²/2)).
    #[arg(long)]
    pub sigma_c: Option<f64>,
}

pub fn run_margin(ctx: &Ctx, args: &MarginArgs) -> Result<()> {
    ctx.forbid_gnuplot("margin")?;
    let sigma_c = match args.sigma_c {
        Some(s) => s,
        None => sigma_c_closed_form(ctx.c0)?,
    };
    let cal = calibrate_margin(ctx.c0, args.n, sigma_c, args.alpha)?;
    let mut out = ctx.outputs();
    out.add_json("margin.json", &cal)?;
    out.set_stdout(
        serde_json::to_string_pretty(&cal)
            .map_err(|e| Error::Computation(format!("serializing margin: {e}")))?,
    );
    out.commit(
        "margin",
        serde_json::json!({
            "c0": ctx.c0,
            "n": args.n,
            "alpha": args.alpha,
            "sigma_c": sigma_c,
        }),
        ctx.seed,
        ctx.started_at,
    )
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Generate a synthetic measurement dataset from calibrated populations
/// (writes the same CSV format the other commands read).
#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Group spec `true_cpk,n,count`; repeat the flag for several groups.
    #[arg(long = "group", value_parser = parse_group, required = true)]
    pub groups: Vec<GroupTriple>,
    #[arg(long, value_enum, default_value = "normal")]
    pub family: FamilyArg,
    /// Log-scale standard deviation (lognormal family only).
    #[arg(long, default_value_t = 0.25)]
    pub log_sd: f64,
    #[arg(long, value_enum, default_value = "one-sided")]
    pub calibration: CalibrationArg,
    /// Output file name inside --out.
    #[arg(long, default_value = "synthetic.csv")]
    pub file: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupTriple {
    pub true_cpk: f64,
    pub n: usize,
    pub count: usize,
}

fn parse_group(raw: &str) -> std::result::Result<GroupTriple, String> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected true_cpk,n,count — got {raw:?}"));
    }
    let true_cpk: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| format!("true_cpk is not a number: {:?}", parts[0]))?;
    let n: usize = parts[1]
        .trim()
        .parse()
        .map_err(|_| format!("n is not a count: {:?}", parts[1]))?;
    let count: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| format!("count is not a count: {:?}", parts[2]))?;
    Ok(GroupTriple { true_cpk, n, count })
}

pub fn run_synth(ctx: &Ctx, args: &SynthArgs) -> Result<()> {
    ctx.forbid_gnuplot("synth")?;
    let groups: Vec<SynthGroupSpec> = args
        .groups
        .iter()
        .map(|g| SynthGroupSpec {
            true_cpk: g.true_cpk,
            n: g.n,
            count: g.count,
            family: model_family(args.family, args.log_sd),
            calibration: calibration_mode(args.calibration),
        })
        .collect();
    let records = generate_synthetic_dataset(&groups, &ctx.base_seed())?;
    let csv = render_dimensions(&records, DatasetFormat::LongCsv)?;

    let mut out = ctx.outputs();
    out.add_text(&args.file, csv);
    out.commit(
        "synth",
        serde_json::json!({
            "groups": args.groups.iter().map(|g| serde_json::json!({
                "true_cpk": g.true_cpk, "n": g.n, "count": g.count,
            })).collect::<Vec<_>>(),
            "family": family_name(args.family),
            "log_sd": args.log_sd,
            "calibration": calibration_name(args.calibration),
            "file": args.file,
        }),
        ctx.seed,
        ctx.started_at,
    )
}

// ---------------------------------------------------------------------------
// sigma-c
// ---------------------------------------------------------------------------

/// σ_C query: closed form, optionally with a Monte Carlo estimate
/// (JSON to stdout and sigma_c.json).
#[derive(Debug, clap::Args)]
pub struct SigmaCArgs {
    /// Capability index to evaluate σ_C at (default: the threshold c0).
    #[arg(long)]
    pub cpk: Option<f64>,
    /// Also estimate σ_C by Monte Carlo at the given sample size.
    #[arg(long)]
    pub empirical: bool,
    /// Sample size for the empirical estimate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Replicates for the empirical estimate.
    #[arg(long, default_value_t = 20_000)]
    pub reps: usize,
    #[arg(long, value_enum, default_value = "normal")]
    pub family: FamilyArg,
    /// Log-scale standard deviation (lognormal family only).
    #[arg(long, default_value_t = 0.25)]
    pub log_sd: f64,
    #[arg(long, value_enum, default_value = "one-sided")]
    pub calibration: CalibrationArg,
    #[arg(long, value_enum, default_value = "cpk")]
    pub estimator: EstimatorArg,
}

#[derive(serde::Serialize)]
struct SigmaCReport {
    cpk: f64,
    closed_form: f64,
    empirical: Option<f64>,
    n: Option<usize>,
    reps: Option<usize>,
    family: String,
    calibration: String,
    estimator: String,
}

pub fn run_sigma_c(ctx: &Ctx, args: &SigmaCArgs) -> Result<()> {
    ctx.forbid_gnuplot("sigma-c")?;
    let cpk = args.cpk.unwrap_or(ctx.c0);
    let closed_form = sigma_c_closed_form(cpk)?;
    let empirical = if args.empirical {
        let n = args.n.ok_or_else(|| {
            Error::InvalidParameter("--empirical requires --n <sample size>".into())
        })?;
        let config = SimConfig {
            family: model_family(args.family, args.log_sd),
            calibration: calibration_mode(args.calibration),
            estimator: estimator_kind(args.estimator),
        };
        Some(sigma_c_empirical(
            cpk,
            n,
            &config,
            args.reps,
            &ctx.base_seed(),
        )?)
    } else {
        None
    };
    let report = SigmaCReport {
        cpk,
        closed_form,
        empirical,
        n: if args.empirical { args.n } else { None },
        reps: if args.empirical { Some(args.reps) } else { None },
        family: family_name(args.family).to_string(),
        calibration: calibration_name(args.calibration).to_string(),
        estimator: estimator_name(args.estimator).to_string(),
    };
    let mut out = ctx.outputs();
    out.add_json("sigma_c.json", &report)?;
    out.set_stdout(
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Computation(format!("serializing sigma_c: {e}")))?,
    );
    out.commit(
        "sigma-c",
        serde_json::json!({
            "c0": ctx.c0,
            "cpk": cpk,
            "empirical": args.empirical,
            "n": args.n,
            "reps": args.reps,
            "family": family_name(args.family),
            "log_sd": args.log_sd,
            "calibration": calibration_name(args.calibration),
            "estimator": estimator_name(args.estimator),
        }),
        ctx.seed,
        ctx.started_at,
    )
}
