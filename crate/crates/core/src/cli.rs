//! Command-line front end: CSV ingestion, descriptive statistics, and the
//! fit / select / mixed / simulate / asp commands with TSV or JSON reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::asymptotics::{asp_table, asp_table_tsv, gamma_constant};
use crate::error::{Error, Result};
use crate::estimation::{
    attach_standard_errors, fit_mixed, fit_model, FitOptions, FittedModel, SeMode, BOUNDARY_EPS,
};
use crate::likelihood::CountMatrix;
use crate::partitions::ModelPartition;
use crate::selection::{select_exhaustive, select_forward, CandidateScore, SelectionTrace};
use crate::simulation::{study_report_json, study_report_tsv, StudyConfig};

pub const TOOL_NAME: &str = "poisfactor";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Truncation setting for ingested data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TruncSetting {
    #[default]
    None,
    /// Largest value in the file.
    Auto,
    Fixed(u32),
}

impl FromStr for TruncSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Self::None),
            "auto" => Ok(Self::Auto),
            v => v
                .parse()
                .map(Self::Fixed)
                .map_err(|_| Error::Config(format!("--trunc expects A, auto or none, got '{v}'"))),
        }
    }
}

/// Affine recode `y = a − x`, written `a-x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Recode {
    pub offset: i64,
}

impl Recode {
    pub fn apply(&self, x: i64) -> i64 {
        self.offset - x
    }
}

impl FromStr for Recode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("--recode expects the form a-x, got '{s}'"));
        let a = s.trim().strip_suffix("-x").ok_or_else(bad)?;
        Ok(Self {
            offset: a.trim().parse().map_err(|_| bad())?,
        })
    }
}

/// Parsed CSV: the matrix plus column names (from the header, or `y1..`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub data: CountMatrix,
}

fn split_cells(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parses comma- or whitespace-delimited integer data with an optional
/// header line. Errors name the 1-based line and column.
pub fn parse_csv(text: &str, recode: Option<Recode>, trunc: TruncSetting) -> Result<Dataset> {
    let mut names: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<u32>> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells = split_cells(line);
        if rows.is_empty() && names.is_none() && cells.iter().any(|c| c.parse::<i64>().is_err()) {
            names = Some(cells.iter().map(|c| c.to_string()).collect());
            width = Some(cells.len());
            continue;
        }
        match width {
            Some(w) if w != cells.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    column: cells.len().min(w) + 1,
                    message: format!("expected {w} fields, found {}", cells.len()),
                })
            }
            _ => width = Some(cells.len()),
        }
        let mut row = Vec::with_capacity(cells.len());
        for (j, cell) in cells.iter().enumerate() {
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                column: j + 1,
                message,
            };
            let x: i64 = cell
                .parse()
                .map_err(|_| parse_err(format!("'{cell}' is not an integer")))?;
            let y = recode.map_or(x, |r| r.apply(x));
            if y < 0 {
                return Err(parse_err(match recode {
                    Some(_) => format!("value {x} recodes to negative {y}"),
                    None => format!("negative value {y}"),
                }));
            }
            let y = u32::try_from(y).map_err(|_| parse_err(format!("value {y} too large")))?;
            if let TruncSetting::Fixed(a) = trunc {
                if y > a {
                    return Err(parse_err(format!("value {y} exceeds truncation bound {a}")));
                }
            }
            row.push(y);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidData("no data rows".into()));
    }
    let n_vars = rows[0].len();
    let bound = match trunc {
        TruncSetting::None => None,
        TruncSetting::Fixed(a) => Some(a),
        TruncSetting::Auto => rows.iter().flatten().copied().max(),
    };
    let data = CountMatrix::new(rows, bound)?;
    let names = names.unwrap_or_else(|| (1..=n_vars).map(|k| format!("y{k}")).collect());
    Ok(Dataset { names, data })
}

pub fn ingest_csv(path: &Path, recode: Option<Recode>, trunc: TruncSetting) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, recode, trunc)
}

/// Above this variance/mean ratio a margin is flagged as overdispersed.
pub const OVERDISPERSION_RATIO: f64 = 1.2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariableSummary {
    pub name: String,
    pub mean: f64,
    pub variance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Description {
    pub n_obs: usize,
    pub variables: Vec<VariableSummary>,
    pub correlations: Vec<Vec<Option<f64>>>,
    pub warnings: Vec<String>,
}

/// Means, (n − 1)-denominator variances, Pearson correlations, and warnings
/// about features the model cannot produce.
pub fn describe(ds: &Dataset) -> Description {
    let data = &ds.data;
    let n = data.n_obs();
    let k = data.n_vars();
    let means = data.col_means();
    let mut cov = vec![vec![0.0; k]; k];
    for row in data.rows() {
        for a in 0..k {
            let da = row[a] as f64 - means[a];
            for b in a..k {
                cov[a][b] += da * (row[b] as f64 - means[b]);
            }
        }
    }
    let variance: Vec<Option<f64>> = (0..k).map(|a| (n >= 2).then(|| cov[a][a] / (n - 1) as f64)).collect();
    let correlations: Vec<Vec<Option<f64>>> = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| {
                    let (lo, hi) = (a.min(b), a.max(b));
                    let denom = (cov[lo][lo] * cov[hi][hi]).sqrt();
                    (n >= 2 && denom > 0.0).then(|| if a == b { 1.0 } else { cov[lo][hi] / denom })
                })
                .collect()
        })
        .collect();
    let mut warnings = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            if let Some(r) = correlations[a][b] {
                if r < 0.0 {
                    warnings.push(format!(
                        "negative correlation {r:.3} between {} and {}: impossible under the dependent Poisson model",
                        ds.names[a], ds.names[b]
                    ));
                }
            }
        }
    }
    for a in 0..k {
        if let Some(v) = variance[a] {
            if v > OVERDISPERSION_RATIO * means[a] {
                warnings.push(format!(
                    "variance {v:.3} of {} exceeds its mean {:.3}: Poisson margins have variance = mean",
                    ds.names[a], means[a]
                ));
            }
        }
    }
    let variables = ds
        .names
        .iter()
        .zip(means.iter().zip(&variance))
        .map(|(name, (&mean, &variance))| VariableSummary {
            name: name.clone(),
            mean,
            variance,
        })
        .collect();
    Description {
        n_obs: n,
        variables,
        correlations,
        warnings,
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

pub fn describe_tsv(d: &Description) -> String {
    let mut out = String::from("variable\tmean\tvariance\n");
    for v in &d.variables {
        let _ = writeln!(out, "{}\t{:.4}\t{}", v.name, v.mean, fmt_opt(v.variance, 4));
    }
    out.push_str("\ncorrelation");
    for v in &d.variables {
        let _ = write!(out, "\t{}", v.name);
    }
    out.push('\n');
    for (v, row) in d.variables.iter().zip(&d.correlations) {
        out.push_str(&v.name);
        for c in row {
            let _ = write!(out, "\t{}", fmt_opt(*c, 2));
        }
        out.push('\n');
    }
    for w in &d.warnings {
        let _ = writeln!(out, "# warning: {w}");
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Tsv,
    Json,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum SeArg {
    #[default]
    Diagonal,
    Full,
    None,
}

#[derive(Debug, Parser)]
#[command(name = TOOL_NAME, version, about = "Dependent Poisson factor models: fitting, AIC selection, simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file of counts (comma or whitespace delimited, optional header).
    #[arg(long)]
    pub input: PathBuf,
    /// Truncation bound: an integer A, `auto` (largest value), or `none`.
    #[arg(long, default_value = "none")]
    pub trunc: String,
    /// Recode every value as y = a - x, e.g. `4-x`.
    #[arg(long)]
    pub recode: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Tsv)]
    pub format: ReportFormat,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Means, variances and correlations of the input columns.
    Describe {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Fit one partition model.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Groups as `[1 2 3][4 5]`; unlisted variables are singletons.
        #[arg(long)]
        partition: String,
        #[arg(long, value_enum, default_value_t = SeArg::Diagonal)]
        se: SeArg,
    },
    /// AIC model selection (forward by default).
    Select {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutputArgs,
        /// Fit every partition instead of the forward search.
        #[arg(long)]
        exhaustive: bool,
    },
    /// Compare a partition with a mixture that moves one variable.
    Mixed {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long)]
        partition: String,
        /// Variable to move (1-based).
        #[arg(long = "move")]
        moved: usize,
        /// Target group (1-based, in printed order).
        #[arg(long)]
        target: usize,
        #[arg(long, value_enum, default_value_t = SeArg::Diagonal)]
        se: SeArg,
    },
    /// Monte Carlo selection study.
    Simulate {
        #[command(flatten)]
        out: OutputArgs,
        /// key=value study file; flags below override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long)]
        partition: Option<String>,
        /// Comma-separated sample sizes.
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        trunc: Option<String>,
        #[arg(long)]
        mode: Option<String>,
    },
    /// Asymptotic probability of correct selection per model type.
    Asp {
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long)]
        dims: usize,
    },
}

/// Validated, command-specific run description.
#[derive(Clone, Debug, PartialEq)]
pub enum RunConfig {
    Describe {
        input: InputSpec,
    },
    Fit {
        input: InputSpec,
        partition: String,
        se: Option<SeMode>,
        seed: u64,
    },
    Select {
        input: InputSpec,
        exhaustive: bool,
        seed: u64,
    },
    Mixed {
        input: InputSpec,
        partition: String,
        moved_var: usize,
        target_group: usize,
        se: Option<SeMode>,
        seed: u64,
    },
    Simulate {
        study: StudyConfig,
    },
    Asp {
        dims: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputSpec {
    pub path: PathBuf,
    pub trunc: TruncSetting,
    pub recode: Option<Recode>,
}

impl InputSpec {
    fn from_args(a: &DataArgs) -> Result<Self> {
        Ok(Self {
            path: a.input.clone(),
            trunc: a.trunc.parse()?,
            recode: a.recode.as_deref().map(str::parse).transpose()?,
        })
    }

    fn load(&self) -> Result<Dataset> {
        ingest_csv(&self.path, self.recode, self.trunc)
    }
}

fn se_mode(a: SeArg) -> Option<SeMode> {
    match a {
        SeArg::Diagonal => Some(SeMode::Diagonal),
        SeArg::Full => Some(SeMode::FullInverse),
        SeArg::None => None,
    }
}

impl Command {
    /// Report destination and format.
    pub fn output(&self) -> &OutputArgs {
        match self {
            Self::Describe { out, .. }
            | Self::Fit { out, .. }
            | Self::Select { out, .. }
            | Self::Mixed { out, .. }
            | Self::Simulate { out, .. }
            | Self::Asp { out, .. } => out,
        }
    }

    pub fn to_config(&self) -> Result<RunConfig> {
        let seed = self.output().seed;
        Ok(match self {
            Self::Describe { data, .. } => RunConfig::Describe {
                input: InputSpec::from_args(data)?,
            },
            Self::Fit { data, partition, se, .. } => RunConfig::Fit {
                input: InputSpec::from_args(data)?,
                partition: partition.clone(),
                se: se_mode(*se),
                seed,
            },
            Self::Select { data, exhaustive, .. } => RunConfig::Select {
                input: InputSpec::from_args(data)?,
                exhaustive: *exhaustive,
                seed,
            },
            Self::Mixed {
                data,
                partition,
                moved,
                target,
                se,
                ..
            } => {
                if *moved == 0 || *target == 0 {
                    return Err(Error::Config("--move and --target are 1-based".into()));
                }
                RunConfig::Mixed {
                    input: InputSpec::from_args(data)?,
                    partition: partition.clone(),
                    moved_var: moved - 1,
                    target_group: target - 1,
                    se: se_mode(*se),
                    seed,
                }
            }
            Self::Simulate {
                config,
                dims,
                partition,
                n,
                reps,
                trunc,
                mode,
                out,
            } => {
                let mut text = match config {
                    Some(p) => std::fs::read_to_string(p)?,
                    None => String::new(),
                };
                let mut push = |k: &str, v: String| {
                    text.push('\n');
                    text.push_str(&format!("{k} = {v}"));
                };
                if let Some(d) = dims {
                    push("dims", d.to_string());
                }
                if let Some(p) = partition {
                    push("partition", p.clone());
                }
                if let Some(n) = n {
                    push("n", n.clone());
                }
                if let Some(r) = reps {
                    push("reps", r.to_string());
                }
                if let Some(t) = trunc {
                    push("trunc", t.clone());
                }
                if let Some(m) = mode {
                    push("mode", m.clone());
                }
                if out.seed != 0 || config.is_none() {
                    push("seed", out.seed.to_string());
                }
                RunConfig::Simulate {
                    study: StudyConfig::parse(&text)?,
                }
            }
            Self::Asp { dims, .. } => RunConfig::Asp { dims: *dims },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub boundary: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelReport {
    pub partition: String,
    pub pi: Option<f64>,
    pub moved_var: Option<usize>,
    pub target_group: Option<usize>,
    pub loglik: f64,
    pub n_params: usize,
    pub aic: f64,
    pub converged: bool,
    pub params: Vec<ParamRow>,
}

impl ModelReport {
    pub fn from_fit(fit: &FittedModel) -> Self {
        let values = fit.param_vector();
        let boundary = fit.boundary_mask();
        let params = fit
            .param_names()
            .into_iter()
            .enumerate()
            .map(|(i, name)| ParamRow {
                name,
                estimate: values[i],
                std_error: fit.std_errors.as_ref().and_then(|s| s[i]),
                boundary: boundary[i],
            })
            .collect();
        Self {
            partition: fit.partition.to_string(),
            pi: fit.mixed.as_ref().map(|m| m.pi),
            moved_var: fit.mixed.as_ref().map(|m| m.moved_var + 1),
            target_group: fit.mixed.as_ref().map(|m| m.alt_group + 1),
            loglik: fit.loglik,
            n_params: fit.n_params,
            aic: fit.aic,
            converged: fit.converged,
            params,
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    input: Option<String>,
    n_obs: Option<usize>,
    n_vars: Option<usize>,
    trunc_bound: Option<u32>,
    seed: Option<u64>,
    boundary_eps: f64,
    result: &'a T,
}

fn envelope_json<T: Serialize>(
    command: &'static str,
    input: Option<(&InputSpec, &Dataset)>,
    seed: Option<u64>,
    result: &T,
) -> Result<String> {
    let env = Envelope {
        tool: TOOL_NAME,
        version: TOOL_VERSION,
        command,
        input: input.map(|(i, _)| i.path.display().to_string()),
        n_obs: input.map(|(_, d)| d.data.n_obs()),
        n_vars: input.map(|(_, d)| d.data.n_vars()),
        trunc_bound: input.and_then(|(_, d)| d.data.trunc_bound()),
        seed,
        boundary_eps: BOUNDARY_EPS,
        result,
    };
    let mut s = serde_json::to_string_pretty(&env)?;
    s.push('\n');
    Ok(s)
}

fn header_tsv(command: &str, input: &InputSpec, ds: &Dataset, seed: Option<u64>) -> String {
    let mut out = format!("# {TOOL_NAME} {TOOL_VERSION} {command}\n");
    let _ = writeln!(out, "# input\t{}", input.path.display());
    let _ = writeln!(out, "# n_obs\t{}\tn_vars\t{}", ds.data.n_obs(), ds.data.n_vars());
    let _ = writeln!(
        out,
        "# trunc_bound\t{}",
        ds.data.trunc_bound().map_or("none".to_string(), |a| a.to_string())
    );
    if let Some(s) = seed {
        let _ = writeln!(out, "# seed\t{s}");
    }
    out
}

fn model_tsv(m: &ModelReport) -> String {
    let mut out = format!("partition\t{}\n", m.partition);
    if let Some(pi) = m.pi {
        let _ = writeln!(out, "pi\t{pi:.6}");
    }
    let _ = writeln!(out, "loglik\t{:.4}\np\t{}\naic\t{:.4}\nconverged\t{}", m.loglik, m.n_params, m.aic, m.converged);
    out.push_str("parameter\testimate\tstd_error\tboundary\n");
    for p in &m.params {
        let _ = writeln!(out, "{}\t{:.6}\t{}\t{}", p.name, p.estimate, fmt_opt(p.std_error, 6), p.boundary);
    }
    out
}

fn candidates_tsv(out: &mut String, cands: &[CandidateScore]) {
    for c in cands {
        let _ = writeln!(
            out,
            "{}\t{:.4}\t{}\t{:.4}\t{}",
            c.partition,
            c.loglik,
            c.n_params,
            c.aic,
            if c.chosen { "*" } else { "" }
        );
    }
}

fn trace_tsv(t: &SelectionTrace) -> String {
    let mut out = String::from("step\tpartition\tloglik\tp\taic\tchosen\n");
    let _ = writeln!(
        out,
        "0\t{}\t{:.4}\t{}\t{:.4}\t*",
        t.root.partition, t.root.loglik, t.root.n_params, t.root.aic
    );
    for (i, s) in t.steps.iter().enumerate() {
        let mut block = String::new();
        candidates_tsv(&mut block, &s.candidates);
        for line in block.lines() {
            let _ = writeln!(out, "{}\t{line}", i + 1);
        }
    }
    let _ = writeln!(out, "# models tested\t{}", t.n_models_tested);
    out
}

#[derive(Serialize)]
struct SelectReport<'a> {
    method: &'static str,
    selected: ModelReport,
    trace: Option<&'a SelectionTrace>,
    table: Option<&'a [CandidateScore]>,
}

#[derive(Serialize)]
struct MixedReport {
    base: ModelReport,
    mixed: ModelReport,
    delta_loglik: f64,
    base_aic: f64,
    mixed_aic: f64,
    mixed_preferred: bool,
}

#[derive(Serialize)]
struct AspReport<'a> {
    dims: usize,
    gamma: f64,
    label: &'static str,
    rows: &'a [crate::asymptotics::AspResult],
}

fn fit_options(seed: u64) -> FitOptions {
    FitOptions {
        seed,
        ..FitOptions::default()
    }
}

/// Executes a validated configuration and returns the report text.
pub fn run(config: &RunConfig, format: ReportFormat) -> Result<String> {
    let json = format == ReportFormat::Json;
    match config {
        RunConfig::Describe { input } => {
            let ds = input.load()?;
            let d = describe(&ds);
            if json {
                envelope_json("describe", Some((input, &ds)), None, &d)
            } else {
                Ok(header_tsv("describe", input, &ds, None) + &describe_tsv(&d))
            }
        }
        RunConfig::Fit {
            input,
            partition,
            se,
            seed,
        } => {
            let ds = input.load()?;
            let p = ModelPartition::parse_with_dim(partition, ds.data.n_vars())?;
            let mut fit = fit_model(&ds.data, &p, &fit_options(*seed))?;
            if let Some(mode) = se {
                attach_standard_errors(&mut fit, &ds.data, *mode)?;
            }
            let report = ModelReport::from_fit(&fit);
            if json {
                envelope_json("fit", Some((input, &ds)), Some(*seed), &report)
            } else {
                Ok(header_tsv("fit", input, &ds, Some(*seed)) + &model_tsv(&report))
            }
        }
        RunConfig::Select {
            input,
            exhaustive,
            seed,
        } => {
            let ds = input.load()?;
            let opts = fit_options(*seed);
            let head = header_tsv("select", input, &ds, Some(*seed));
            if *exhaustive {
                let res = select_exhaustive(&ds.data, &opts)?;
                let selected = ModelReport::from_fit(&res.best);
                if json {
                    let r = SelectReport {
                        method: "exhaustive",
                        selected,
                        trace: None,
                        table: Some(&res.table),
                    };
                    envelope_json("select", Some((input, &ds)), Some(*seed), &r)
                } else {
                    let mut out = head + &model_tsv(&selected);
                    out.push_str("\npartition\tloglik\tp\taic\tchosen\n");
                    candidates_tsv(&mut out, &res.table);
                    Ok(out)
                }
            } else {
                let trace = select_forward(&ds.data, &opts)?;
                let selected = ModelReport::from_fit(&trace.final_fit);
                if json {
                    let r = SelectReport {
                        method: "forward",
                        selected,
                        trace: Some(&trace),
                        table: None,
                    };
                    envelope_json("select", Some((input, &ds)), Some(*seed), &r)
                } else {
                    Ok(head + &model_tsv(&selected) + "\n" + &trace_tsv(&trace))
                }
            }
        }
        RunConfig::Mixed {
            input,
            partition,
            moved_var,
            target_group,
            se,
            seed,
        } => {
            let ds = input.load()?;
            let p = ModelPartition::parse_with_dim(partition, ds.data.n_vars())?;
            let opts = fit_options(*seed);
            let mut base = fit_model(&ds.data, &p, &opts)?;
            let mut mixed = fit_mixed(&ds.data, &p, *moved_var, *target_group, &opts)?;
            if let Some(mode) = se {
                attach_standard_errors(&mut base, &ds.data, *mode)?;
                attach_standard_errors(&mut mixed, &ds.data, *mode)?;
            }
            let r = MixedReport {
                delta_loglik: mixed.loglik - base.loglik,
                base_aic: base.aic,
                mixed_aic: mixed.aic,
                mixed_preferred: mixed.aic < base.aic,
                base: ModelReport::from_fit(&base),
                mixed: ModelReport::from_fit(&mixed),
            };
            if json {
                envelope_json("mixed", Some((input, &ds)), Some(*seed), &r)
            } else {
                let mut out = header_tsv("mixed", input, &ds, Some(*seed));
                let _ = writeln!(
                    out,
                    "delta_loglik\t{:.4}\nbase_aic\t{:.4}\nmixed_aic\t{:.4}\npreferred\t{}\n",
                    r.delta_loglik,
                    r.base_aic,
                    r.mixed_aic,
                    if r.mixed_preferred { "mixed" } else { "base" }
                );
                out.push_str("# base\n");
                out.push_str(&model_tsv(&r.base));
                out.push_str("\n# mixed\n");
                out.push_str(&model_tsv(&r.mixed));
                Ok(out)
            }
        }
        RunConfig::Simulate { study } => {
            let results = study.run()?;
            if json {
                let report: serde_json::Value = serde_json::from_str(&study_report_json(&results)?)?;
                envelope_json("simulate", None, Some(study.seed), &report)
            } else {
                let mut out = format!("# {TOOL_NAME} {TOOL_VERSION} simulate\n# seed\t{}\n# reps\t{}\n", study.seed, study.n_reps);
                if let Some(a) = study.trunc_bound {
                    let _ = writeln!(out, "# trunc_bound\t{a}\tgenerator: Y = min(U + X, A), U and X truncated Poisson");
                }
                let failures: usize = results.iter().map(|r| r.failures).sum();
                if failures > 0 {
                    let _ = writeln!(out, "# failed replicates\t{failures}");
                }
                out.push_str(&study_report_tsv(&results));
                Ok(out)
            }
        }
        RunConfig::Asp { dims } => {
            let rows = asp_table(*dims)?;
            if json {
                let r = AspReport {
                    dims: *dims,
                    gamma: gamma_constant(),
                    label: crate::asymptotics::HEURISTIC_LABEL,
                    rows: &rows,
                };
                envelope_json("asp", None, None, &r)
            } else {
                Ok(format!("# heuristic: asp = gamma^C(n0,2), gamma = {:.5}\n", gamma_constant()) + &asp_table_tsv(&rows))
            }
        }
    }
}

/// Parses arguments, runs, and writes the report. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let out = cli.command.output().clone();
    let result = cli.command.to_config().and_then(|cfg| run(&cfg, out.format));
    match result {
        Ok(report) => {
            let written = match &out.output {
                Some(path) => std::fs::write(path, report.as_bytes()).map_err(Error::from),
                None => {
                    print!("{report}");
                    Ok(())
                }
            };
            match written {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
