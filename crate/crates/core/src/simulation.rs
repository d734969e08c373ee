//! Data generation under a partition model and Monte Carlo studies of how
//! often selection recovers the generating partition.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::asp_correct_selection;
use crate::dists::RateSpec;
use crate::error::{Error, Result};
use crate::estimation::{FitOptions, GroupFitCache};
use crate::likelihood::CountMatrix;
use crate::partitions::{ModelPartition, TypeSignature, MAX_ENUMERATION_DIM};
use crate::selection::{select_exhaustive_cached, select_forward_cached};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub partition: ModelPartition,
    pub factor_rate: f64,
    pub idio_rate_in_group: f64,
    pub idio_rate_singleton: f64,
    pub trunc_bound: Option<u32>,
    pub n_obs: usize,
    pub n_reps: usize,
    pub seed: u64,
}

impl SimDesign {
    /// The 0.5 / 0.5 / 1 design: every margin is Po(1) untruncated.
    pub fn standard(partition: ModelPartition, n_obs: usize, n_reps: usize, seed: u64) -> Self {
        Self {
            partition,
            factor_rate: 0.5,
            idio_rate_in_group: 0.5,
            idio_rate_singleton: 1.0,
            trunc_bound: None,
            n_obs,
            n_reps,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("factor_rate", self.factor_rate),
            ("idio_rate_in_group", self.idio_rate_in_group),
            ("idio_rate_singleton", self.idio_rate_singleton),
        ] {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {r}")));
            }
        }
        if self.n_obs == 0 || self.n_reps == 0 {
            return Err(Error::InvalidParameter("n_obs and n_reps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Replicate `rep` of the design. Each replicate draws from its own ChaCha
/// stream, so results do not depend on scheduling.
pub fn generate(design: &SimDesign, rep: u64) -> Result<CountMatrix> {
    design.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    rng.set_stream(rep);
    let a = design.trunc_bound;
    let factor = RateSpec::new(design.factor_rate, a)?;
    let grouped = RateSpec::new(design.idio_rate_in_group, a)?;
    let single = RateSpec::new(design.idio_rate_singleton, a)?;
    let n_vars = design.partition.n_vars();
    let mut values = vec![0u32; design.n_obs * n_vars];
    for row in values.chunks_mut(n_vars) {
        for g in design.partition.groups() {
            if g.len() == 1 {
                row[g[0]] = single.sample(&mut rng);
                continue;
            }
            let u = factor.sample(&mut rng);
            for &v in g {
                let y = u + grouped.sample(&mut rng);
                row[v] = a.map_or(y, |a| y.min(a));
            }
        }
    }
    CountMatrix::from_flat(design.n_obs, n_vars, values, a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    Forward,
    Exhaustive,
    Both,
}

impl StudyMode {
    fn forward(self) -> bool {
        matches!(self, Self::Forward | Self::Both)
    }

    fn exhaustive(self) -> bool {
        matches!(self, Self::Exhaustive | Self::Both)
    }
}

impl std::str::FromStr for StudyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "forward" => Ok(Self::Forward),
            "exhaustive" => Ok(Self::Exhaustive),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("unknown study mode '{other}'"))),
        }
    }
}

/// Share of successful replicates that selected the generating partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub correct: usize,
    pub replicates: usize,
    pub proportion: f64,
    pub mc_se: f64,
}

impl Proportion {
    fn new(correct: usize, replicates: usize) -> Self {
        let p = if replicates == 0 { 0.0 } else { correct as f64 / replicates as f64 };
        let mc_se = if replicates == 0 { 0.0 } else { (p * (1.0 - p) / replicates as f64).sqrt() };
        Self {
            correct,
            replicates,
            proportion: p,
            mc_se,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub model_type: TypeSignature,
    pub design: SimDesign,
    pub forward: Option<Proportion>,
    pub exhaustive: Option<Proportion>,
    /// Replicates whose selection run errored; excluded from the proportions.
    pub failures: usize,
    pub failure_messages: Vec<String>,
}

enum RepOutcome {
    Scored { forward: bool, exhaustive: bool },
    Failed(String),
}

fn run_replicate(design: &SimDesign, mode: StudyMode, rep: u64, opts: &FitOptions) -> RepOutcome {
    let attempt = || -> Result<(bool, bool)> {
        let data = generate(design, rep)?;
        let mut cache = GroupFitCache::new();
        let forward = if mode.forward() {
            select_forward_cached(&data, opts, &mut cache)?.final_fit.partition == design.partition
        } else {
            false
        };
        let exhaustive = if mode.exhaustive() {
            select_exhaustive_cached(&data, opts, &mut cache)?.best.partition == design.partition
        } else {
            false
        };
        Ok((forward, exhaustive))
    };
    match attempt() {
        Ok((forward, exhaustive)) => RepOutcome::Scored { forward, exhaustive },
        Err(e) => RepOutcome::Failed(format!("rep {rep}: {e}")),
    }
}

/// Runs `design.n_reps` replicates and scores exact partition recovery.
pub fn run_study(design: &SimDesign, mode: StudyMode) -> Result<StudyResult> {
    design.validate()?;
    if mode.exhaustive() && design.partition.n_vars() > MAX_ENUMERATION_DIM {
        return Err(Error::DimensionTooLarge {
            n: design.partition.n_vars(),
            max: MAX_ENUMERATION_DIM,
        });
    }
    if design.partition.n_vars() < 2 {
        return Err(Error::InvalidParameter("studies need at least two variables".into()));
    }
    let opts = FitOptions {
        seed: design.seed,
        ..FitOptions::default()
    };
    let outcomes: Vec<RepOutcome> = (0..design.n_reps as u64)
        .into_par_iter()
        .map(|rep| run_replicate(design, mode, rep, &opts))
        .collect();
    let (mut fwd, mut exh, mut ok) = (0, 0, 0);
    let mut failure_messages = Vec::new();
    for o in outcomes {
        match o {
            RepOutcome::Scored { forward, exhaustive } => {
                ok += 1;
                fwd += usize::from(forward);
                exh += usize::from(exhaustive);
            }
            RepOutcome::Failed(msg) => failure_messages.push(msg),
        }
    }
    Ok(StudyResult {
        model_type: design.partition.type_signature(),
        design: design.clone(),
        forward: mode.forward().then(|| Proportion::new(fwd, ok)),
        exhaustive: mode.exhaustive().then(|| Proportion::new(exh, ok)),
        failures: failure_messages.len(),
        failure_messages,
    })
}

/// A Monte Carlo study: every listed partition at every sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub partitions: Vec<ModelPartition>,
    pub n_values: Vec<usize>,
    pub factor_rate: f64,
    pub idio_rate_in_group: f64,
    pub idio_rate_singleton: f64,
    pub trunc_bound: Option<u32>,
    pub n_reps: usize,
    pub seed: u64,
    pub mode: StudyMode,
}

impl StudyConfig {
    /// All type signatures of `dims`, each placed contiguously.
    pub fn for_dimension(dims: usize) -> Result<Self> {
        if !(2..=MAX_ENUMERATION_DIM).contains(&dims) {
            return Err(Error::Config(format!("dims must be in 2..={MAX_ENUMERATION_DIM}, got {dims}")));
        }
        Ok(Self {
            partitions: TypeSignature::all(dims).iter().map(ModelPartition::from_type_signature).collect(),
            n_values: vec![25, 50, 100],
            factor_rate: 0.5,
            idio_rate_in_group: 0.5,
            idio_rate_singleton: 1.0,
            trunc_bound: None,
            n_reps: 500,
            seed: 1,
            mode: StudyMode::Forward,
        })
    }

    /// Parses flat `key = value` lines; `#` starts a comment. Keys:
    /// `dims`, `partition` (`;`-separated list), `n` (comma list),
    /// `factor_rate`, `idio_rate_in_group`, `idio_rate_singleton`,
    /// `trunc` (`none` or A), `reps`, `seed`, `mode`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let dims = match pairs.iter().find(|(_, k, _)| k == "dims") {
            Some((line, _, v)) => Some(parse_num::<usize>(*line, "dims", v)?),
            None => None,
        };
        let mut cfg = Self::for_dimension(dims.unwrap_or(5))?;
        let mut have_partitions = dims.is_some();
        for (line, key, value) in &pairs {
            let line = *line;
            match key.as_str() {
                "dims" => {}
                "partition" | "partitions" => {
                    cfg.partitions = value
                        .split(';')
                        .map(|s| s.trim())
                        .filter(|s| !s.is_empty())
                        .map(|s| match dims {
                            Some(d) => ModelPartition::parse_with_dim(s, d),
                            None => ModelPartition::parse(s),
                        })
                        .collect::<Result<_>>()
                        .map_err(|e| Error::Config(format!("line {line}: {e}")))?;
                    have_partitions = true;
                }
                "n" | "n_obs" => {
                    cfg.n_values = value
                        .split(',')
                        .map(|s| parse_num::<usize>(line, key, s.trim()))
                        .collect::<Result<_>>()?;
                }
                "factor_rate" => cfg.factor_rate = parse_num(line, key, value)?,
                "idio_rate_in_group" => cfg.idio_rate_in_group = parse_num(line, key, value)?,
                "idio_rate_singleton" => cfg.idio_rate_singleton = parse_num(line, key, value)?,
                "trunc" => {
                    cfg.trunc_bound = match value.as_str() {
                        "none" | "" => None,
                        v => Some(parse_num(line, key, v)?),
                    }
                }
                "reps" => cfg.n_reps = parse_num(line, key, value)?,
                "seed" => cfg.seed = parse_num(line, key, value)?,
                "mode" => cfg.mode = value.parse().map_err(|e| Error::Config(format!("line {line}: {e}")))?,
                other => return Err(Error::Config(format!("line {line}: unknown key '{other}'"))),
            }
        }
        if !have_partitions {
            return Err(Error::Config("config needs `dims` or `partition`".into()));
        }
        if cfg.n_values.is_empty() || cfg.partitions.is_empty() {
            return Err(Error::Config("config lists no sample sizes or no partitions".into()));
        }
        let n = cfg.partitions[0].n_vars();
        if cfg.partitions.iter().any(|p| p.n_vars() != n) {
            return Err(Error::Config("all partitions must have the same dimension".into()));
        }
        Ok(cfg)
    }

    /// One design per (partition, n), each with its own derived seed.
    pub fn designs(&self) -> Vec<SimDesign> {
        let mut out = Vec::new();
        for p in &self.partitions {
            for &n in &self.n_values {
                out.push(SimDesign {
                    partition: p.clone(),
                    factor_rate: self.factor_rate,
                    idio_rate_in_group: self.idio_rate_in_group,
                    idio_rate_singleton: self.idio_rate_singleton,
                    trunc_bound: self.trunc_bound,
                    n_obs: n,
                    n_reps: self.n_reps,
                    seed: derive_seed(self.seed, &format!("{p}|{n}")),
                });
            }
        }
        out
    }

    pub fn run(&self) -> Result<Vec<StudyResult>> {
        self.designs().iter().map(|d| run_study(d, self.mode)).collect()
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value '{value}' for {key}")))
}

/// Mixes a base seed with a label (FNV-1a, then a splitmix64 finalizer).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in label.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Results arranged like the published tables: one row per model type,
/// one column per (n, method), then the asymptotic column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub columns: Vec<String>,
    pub rows: Vec<StudyTableRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyTableRow {
    pub model_type: TypeSignature,
    pub cells: Vec<Option<f64>>,
    pub asp: f64,
}

pub fn study_table(results: &[StudyResult]) -> StudyTable {
    let n_values: BTreeSet<usize> = results.iter().map(|r| r.design.n_obs).collect();
    let has_fwd = results.iter().any(|r| r.forward.is_some());
    let has_exh = results.iter().any(|r| r.exhaustive.is_some());
    let mut keys = Vec::new();
    let mut columns = vec!["type".to_string()];
    for &n in &n_values {
        if has_exh {
            keys.push((n, false));
            columns.push(format!("n={n} all"));
        }
        if has_fwd {
            keys.push((n, true));
            columns.push(format!("n={n} fwd"));
        }
    }
    columns.push("n=inf".to_string());
    let types: BTreeSet<TypeSignature> = results.iter().map(|r| r.model_type.clone()).collect();
    let rows = types
        .into_iter()
        .rev()
        .map(|t| {
            let cells = keys
                .iter()
                .map(|&(n, fwd)| {
                    results
                        .iter()
                        .find(|r| r.model_type == t && r.design.n_obs == n)
                        .and_then(|r| if fwd { r.forward.as_ref() } else { r.exhaustive.as_ref() })
                        .map(|p| p.proportion)
                })
                .collect();
            StudyTableRow {
                asp: asp_correct_selection(&t).asp,
                model_type: t,
                cells,
            }
        })
        .collect();
    StudyTable { columns, rows }
}

pub fn study_report_tsv(results: &[StudyResult]) -> String {
    let table = study_table(results);
    let mut out = table.columns.join("\t");
    out.push('\n');
    for row in &table.rows {
        let _ = write!(out, "{}", row.model_type);
        for c in &row.cells {
            match c {
                Some(p) => {
                    let _ = write!(out, "\t{p:.2}");
                }
                None => out.push('\t'),
            }
        }
        let _ = writeln!(out, "\t{:.2}", row.asp);
    }
    out
}

#[derive(Serialize)]
struct StudyReportJson<'a> {
    table: StudyTable,
    results: &'a [StudyResult],
    truncated_generator: Option<&'static str>,
}

pub fn study_report_json(results: &[StudyResult]) -> Result<String> {
    let truncated = results.iter().any(|r| r.design.trunc_bound.is_some());
    let report = StudyReportJson {
        table: study_table(results),
        results,
        truncated_generator: truncated.then_some("U ~ TruncPo(lambda, A), X ~ TruncPo(mu, A), Y = min(U + X, A)"),
    };
    Ok(serde_json::to_string_pretty(&report)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::TruncPoissonSpec;

    fn design(p: &str, n: usize, trunc: Option<u32>) -> SimDesign {
        SimDesign {
            trunc_bound: trunc,
            ..SimDesign::standard(ModelPartition::parse(p).unwrap(), n, 10, 7)
        }
    }

    #[test]
    fn zero_rates_give_zero_matrix() {
        let d = SimDesign {
            factor_rate: 0.0,
            idio_rate_in_group: 0.0,
            idio_rate_singleton: 0.0,
            ..design("[1 2][3]", 50, None)
        };
        assert_eq!(generate(&d, 0).unwrap().max_value(), 0);
    }

    #[test]
    fn replicates_are_reproducible_and_distinct() {
        let d = design("[1 2 3][4 5]", 20, None);
        assert_eq!(generate(&d, 3).unwrap(), generate(&d, 3).unwrap());
        assert_ne!(generate(&d, 3).unwrap(), generate(&d, 4).unwrap());
    }

    #[test]
    fn standard_design_margins_are_unit_mean() {
        let d = design("[1 2 3 4 5]", 100_000, None);
        let data = generate(&d, 0).unwrap();
        for m in data.col_means() {
            assert!((m - 1.0).abs() < 0.01, "{m}");
        }
    }

    #[test]
    fn pair_correlation_is_one_half() {
        let d = design("[1 2]", 100_000, None);
        let data = generate(&d, 1).unwrap();
        let (a, b): (Vec<f64>, Vec<f64>) = data.rows().map(|r| (r[0] as f64, r[1] as f64)).unzip();
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>();
        let vb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>();
        let r = cov / (va * vb).sqrt();
        assert!((r - 0.5).abs() < 0.02, "{r}");
    }

    #[test]
    fn truncated_margins_match_min_clip_law() {
        let (lambda, mu, a) = (0.54, 1.08, 3u32);
        let d = SimDesign {
            factor_rate: lambda,
            idio_rate_in_group: mu,
            idio_rate_singleton: mu,
            ..design("[1 2][3]", 100_000, Some(a))
        };
        let data = generate(&d, 0).unwrap();
        assert!(data.max_value() <= a);
        let pu = TruncPoissonSpec::new(lambda, a).unwrap();
        let px = TruncPoissonSpec::new(mu, a).unwrap();
        let (mut m1, mut m2) = (0.0, 0.0);
        for u in 0..=a {
            for x in 0..=a {
                let p = (pu.log_pmf(u).unwrap() + px.log_pmf(x).unwrap()).exp();
                let y = (u + x).min(a) as f64;
                m1 += p * y;
                m2 += p * y * y;
            }
        }
        let se = ((m2 - m1 * m1) / 100_000.0).sqrt();
        for v in 0..2 {
            assert!((data.col_mean(v) - m1).abs() < 4.0 * se);
        }
        let single = px.moments();
        let se1 = (single.1 / 100_000.0).sqrt();
        assert!((data.col_mean(2) - single.0).abs() < 4.0 * se1);
    }

    #[test]
    fn study_is_reproducible_and_scored_strictly() {
        let d = SimDesign {
            n_reps: 20,
            ..design("[1 2 3][4 5]", 100, None)
        };
        let a = run_study(&d, StudyMode::Both).unwrap();
        let b = run_study(&d, StudyMode::Both).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.failures, 0);
        let fwd = a.forward.as_ref().unwrap();
        assert!(fwd.proportion > 0.8);
        assert!((fwd.mc_se - (fwd.proportion * (1.0 - fwd.proportion) / 20.0).sqrt()).abs() < 1e-15);

        // Same type, different placement: never the generating partition.
        let permuted = SimDesign {
            partition: ModelPartition::parse("[1 2 4][3 5]").unwrap(),
            ..d.clone()
        };
        let data = generate(&permuted, 0).unwrap();
        let chosen = crate::selection::select_forward(&data, &FitOptions::default()).unwrap();
        if chosen.final_fit.partition.type_signature() == d.partition.type_signature() {
            assert_ne!(chosen.final_fit.partition, d.partition);
        }
        assert_ne!(permuted.partition, d.partition);
        assert_eq!(permuted.partition.type_signature(), d.partition.type_signature());
    }

    #[test]
    fn config_parsing() {
        let cfg = StudyConfig::parse("# table 2\ndims = 5\nn = 25, 50\nidio_rate_singleton = 2\nreps=40\nseed=9\nmode=both\n").unwrap();
        assert_eq!(cfg.partitions.len(), 7);
        assert_eq!(cfg.n_values, vec![25, 50]);
        assert_eq!(cfg.idio_rate_singleton, 2.0);
        assert_eq!(cfg.mode, StudyMode::Both);
        assert_eq!(cfg.designs().len(), 14);
        let one = StudyConfig::parse("partition = [1 2 3][4 5]; [1 2][3 4][5]\ntrunc = 3").unwrap();
        assert_eq!(one.partitions.len(), 2);
        assert_eq!(one.trunc_bound, Some(3));
        assert!(StudyConfig::parse("n = 10").is_err());
        assert!(StudyConfig::parse("dims = 5\nbogus = 1").is_err());
        assert!(StudyConfig::parse("dims = 5\nreps = x").is_err());
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(study_report_tsv(&[]), "type\tn=inf\n");
    }

    #[test]
    fn report_layout() {
        let cfg = StudyConfig {
            n_reps: 4,
            n_values: vec![50],
            ..StudyConfig::for_dimension(5).unwrap()
        };
        let results = cfg.run().unwrap();
        let tsv = study_report_tsv(&results);
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[0], "type\tn=50 fwd\tn=inf");
        assert!(lines[1].starts_with("(5)\t"));
        assert!(lines[7].starts_with("(1,1,1,1,1)\t"));
        assert!(lines[7].ends_with("\t0.44"));
        let json = study_report_json(&results).unwrap();
        assert_eq!(json, study_report_json(&results).unwrap());
    }
}
