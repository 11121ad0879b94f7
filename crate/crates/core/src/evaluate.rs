//! Localization effectiveness metrics and paired significance tests.
//!
//! - Top-K: versions whose best-ranked faulty statement has rank ≤ K.
//! - MFR: mean over versions of the first (best) faulty rank.
//! - MAR: mean over versions of the average faulty rank.
//! - RImp: `100 · Σ treatment first ranks / Σ baseline first ranks`.
//!
//! Paired comparisons use the Wilcoxon signed-rank test on
//! `treatment − baseline` differences.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dataset::StatementId;
use crate::localize::Ranking;

/// Largest number of nonzero differences handled by exact enumeration.
pub const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no versions to aggregate")]
    Empty,
    #[error("version sets differ: {0}")]
    MismatchedVersions(String),
    #[error("baseline first ranks sum to zero")]
    ZeroBaseline,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("version {version}: faulty statement {statement} is not in the ranking")]
    FaultNotRanked { version: String, statement: StatementId },
    #[error("version {0} lists no faulty statement")]
    NoFaults(String),
    #[error("faults line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("non-finite value in paired sample")]
    NonFinite,
}

/// Faulty statements of one program version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub version: String,
    pub faulty_statements: BTreeSet<StatementId>,
}

/// Parses a fault file: one `VERSION STMT [STMT ...]` line per version.
pub fn parse_fault_specs(text: &str) -> Result<Vec<FaultSpec>, EvalError> {
    let mut out: Vec<FaultSpec> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let version = tokens.next().expect("nonempty line").to_string();
        let faulty_statements = tokens
            .map(|t| {
                t.trim_start_matches(['S', 's'])
                    .parse::<StatementId>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| EvalError::Parse {
                        line: i + 1,
                        message: format!("invalid statement id `{t}`"),
                    })
            })
            .collect::<Result<BTreeSet<_>, _>>()?;
        if faulty_statements.is_empty() {
            return Err(EvalError::NoFaults(version));
        }
        if out.iter().any(|f| f.version == version) {
            return Err(EvalError::Parse {
                line: i + 1,
                message: format!("duplicate version `{version}`"),
            });
        }
        out.push(FaultSpec {
            version,
            faulty_statements,
        });
    }
    Ok(out)
}

pub fn fault_specs_to_text(specs: &[FaultSpec]) -> String {
    let mut out = String::new();
    for s in specs {
        out.push_str(&s.version);
        for id in &s.faulty_statements {
            out.push_str(&format!(" {id}"));
        }
        out.push('\n');
    }
    out
}

/// How to rank a faulty statement that is absent from a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingFault {
    #[default]
    Error,
    /// Rank it just past the end of the list (`len + 1`).
    AfterList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionResult {
    pub version: String,
    pub first_rank: usize,
    pub avg_rank: f64,
    pub faulty_ranks: BTreeMap<StatementId, usize>,
}

pub fn version_result(
    ranking: &Ranking,
    fault: &FaultSpec,
    missing: MissingFault,
) -> Result<VersionResult, EvalError> {
    if fault.faulty_statements.is_empty() {
        return Err(EvalError::NoFaults(fault.version.clone()));
    }
    let mut faulty_ranks = BTreeMap::new();
    for &s in &fault.faulty_statements {
        let r = match (ranking.rank_of(s), missing) {
            (Some(r), _) => r,
            (None, MissingFault::AfterList) => ranking.len() + 1,
            (None, MissingFault::Error) => {
                return Err(EvalError::FaultNotRanked {
                    version: fault.version.clone(),
                    statement: s,
                })
            }
        };
        faulty_ranks.insert(s, r);
    }
    let first_rank = *faulty_ranks.values().min().expect("nonempty");
    let avg_rank = faulty_ranks.values().sum::<usize>() as f64 / faulty_ranks.len() as f64;
    Ok(VersionResult {
        version: fault.version.clone(),
        first_rank,
        avg_rank,
        faulty_ranks,
    })
}

pub fn top_k(results: &[VersionResult], k: usize) -> usize {
    results.iter().filter(|r| r.first_rank <= k).count()
}

pub fn mfr(results: &[VersionResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(results.iter().map(|r| r.first_rank as f64).sum::<f64>() / results.len() as f64)
}

pub fn mar(results: &[VersionResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(results.iter().map(|r| r.avg_rank).sum::<f64>() / results.len() as f64)
}

/// `100 · Σ treatment / Σ baseline` over paired first ranks.
pub fn rimp(treatment: &[usize], baseline: &[usize]) -> Result<f64, EvalError> {
    if treatment.is_empty() || baseline.is_empty() {
        return Err(EvalError::Empty);
    }
    if treatment.len() != baseline.len() {
        return Err(EvalError::MismatchedVersions(format!(
            "{} treatment vs {} baseline versions",
            treatment.len(),
            baseline.len()
        )));
    }
    let base: usize = baseline.iter().sum();
    if base == 0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok(100.0 * treatment.iter().sum::<usize>() as f64 / base as f64)
}

/// Pairs two result sets by version id. Both must cover the same versions.
pub fn pair_by_version<'a>(
    treatment: &'a [VersionResult],
    baseline: &'a [VersionResult],
) -> Result<Vec<(&'a VersionResult, &'a VersionResult)>, EvalError> {
    let base: BTreeMap<&str, &VersionResult> =
        baseline.iter().map(|r| (r.version.as_str(), r)).collect();
    let treat: BTreeSet<&str> = treatment.iter().map(|r| r.version.as_str()).collect();
    if treat.len() != base.len() || treat.iter().any(|v| !base.contains_key(v)) {
        return Err(EvalError::MismatchedVersions(format!(
            "treatment {:?} vs baseline {:?}",
            treat,
            base.keys().collect::<Vec<_>>()
        )));
    }
    Ok(treatment
        .iter()
        .map(|t| (t, base[t.version.as_str()]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// Treatment values tend to be larger.
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    /// Exact for up to [`EXACT_LIMIT`] nonzero differences, normal
    /// approximation with continuity correction beyond.
    #[default]
    Auto,
    Exact,
    Normal { continuity: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Nonzero differences.
    pub n: usize,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Signed ranks: |d| ranked with average ranks for ties, after dropping zeros.
fn signed_ranks(pairs: &[(f64, f64)]) -> Result<Vec<(f64, bool)>, EvalError> {
    let mut diffs: Vec<f64> = Vec::with_capacity(pairs.len());
    for &(t, b) in pairs {
        if !(t.is_finite() && b.is_finite()) {
            return Err(EvalError::NonFinite);
        }
        let d = t - b;
        if d != 0.0 {
            diffs.push(d);
        }
    }
    if diffs.is_empty() {
        return Err(EvalError::AllZeroDifferences);
    }
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&a, &b| diffs[a].abs().total_cmp(&diffs[b].abs()));
    let mut ranks = vec![0.0; diffs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    Ok(ranks.into_iter().zip(diffs.iter().map(|&d| d > 0.0)).collect())
}

/// Null distribution of twice the positive rank sum: `counts[s]` is the number
/// of sign assignments whose doubled positive rank sum equals `s`.
fn doubled_rank_sum_counts(doubled: &[usize]) -> Vec<u64> {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

fn exact_p(signed: &[(f64, bool)], alternative: Alternative) -> f64 {
    // average ranks are multiples of 1/2, so doubled ranks are integers
    let doubled: Vec<usize> = signed.iter().map(|(r, _)| (r * 2.0).round() as usize).collect();
    let observed: usize = signed
        .iter()
        .zip(&doubled)
        .filter(|((_, pos), _)| *pos)
        .map(|(_, d)| d)
        .sum();
    let counts = doubled_rank_sum_counts(&doubled);
    let total = 2f64.powi(signed.len() as i32);
    let upper = counts[observed..].iter().sum::<u64>() as f64 / total;
    let lower = counts[..=observed].iter().sum::<u64>() as f64 / total;
    match alternative {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    }
}

fn normal_p(signed: &[(f64, bool)], alternative: Alternative, continuity: bool) -> f64 {
    let n = signed.len() as f64;
    let w: f64 = signed.iter().filter(|(_, p)| *p).map(|(r, _)| r).sum();
    let mean = n * (n + 1.0) / 4.0;
    let mut ties: BTreeMap<u64, usize> = BTreeMap::new();
    for (r, _) in signed {
        *ties.entry(r.to_bits()).or_default() += 1;
    }
    let tie_term: f64 = ties
        .values()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / 48.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term;
    let sd = var.sqrt();
    let cc = if continuity { 0.5 } else { 0.0 };
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let upper = std_normal.sf((w - mean - cc) / sd);
    let lower = std_normal.cdf((w - mean + cc) / sd);
    match alternative {
        Alternative::Greater => upper.min(1.0),
        Alternative::Less => lower.min(1.0),
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    }
}

pub fn wilcoxon_signed_rank(
    pairs: &[(f64, f64)],
    alternative: Alternative,
    method: WilcoxonMethod,
) -> Result<WilcoxonResult, EvalError> {
    let signed = signed_ranks(pairs)?;
    let n = signed.len();
    let w_plus = signed.iter().filter(|(_, p)| *p).map(|(r, _)| r).sum();
    let (p_value, exact) = match method {
        WilcoxonMethod::Exact => (exact_p(&signed, alternative), true),
        WilcoxonMethod::Auto if n <= EXACT_LIMIT => (exact_p(&signed, alternative), true),
        WilcoxonMethod::Auto => (normal_p(&signed, alternative, true), false),
        WilcoxonMethod::Normal { continuity } => (normal_p(&signed, alternative, continuity), false),
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        p_value,
        exact,
    })
}

/// p-values under all three alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonSummary {
    pub n: usize,
    pub w_plus: f64,
    pub exact: bool,
    pub greater: f64,
    pub less: f64,
    pub two_sided: f64,
}

pub fn wilcoxon_summary(
    pairs: &[(f64, f64)],
    method: WilcoxonMethod,
) -> Result<WilcoxonSummary, EvalError> {
    let g = wilcoxon_signed_rank(pairs, Alternative::Greater, method)?;
    let l = wilcoxon_signed_rank(pairs, Alternative::Less, method)?;
    let t = wilcoxon_signed_rank(pairs, Alternative::TwoSided, method)?;
    Ok(WilcoxonSummary {
        n: g.n,
        w_plus: g.w_plus,
        exact: g.exact,
        greater: g.p_value,
        less: l.p_value,
        two_sided: t.p_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub versions: Vec<VersionResult>,
    pub top1: usize,
    pub top5: usize,
    pub top10: usize,
    pub mfr: f64,
    pub mar: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rimp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wilcoxon: Option<WilcoxonSummary>,
}

impl EvaluationReport {
    pub fn from_results(versions: Vec<VersionResult>) -> Result<Self, EvalError> {
        Ok(EvaluationReport {
            top1: top_k(&versions, 1),
            top5: top_k(&versions, 5),
            top10: top_k(&versions, 10),
            mfr: mfr(&versions)?,
            mar: mar(&versions)?,
            versions,
            rimp: None,
            wilcoxon: None,
        })
    }

    /// Adds RImp and the first-rank Wilcoxon comparison against `baseline`.
    pub fn compare_with(
        mut self,
        baseline: &[VersionResult],
        method: WilcoxonMethod,
    ) -> Result<Self, EvalError> {
        let pairs = pair_by_version(&self.versions, baseline)?;
        let t: Vec<usize> = pairs.iter().map(|(t, _)| t.first_rank).collect();
        let b: Vec<usize> = pairs.iter().map(|(_, b)| b.first_rank).collect();
        self.rimp = Some(rimp(&t, &b)?);
        let samples: Vec<(f64, f64)> = t.iter().zip(&b).map(|(&x, &y)| (x as f64, y as f64)).collect();
        self.wilcoxon = match wilcoxon_summary(&samples, method) {
            Ok(s) => Some(s),
            Err(EvalError::AllZeroDifferences) => None,
            Err(e) => return Err(e),
        };
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-version table, header `version,first_rank,avg_rank`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["version", "first_rank", "avg_rank"]).expect("in-memory write");
        for v in &self.versions {
            w.write_record([v.version.clone(), v.first_rank.to_string(), v.avg_rank.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Five-number summary for box plots; quartiles by linear interpolation
/// between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(BoxStats {
        min: s[0],
        q1: quantile(&s, 0.25),
        median: quantile(&s, 0.5),
        q3: quantile(&s, 0.75),
        max: s[s.len() - 1],
    })
}

/// Box-plot rows, header `method,min,q1,median,q3,max`.
pub fn box_plot_csv(series: &[(String, Vec<f64>)]) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "min", "q1", "median", "q3", "max"])
        .expect("in-memory write");
    for (name, values) in series {
        let b = box_stats(values)?;
        w.write_record([
            name.clone(),
            b.min.to_string(),
            b.q1.to_string(),
            b.median.to_string(),
            b.q3.to_string(),
            b.max.to_string(),
        ])
        .expect("in-memory write");
    }
    Ok(String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"))
}
