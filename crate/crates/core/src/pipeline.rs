//! End-to-end runs: parse → validate → criterion → slice → project →
//! balance → score → rank → evaluate, with every artifact written to one
//! output directory.
//!
//! Output layout:
//!
//! ```text
//! report.json                      run summary and metrics
//! context.txt                      slice, one statement per line (gan only)
//! balanced_matrix.txt              balanced dataset in matrix format
//! manifest.csv                     row,origin,source_row
//! gan_training_log.csv             epoch,d_loss,g_loss (gan only)
//! ranking_<method>.csv             statement,score,rank
//! baseline_ranking_<method>.csv    same, on the unbalanced raw matrix
//! evaluation_<method>.csv          version,first_rank,avg_rank (with faults)
//! checkpoints/generator.json
//! checkpoints/discriminator.json
//! checkpoints/mlp.json             (with the perceptron localizer)
//! checkpoints/baseline_mlp.json
//! ```
//!
//! Seeds for the GAN, the noise sampler, undersampling and the perceptron are
//! derived from the one global seed (see [`crate::rng::derive_seed`]).

use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{balance_with_gan, manifest_csv, resample, undersample, StrategyKind};
use crate::dataset::{parse_matrix, parse_matrix_with_errors, validate_for_fl, Dataset, StatementId};
use crate::evaluate::{
    box_plot_csv, parse_fault_specs, version_result, EvaluationReport, FaultSpec,
    MissingFault, VersionResult, WilcoxonMethod,
};
use crate::fixture::{CRITERION_FILE, DDG_FILE, FAULTS_FILE, MATRIX_FILE};
use crate::gan::{training_log_csv, GanConfig};
use crate::localize::{
    mlp_suspiciousness, mlp_train, rank, score_dataset, Formula, Ranking, SuspiciousnessVector,
};
use crate::neural::TrainConfig;
use crate::rng::{derive_seed, Stream};
use crate::slicing::{backward_slice, parse_ddg, project_context, CriterionSpec, SlicingCriterion};

pub const REPORT_FILE: &str = "report.json";
pub const MLP_METHOD: &str = "mlp";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Parse,
    Validate,
    Criterion,
    Slice,
    Project,
    Balance,
    Score,
    Rank,
    Evaluate,
    Write,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Parse => "parse",
            Stage::Validate => "validate",
            Stage::Criterion => "criterion",
            Stage::Slice => "slice",
            Stage::Project => "project",
            Stage::Balance => "balance",
            Stage::Score => "score",
            Stage::Rank => "rank",
            Stage::Evaluate => "evaluate",
            Stage::Write => "write",
        }
    }

    /// 2 for bad input, 3 for training failures, 4 for evaluation errors,
    /// 1 for output I/O.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config
            | Stage::Parse
            | Stage::Validate
            | Stage::Criterion
            | Stage::Slice
            | Stage::Project => 2,
            Stage::Balance | Stage::Score => 3,
            Stage::Rank | Stage::Evaluate => 4,
            Stage::Write => 1,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
#[error("stage `{stage}`: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    pub source: Box<dyn StdError + Send + Sync>,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn StdError + Send + Sync>>) -> Self {
        PipelineError {
            stage,
            source: source.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<Box<dyn StdError + Send + Sync>>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}

fn read(path: &Path, stage: Stage) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::new(stage, format!("{}: {e}", path.display())))
}

/// Which statements appear in the rankings of a context run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankScope {
    /// Every program statement; statements outside the context rank last.
    #[default]
    Full,
    /// Only the context statements.
    Context,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub matrix: PathBuf,
    pub errors: Option<PathBuf>,
    pub ddg: Option<PathBuf>,
    pub faults: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub criterion: Option<CriterionSpec>,
    /// Version to look up in the fault file; may be omitted when the file
    /// lists a single version.
    pub version: Option<String>,
    pub strategy: StrategyKind,
    pub formulas: Vec<Formula>,
    pub dlfl: bool,
    /// The `seed` field is replaced by one derived from `seed` below.
    pub gan: GanConfig,
    pub mlp: TrainConfig,
    pub scope: RankScope,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(matrix: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            matrix: matrix.into(),
            errors: None,
            ddg: None,
            faults: None,
            out_dir: out_dir.into(),
            criterion: None,
            version: None,
            strategy: StrategyKind::Gan,
            formulas: Formula::ALL.to_vec(),
            dlfl: false,
            gan: GanConfig::default(),
            mlp: TrainConfig::default(),
            scope: RankScope::Full,
            seed: 0,
        }
    }

    /// Config for a version directory holding the fixture file set.
    pub fn for_version_dir(dir: &Path, out_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let mut cfg = PipelineConfig::new(dir.join(MATRIX_FILE), out_dir);
        cfg.ddg = Some(dir.join(DDG_FILE)).filter(|p| p.exists());
        cfg.faults = Some(dir.join(FAULTS_FILE)).filter(|p| p.exists());
        let crit = dir.join(CRITERION_FILE);
        if crit.exists() {
            cfg.criterion = Some(read(&crit, Stage::Criterion)?.parse().at(Stage::Criterion)?);
        }
        Ok(cfg)
    }

    fn gan_config(&self) -> GanConfig {
        GanConfig {
            seed: derive_seed(self.seed, Stream::Gan),
            ..self.gan
        }
    }

    fn mlp_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, Stream::Mlp),
            ..self.mlp
        }
    }

    fn method_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.formulas.iter().map(|f| f.name().to_string()).collect();
        if self.dlfl {
            names.push(MLP_METHOD.to_string());
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub ranking_file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_ranking_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_evaluation: Option<EvaluationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub strategy: StrategyKind,
    pub scope: RankScope,
    pub seed: u64,
    pub tests: usize,
    pub statements: usize,
    pub fail_count: usize,
    pub pass_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion: Option<SlicingCriterion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context: Option<Vec<StatementId>>,
    pub balanced_fail_count: usize,
    pub balanced_pass_count: usize,
    pub synthetic_rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub methods: Vec<MethodReport>,
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub balanced: Dataset,
    pub rankings: BTreeMap<String, Ranking>,
    pub baseline_rankings: BTreeMap<String, Ranking>,
}

struct Artifacts {
    files: Vec<(PathBuf, String)>,
}

impl Artifacts {
    fn add(&mut self, name: impl Into<PathBuf>, contents: String) {
        self.files.push((name.into(), contents));
    }

    /// Each file goes to a temporary sibling first and is renamed into place.
    fn flush(self, dir: &Path) -> Result<(), PipelineError> {
        for (name, contents) in self.files {
            let path = dir.join(&name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).at(Stage::Write)?;
            }
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, contents).at(Stage::Write)?;
            fs::rename(&tmp, &path).at(Stage::Write)?;
        }
        Ok(())
    }
}

fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset, PipelineError> {
    let matrix = read(&cfg.matrix, Stage::Parse)?;
    match &cfg.errors {
        Some(p) => parse_matrix_with_errors(&matrix, &read(p, Stage::Parse)?).at(Stage::Parse),
        None => parse_matrix(&matrix).at(Stage::Parse),
    }
}

fn select_fault(cfg: &PipelineConfig, specs: Vec<FaultSpec>) -> Result<FaultSpec, PipelineError> {
    let pick = match &cfg.version {
        Some(v) => specs.iter().find(|s| &s.version == v).cloned(),
        None if specs.len() == 1 => specs.first().cloned(),
        None => None,
    };
    pick.ok_or_else(|| {
        let wanted = cfg.version.as_deref().unwrap_or("<unnamed>");
        PipelineError::new(
            Stage::Evaluate,
            format!("fault file has no entry for version {wanted}"),
        )
    })
}

fn score_methods(
    cfg: &PipelineConfig,
    data: &Dataset,
    checkpoint: Option<&str>,
    artifacts: &mut Artifacts,
) -> Result<Vec<(String, SuspiciousnessVector)>, PipelineError> {
    let mut out = Vec::new();
    for &f in &cfg.formulas {
        out.push((f.name().to_string(), score_dataset(f, data)));
    }
    if cfg.dlfl {
        let net = mlp_train(data, &cfg.mlp_config()).at(Stage::Score)?;
        let scores = mlp_suspiciousness(&net, data.statement_ids()).at(Stage::Score)?;
        if let Some(name) = checkpoint {
            artifacts.add(Path::new("checkpoints").join(name), net.to_checkpoint());
        }
        out.push((MLP_METHOD.to_string(), scores));
    }
    Ok(out)
}

fn evaluate_ranking(
    ranking: &Ranking,
    fault: &FaultSpec,
    missing: MissingFault,
) -> Result<EvaluationReport, PipelineError> {
    let result = version_result(ranking, fault, missing).at(Stage::Evaluate)?;
    EvaluationReport::from_results(vec![result]).at(Stage::Evaluate)
}

fn check_config(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    if cfg.formulas.is_empty() && !cfg.dlfl {
        return Err(PipelineError::new(
            Stage::Config,
            "no localization method: give at least one formula or enable the perceptron",
        ));
    }
    if cfg.strategy == StrategyKind::Gan {
        cfg.gan_config().validate().at(Stage::Config)?;
    }
    if cfg.dlfl {
        cfg.mlp_config().validate().at(Stage::Config)?;
    }
    Ok(())
}

/// Runs every stage and writes the artifacts listed in the module docs.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    check_config(cfg)?;
    let raw = load_dataset(cfg)?;
    let faults = match &cfg.faults {
        Some(p) => Some(parse_fault_specs(&read(p, Stage::Parse)?).at(Stage::Parse)?),
        None => None,
    };
    let summary = validate_for_fl(&raw).at(Stage::Validate)?;
    let mut artifacts = Artifacts { files: Vec::new() };

    let mut criterion = None;
    let mut context = None;
    let mut warning = None;
    let balanced = match cfg.strategy {
        StrategyKind::Gan => {
            let spec = cfg.criterion.as_ref().ok_or_else(|| {
                PipelineError::new(Stage::Criterion, "the gan strategy needs a slicing criterion")
            })?;
            let crit = spec.resolve(&raw).at(Stage::Criterion)?;
            let ddg_path = cfg.ddg.as_ref().ok_or_else(|| {
                PipelineError::new(Stage::Slice, "the gan strategy needs a dependence graph")
            })?;
            let ddg = parse_ddg(&read(ddg_path, Stage::Slice)?).at(Stage::Slice)?;
            let ctx = backward_slice(&ddg, &crit).at(Stage::Slice)?;
            let projected = project_context(&raw, &ctx).at(Stage::Project)?;
            let gan = balance_with_gan(&projected, &cfg.gan_config()).at(Stage::Balance)?;
            if let Some(model) = &gan.model {
                artifacts.add("gan_training_log.csv", training_log_csv(&model.training_log));
                artifacts.add("checkpoints/generator.json", model.generator.to_checkpoint());
                artifacts.add("checkpoints/discriminator.json", model.discriminator.to_checkpoint());
            }
            let lines: String = ctx.statements().iter().map(|s| format!("{s}\n")).collect();
            artifacts.add("context.txt", lines);
            criterion = Some(crit);
            context = Some(ctx.statements().to_vec());
            warning = gan.warning;
            gan.matrix.into_dataset()
        }
        StrategyKind::Resample => resample(&raw).at(Stage::Balance)?,
        StrategyKind::Undersample => {
            undersample(&raw, derive_seed(cfg.seed, Stream::Undersample)).at(Stage::Balance)?
        }
        StrategyKind::None => raw.clone(),
    };
    artifacts.add("balanced_matrix.txt", balanced.to_matrix_string());
    artifacts.add("manifest.csv", manifest_csv(&balanced));

    let treated = score_methods(cfg, &balanced, Some("mlp.json"), &mut artifacts)?;
    let baseline = if cfg.strategy == StrategyKind::None {
        Vec::new()
    } else {
        score_methods(cfg, &raw, Some("baseline_mlp.json"), &mut artifacts)?
    };

    let fault = faults.map(|specs| select_fault(cfg, specs)).transpose()?;
    let in_context_scope = context.is_some() && cfg.scope == RankScope::Context;
    let missing = if in_context_scope {
        MissingFault::AfterList
    } else {
        MissingFault::Error
    };

    let mut rankings = BTreeMap::new();
    let mut baseline_rankings = BTreeMap::new();
    let mut methods = Vec::new();
    for (i, (name, scores)) in treated.into_iter().enumerate() {
        let scores = if context.is_some() && !in_context_scope {
            scores.extend_to_program(raw.statement_ids())
        } else {
            scores
        };
        let ranking = rank(&scores).at(Stage::Rank)?;
        let ranking_file = format!("ranking_{name}.csv");
        artifacts.add(&ranking_file, ranking.to_csv());

        let mut report = MethodReport {
            method: name.clone(),
            ranking_file,
            baseline_ranking_file: None,
            evaluation: None,
            baseline_evaluation: None,
        };
        let base_ranking = match baseline.get(i) {
            Some((_, base_scores)) => {
                let r = rank(base_scores).at(Stage::Rank)?;
                let file = format!("baseline_ranking_{name}.csv");
                artifacts.add(&file, r.to_csv());
                report.baseline_ranking_file = Some(file);
                Some(r)
            }
            None => None,
        };
        if let Some(fault) = &fault {
            let mut eval = evaluate_ranking(&ranking, fault, missing)?;
            if let Some(base) = &base_ranking {
                let base_eval = evaluate_ranking(base, fault, MissingFault::Error)?;
                eval = eval
                    .compare_with(&base_eval.versions, WilcoxonMethod::Auto)
                    .at(Stage::Evaluate)?;
                report.baseline_evaluation = Some(base_eval);
            }
            artifacts.add(format!("evaluation_{name}.csv"), eval.to_csv());
            report.evaluation = Some(eval);
        }
        if let Some(base) = base_ranking {
            baseline_rankings.insert(name.clone(), base);
        }
        rankings.insert(name, ranking);
        methods.push(report);
    }

    let synthetic_rows = balanced
        .origins()
        .iter()
        .filter(|o| o.source_row().is_none())
        .count();
    let report = PipelineReport {
        version: fault.as_ref().map(|f| f.version.clone()).or_else(|| cfg.version.clone()),
        strategy: cfg.strategy,
        scope: cfg.scope,
        seed: cfg.seed,
        tests: summary.tests,
        statements: summary.statements,
        fail_count: summary.fail_count,
        pass_count: summary.pass_count,
        criterion,
        context,
        balanced_fail_count: balanced.fail_count(),
        balanced_pass_count: balanced.pass_count(),
        synthetic_rows,
        warning,
        methods,
    };
    artifacts.add(REPORT_FILE, to_json(&report));
    fs::create_dir_all(&cfg.out_dir).at(Stage::Write)?;
    artifacts.flush(&cfg.out_dir)?;
    Ok(PipelineOutput {
        report,
        balanced,
        rankings,
        baseline_rankings,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMethodReport {
    pub method: String,
    pub evaluation: EvaluationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_evaluation: Option<EvaluationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub versions: Vec<String>,
    pub methods: Vec<CorpusMethodReport>,
}

/// Runs every subdirectory of `corpus` (see [`PipelineConfig::for_version_dir`])
/// in parallel, writing each into `out_dir/<version>`, then aggregates the
/// per-version results per method. `template` supplies everything except
/// the paths, criterion and version.
pub fn run_corpus(
    corpus: &Path,
    template: &PipelineConfig,
    out_dir: &Path,
) -> Result<CorpusReport, PipelineError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(corpus)
        .at(Stage::Parse)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(PipelineError::new(
            Stage::Parse,
            format!("{} holds no version directories", corpus.display()),
        ));
    }
    let outputs: Vec<PipelineOutput> = dirs
        .par_iter()
        .map(|dir| {
            let name = dir.file_name().expect("directory entry").to_owned();
            let found = PipelineConfig::for_version_dir(dir, out_dir.join(&name))?;
            let cfg = PipelineConfig {
                matrix: found.matrix,
                ddg: found.ddg,
                faults: found.faults,
                criterion: found.criterion,
                version: Some(name.to_string_lossy().into_owned()),
                out_dir: found.out_dir,
                ..template.clone()
            };
            run_pipeline(&cfg)
        })
        .collect::<Result<_, _>>()?;

    let mut methods = Vec::new();
    let mut first_rank_series = Vec::new();
    let mut rimp_series = Vec::new();
    for name in template.method_names() {
        let collect = |base: bool| -> Vec<VersionResult> {
            outputs
                .iter()
                .flat_map(|o| o.report.methods.iter().filter(|m| m.method == name))
                .filter_map(|m| if base { m.baseline_evaluation.as_ref() } else { m.evaluation.as_ref() })
                .flat_map(|e| e.versions.iter().cloned())
                .collect()
        };
        let treated = collect(false);
        if treated.is_empty() {
            continue;
        }
        let base = collect(true);
        let mut evaluation = EvaluationReport::from_results(treated.clone()).at(Stage::Evaluate)?;
        let mut baseline_evaluation = None;
        first_rank_series.push((name.clone(), ranks_of(&treated)));
        if !base.is_empty() {
            evaluation = evaluation
                .compare_with(&base, WilcoxonMethod::Auto)
                .at(Stage::Evaluate)?;
            first_rank_series.push((format!("baseline_{name}"), ranks_of(&base)));
            let per_version: Vec<f64> = treated
                .iter()
                .zip(&base)
                .map(|(t, b)| 100.0 * t.first_rank as f64 / b.first_rank as f64)
                .collect();
            rimp_series.push((name.clone(), per_version));
            baseline_evaluation = Some(EvaluationReport::from_results(base).at(Stage::Evaluate)?);
        }
        methods.push(CorpusMethodReport {
            method: name,
            evaluation,
            baseline_evaluation,
        });
    }
    let report = CorpusReport {
        versions: outputs
            .iter()
            .filter_map(|o| o.report.version.clone())
            .collect(),
        methods,
    };
    let mut artifacts = Artifacts { files: Vec::new() };
    artifacts.add("corpus_report.json", to_json(&report));
    if !first_rank_series.is_empty() {
        artifacts.add("plot_first_rank.csv", box_plot_csv(&first_rank_series).at(Stage::Evaluate)?);
    }
    if !rimp_series.is_empty() {
        artifacts.add("plot_rimp.csv", box_plot_csv(&rimp_series).at(Stage::Evaluate)?);
    }
    artifacts.flush(out_dir)?;
    Ok(report)
}

fn ranks_of(results: &[VersionResult]) -> Vec<f64> {
    results.iter().map(|r| r.first_rank as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{gen_fixture, FixtureSpec};

    fn fixture_dir(seed: u64) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let spec = FixtureSpec {
            tests: 12,
            statements: 20,
            context: 5,
            failing: 2,
            seed,
        };
        gen_fixture(&spec, "v1").unwrap().write(dir.path()).unwrap();
        dir
    }

    fn quick(mut cfg: PipelineConfig) -> PipelineConfig {
        cfg.gan.epochs = 50;
        cfg.gan.latent_dim = 8;
        cfg.gan.hidden_width = 16;
        cfg.mlp.epochs = 20;
        cfg.seed = 5;
        cfg
    }

    #[test]
    fn none_strategy_is_plain_sfl() {
        let input = fixture_dir(1);
        let out = tempfile::tempdir().unwrap();
        let mut cfg = quick(PipelineConfig::for_version_dir(input.path(), out.path()).unwrap());
        cfg.strategy = StrategyKind::None;
        let run = run_pipeline(&cfg).unwrap();
        let raw = parse_matrix(&fs::read_to_string(input.path().join(MATRIX_FILE)).unwrap()).unwrap();
        for f in Formula::ALL {
            let direct = rank(&score_dataset(f, &raw)).unwrap();
            assert_eq!(run.rankings[f.name()], direct);
            let on_disk = fs::read_to_string(out.path().join(format!("ranking_{}.csv", f.name()))).unwrap();
            assert_eq!(Ranking::from_csv(&on_disk).unwrap(), direct);
        }
        assert!(run.baseline_rankings.is_empty());
        assert_eq!(run.report.synthetic_rows, 0);
    }

    #[test]
    fn gan_strategy_balances_context() {
        let input = fixture_dir(2);
        let out = tempfile::tempdir().unwrap();
        let mut cfg = quick(PipelineConfig::for_version_dir(input.path(), out.path()).unwrap());
        cfg.dlfl = true;
        let run = run_pipeline(&cfg).unwrap();
        let r = &run.report;
        assert_eq!(r.balanced_fail_count, r.balanced_pass_count);
        assert_eq!(r.synthetic_rows, r.pass_count - r.fail_count);
        assert_eq!(run.balanced.statement_count(), r.context.as_ref().unwrap().len());
        for m in &r.methods {
            let e = m.evaluation.as_ref().unwrap();
            assert!(e.rimp.is_some());
            assert_eq!(run.rankings[&m.method].len(), 20);
        }
        for name in [
            "report.json",
            "context.txt",
            "gan_training_log.csv",
            "checkpoints/generator.json",
            "checkpoints/mlp.json",
            "baseline_ranking_mlp.csv",
            "evaluation_gp02.csv",
        ] {
            assert!(out.path().join(name).exists(), "{name}");
        }
    }

    #[test]
    fn context_scope_ranks_only_context() {
        let input = fixture_dir(3);
        let out = tempfile::tempdir().unwrap();
        let mut cfg = quick(PipelineConfig::for_version_dir(input.path(), out.path()).unwrap());
        cfg.scope = RankScope::Context;
        let run = run_pipeline(&cfg).unwrap();
        assert_eq!(run.rankings["ochiai"].len(), 5);
    }

    #[test]
    fn baselines_balance_raw_matrix() {
        let input = fixture_dir(4);
        for strategy in [StrategyKind::Resample, StrategyKind::Undersample] {
            let out = tempfile::tempdir().unwrap();
            let mut cfg = quick(PipelineConfig::for_version_dir(input.path(), out.path()).unwrap());
            cfg.strategy = strategy;
            let run = run_pipeline(&cfg).unwrap();
            assert_eq!(run.balanced.fail_count(), run.balanced.pass_count());
            assert_eq!(run.balanced.statement_count(), 20);
        }
    }

    #[test]
    fn stage_errors() {
        let input = fixture_dir(5);
        let out = tempfile::tempdir().unwrap();
        let base = quick(PipelineConfig::for_version_dir(input.path(), out.path()).unwrap());

        let no_ddg = PipelineConfig { ddg: None, ..base.clone() };
        let e = run_pipeline(&no_ddg).unwrap_err();
        assert_eq!((e.stage, e.exit_code()), (Stage::Slice, 2));

        let missing_ddg = PipelineConfig {
            ddg: Some(input.path().join("nope.txt")),
            ..base.clone()
        };
        assert_eq!(run_pipeline(&missing_ddg).unwrap_err().stage, Stage::Slice);

        let no_matrix = PipelineConfig {
            matrix: input.path().join("nope.txt"),
            ..base.clone()
        };
        assert_eq!(run_pipeline(&no_matrix).unwrap_err().exit_code(), 2);

        let no_methods = PipelineConfig { formulas: vec![], ..base.clone() };
        assert_eq!(run_pipeline(&no_methods).unwrap_err().stage, Stage::Config);

        let bad_fault = input.path().join("bad_faults.txt");
        fs::write(&bad_fault, "v1 99\n").unwrap();
        let e = run_pipeline(&PipelineConfig { faults: Some(bad_fault), ..base }).unwrap_err();
        assert_eq!((e.stage, e.exit_code()), (Stage::Evaluate, 4));
    }

    #[test]
    fn corpus_aggregates_versions() {
        let corpus = tempfile::tempdir().unwrap();
        for (i, name) in ["a", "b", "c"].iter().enumerate() {
            let spec = FixtureSpec {
                tests: 10,
                statements: 12,
                context: 3,
                failing: 2,
                seed: i as u64,
            };
            gen_fixture(&spec, name).unwrap().write(&corpus.path().join(name)).unwrap();
        }
        let out = tempfile::tempdir().unwrap();
        let mut template = quick(PipelineConfig::new("", ""));
        template.formulas = vec![Formula::Ochiai, Formula::Gp02];
        let report = run_corpus(corpus.path(), &template, out.path()).unwrap();
        assert_eq!(report.versions, ["a", "b", "c"]);
        assert_eq!(report.methods.len(), 2);
        assert_eq!(report.methods[0].evaluation.versions.len(), 3);
        assert!(out.path().join("b/report.json").exists());
        let plot = fs::read_to_string(out.path().join("plot_first_rank.csv")).unwrap();
        assert!(plot.starts_with("method,min,q1,median,q3,max\nochiai,"));
        assert!(out.path().join("plot_rimp.csv").exists());
    }
}
