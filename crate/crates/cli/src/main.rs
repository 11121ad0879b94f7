use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use cgfl_core::augment::{balance_with_gan, manifest_csv, resample, undersample, StrategyKind};
use cgfl_core::dataset::{parse_matrix, parse_matrix_with_errors, validate_for_fl, Dataset};
use cgfl_core::evaluate::{
    box_plot_csv, pair_by_version, parse_fault_specs, rimp, version_result, wilcoxon_summary,
    EvaluationReport, MissingFault, VersionResult, WilcoxonMethod,
};
use cgfl_core::fixture::{gen_fixture, FixtureSpec};
use cgfl_core::gan::{training_log_csv, GanConfig};
use cgfl_core::localize::{mlp_suspiciousness, mlp_train, rank, score_dataset, Formula, Ranking};
use cgfl_core::neural::TrainConfig;
use cgfl_core::pipeline::{run_corpus, run_pipeline, PipelineConfig, PipelineError, RankScope, Stage};
use cgfl_core::rng::{derive_seed, Stream};
use cgfl_core::slicing::{backward_slice, parse_ddg, project_context, CriterionSpec};

#[derive(Parser)]
#[command(name = "cgfl", version, about = "Fault localization on class-balanced coverage data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a coverage matrix
    Parse(MatrixArgs),
    /// Compute the failure-inducing context of a criterion
    Slice(SliceArgs),
    /// Balance a (context) matrix
    Augment(AugmentArgs),
    /// Rank statements of a matrix by suspiciousness
    Localize(LocalizeArgs),
    /// Score rankings against a fault file
    Evaluate(EvaluateArgs),
    /// Compare two per-version evaluation tables
    Compare(CompareArgs),
    /// Generate a synthetic faulty-program corpus
    GenFixture(FixtureArgs),
    /// Run the whole pipeline on one version or a corpus
    Run(RunArgs),
}

#[derive(Args)]
struct MatrixArgs {
    /// Coverage matrix, one test per line ending in `+` or `-`
    #[arg(long)]
    matrix: PathBuf,
    /// Separate outcome file (one 0/1 per line); the matrix then has no outcome column
    #[arg(long)]
    errors: Option<PathBuf>,
}

#[derive(Args)]
struct SliceArgs {
    #[command(flatten)]
    input: MatrixArgs,
    #[arg(long)]
    ddg: PathBuf,
    /// STMT:VAR[:TEST], TEST 1-based; the least-executed failing test if omitted
    #[arg(long)]
    criterion: CriterionSpec,
    /// Directory for context.txt and context_matrix.txt
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GanArgs {
    /// GAN training epochs
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    latent_dim: usize,
    /// Binarization threshold for generated cells
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

impl GanArgs {
    fn config(&self) -> GanConfig {
        GanConfig {
            epochs: self.epochs,
            latent_dim: self.latent_dim,
            binarize_threshold: self.threshold,
            ..GanConfig::default()
        }
    }
}

#[derive(Args)]
struct SeedArg {
    #[arg(long, env = "CGFL_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Gan,
    Resample,
    Undersample,
    None,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Gan => StrategyKind::Gan,
            StrategyArg::Resample => StrategyKind::Resample,
            StrategyArg::Undersample => StrategyKind::Undersample,
            StrategyArg::None => StrategyKind::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormulaArg {
    Ochiai,
    Dstar,
    Barinel,
    Gp02,
}

impl From<FormulaArg> for Formula {
    fn from(f: FormulaArg) -> Self {
        match f {
            FormulaArg::Ochiai => Formula::Ochiai,
            FormulaArg::Dstar => Formula::DStar,
            FormulaArg::Barinel => Formula::Barinel,
            FormulaArg::Gp02 => Formula::Gp02,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Full,
    Context,
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    input: MatrixArgs,
    #[arg(long, value_enum, default_value = "gan")]
    strategy: StrategyArg,
    #[command(flatten)]
    gan: GanArgs,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MethodArgs {
    /// Spectrum formula; repeat for several (default: all four)
    #[arg(long, value_enum)]
    formula: Vec<FormulaArg>,
    /// Also rank with the perceptron localizer
    #[arg(long)]
    dlfl: bool,
    /// Perceptron training epochs
    #[arg(long, default_value_t = 200)]
    mlp_epochs: usize,
}

impl MethodArgs {
    fn formulas(&self) -> Vec<Formula> {
        if self.formula.is_empty() {
            Formula::ALL.to_vec()
        } else {
            self.formula.iter().map(|&f| f.into()).collect()
        }
    }
}

#[derive(Args)]
struct LocalizeArgs {
    #[command(flatten)]
    input: MatrixArgs,
    #[command(flatten)]
    methods: MethodArgs,
    #[command(flatten)]
    seed: SeedArg,
    /// Directory for ranking_<method>.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    faults: PathBuf,
    /// Ranking CSV as VERSION=PATH; the version may be omitted when the
    /// fault file lists one version
    #[arg(long, required = true)]
    ranking: Vec<String>,
    /// Rank faulty statements missing from a ranking just past its end
    #[arg(long)]
    allow_missing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WilcoxonArg {
    Auto,
    Exact,
    Normal,
}

#[derive(Args)]
struct CompareArgs {
    /// Per-version table (version,first_rank,avg_rank) of the treatment
    #[arg(long)]
    treatment: PathBuf,
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    wilcoxon: WilcoxonArg,
    /// Directory for box-plot data
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value_t = 6)]
    tests: usize,
    #[arg(long, default_value_t = 16)]
    statements: usize,
    #[arg(long, default_value_t = 4)]
    context: usize,
    #[arg(long, default_value_t = 2)]
    failing: usize,
    /// Number of versions; more than one writes v1, v2, ... subdirectories
    #[arg(long, default_value_t = 1)]
    versions: usize,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Coverage matrix of a single version
    #[arg(long, required_unless_present = "corpus", conflicts_with = "corpus")]
    matrix: Option<PathBuf>,
    #[arg(long)]
    errors: Option<PathBuf>,
    #[arg(long)]
    ddg: Option<PathBuf>,
    #[arg(long)]
    criterion: Option<CriterionSpec>,
    #[arg(long)]
    faults: Option<PathBuf>,
    /// Version to look up in the fault file
    #[arg(long)]
    version: Option<String>,
    /// Directory of version subdirectories (matrix.txt, ddg.txt, criterion.txt, faults.txt)
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gan")]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "full")]
    scope: ScopeArg,
    #[command(flatten)]
    methods: MethodArgs,
    #[command(flatten)]
    gan: GanArgs,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out: PathBuf,
}

fn read(path: &Path, stage: Stage) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::new(stage, format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PipelineError::new(Stage::Write, e))?;
    }
    fs::write(path, contents).map_err(|e| PipelineError::new(Stage::Write, format!("{}: {e}", path.display())))
}

fn at<E: Into<Box<dyn std::error::Error + Send + Sync>>>(
    stage: Stage,
) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

fn load(args: &MatrixArgs) -> Result<Dataset, PipelineError> {
    let matrix = read(&args.matrix, Stage::Parse)?;
    match &args.errors {
        Some(p) => parse_matrix_with_errors(&matrix, &read(p, Stage::Parse)?),
        None => parse_matrix(&matrix),
    }
    .map_err(at(Stage::Parse))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

fn cmd_parse(args: MatrixArgs) -> Result<(), PipelineError> {
    let data = load(&args)?;
    let summary = validate_for_fl(&data).map_err(at(Stage::Validate))?;
    print_json(&serde_json::to_value(summary).expect("summary serializes"));
    Ok(())
}

fn cmd_slice(args: SliceArgs) -> Result<(), PipelineError> {
    let data = load(&args.input)?;
    let criterion = args.criterion.resolve(&data).map_err(at(Stage::Criterion))?;
    let ddg = parse_ddg(&read(&args.ddg, Stage::Slice)?).map_err(at(Stage::Slice))?;
    let context = backward_slice(&ddg, &criterion).map_err(at(Stage::Slice))?;
    let projected = project_context(&data, &context).map_err(at(Stage::Project))?;
    let ids: Vec<String> = context.statements().iter().map(|s| s.to_string()).collect();
    println!(
        "criterion test {} ({} statements): {}",
        criterion.fail_test + 1,
        ids.len(),
        ids.join(" ")
    );
    if let Some(out) = args.out {
        write(&out.join("context.txt"), ids.iter().map(|s| format!("{s}\n")).collect::<String>())?;
        write(&out.join("context_matrix.txt"), projected.dataset().to_matrix_string())?;
    }
    Ok(())
}

fn cmd_augment(args: AugmentArgs) -> Result<(), PipelineError> {
    let data = load(&args.input)?;
    let seed = args.seed.seed;
    let balanced = match StrategyKind::from(args.strategy) {
        StrategyKind::Gan => {
            let cfg = GanConfig {
                seed: derive_seed(seed, Stream::Gan),
                ..args.gan.config()
            };
            cfg.validate().map_err(at(Stage::Config))?;
            let context = cgfl_core::slicing::ContextMatrix::whole(data);
            let out = balance_with_gan(&context, &cfg).map_err(at(Stage::Balance))?;
            if let Some(model) = &out.model {
                write(&args.out.join("gan_training_log.csv"), training_log_csv(&model.training_log))?;
                write(&args.out.join("checkpoints/generator.json"), model.generator.to_checkpoint())?;
                write(
                    &args.out.join("checkpoints/discriminator.json"),
                    model.discriminator.to_checkpoint(),
                )?;
            }
            out.matrix.into_dataset()
        }
        StrategyKind::Resample => resample(&data).map_err(at(Stage::Balance))?,
        StrategyKind::Undersample => undersample(&data, derive_seed(seed, Stream::Undersample))
            .map_err(at(Stage::Balance))?,
        StrategyKind::None => data,
    };
    write(&args.out.join("balanced_matrix.txt"), balanced.to_matrix_string())?;
    write(&args.out.join("manifest.csv"), manifest_csv(&balanced))?;
    println!(
        "{} failing / {} passing tests",
        balanced.fail_count(),
        balanced.pass_count()
    );
    Ok(())
}

fn cmd_localize(args: LocalizeArgs) -> Result<(), PipelineError> {
    let data = load(&args.input)?;
    validate_for_fl(&data).map_err(at(Stage::Validate))?;
    let mut rankings: Vec<(String, Ranking)> = Vec::new();
    for f in args.methods.formulas() {
        let r = rank(&score_dataset(f, &data)).map_err(at(Stage::Rank))?;
        rankings.push((f.name().to_string(), r));
    }
    if args.methods.dlfl {
        let cfg = TrainConfig {
            epochs: args.methods.mlp_epochs,
            seed: derive_seed(args.seed.seed, Stream::Mlp),
            ..TrainConfig::default()
        };
        let net = mlp_train(&data, &cfg).map_err(at(Stage::Score))?;
        let scores = mlp_suspiciousness(&net, data.statement_ids()).map_err(at(Stage::Score))?;
        rankings.push(("mlp".into(), rank(&scores).map_err(at(Stage::Rank))?));
        if let Some(out) = &args.out {
            write(&out.join("checkpoints/mlp.json"), net.to_checkpoint())?;
        }
    }
    for (name, r) in &rankings {
        let top: Vec<String> = r
            .entries
            .iter()
            .take(10)
            .map(|e| format!("{}#{}", e.statement, e.rank))
            .collect();
        println!("{name:<8} {}", top.join(" "));
        if let Some(out) = &args.out {
            write(&out.join(format!("ranking_{name}.csv")), r.to_csv())?;
        }
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), PipelineError> {
    let specs = parse_fault_specs(&read(&args.faults, Stage::Parse)?).map_err(at(Stage::Parse))?;
    let missing = if args.allow_missing {
        MissingFault::AfterList
    } else {
        MissingFault::Error
    };
    let mut results = Vec::new();
    for item in &args.ranking {
        let (version, path) = match item.split_once('=') {
            Some((v, p)) => (Some(v), p),
            None => (None, item.as_str()),
        };
        let spec = match version {
            Some(v) => specs.iter().find(|s| s.version == v),
            None if specs.len() == 1 => specs.first(),
            None => None,
        }
        .ok_or_else(|| {
            PipelineError::new(
                Stage::Evaluate,
                format!("cannot match `{item}` to a version of the fault file"),
            )
        })?;
        let ranking = Ranking::from_csv(&read(Path::new(path), Stage::Parse)?).map_err(at(Stage::Parse))?;
        results.push(version_result(&ranking, spec, missing).map_err(at(Stage::Evaluate))?);
    }
    let report = EvaluationReport::from_results(results).map_err(at(Stage::Evaluate))?;
    println!("{}", report.to_json());
    if let Some(out) = args.out {
        write(&out.join("evaluation.json"), report.to_json())?;
        write(&out.join("evaluation.csv"), report.to_csv())?;
    }
    Ok(())
}

fn read_version_table(path: &Path) -> Result<Vec<VersionResult>, PipelineError> {
    let text = read(path, Stage::Parse)?;
    let bad = |line: usize, msg: &str| {
        PipelineError::new(Stage::Parse, format!("{}:{line}: {msg}", path.display()))
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [version, first, avg] = fields.as_slice() else {
            return Err(bad(i + 1, "expected version,first_rank,avg_rank"));
        };
        out.push(VersionResult {
            version: version.to_string(),
            first_rank: first.trim().parse().map_err(|_| bad(i + 1, "bad first_rank"))?,
            avg_rank: avg.trim().parse().map_err(|_| bad(i + 1, "bad avg_rank"))?,
            faulty_ranks: Default::default(),
        });
    }
    Ok(out)
}

fn cmd_compare(args: CompareArgs) -> Result<(), PipelineError> {
    let treatment = read_version_table(&args.treatment)?;
    let baseline = read_version_table(&args.baseline)?;
    let pairs = pair_by_version(&treatment, &baseline).map_err(at(Stage::Evaluate))?;
    let t: Vec<usize> = pairs.iter().map(|(t, _)| t.first_rank).collect();
    let b: Vec<usize> = pairs.iter().map(|(_, b)| b.first_rank).collect();
    let ratio = rimp(&t, &b).map_err(at(Stage::Evaluate))?;
    let method = match args.wilcoxon {
        WilcoxonArg::Auto => WilcoxonMethod::Auto,
        WilcoxonArg::Exact => WilcoxonMethod::Exact,
        WilcoxonArg::Normal => WilcoxonMethod::Normal { continuity: true },
    };
    let samples: Vec<(f64, f64)> = t.iter().zip(&b).map(|(&x, &y)| (x as f64, y as f64)).collect();
    let wilcoxon = match wilcoxon_summary(&samples, method) {
        Ok(s) => serde_json::to_value(s).expect("summary serializes"),
        Err(e) => json!({ "error": e.to_string() }),
    };
    print_json(&json!({ "versions": t.len(), "rimp": ratio, "wilcoxon": wilcoxon }));
    if let Some(out) = args.out {
        let ranks = |v: &[usize]| v.iter().map(|&r| r as f64).collect::<Vec<_>>();
        let first = box_plot_csv(&[("treatment".into(), ranks(&t)), ("baseline".into(), ranks(&b))])
            .map_err(at(Stage::Evaluate))?;
        let per_version: Vec<f64> = t.iter().zip(&b).map(|(&x, &y)| 100.0 * x as f64 / y as f64).collect();
        let rimp_plot = box_plot_csv(&[("treatment".into(), per_version)]).map_err(at(Stage::Evaluate))?;
        write(&out.join("plot_first_rank.csv"), first)?;
        write(&out.join("plot_rimp.csv"), rimp_plot)?;
    }
    Ok(())
}

fn cmd_gen_fixture(args: FixtureArgs) -> Result<(), PipelineError> {
    let spec = FixtureSpec {
        tests: args.tests,
        statements: args.statements,
        context: args.context,
        failing: args.failing,
        seed: args.seed.seed,
    };
    if args.versions == 0 {
        return Err(PipelineError::new(Stage::Config, "--versions must be positive"));
    }
    for v in 0..args.versions {
        let name = format!("v{}", v + 1);
        let spec = FixtureSpec {
            seed: spec.seed.wrapping_add(v as u64),
            ..spec
        };
        let fixture = gen_fixture(&spec, &name).map_err(at(Stage::Config))?;
        let dir = if args.versions == 1 {
            args.out.clone()
        } else {
            args.out.join(&name)
        };
        fixture.write(&dir).map_err(at(Stage::Write))?;
        println!(
            "{name}: fault in statement {}, context {:?}",
            fixture.faulty, fixture.context
        );
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), PipelineError> {
    let mut cfg = PipelineConfig::new(args.matrix.clone().unwrap_or_default(), args.out.clone());
    cfg.errors = args.errors;
    cfg.ddg = args.ddg;
    cfg.criterion = args.criterion;
    cfg.faults = args.faults;
    cfg.version = args.version;
    cfg.strategy = args.strategy.into();
    cfg.scope = match args.scope {
        ScopeArg::Full => RankScope::Full,
        ScopeArg::Context => RankScope::Context,
    };
    cfg.formulas = args.methods.formulas();
    cfg.dlfl = args.methods.dlfl;
    cfg.mlp.epochs = args.methods.mlp_epochs;
    cfg.gan = args.gan.config();
    cfg.seed = args.seed.seed;

    if let Some(corpus) = &args.corpus {
        let report = run_corpus(corpus, &cfg, &args.out)?;
        for m in &report.methods {
            let e = &m.evaluation;
            println!(
                "{:<8} top1 {} top5 {} top10 {} mfr {:.2} mar {:.2}{}",
                m.method,
                e.top1,
                e.top5,
                e.top10,
                e.mfr,
                e.mar,
                e.rimp.map(|r| format!(" rimp {r:.2}%")).unwrap_or_default()
            );
        }
        return Ok(());
    }
    let output = run_pipeline(&cfg)?;
    let report = &output.report;
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    println!(
        "{} tests ({} failing), balanced to {} / {} with {} synthetic rows",
        report.tests,
        report.fail_count,
        report.balanced_fail_count,
        report.balanced_pass_count,
        report.synthetic_rows
    );
    for m in &report.methods {
        let first = |e: &Option<EvaluationReport>| e.as_ref().map(|e| e.versions[0].first_rank);
        match (first(&m.evaluation), first(&m.baseline_evaluation)) {
            (Some(t), Some(b)) => println!("{:<8} fault at rank {t} (baseline {b})", m.method),
            (Some(t), None) => println!("{:<8} fault at rank {t}", m.method),
            _ => println!("{:<8} ranking in {}", m.method, m.ranking_file),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Parse(a) => cmd_parse(a),
        Command::Slice(a) => cmd_slice(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Localize(a) => cmd_localize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::GenFixture(a) => cmd_gen_fixture(a),
        Command::Run(a) => cmd_run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
