use std::path::{Path, PathBuf};

use cgfl_core::augment::StrategyKind;
use cgfl_core::localize::Formula;
use cgfl_core::pipeline::{run_pipeline, PipelineConfig, PipelineOutput, RankScope};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/illustrative")
}

fn run(strategy: StrategyKind, scope: RankScope) -> PipelineOutput {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::for_version_dir(&fixture(), out.path()).unwrap();
    cfg.strategy = strategy;
    cfg.scope = scope;
    cfg.seed = 42;
    run_pipeline(&cfg).unwrap()
}

#[test]
fn raw_matrix_ranks_fault_twelfth() {
    let base = run(StrategyKind::None, RankScope::Full);
    assert_eq!(base.rankings["gp02"].rank_of(3), Some(12));
}

#[test]
fn context_ranking_follows_worked_example() {
    let out = run(StrategyKind::Gan, RankScope::Context);
    let r = &out.report;
    assert_eq!(r.context.as_deref(), Some(&[1, 3, 7, 14][..]));
    assert_eq!(r.criterion.as_ref().unwrap().fail_test, 0);
    assert_eq!((r.balanced_fail_count, r.balanced_pass_count, r.synthetic_rows), (4, 4, 2));
    assert_eq!(out.rankings["gp02"].order(), vec![7, 3, 1, 14]);
    assert_eq!(out.rankings["gp02"].rank_of(3), Some(2));
}

#[test]
fn every_formula_improves_on_raw_matrix() {
    let out = run(StrategyKind::Gan, RankScope::Full);
    for f in Formula::ALL {
        let m = out.report.methods.iter().find(|m| m.method == f.name()).unwrap();
        let treated = m.evaluation.as_ref().unwrap();
        let base = m.baseline_evaluation.as_ref().unwrap();
        assert!(treated.mfr < base.mfr, "{f}: {} vs {}", treated.mfr, base.mfr);
        assert!(treated.rimp.unwrap() < 100.0);
    }
}

#[test]
fn criterion_test_defaults_to_smallest_failing_trace() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::for_version_dir(&fixture(), out.path()).unwrap();
    cfg.criterion = Some("14:d1".parse().unwrap());
    cfg.formulas = vec![Formula::Gp02];
    cfg.seed = 42;
    let run = run_pipeline(&cfg).unwrap();
    assert_eq!(run.report.criterion.unwrap().fail_test, 0);
}
