//! Synthetic faulty-program corpora for desk-scale experiments.
//!
//! A fixture is a coverage matrix, a dependence graph, a fault file and a
//! criterion line. The context statements form one dependence chain ending at
//! the criterion statement, and the faulty statement lies on that chain.
//! Every failing row covers the whole context.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, StatementId, TestOutcome};
use crate::rng::{derive_seed, seeded, Stream};
use crate::slicing::{CriterionSpec, DependenceEdge, DependenceKind, DynamicDependenceGraph};

pub const MATRIX_FILE: &str = "matrix.txt";
pub const DDG_FILE: &str = "ddg.txt";
pub const FAULTS_FILE: &str = "faults.txt";
pub const CRITERION_FILE: &str = "criterion.txt";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("inconsistent fixture sizes: {0}")]
    Sizes(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub tests: usize,
    pub statements: usize,
    pub context: usize,
    pub failing: usize,
    pub seed: u64,
}

impl FixtureSpec {
    fn validate(&self) -> Result<(), FixtureError> {
        let err = |m: String| Err(FixtureError::Sizes(m));
        if self.failing == 0 {
            return err("at least one failing test is required".into());
        }
        if self.failing > self.tests {
            return err(format!("{} failing tests but only {} tests", self.failing, self.tests));
        }
        if self.context == 0 {
            return err("context must hold at least one statement".into());
        }
        if self.context > self.statements {
            return err(format!(
                "context of {} exceeds {} statements",
                self.context, self.statements
            ));
        }
        if self.statements > StatementId::MAX as usize {
            return err(format!("{} statements is too many", self.statements));
        }
        Ok(())
    }
}

/// Generated corpus for one program version.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub version: String,
    pub dataset: Dataset,
    pub ddg: DynamicDependenceGraph,
    pub context: Vec<StatementId>,
    pub faulty: StatementId,
    pub criterion: CriterionSpec,
}

impl Fixture {
    pub fn faults_text(&self) -> String {
        format!("{} {}\n", self.version, self.faulty)
    }

    /// Writes the four fixture files into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<(), FixtureError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MATRIX_FILE), self.dataset.to_matrix_string())?;
        fs::write(dir.join(DDG_FILE), self.ddg.to_text())?;
        fs::write(dir.join(FAULTS_FILE), self.faults_text())?;
        fs::write(dir.join(CRITERION_FILE), format!("{}\n", self.criterion))?;
        Ok(())
    }
}

pub fn gen_fixture(spec: &FixtureSpec, version: &str) -> Result<Fixture, FixtureError> {
    spec.validate()?;
    let mut rng = seeded(derive_seed(spec.seed, Stream::Fixture));
    let n = spec.statements;

    let mut context: Vec<StatementId> = index::sample(&mut rng, n, spec.context)
        .into_iter()
        .map(|i| i as StatementId + 1)
        .collect();
    context.sort_unstable();
    let in_context = |id: StatementId| context.binary_search(&id).is_ok();
    let criterion_stm = *context.last().expect("nonempty context");
    let faulty = if context.len() == 1 {
        criterion_stm
    } else {
        context[rng.random_range(0..context.len() - 1)]
    };

    let mut edges = Vec::new();
    let kind = |rng: &mut crate::rng::Rng| {
        if rng.random_bool(0.5) {
            DependenceKind::Data
        } else {
            DependenceKind::Control
        }
    };
    for pair in context.windows(2) {
        let k = kind(&mut rng);
        edges.push(DependenceEdge {
            src: pair[0],
            dst: pair[1],
            kind: k,
        });
    }
    // Distractors never point into the context, so the slice stays exact.
    let outside: Vec<StatementId> = (1..=n as StatementId).filter(|&s| !in_context(s)).collect();
    for pair in outside.windows(2) {
        if rng.random_bool(0.7) {
            let k = kind(&mut rng);
            edges.push(DependenceEdge {
                src: pair[0],
                dst: pair[1],
                kind: k,
            });
        }
    }
    if let Some(&first) = outside.first() {
        let k = kind(&mut rng);
        edges.push(DependenceEdge {
            src: context[0],
            dst: first,
            kind: k,
        });
    }
    let nodes: Vec<StatementId> = (1..=n as StatementId).collect();
    let ddg = DynamicDependenceGraph::new(nodes, edges).expect("generated graph is well formed");

    let failing_rows: Vec<usize> = {
        let mut f: Vec<usize> = index::sample(&mut rng, spec.tests, spec.failing).into_vec();
        f.sort_unstable();
        f
    };
    let mut rows = Vec::with_capacity(spec.tests);
    let mut outcomes = Vec::with_capacity(spec.tests);
    for t in 0..spec.tests {
        let fail = failing_rows.binary_search(&t).is_ok();
        let row: Vec<u8> = (1..=n as StatementId)
            .map(|s| {
                if fail && in_context(s) {
                    1
                } else {
                    u8::from(rng.random_bool(0.5))
                }
            })
            .collect();
        rows.push(row);
        outcomes.push(if fail { TestOutcome::Fail } else { TestOutcome::Pass });
    }
    let dataset = Dataset::new(rows, outcomes, None).expect("generated matrix is well formed");

    Ok(Fixture {
        version: version.to_string(),
        dataset,
        ddg,
        criterion: CriterionSpec {
            out_stm: criterion_stm,
            out_var: "out".into(),
            test: Some(failing_rows[0] + 1),
        },
        context,
        faulty,
    })
}
