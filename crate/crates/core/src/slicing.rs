//! Failure-inducing context construction.
//!
//! A dynamic dependence graph records, for one failing execution, which
//! statements a statement depended on (data or control). The backward slice
//! from the faulty output statement is the failure-inducing context; the
//! coverage matrix restricted to those columns is the context matrix.
//!
//! Graph file format, one edge per line, `#` comments allowed:
//!
//! ```text
//! # SRC DST KIND   (DST depends on SRC)
//! 1 3 data
//! 3 7 data
//! 7 14 ctrl
//! 5
//! ```
//!
//! A line holding a single statement id declares an isolated node.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, StatementId, TestOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SliceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("self-loop on statement {0}")]
    SelfLoop(StatementId),
    #[error("edge endpoint {0} is not a declared node")]
    UndeclaredNode(StatementId),
    #[error("criterion statement {0} is not in the dependence graph")]
    CriterionNotInGraph(StatementId),
    #[error("no failing test to build a slicing criterion from")]
    NoFailingTest,
    #[error("failing test {0} has no trace size")]
    MissingTraceSize(usize),
    #[error("test {0} does not exist")]
    UnknownTest(usize),
    #[error("test {0} is not a failing test")]
    NotFailing(usize),
    #[error("context statement {0} is not a column of the dataset")]
    UnknownStatement(StatementId),
    #[error("failure context is empty")]
    EmptyContext,
    #[error("invalid criterion `{0}`: expected STMT:VAR[:TEST]")]
    CriterionSyntax(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DependenceKind {
    Data,
    Control,
}

impl DependenceKind {
    fn keyword(self) -> &'static str {
        match self {
            DependenceKind::Data => "data",
            DependenceKind::Control => "ctrl",
        }
    }
}

/// `dst` dynamically depends on `src`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DependenceEdge {
    pub src: StatementId,
    pub dst: StatementId,
    pub kind: DependenceKind,
}

/// Statement-level dependence graph of one failing execution. Multiple
/// dynamic instances of a statement share one node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DynamicDependenceGraph {
    nodes: BTreeSet<StatementId>,
    edges: Vec<DependenceEdge>,
}

impl DynamicDependenceGraph {
    pub fn new(
        nodes: impl IntoIterator<Item = StatementId>,
        edges: Vec<DependenceEdge>,
    ) -> Result<Self, SliceError> {
        let nodes: BTreeSet<_> = nodes.into_iter().collect();
        for e in &edges {
            if e.src == e.dst {
                return Err(SliceError::SelfLoop(e.src));
            }
            for end in [e.src, e.dst] {
                if !nodes.contains(&end) {
                    return Err(SliceError::UndeclaredNode(end));
                }
            }
        }
        Ok(DynamicDependenceGraph { nodes, edges })
    }

    /// Graph whose nodes are exactly the edge endpoints.
    pub fn from_edges(edges: Vec<DependenceEdge>) -> Result<Self, SliceError> {
        let nodes: Vec<_> = edges.iter().flat_map(|e| [e.src, e.dst]).collect();
        Self::new(nodes, edges)
    }

    pub fn nodes(&self) -> &BTreeSet<StatementId> {
        &self.nodes
    }

    pub fn edges(&self) -> &[DependenceEdge] {
        &self.edges
    }

    pub fn contains(&self, id: StatementId) -> bool {
        self.nodes.contains(&id)
    }

    /// Adds an edge, declaring its endpoints if needed.
    pub fn add_edge(&mut self, edge: DependenceEdge) -> Result<(), SliceError> {
        if edge.src == edge.dst {
            return Err(SliceError::SelfLoop(edge.src));
        }
        self.nodes.insert(edge.src);
        self.nodes.insert(edge.dst);
        self.edges.push(edge);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut touched = BTreeSet::new();
        for e in &self.edges {
            out.push_str(&format!("{} {} {}\n", e.src, e.dst, e.kind.keyword()));
            touched.insert(e.src);
            touched.insert(e.dst);
        }
        for n in self.nodes.difference(&touched) {
            out.push_str(&format!("{n}\n"));
        }
        out
    }
}

/// Parses the edge-list format.
pub fn parse_ddg(text: &str) -> Result<DynamicDependenceGraph, SliceError> {
    let mut graph = DynamicDependenceGraph::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let parse_id = |t: &str| {
            t.parse::<StatementId>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| SliceError::Parse {
                    line: lineno,
                    message: format!("invalid statement id `{t}`"),
                })
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [node] => {
                graph.nodes.insert(parse_id(node)?);
            }
            [src, dst, kind] => {
                let kind = match kind.to_ascii_lowercase().as_str() {
                    "data" => DependenceKind::Data,
                    "ctrl" | "control" => DependenceKind::Control,
                    other => {
                        return Err(SliceError::Parse {
                            line: lineno,
                            message: format!("unknown dependence kind `{other}`"),
                        })
                    }
                };
                graph.add_edge(DependenceEdge {
                    src: parse_id(src)?,
                    dst: parse_id(dst)?,
                    kind,
                })?;
            }
            _ => {
                return Err(SliceError::Parse {
                    line: lineno,
                    message: "expected `SRC DST KIND`".to_string(),
                })
            }
        }
    }
    Ok(graph)
}

/// `(outStm, outVar, failTest)`: the output statement whose variable holds a
/// wrong value in the given failing test (0-based row index).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicingCriterion {
    pub out_stm: StatementId,
    pub out_var: String,
    pub fail_test: usize,
}

impl SlicingCriterion {
    /// Checks that `fail_test` is a failing row of `dataset`.
    pub fn check_test(&self, dataset: &Dataset) -> Result<(), SliceError> {
        match dataset.outcomes().get(self.fail_test) {
            None => Err(SliceError::UnknownTest(self.fail_test)),
            Some(TestOutcome::Pass) => Err(SliceError::NotFailing(self.fail_test)),
            Some(TestOutcome::Fail) => Ok(()),
        }
    }
}

/// Command-line form of a criterion: `STMT:VAR[:TEST]`, with `TEST` 1-based.
/// Without a test, the least-executed failing test is chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionSpec {
    pub out_stm: StatementId,
    pub out_var: String,
    pub test: Option<usize>,
}

impl CriterionSpec {
    /// Resolves the test against `dataset`.
    pub fn resolve(&self, dataset: &Dataset) -> Result<SlicingCriterion, SliceError> {
        let fail_test = match self.test {
            Some(0) => return Err(SliceError::UnknownTest(0)),
            Some(t) => t - 1,
            None => {
                let sizes: BTreeMap<usize, usize> =
                    dataset.trace_sizes().into_iter().enumerate().collect();
                select_criterion_test(dataset, &sizes)?
            }
        };
        let criterion = SlicingCriterion {
            out_stm: self.out_stm,
            out_var: self.out_var.clone(),
            fail_test,
        };
        criterion.check_test(dataset)?;
        Ok(criterion)
    }
}

impl FromStr for CriterionSpec {
    type Err = SliceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SliceError::CriterionSyntax(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let (stm, var, test) = match parts.as_slice() {
            [stm, var] => (stm, var, None),
            [stm, var, ""] => (stm, var, None),
            [stm, var, test] => (stm, var, Some(test.parse::<usize>().map_err(|_| bad())?)),
            _ => return Err(bad()),
        };
        let out_stm = stm
            .trim_start_matches(['S', 's'])
            .parse::<StatementId>()
            .map_err(|_| bad())?;
        Ok(CriterionSpec {
            out_stm,
            out_var: var.to_string(),
            test,
        })
    }
}

impl fmt::Display for CriterionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.out_stm, self.out_var)?;
        if let Some(t) = self.test {
            write!(f, ":{t}")?;
        }
        Ok(())
    }
}

/// Statements of the failure-inducing context, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureContext {
    statements: Vec<StatementId>,
}

impl FailureContext {
    pub fn new(statements: impl IntoIterator<Item = StatementId>) -> Result<Self, SliceError> {
        let set: BTreeSet<_> = statements.into_iter().collect();
        if set.is_empty() {
            return Err(SliceError::EmptyContext);
        }
        Ok(FailureContext {
            statements: set.into_iter().collect(),
        })
    }

    pub fn statements(&self) -> &[StatementId] {
        &self.statements
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn contains(&self, id: StatementId) -> bool {
        self.statements.binary_search(&id).is_ok()
    }
}

/// The coverage matrix restricted to the failure-inducing context (M×K).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextMatrix(Dataset);

impl ContextMatrix {
    /// Treats every column of `dataset` as context.
    pub fn whole(dataset: Dataset) -> Self {
        ContextMatrix(dataset)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.0
    }

    pub fn into_dataset(self) -> Dataset {
        self.0
    }

    pub fn context(&self) -> FailureContext {
        FailureContext {
            statements: self.0.statement_ids().to_vec(),
        }
    }
}

/// Picks the failing test with the fewest executed statements; ties go to
/// the lowest test index.
pub fn select_criterion_test(
    dataset: &Dataset,
    trace_sizes: &BTreeMap<usize, usize>,
) -> Result<usize, SliceError> {
    let mut best: Option<(usize, usize)> = None;
    for test in dataset.failing_tests() {
        let size = *trace_sizes
            .get(&test)
            .ok_or(SliceError::MissingTraceSize(test))?;
        if best.is_none_or(|(_, s)| size < s) {
            best = Some((test, size));
        }
    }
    best.map(|(t, _)| t).ok_or(SliceError::NoFailingTest)
}

/// Backward dynamic slice: every statement from which the criterion
/// statement is reachable along dependence edges, plus the statement itself.
/// Data and control edges are followed alike.
pub fn backward_slice(
    ddg: &DynamicDependenceGraph,
    criterion: &SlicingCriterion,
) -> Result<FailureContext, SliceError> {
    if !ddg.contains(criterion.out_stm) {
        return Err(SliceError::CriterionNotInGraph(criterion.out_stm));
    }
    let mut preds: HashMap<StatementId, Vec<StatementId>> = HashMap::new();
    for e in ddg.edges() {
        preds.entry(e.dst).or_default().push(e.src);
    }
    let mut seen = BTreeSet::from([criterion.out_stm]);
    let mut stack = vec![criterion.out_stm];
    while let Some(node) = stack.pop() {
        for &p in preds.get(&node).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(p) {
                stack.push(p);
            }
        }
    }
    Ok(FailureContext {
        statements: seen.into_iter().collect(),
    })
}

/// Keeps only the context columns; rows and outcomes are untouched.
pub fn project_context(
    dataset: &Dataset,
    context: &FailureContext,
) -> Result<ContextMatrix, SliceError> {
    let columns = context
        .statements()
        .iter()
        .map(|&id| dataset.column_of(id).ok_or(SliceError::UnknownStatement(id)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ContextMatrix(dataset.select_columns(&columns)))
}
