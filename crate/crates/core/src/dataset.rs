//! Coverage matrices and test outcomes.
//!
//! The on-disk format is the line-oriented matrix format used by GZoltar-style
//! fault-localization datasets: one line per test, `N` whitespace-separated
//! `0`/`1` coverage tokens followed by `+` (pass) or `-` (fail).
//!
//! ```text
//! # optional comment
//! #@ids 1 3 7 14
//! 1 0 1 1 -
//! 0 1 1 1 +
//! ```
//!
//! The `#@ids` header is optional. Without it, statements are numbered by
//! column position `1..=N`. A two-file variant keeps the coverage rows without
//! the trailing outcome token and reads outcomes from a separate errors file
//! holding one `0` (pass) or `1` (fail) per line.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Positive integer label of a program statement.
pub type StatementId = u32;

const IDS_HEADER: &str = "#@ids";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("coverage matrix is empty")]
    Empty,
    #[error("coverage matrix has no statement columns")]
    NoStatements,
    #[error("line {line}: expected {expected} tokens, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: invalid token `{token}`")]
    InvalidToken { line: usize, token: String },
    #[error("line {line}: row must end with an outcome token `+` or `-`")]
    MissingOutcome { line: usize },
    #[error("errors file has {found} entries but the matrix has {expected} rows")]
    ErrorsLength { expected: usize, found: usize },
    #[error("invalid statement id header: {0}")]
    InvalidHeader(String),
    #[error("statement ids must be positive, unique and ascending")]
    UnsortedIds,
    #[error("row {row} has {found} cells, expected {expected}")]
    RowWidth {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row} column {column}: cell value {value} is not 0 or 1")]
    NonBinaryCell { row: usize, column: usize, value: u8 },
    #[error("{rows} rows but {outcomes} outcomes")]
    OutcomeCount { rows: usize, outcomes: usize },
    #[error("no failing test: nothing to localize")]
    NoFailingTest,
    #[error("unknown statement id {0}")]
    UnknownStatement(StatementId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestOutcome {
    Pass,
    Fail,
}

impl TestOutcome {
    /// Value of this outcome in the errors vector (1 = failing).
    pub fn error_bit(self) -> u8 {
        match self {
            TestOutcome::Pass => 0,
            TestOutcome::Fail => 1,
        }
    }

    pub fn is_fail(self) -> bool {
        self == TestOutcome::Fail
    }

    fn token(self) -> &'static str {
        match self {
            TestOutcome::Pass => "+",
            TestOutcome::Fail => "-",
        }
    }
}

/// Where a row of a (possibly augmented) dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "source")]
pub enum RowOrigin {
    /// A test of the input suite; carries its 0-based row index in the parsed file.
    Original(usize),
    /// A copy of an original failing row produced by resampling.
    Resampled(usize),
    /// A row synthesized by the generator.
    Synthetic,
}

impl RowOrigin {
    pub fn is_original(self) -> bool {
        matches!(self, RowOrigin::Original(_))
    }

    pub fn source_row(self) -> Option<usize> {
        match self {
            RowOrigin::Original(i) | RowOrigin::Resampled(i) => Some(i),
            RowOrigin::Synthetic => None,
        }
    }
}

/// M×N binary coverage matrix with per-test outcomes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    cells: Vec<u8>,
    rows: usize,
    statement_ids: Vec<StatementId>,
    outcomes: Vec<TestOutcome>,
    origins: Vec<RowOrigin>,
}

impl Dataset {
    /// Builds a dataset from explicit rows. `statement_ids` defaults to `1..=N`.
    pub fn new(
        rows: Vec<Vec<u8>>,
        outcomes: Vec<TestOutcome>,
        statement_ids: Option<Vec<StatementId>>,
    ) -> Result<Self, DatasetError> {
        if rows.is_empty() {
            return Err(DatasetError::Empty);
        }
        let width = rows[0].len();
        if width == 0 {
            return Err(DatasetError::NoStatements);
        }
        if rows.len() != outcomes.len() {
            return Err(DatasetError::OutcomeCount {
                rows: rows.len(),
                outcomes: outcomes.len(),
            });
        }
        let statement_ids = match statement_ids {
            Some(ids) => ids,
            None => default_ids(width),
        };
        check_ids(&statement_ids)?;
        if statement_ids.len() != width {
            return Err(DatasetError::RowWidth {
                row: 0,
                expected: statement_ids.len(),
                found: width,
            });
        }
        let mut cells = Vec::with_capacity(rows.len() * width);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(DatasetError::RowWidth {
                    row: r,
                    expected: width,
                    found: row.len(),
                });
            }
            for (c, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(DatasetError::NonBinaryCell {
                        row: r,
                        column: c,
                        value: v,
                    });
                }
            }
            cells.extend_from_slice(row);
        }
        let origins = (0..rows.len()).map(RowOrigin::Original).collect();
        Ok(Dataset {
            cells,
            rows: rows.len(),
            statement_ids,
            outcomes,
            origins,
        })
    }

    /// Number of tests (M).
    pub fn test_count(&self) -> usize {
        self.rows
    }

    /// Number of statements (N).
    pub fn statement_count(&self) -> usize {
        self.statement_ids.len()
    }

    pub fn statement_ids(&self) -> &[StatementId] {
        &self.statement_ids
    }

    pub fn outcomes(&self) -> &[TestOutcome] {
        &self.outcomes
    }

    pub fn origins(&self) -> &[RowOrigin] {
        &self.origins
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let n = self.statement_count();
        &self.cells[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> + '_ {
        self.cells.chunks(self.statement_count())
    }

    pub fn cell(&self, row: usize, column: usize) -> u8 {
        self.cells[row * self.statement_count() + column]
    }

    /// Column index of a statement id.
    pub fn column_of(&self, id: StatementId) -> Option<usize> {
        self.statement_ids.binary_search(&id).ok()
    }

    pub fn fail_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_fail()).count()
    }

    pub fn pass_count(&self) -> usize {
        self.rows - self.fail_count()
    }

    /// Indices of failing tests in row order.
    pub fn failing_tests(&self) -> Vec<usize> {
        (0..self.rows).filter(|&i| self.outcomes[i].is_fail()).collect()
    }

    /// Executed-statement count of every test.
    pub fn trace_sizes(&self) -> Vec<usize> {
        self.rows()
            .map(|r| r.iter().filter(|&&v| v == 1).count())
            .collect()
    }

    pub(crate) fn push_row(&mut self, row: &[u8], outcome: TestOutcome, origin: RowOrigin) {
        debug_assert_eq!(row.len(), self.statement_count());
        debug_assert!(row.iter().all(|&v| v <= 1));
        self.cells.extend_from_slice(row);
        self.outcomes.push(outcome);
        self.origins.push(origin);
        self.rows += 1;
    }

    /// Keeps the rows whose index satisfies `keep`, preserving order.
    pub(crate) fn retain_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Dataset {
        let n = self.statement_count();
        let mut out = Dataset {
            cells: Vec::new(),
            rows: 0,
            statement_ids: self.statement_ids.clone(),
            outcomes: Vec::new(),
            origins: Vec::new(),
        };
        for i in 0..self.rows {
            if keep(i) {
                out.cells.extend_from_slice(&self.cells[i * n..(i + 1) * n]);
                out.outcomes.push(self.outcomes[i]);
                out.origins.push(self.origins[i]);
                out.rows += 1;
            }
        }
        out
    }

    /// Restricts the dataset to the given columns (ascending indices).
    pub(crate) fn select_columns(&self, columns: &[usize]) -> Dataset {
        let mut cells = Vec::with_capacity(self.rows * columns.len());
        for row in self.rows() {
            cells.extend(columns.iter().map(|&c| row[c]));
        }
        Dataset {
            cells,
            rows: self.rows,
            statement_ids: columns.iter().map(|&c| self.statement_ids[c]).collect(),
            outcomes: self.outcomes.clone(),
            origins: self.origins.clone(),
        }
    }

    /// Serializes to the single-file matrix format. The `#@ids` header is
    /// emitted only when the ids differ from `1..=N`.
    pub fn to_matrix_string(&self) -> String {
        let mut out = String::new();
        self.write_header(&mut out);
        for (row, outcome) in self.rows().zip(&self.outcomes) {
            write_cells(&mut out, row);
            out.push(' ');
            out.push_str(outcome.token());
            out.push('\n');
        }
        out
    }

    /// Serializes to the two-file format: (coverage rows, errors vector).
    pub fn to_matrix_and_errors(&self) -> (String, String) {
        let mut matrix = String::new();
        self.write_header(&mut matrix);
        let mut errors = String::new();
        for (row, outcome) in self.rows().zip(&self.outcomes) {
            write_cells(&mut matrix, row);
            matrix.push('\n');
            let _ = writeln!(errors, "{}", outcome.error_bit());
        }
        (matrix, errors)
    }

    fn write_header(&self, out: &mut String) {
        if self.statement_ids != default_ids(self.statement_count()) {
            out.push_str(IDS_HEADER);
            for id in &self.statement_ids {
                let _ = write!(out, " {id}");
            }
            out.push('\n');
        }
    }
}

fn write_cells(out: &mut String, row: &[u8]) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            out.push(' ');
        }
        out.push(if *v == 1 { '1' } else { '0' });
    }
}

fn default_ids(n: usize) -> Vec<StatementId> {
    (1..=n as StatementId).collect()
}

fn check_ids(ids: &[StatementId]) -> Result<(), DatasetError> {
    if ids.first() == Some(&0) || ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DatasetError::UnsortedIds);
    }
    Ok(())
}

struct RawLines<'a> {
    header: Option<(usize, &'a str)>,
    rows: Vec<(usize, Vec<&'a str>)>,
}

fn split_lines(text: &str) -> RawLines<'_> {
    let mut header = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(IDS_HEADER) {
            header = Some((i + 1, rest));
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        rows.push((i + 1, line.split_whitespace().collect()));
    }
    RawLines { header, rows }
}

fn parse_header(line: usize, rest: &str) -> Result<Vec<StatementId>, DatasetError> {
    rest.split_whitespace()
        .map(|t| {
            t.parse::<StatementId>()
                .map_err(|_| DatasetError::InvalidHeader(format!("line {line}: `{t}`")))
        })
        .collect()
}

fn parse_bit(line: usize, token: &str) -> Result<u8, DatasetError> {
    match token {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(DatasetError::InvalidToken {
            line,
            token: token.to_string(),
        }),
    }
}

fn finish(
    header: Option<(usize, &str)>,
    rows: Vec<Vec<u8>>,
    outcomes: Vec<TestOutcome>,
) -> Result<Dataset, DatasetError> {
    let ids = match header {
        Some((line, rest)) => {
            let ids = parse_header(line, rest)?;
            if ids.len() != rows[0].len() {
                return Err(DatasetError::InvalidHeader(format!(
                    "{} ids for {} columns",
                    ids.len(),
                    rows[0].len()
                )));
            }
            Some(ids)
        }
        None => None,
    };
    Dataset::new(rows, outcomes, ids)
}

/// Parses the single-file matrix format.
pub fn parse_matrix(text: &str) -> Result<Dataset, DatasetError> {
    let raw = split_lines(text);
    let Some((_, first)) = raw.rows.first() else {
        return Err(DatasetError::Empty);
    };
    let width = first.len();
    if width <= 1 {
        // a lone outcome token, or a lone coverage bit without outcome
        if width == 1 && matches!(first[0], "+" | "-") {
            return Err(DatasetError::NoStatements);
        }
        return Err(DatasetError::MissingOutcome { line: raw.rows[0].0 });
    }
    let mut rows = Vec::with_capacity(raw.rows.len());
    let mut outcomes = Vec::with_capacity(raw.rows.len());
    for (line, tokens) in &raw.rows {
        if tokens.len() != width {
            return Err(DatasetError::RaggedRow {
                line: *line,
                expected: width,
                found: tokens.len(),
            });
        }
        let (last, bits) = tokens.split_last().expect("width > 1");
        let outcome = match *last {
            "+" => TestOutcome::Pass,
            "-" => TestOutcome::Fail,
            "0" | "1" => return Err(DatasetError::MissingOutcome { line: *line }),
            other => {
                return Err(DatasetError::InvalidToken {
                    line: *line,
                    token: other.to_string(),
                })
            }
        };
        let row = bits
            .iter()
            .map(|t| parse_bit(*line, t))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
        outcomes.push(outcome);
    }
    finish(raw.header, rows, outcomes)
}

/// Parses the two-file format: coverage rows without outcome tokens plus an
/// errors file with one `0`/`1` per test.
pub fn parse_matrix_with_errors(matrix: &str, errors: &str) -> Result<Dataset, DatasetError> {
    let raw = split_lines(matrix);
    let Some((_, first)) = raw.rows.first() else {
        return Err(DatasetError::Empty);
    };
    let width = first.len();
    let mut rows = Vec::with_capacity(raw.rows.len());
    for (line, tokens) in &raw.rows {
        if tokens.len() != width {
            return Err(DatasetError::RaggedRow {
                line: *line,
                expected: width,
                found: tokens.len(),
            });
        }
        rows.push(
            tokens
                .iter()
                .map(|t| parse_bit(*line, t))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let mut outcomes = Vec::with_capacity(rows.len());
    for (line, tokens) in split_lines(errors).rows {
        for t in tokens {
            outcomes.push(match t {
                "0" => TestOutcome::Pass,
                "1" => TestOutcome::Fail,
                other => {
                    return Err(DatasetError::InvalidToken {
                        line,
                        token: other.to_string(),
                    })
                }
            });
        }
    }
    if outcomes.len() != rows.len() {
        return Err(DatasetError::ErrorsLength {
            expected: rows.len(),
            found: outcomes.len(),
        });
    }
    finish(raw.header, rows, outcomes)
}

/// Which class is the minority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imbalance {
    /// Fewer failing than passing tests (the usual case).
    FailMinority,
    PassMinority,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlSummary {
    pub tests: usize,
    pub statements: usize,
    pub fail_count: usize,
    pub pass_count: usize,
    pub imbalance: Imbalance,
}

/// Checks that the dataset has something to localize.
pub fn validate_for_fl(dataset: &Dataset) -> Result<FlSummary, DatasetError> {
    let fail_count = dataset.fail_count();
    if fail_count == 0 {
        return Err(DatasetError::NoFailingTest);
    }
    let pass_count = dataset.pass_count();
    let imbalance = match fail_count.cmp(&pass_count) {
        std::cmp::Ordering::Less => Imbalance::FailMinority,
        std::cmp::Ordering::Greater => Imbalance::PassMinority,
        std::cmp::Ordering::Equal => Imbalance::Balanced,
    };
    Ok(FlSummary {
        tests: dataset.test_count(),
        statements: dataset.statement_count(),
        fail_count,
        pass_count,
        imbalance,
    })
}

/// Per-statement spectrum: tests that executed (`e`) or did not execute (`n`)
/// the statement, split by failing (`f`) and passing (`p`) outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Spectrum {
    pub a_ef: usize,
    pub a_ep: usize,
    pub a_nf: usize,
    pub a_np: usize,
}

impl Spectrum {
    pub fn total(&self) -> usize {
        self.a_ef + self.a_ep + self.a_nf + self.a_np
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrumCounts {
    pub statement_ids: Vec<StatementId>,
    pub spectra: Vec<Spectrum>,
}

/// Computes `a_ef`, `a_ep`, `a_nf`, `a_np` for every statement.
pub fn spectrum_counts(dataset: &Dataset) -> SpectrumCounts {
    let n = dataset.statement_count();
    let mut executed_fail = vec![0usize; n];
    let mut executed_pass = vec![0usize; n];
    for (row, outcome) in dataset.rows().zip(dataset.outcomes()) {
        let target = if outcome.is_fail() {
            &mut executed_fail
        } else {
            &mut executed_pass
        };
        for (slot, &v) in target.iter_mut().zip(row) {
            *slot += v as usize;
        }
    }
    let failing = dataset.fail_count();
    let passing = dataset.pass_count();
    let spectra = executed_fail
        .into_iter()
        .zip(executed_pass)
        .map(|(a_ef, a_ep)| Spectrum {
            a_ef,
            a_ep,
            a_nf: failing - a_ef,
            a_np: passing - a_ep,
        })
        .collect();
    SpectrumCounts {
        statement_ids: dataset.statement_ids.clone(),
        spectra,
    }
}
