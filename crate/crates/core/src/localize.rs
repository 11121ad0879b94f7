//! Suspiciousness scoring and ranking.
//!
//! Spectrum formulas, for a statement with counts `a_ef, a_ep, a_nf, a_np`:
//!
//! ```text
//! Ochiai  = a_ef / sqrt((a_ef + a_nf) * (a_ef + a_ep))
//! DStar   = a_ef^2 / (a_ep + a_nf)
//! Barinel = 1 - a_ep / (a_ep + a_ef)
//! GP02    = 2 * (a_ef + sqrt(a_np)) + sqrt(a_ep)
//! ```
//!
//! A zero denominator scores 0 for Ochiai and Barinel. DStar scores `+inf`
//! when the denominator is 0 and `a_ef > 0`, and 0 when `a_ef = 0`.
//!
//! The perceptron localizer trains a `N → 64 ReLU → 1 sigmoid` network to
//! predict the outcome of a test from its coverage row, then scores statement
//! `j` by the output on the one-hot row that covers only `j`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{spectrum_counts, Dataset, Spectrum, SpectrumCounts, StatementId};
use crate::neural::{Activation, Dense, DenseNet, Gradients, NeuralError, TrainConfig};
use crate::rng::seeded;

pub const MLP_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocalizeError {
    #[error("unknown formula `{0}` (expected ochiai, dstar, barinel or gp02)")]
    UnknownFormula(String),
    #[error("score of statement {0} is NaN")]
    NaN(StatementId),
    #[error("model input width {model} does not match {statements} statements")]
    Width { model: usize, statements: usize },
    #[error("dataset has no failing test")]
    NoFailingTest,
    #[error("{ids} statement ids but {scores} scores")]
    Length { ids: usize, scores: usize },
    #[error("ranking csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formula {
    Ochiai,
    DStar,
    Barinel,
    Gp02,
}

impl Formula {
    pub const ALL: [Formula; 4] = [Formula::Ochiai, Formula::DStar, Formula::Barinel, Formula::Gp02];

    pub fn name(self) -> &'static str {
        match self {
            Formula::Ochiai => "ochiai",
            Formula::DStar => "dstar",
            Formula::Barinel => "barinel",
            Formula::Gp02 => "gp02",
        }
    }

    pub fn score(self, s: &Spectrum) -> f64 {
        let ef = s.a_ef as f64;
        let ep = s.a_ep as f64;
        let nf = s.a_nf as f64;
        let np = s.a_np as f64;
        match self {
            Formula::Ochiai => {
                let d = ((ef + nf) * (ef + ep)).sqrt();
                if d == 0.0 {
                    0.0
                } else {
                    ef / d
                }
            }
            Formula::DStar => {
                let d = ep + nf;
                if s.a_ef == 0 {
                    0.0
                } else if d == 0.0 {
                    f64::INFINITY
                } else {
                    ef * ef / d
                }
            }
            Formula::Barinel => {
                let d = ep + ef;
                if d == 0.0 {
                    0.0
                } else {
                    1.0 - ep / d
                }
            }
            Formula::Gp02 => 2.0 * (ef + np.sqrt()) + ep.sqrt(),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formula {
    type Err = LocalizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ochiai" => Ok(Formula::Ochiai),
            "dstar" | "d*" => Ok(Formula::DStar),
            "barinel" => Ok(Formula::Barinel),
            "gp02" => Ok(Formula::Gp02),
            _ => Err(LocalizeError::UnknownFormula(s.to_string())),
        }
    }
}

/// One score per statement. `+inf` marks a DStar zero denominator and
/// `-inf` marks statements outside the failure context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspiciousnessVector {
    pub statement_ids: Vec<StatementId>,
    pub scores: Vec<f64>,
}

impl SuspiciousnessVector {
    pub fn new(statement_ids: Vec<StatementId>, scores: Vec<f64>) -> Result<Self, LocalizeError> {
        if statement_ids.len() != scores.len() {
            return Err(LocalizeError::Length {
                ids: statement_ids.len(),
                scores: scores.len(),
            });
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(LocalizeError::NaN(statement_ids[i]));
        }
        Ok(SuspiciousnessVector {
            statement_ids,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn score_of(&self, id: StatementId) -> Option<f64> {
        self.statement_ids
            .iter()
            .position(|&s| s == id)
            .map(|i| self.scores[i])
    }

    /// Widens context scores to the whole program: statements not scored here
    /// get `-inf` and therefore rank after every context statement.
    pub fn extend_to_program(&self, program: &[StatementId]) -> SuspiciousnessVector {
        let scores = program
            .iter()
            .map(|&id| self.score_of(id).unwrap_or(f64::NEG_INFINITY))
            .collect();
        SuspiciousnessVector {
            statement_ids: program.to_vec(),
            scores,
        }
    }
}

pub fn sfl_score(formula: Formula, counts: &SpectrumCounts) -> SuspiciousnessVector {
    SuspiciousnessVector {
        statement_ids: counts.statement_ids.clone(),
        scores: counts.spectra.iter().map(|s| formula.score(s)).collect(),
    }
}

/// Spectrum counts and formula scores of a dataset in one call.
pub fn score_dataset(formula: Formula, dataset: &Dataset) -> SuspiciousnessVector {
    sfl_score(formula, &spectrum_counts(dataset))
}

fn as_inputs(dataset: &Dataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    let rows = dataset
        .rows()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let targets = dataset.outcomes().iter().map(|o| o.error_bit() as f64).collect();
    (rows, targets)
}

/// Trains the perceptron localizer on (coverage row → outcome) pairs with
/// mini-batch SGD on BCE. The output layer starts at zero.
pub fn mlp_train(dataset: &Dataset, train: &TrainConfig) -> Result<DenseNet, LocalizeError> {
    train.validate()?;
    if dataset.fail_count() == 0 {
        return Err(LocalizeError::NoFailingTest);
    }
    if dataset.pass_count() == 0 {
        log::warn!("every test fails; the perceptron sees a single class");
    }
    let n = dataset.statement_count();
    let mut rng = seeded(train.seed);
    let mut net = DenseNet::new(vec![
        Dense::xavier(n, MLP_HIDDEN, Activation::Relu, &mut rng),
        Dense::zeros(MLP_HIDDEN, 1, Activation::Sigmoid),
    ])?;
    let (rows, targets) = as_inputs(dataset);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for _ in 0..train.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(train.batch_size) {
            let mut grads = Gradients::zeros_like(&net);
            let scale = batch.len() as f64;
            for &i in batch {
                let trace = net.forward_trace(&rows[i])?;
                let p = trace.output()[0];
                let (g, _) = net.backward_logits(&trace, &[(p - targets[i]) / scale])?;
                grads.accumulate(&g);
            }
            net.apply_sgd(&grads, train.learning_rate);
        }
    }
    Ok(net)
}

/// Scores statement `j` with the model output on the `j`-th basis vector.
pub fn mlp_suspiciousness(
    model: &DenseNet,
    statement_ids: &[StatementId],
) -> Result<SuspiciousnessVector, LocalizeError> {
    let n = statement_ids.len();
    if model.input_width() != n {
        return Err(LocalizeError::Width {
            model: model.input_width(),
            statements: n,
        });
    }
    let mut probe = vec![0.0; n];
    let mut scores = Vec::with_capacity(n);
    for j in 0..n {
        probe[j] = 1.0;
        scores.push(model.forward(&probe)?[0]);
        probe[j] = 0.0;
    }
    SuspiciousnessVector::new(statement_ids.to_vec(), scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedStatement {
    pub statement: StatementId,
    pub score: f64,
    pub rank: usize,
}

/// Statements in descending score order (ascending id among ties), each with
/// its worst-case tie rank: the number of statements scoring at least as high.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub entries: Vec<RankedStatement>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rank_of(&self, id: StatementId) -> Option<usize> {
        self.entries.iter().find(|e| e.statement == id).map(|e| e.rank)
    }

    /// Statement ids in listing order.
    pub fn order(&self) -> Vec<StatementId> {
        self.entries.iter().map(|e| e.statement).collect()
    }

    /// CSV with header `statement,score,rank`, in listing order.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["statement", "score", "rank"]).expect("in-memory write");
        for e in &self.entries {
            w.write_record([e.statement.to_string(), e.score.to_string(), e.rank.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, LocalizeError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for rec in r.deserialize::<(StatementId, f64, usize)>() {
            let (statement, score, rank) = rec.map_err(|e| LocalizeError::Csv(e.to_string()))?;
            if score.is_nan() {
                return Err(LocalizeError::NaN(statement));
            }
            entries.push(RankedStatement {
                statement,
                score,
                rank,
            });
        }
        Ok(Ranking { entries })
    }
}

fn descending(a: &(StatementId, f64), b: &(StatementId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Ranks statements by descending score with worst-case tie ranks.
pub fn rank(scores: &SuspiciousnessVector) -> Result<Ranking, LocalizeError> {
    let mut items: Vec<(StatementId, f64)> = scores
        .statement_ids
        .iter()
        .copied()
        .zip(scores.scores.iter().copied())
        .collect();
    if let Some(&(id, _)) = items.iter().find(|(_, s)| s.is_nan()) {
        return Err(LocalizeError::NaN(id));
    }
    // -0.0 and 0.0 are the same score
    for item in &mut items {
        if item.1 == 0.0 {
            item.1 = 0.0;
        }
    }
    items.sort_by(descending);
    let mut entries = Vec::with_capacity(items.len());
    let mut start = 0;
    while start < items.len() {
        let mut end = start;
        while end < items.len() && items[end].1 == items[start].1 {
            end += 1;
        }
        for &(statement, score) in &items[start..end] {
            entries.push(RankedStatement {
                statement,
                score,
                rank: end,
            });
        }
        start = end;
    }
    Ok(Ranking { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_matrix, TestOutcome};
    use proptest::prelude::*;

    fn spec(a_ef: usize, a_ep: usize, a_nf: usize, a_np: usize) -> Spectrum {
        Spectrum {
            a_ef,
            a_ep,
            a_nf,
            a_np,
        }
    }

    fn vector(scores: &[f64]) -> SuspiciousnessVector {
        SuspiciousnessVector::new((1..=scores.len() as u32).collect(), scores.to_vec()).unwrap()
    }

    #[test]
    fn formula_hand_values() {
        assert_eq!(Formula::Ochiai.score(&spec(2, 0, 0, 3)), 1.0);
        assert_eq!(Formula::DStar.score(&spec(2, 1, 0, 3)), 4.0);
        assert_eq!(Formula::Barinel.score(&spec(1, 3, 0, 0)), 0.25);
        assert_eq!(Formula::Ochiai.score(&spec(0, 4, 2, 1)), 0.0);
    }

    #[test]
    fn zero_denominator_guards() {
        assert_eq!(Formula::Ochiai.score(&spec(0, 0, 0, 5)), 0.0);
        assert_eq!(Formula::Barinel.score(&spec(0, 0, 3, 5)), 0.0);
        assert_eq!(Formula::DStar.score(&spec(3, 0, 0, 5)), f64::INFINITY);
        assert_eq!(Formula::DStar.score(&spec(0, 0, 0, 5)), 0.0);
        assert_eq!(Formula::Gp02.score(&spec(0, 0, 0, 0)), 0.0);
    }

    #[test]
    fn formula_names() {
        for f in Formula::ALL {
            assert_eq!(f.name().parse::<Formula>().unwrap(), f);
        }
        assert!(matches!(
            "tarantula".parse::<Formula>(),
            Err(LocalizeError::UnknownFormula(_))
        ));
    }

    #[test]
    fn worst_case_ties() {
        let r = rank(&vector(&[0.9, 0.5, 0.9])).unwrap();
        assert_eq!(r.rank_of(1), Some(2));
        assert_eq!(r.rank_of(2), Some(3));
        assert_eq!(r.rank_of(3), Some(2));
        assert_eq!(r.order(), vec![1, 3, 2]);

        let flat = rank(&vector(&[0.3; 5])).unwrap();
        assert!(flat.entries.iter().all(|e| e.rank == 5));
    }

    #[test]
    fn infinities_sort_at_the_ends() {
        let r = rank(&vector(&[1.0, f64::INFINITY, f64::NEG_INFINITY, 2.0])).unwrap();
        assert_eq!(r.order(), vec![2, 4, 1, 3]);
        assert_eq!(r.rank_of(3), Some(4));
    }

    #[test]
    fn nan_is_rejected() {
        assert!(SuspiciousnessVector::new(vec![1], vec![f64::NAN]).is_err());
        let v = SuspiciousnessVector {
            statement_ids: vec![1, 2],
            scores: vec![0.0, f64::NAN],
        };
        assert_eq!(rank(&v), Err(LocalizeError::NaN(2)));
    }

    #[test]
    fn program_extension() {
        let ctx = SuspiciousnessVector::new(vec![3, 7], vec![0.2, 0.9]).unwrap();
        let full = ctx.extend_to_program(&[1, 3, 5, 7]);
        let r = rank(&full).unwrap();
        assert_eq!(r.order(), vec![7, 3, 1, 5]);
        assert_eq!(r.rank_of(1), Some(4));
        assert_eq!(r.rank_of(5), Some(4));
    }

    #[test]
    fn csv_round_trip() {
        let r = rank(&vector(&[0.5, f64::INFINITY, 0.25])).unwrap();
        let text = r.to_csv();
        assert!(text.starts_with("statement,score,rank\n2,inf,1\n"));
        assert_eq!(Ranking::from_csv(&text).unwrap(), r);
    }

    fn separable() -> Dataset {
        // column 3 equals the outcome; the others are noise
        let text = "\
1 0 1 1 0 -
0 1 0 0 1 +
1 1 0 1 0 +
0 0 1 1 1 -
1 0 0 0 1 +
0 1 1 0 0 +
1 1 1 0 1 +
0 0 0 1 0 -
1 1 0 0 0 +
0 1 1 0 1 +
";
        parse_matrix(text).unwrap()
    }

    fn train_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 32,
            epochs,
            seed: 42,
        }
    }

    #[test]
    fn mlp_finds_separating_statement() {
        let d = separable();
        let net = mlp_train(&d, &train_cfg(500)).unwrap();
        let s = mlp_suspiciousness(&net, d.statement_ids()).unwrap();
        let best = rank(&s).unwrap().entries[0].statement;
        assert_eq!(best, 4);
        for (j, &score) in s.scores.iter().enumerate() {
            if j != 3 {
                assert!(s.scores[3] > score);
            }
        }
    }

    #[test]
    fn untrained_mlp_is_flat() {
        let d = separable();
        let net = mlp_train(&d, &train_cfg(0)).unwrap();
        let s = mlp_suspiciousness(&net, d.statement_ids()).unwrap();
        assert!(s.scores.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mlp_is_deterministic() {
        let d = separable();
        assert_eq!(
            mlp_train(&d, &train_cfg(20)).unwrap(),
            mlp_train(&d, &train_cfg(20)).unwrap()
        );
    }

    #[test]
    fn mlp_edge_cases() {
        let one = parse_matrix("1 -\n0 +\n").unwrap();
        let net = mlp_train(&one, &train_cfg(5)).unwrap();
        let s = mlp_suspiciousness(&net, one.statement_ids()).unwrap();
        assert!(s.scores[0] > 0.0 && s.scores[0] < 1.0);
        assert!(matches!(
            mlp_suspiciousness(&net, &[1, 2]),
            Err(LocalizeError::Width { model: 1, statements: 2 })
        ));
        let passing = parse_matrix("1 +\n0 +\n").unwrap();
        assert_eq!(mlp_train(&passing, &train_cfg(1)), Err(LocalizeError::NoFailingTest));
        // single class still trains
        let failing = parse_matrix("1 -\n0 -\n").unwrap();
        assert!(mlp_train(&failing, &train_cfg(2)).is_ok());
        assert_eq!(failing.outcomes()[0], TestOutcome::Fail);
    }

    proptest! {
        #[test]
        fn ranks_match_definition(scores in proptest::collection::vec(0u8..6, 1..30)) {
            let v = vector(&scores.iter().map(|&s| s as f64 / 2.0).collect::<Vec<_>>());
            let r = rank(&v).unwrap();
            for (i, &s) in v.scores.iter().enumerate() {
                let expected = v.scores.iter().filter(|&&t| t >= s).count();
                prop_assert_eq!(r.rank_of(v.statement_ids[i]), Some(expected));
                prop_assert!(expected >= 1 && expected <= v.len());
            }
        }

        #[test]
        fn ranking_is_permutation_stable(
            scores in proptest::collection::vec(0u8..5, 1..20),
            seed in any::<u64>(),
        ) {
            let ids: Vec<StatementId> = (1..=scores.len() as u32).collect();
            let vals: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
            let a = rank(&SuspiciousnessVector::new(ids.clone(), vals.clone()).unwrap()).unwrap();
            let mut pairs: Vec<_> = ids.into_iter().zip(vals).collect();
            pairs.shuffle(&mut seeded(seed));
            let (ids2, vals2): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let b = rank(&SuspiciousnessVector::new(ids2, vals2).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn ochiai_and_dstar_monotone_in_a_ef(ef in 0usize..20, ep in 0usize..20, nf in 0usize..20, np in 0usize..20) {
            for f in [Formula::Ochiai, Formula::DStar] {
                let lo = f.score(&spec(ef, ep, nf, np));
                let hi = f.score(&spec(ef + 1, ep, nf, np));
                prop_assert!(hi >= lo, "{} {} -> {}", f, lo, hi);
            }
        }
    }
}
