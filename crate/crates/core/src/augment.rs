//! Class balancing: GAN synthesis over the failure context, plus the
//! resampling and undersampling baselines.
//!
//! Every strategy targets exactly as many failing rows as passing rows.
//! Synthetic and resampled rows are appended after the originals and tagged
//! through [`RowOrigin`].

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, RowOrigin, TestOutcome};
use crate::gan::{sample_synthetic, train_gan, GanConfig, GanError, GanModel, NoiseSampler};
use crate::rng::{derive_seed, seeded, Stream};
use crate::slicing::ContextMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentError {
    #[error("no failing test to balance against")]
    NoFailingTest,
    #[error("nothing to balance: {fail} failing vs {pass} passing tests")]
    NotImbalanced { fail: usize, pass: usize },
    #[error(transparent)]
    Gan(#[from] GanError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Gan,
    Resample,
    Undersample,
    None,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Gan => "gan",
            StrategyKind::Resample => "resample",
            StrategyKind::Undersample => "undersample",
            StrategyKind::None => "none",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gan" => Ok(StrategyKind::Gan),
            "resample" => Ok(StrategyKind::Resample),
            "undersample" => Ok(StrategyKind::Undersample),
            "none" => Ok(StrategyKind::None),
            other => Err(format!(
                "unknown strategy `{other}` (expected gan, resample, undersample or none)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BalanceStrategy {
    GanContext(GanConfig),
    Resample,
    Undersample { seed: u64 },
    None,
}

impl BalanceStrategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            BalanceStrategy::GanContext(_) => StrategyKind::Gan,
            BalanceStrategy::Resample => StrategyKind::Resample,
            BalanceStrategy::Undersample { .. } => StrategyKind::Undersample,
            BalanceStrategy::None => StrategyKind::None,
        }
    }
}

/// Result of [`balance_with_gan`].
#[derive(Debug, Clone)]
pub struct GanBalance {
    pub matrix: ContextMatrix,
    /// Absent when the input needed no balancing.
    pub model: Option<GanModel>,
    pub warning: Option<String>,
}

fn imbalance(dataset: &Dataset) -> Result<(usize, usize), AugmentError> {
    let fail = dataset.fail_count();
    if fail == 0 {
        return Err(AugmentError::NoFailingTest);
    }
    Ok((fail, dataset.pass_count()))
}

/// Trains a GAN on the failing rows of the context matrix and appends
/// `pass − fail` synthetic failing rows. Inputs that already have at least as
/// many failing as passing rows come back unchanged, with a warning.
pub fn balance_with_gan(context: &ContextMatrix, config: &GanConfig) -> Result<GanBalance, AugmentError> {
    let data = context.dataset();
    let (fail, pass) = imbalance(data)?;
    if fail >= pass {
        let warning = format!(
            "failing tests ({fail}) are not the minority ({pass} passing); dataset left unchanged"
        );
        log::warn!("{warning}");
        return Ok(GanBalance {
            matrix: context.clone(),
            model: None,
            warning: Some(warning),
        });
    }
    let failing: Vec<Vec<u8>> = data
        .failing_tests()
        .into_iter()
        .map(|i| data.row(i).to_vec())
        .collect();
    let model = train_gan(&failing, config)?;
    let mut sampler = NoiseSampler::new(config.latent_dim, derive_seed(config.seed, Stream::Sampler));
    let synthetic = sample_synthetic(&model, pass - fail, &mut sampler)?;
    let mut out = data.clone();
    for row in &synthetic {
        out.push_row(&row.cells, row.outcome, RowOrigin::Synthetic);
    }
    Ok(GanBalance {
        matrix: ContextMatrix::whole(out),
        model: Some(model),
        warning: None,
    })
}

fn require_fail_minority(dataset: &Dataset) -> Result<(usize, usize), AugmentError> {
    let (fail, pass) = imbalance(dataset)?;
    if fail >= pass {
        return Err(AugmentError::NotImbalanced { fail, pass });
    }
    Ok((fail, pass))
}

/// Duplicates failing rows cyclically, in their original order, until the
/// classes are the same size.
pub fn resample(dataset: &Dataset) -> Result<Dataset, AugmentError> {
    let (fail, pass) = require_fail_minority(dataset)?;
    let failing = dataset.failing_tests();
    let mut out = dataset.clone();
    for k in 0..pass - fail {
        let src = failing[k % failing.len()];
        let origin = RowOrigin::Resampled(dataset.origins()[src].source_row().unwrap_or(src));
        out.push_row(dataset.row(src), TestOutcome::Fail, origin);
    }
    Ok(out)
}

/// Removes uniformly chosen passing rows until the classes are the same
/// size. Survivors keep their relative order.
pub fn undersample(dataset: &Dataset, seed: u64) -> Result<Dataset, AugmentError> {
    let (fail, pass) = require_fail_minority(dataset)?;
    let passing: Vec<usize> = (0..dataset.test_count())
        .filter(|&i| !dataset.outcomes()[i].is_fail())
        .collect();
    let mut rng = seeded(seed);
    let mut drop = vec![false; dataset.test_count()];
    for k in index::sample(&mut rng, pass, pass - fail) {
        drop[passing[k]] = true;
    }
    Ok(dataset.retain_rows(|i| !drop[i]))
}

/// Manifest of a balanced dataset, header `row,origin,source_row`. Rows are
/// 1-based; `source_row` is the 1-based row of the input file the row came
/// from, empty for synthetic rows.
pub fn manifest_csv(dataset: &Dataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "origin", "source_row"]).expect("in-memory write");
    for (i, origin) in dataset.origins().iter().enumerate() {
        let kind = match origin {
            RowOrigin::Original(_) => "original",
            RowOrigin::Resampled(_) => "resample",
            RowOrigin::Synthetic => "gan",
        };
        let source = origin.source_row().map(|s| (s + 1).to_string()).unwrap_or_default();
        w.write_record([(i + 1).to_string(), kind.to_string(), source])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_matrix;

    fn four_two() -> Dataset {
        parse_matrix("1 1 0 -\n1 0 1 +\n0 1 1 +\n1 0 0 -\n0 0 1 +\n1 1 1 +\n").unwrap()
    }

    fn quick_gan() -> GanConfig {
        GanConfig {
            latent_dim: 8,
            hidden_width: 16,
            epochs: 100,
            seed: 3,
            ..GanConfig::default()
        }
    }

    #[test]
    fn resample_duplicates_cyclically() {
        let d = four_two();
        let r = resample(&d).unwrap();
        assert_eq!((r.fail_count(), r.pass_count()), (4, 4));
        assert_eq!(r.row(6), d.row(0));
        assert_eq!(r.row(7), d.row(3));
        assert_eq!(r.origins()[6], RowOrigin::Resampled(0));
        for i in 0..d.test_count() {
            assert_eq!(r.row(i), d.row(i));
        }

        let one = parse_matrix("1 -\n0 +\n0 +\n1 +\n0 +\n1 +\n").unwrap();
        let r = resample(&one).unwrap();
        assert_eq!(r.test_count(), 10);
        assert_eq!(r.origins()[6..].iter().filter(|o| **o == RowOrigin::Resampled(0)).count(), 4);

        let even = parse_matrix("1 -\n1 -\n0 -\n0 +\n1 +\n1 +\n").unwrap();
        assert_eq!(
            resample(&even).unwrap_err(),
            AugmentError::NotImbalanced { fail: 3, pass: 3 }
        );
    }

    #[test]
    fn undersample_drops_passing_rows() {
        let d = four_two();
        let u = undersample(&d, 9).unwrap();
        assert_eq!((u.fail_count(), u.pass_count()), (2, 2));
        assert_eq!(u, undersample(&d, 9).unwrap());
        let sources: Vec<usize> = u.origins().iter().map(|o| o.source_row().unwrap()).collect();
        assert!(sources.windows(2).all(|w| w[0] < w[1]));
        assert!(sources.contains(&0) && sources.contains(&3));

        let even = parse_matrix("1 -\n1 -\n0 +\n1 +\n").unwrap();
        assert!(matches!(undersample(&even, 1), Err(AugmentError::NotImbalanced { .. })));
    }

    #[test]
    fn gan_balances_four_two() {
        let d = four_two();
        let b = balance_with_gan(&ContextMatrix::whole(d.clone()), &quick_gan()).unwrap();
        let out = b.matrix.dataset();
        assert_eq!((out.fail_count(), out.pass_count()), (4, 4));
        assert_eq!(out.origins()[6..], [RowOrigin::Synthetic, RowOrigin::Synthetic]);
        for i in 0..d.test_count() {
            assert_eq!(out.row(i), d.row(i));
        }
        assert!(b.model.is_some() && b.warning.is_none());
    }

    #[test]
    fn gan_leaves_balanced_or_inverted_input() {
        let even = parse_matrix("1 -\n1 -\n0 -\n0 +\n1 +\n1 +\n").unwrap();
        let b = balance_with_gan(&ContextMatrix::whole(even.clone()), &quick_gan()).unwrap();
        assert_eq!(b.matrix.dataset(), &even);
        assert!(b.warning.is_some());

        let inverted = parse_matrix("1 -\n1 -\n0 +\n").unwrap();
        let b = balance_with_gan(&ContextMatrix::whole(inverted.clone()), &quick_gan()).unwrap();
        assert_eq!(b.matrix.dataset(), &inverted);
        assert!(b.warning.unwrap().contains("not the minority"));

        let none = parse_matrix("1 +\n").unwrap();
        assert_eq!(
            balance_with_gan(&ContextMatrix::whole(none), &quick_gan()).unwrap_err(),
            AugmentError::NoFailingTest
        );
    }

    #[test]
    fn manifest_layout() {
        let r = resample(&parse_matrix("1 -\n0 +\n1 +\n").unwrap()).unwrap();
        assert_eq!(
            manifest_csv(&r),
            "row,origin,source_row\n1,original,1\n2,original,2\n3,original,3\n4,resample,1\n"
        );
    }

    #[test]
    fn strategy_names() {
        for k in [StrategyKind::Gan, StrategyKind::Resample, StrategyKind::Undersample, StrategyKind::None] {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("smote".parse::<StrategyKind>().is_err());
        assert_eq!(BalanceStrategy::Undersample { seed: 1 }.kind(), StrategyKind::Undersample);
    }

    use proptest::prelude::*;

    fn arb_imbalanced() -> impl Strategy<Value = Dataset> {
        (3usize..25, 1usize..8)
            .prop_flat_map(|(m, n)| {
                (
                    proptest::collection::vec(proptest::collection::vec(0u8..2, n), m),
                    proptest::sample::subsequence((0..m).collect::<Vec<_>>(), 1..=(m - 1) / 2),
                )
            })
            .prop_map(|(rows, fail)| {
                let outcomes = (0..rows.len())
                    .map(|i| if fail.contains(&i) { TestOutcome::Fail } else { TestOutcome::Pass })
                    .collect();
                Dataset::new(rows, outcomes, None).unwrap()
            })
    }

    proptest! {
        #[test]
        fn baselines_balance_without_losing_rows(d in arb_imbalanced(), seed in any::<u64>()) {
            let r = resample(&d).unwrap();
            prop_assert_eq!(r.fail_count(), r.pass_count());
            prop_assert_eq!(r.statement_count(), d.statement_count());
            for i in 0..d.test_count() {
                prop_assert_eq!(r.row(i), d.row(i));
            }
            let u = undersample(&d, seed).unwrap();
            prop_assert_eq!(u.fail_count(), u.pass_count());
            prop_assert_eq!(u.fail_count(), d.fail_count());
            for (i, origin) in u.origins().iter().enumerate() {
                prop_assert_eq!(u.row(i), d.row(origin.source_row().unwrap()));
            }
        }
    }
}
