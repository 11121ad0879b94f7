//! Context-aware GAN over binary coverage rows.
//!
//! The generator maps standard-normal noise to a K-dimensional vector of
//! coverage probabilities; the discriminator scores K-bit rows as real
//! (failing rows of the context matrix) or generated. Training alternates:
//! the discriminator is updated first with the generator frozen, then the
//! generator is updated through the frozen discriminator toward label 1,
//! which is the usual non-saturating form of the minimax BCE objective.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::TestOutcome;
use crate::neural::{bce_loss, Activation, Dense, DenseNet, NeuralError};
use crate::rng::{seeded, Rng};

/// Attempts per sample before an all-zero generator is declared collapsed.
pub const MAX_RESAMPLE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GanError {
    #[error("no failing rows to learn from")]
    NoFailingRows,
    #[error("failing row {row} has width {found}, expected {expected}")]
    RowWidth {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("failing rows must have at least one column")]
    ZeroWidth,
    #[error("non-finite {which} loss at epoch {epoch}")]
    NonFiniteLoss { which: &'static str, epoch: usize },
    #[error("invalid GAN configuration: {0}")]
    Config(String),
    #[error("generator produced only empty coverage after {attempts} attempts")]
    ResampleExhausted { attempts: usize },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub d_steps_per_g_step: usize,
    pub hidden_width: usize,
    pub binarize_threshold: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            latent_dim: 100,
            epochs: 1000,
            d_steps_per_g_step: 1,
            hidden_width: 128,
            binarize_threshold: 0.5,
            seed: 0,
            learning_rate: 0.05,
            batch_size: 32,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("epochs", self.epochs),
            ("d_steps_per_g_step", self.d_steps_per_g_step),
            ("hidden_width", self.hidden_width),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(GanError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(GanError::Config(format!(
                "binarize threshold must lie in (0, 1), got {}",
                self.binarize_threshold
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(GanError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Losses of one epoch, averaged over its batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// `BCE(D(real), 1) + BCE(D(fake), 0)`.
    pub d_loss: f64,
    /// `BCE(D(G(z)), 1)`.
    pub g_loss: f64,
    /// Soft discriminator accuracy on all real rows plus an equal number of
    /// held-out fakes, measured after the epoch's updates.
    pub d_accuracy: f64,
}

/// Standard-normal latent noise from a seeded stream.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    dim: usize,
    rng: Rng,
}

impl NoiseSampler {
    pub fn new(dim: usize, seed: u64) -> Self {
        NoiseSampler {
            dim,
            rng: seeded(seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draw(&mut self) -> Vec<f64> {
        (0..self.dim)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub generator: DenseNet,
    pub discriminator: DenseNet,
    pub config: GanConfig,
    pub training_log: Vec<EpochLoss>,
}

impl GanModel {
    /// Untrained model for rows of width `k`. The discriminator's output
    /// layer starts at zero, so it scores every row 0.5 before training.
    pub fn init(k: usize, config: &GanConfig) -> Self {
        let mut rng = seeded(config.seed);
        let generator = DenseNet::xavier(
            &[config.latent_dim, config.hidden_width, k],
            &[Activation::Relu, Activation::Sigmoid],
            &mut rng,
        );
        let hidden = Dense::xavier(k, config.hidden_width, Activation::LeakyRelu, &mut rng);
        let out = Dense::zeros(config.hidden_width, 1, Activation::Sigmoid);
        let discriminator = DenseNet::new(vec![hidden, out]).expect("layer widths chain");
        GanModel {
            generator,
            discriminator,
            config: *config,
            training_log: Vec::new(),
        }
    }

    /// Context width K.
    pub fn width(&self) -> usize {
        self.generator.output_width()
    }

    /// Raw generator probabilities for one noise vector.
    pub fn generate(&self, z: &[f64]) -> Result<Vec<f64>, GanError> {
        Ok(self.generator.forward(z)?)
    }

    pub fn discriminate(&self, row: &[f64]) -> Result<f64, GanError> {
        Ok(self.discriminator.forward(row)?[0])
    }

    /// `(d_loss, g_loss)` of the current parameters on the given real rows
    /// and noise vectors, without updating anything.
    pub fn losses(&self, real: &[Vec<f64>], noise: &[Vec<f64>]) -> Result<(f64, f64), GanError> {
        let real_p = real
            .iter()
            .map(|r| self.discriminate(r))
            .collect::<Result<Vec<_>, _>>()?;
        let fake_p = noise
            .iter()
            .map(|z| self.discriminate(&self.generate(z)?))
            .collect::<Result<Vec<_>, _>>()?;
        let d = bce_loss(&real_p, &vec![1.0; real_p.len()])?
            + bce_loss(&fake_p, &vec![0.0; fake_p.len()])?;
        let g = bce_loss(&fake_p, &vec![1.0; fake_p.len()])?;
        Ok((d, g))
    }

    /// One discriminator update; returns the pre-update loss.
    fn discriminator_step(
        &mut self,
        real: &[Vec<f64>],
        fake: &[Vec<f64>],
    ) -> Result<f64, GanError> {
        let mut grads = crate::neural::Gradients::zeros_like(&self.discriminator);
        let mut real_p = Vec::with_capacity(real.len());
        let mut fake_p = Vec::with_capacity(fake.len());
        for (rows, target, probs) in [(real, 1.0, &mut real_p), (fake, 0.0, &mut fake_p)] {
            let n = rows.len() as f64;
            for row in rows {
                let trace = self.discriminator.forward_trace(row)?;
                let p = trace.output()[0];
                probs.push(p);
                let (g, _) = self.discriminator.backward_logits(&trace, &[(p - target) / n])?;
                grads.accumulate(&g);
            }
        }
        let loss = bce_loss(&real_p, &vec![1.0; real_p.len()])?
            + bce_loss(&fake_p, &vec![0.0; fake_p.len()])?;
        self.discriminator.apply_sgd(&grads, self.config.learning_rate);
        Ok(loss)
    }

    /// One generator update through the frozen discriminator; returns the
    /// pre-update loss.
    fn generator_step(&mut self, noise: &[Vec<f64>]) -> Result<f64, GanError> {
        let mut grads = crate::neural::Gradients::zeros_like(&self.generator);
        let n = noise.len() as f64;
        let mut probs = Vec::with_capacity(noise.len());
        for z in noise {
            let g_trace = self.generator.forward_trace(z)?;
            let d_trace = self.discriminator.forward_trace(g_trace.output())?;
            let p = d_trace.output()[0];
            probs.push(p);
            let (_, d_input) = self.discriminator.backward_logits(&d_trace, &[(p - 1.0) / n])?;
            let (g, _) = self.generator.backward(&g_trace, &d_input)?;
            grads.accumulate(&g);
        }
        let loss = bce_loss(&probs, &vec![1.0; probs.len()])?;
        self.generator.apply_sgd(&grads, self.config.learning_rate);
        Ok(loss)
    }

    /// Mean probability the discriminator assigns to the correct label over
    /// `real` and as many fresh fakes. 0.5 means it cannot tell them apart.
    fn accuracy(&self, real: &[Vec<f64>], noise: &mut NoiseSampler) -> Result<f64, GanError> {
        let mut total = 0.0;
        for row in real {
            total += self.discriminate(row)?;
        }
        for _ in 0..real.len() {
            let fake = self.generate(&noise.draw())?;
            total += 1.0 - self.discriminate(&fake)?;
        }
        Ok(total / (2 * real.len()) as f64)
    }
}

/// Seed of the training noise stream for a given config seed.
fn training_noise_seed(seed: u64) -> u64 {
    seed ^ 0xA5A5_5A5A_DEAD_BEEF
}

/// Seed of the held-out stream used for accuracy monitoring.
fn monitor_noise_seed(seed: u64) -> u64 {
    seed ^ 0x0F0F_F0F0_1234_5678
}

/// Trains a GAN on the failing rows of a context matrix.
pub fn train_gan(failing_rows: &[Vec<u8>], config: &GanConfig) -> Result<GanModel, GanError> {
    config.validate()?;
    let Some(first) = failing_rows.first() else {
        return Err(GanError::NoFailingRows);
    };
    let k = first.len();
    if k == 0 {
        return Err(GanError::ZeroWidth);
    }
    for (i, r) in failing_rows.iter().enumerate() {
        if r.len() != k {
            return Err(GanError::RowWidth {
                row: i,
                expected: k,
                found: r.len(),
            });
        }
    }
    let real: Vec<Vec<f64>> = failing_rows
        .iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();

    let mut model = GanModel::init(k, config);
    let mut shuffle_rng = seeded(config.seed.wrapping_add(1));
    let mut noise = NoiseSampler::new(config.latent_dim, training_noise_seed(config.seed));
    let mut monitor = NoiseSampler::new(config.latent_dim, monitor_noise_seed(config.seed));
    let mut order: Vec<usize> = (0..real.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut d_sum, mut d_n, mut g_sum, mut g_n) = (0.0, 0usize, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| real[i].clone()).collect();
            for _ in 0..config.d_steps_per_g_step {
                let fake = (0..batch.len())
                    .map(|_| model.generate(&noise.draw()))
                    .collect::<Result<Vec<_>, _>>()?;
                d_sum += model.discriminator_step(&batch, &fake)?;
                d_n += 1;
            }
            let z: Vec<Vec<f64>> = (0..batch.len()).map(|_| noise.draw()).collect();
            g_sum += model.generator_step(&z)?;
            g_n += 1;
        }
        let d_loss = d_sum / d_n as f64;
        let g_loss = g_sum / g_n as f64;
        if !d_loss.is_finite() {
            return Err(GanError::NonFiniteLoss { which: "discriminator", epoch });
        }
        if !g_loss.is_finite() || !model.generator.is_finite() {
            return Err(GanError::NonFiniteLoss { which: "generator", epoch });
        }
        let d_accuracy = model.accuracy(&real, &mut monitor)?;
        model.training_log.push(EpochLoss {
            epoch,
            d_loss,
            g_loss,
            d_accuracy,
        });
    }
    Ok(model)
}

/// Thresholds generator probabilities into coverage bits (`p >= threshold`).
pub fn binarize(raw: &[f64], threshold: f64) -> Vec<u8> {
    raw.iter().map(|&p| u8::from(p >= threshold)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticRow {
    pub cells: Vec<u8>,
    pub outcome: TestOutcome,
}

/// Draws `n` binarized failing rows. All-zero rows are rejected and redrawn.
pub fn sample_synthetic(
    model: &GanModel,
    n: usize,
    sampler: &mut NoiseSampler,
) -> Result<Vec<SyntheticRow>, GanError> {
    let latent = model.generator.input_width();
    if sampler.dim() != latent {
        return Err(NeuralError::Dimension {
            expected: latent,
            found: sampler.dim(),
        }
        .into());
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut accepted = None;
        for _ in 0..MAX_RESAMPLE_ATTEMPTS {
            let row = binarize(&model.generate(&sampler.draw())?, model.config.binarize_threshold);
            if row.contains(&1) {
                accepted = Some(row);
                break;
            }
        }
        let cells = accepted.ok_or(GanError::ResampleExhausted {
            attempts: MAX_RESAMPLE_ATTEMPTS,
        })?;
        out.push(SyntheticRow {
            cells,
            outcome: TestOutcome::Fail,
        });
    }
    Ok(out)
}

/// Training log as CSV with header `epoch,d_loss,g_loss`.
pub fn training_log_csv(log: &[EpochLoss]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "d_loss", "g_loss"]).expect("in-memory write");
    for e in log {
        w.write_record([e.epoch.to_string(), e.d_loss.to_string(), e.g_loss.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(epochs: usize, seed: u64) -> GanConfig {
        GanConfig {
            latent_dim: 8,
            hidden_width: 16,
            epochs,
            seed,
            ..GanConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = GanConfig::default();
        assert_eq!((c.latent_dim, c.epochs, c.d_steps_per_g_step, c.hidden_width), (100, 1000, 1, 128));
        assert_eq!(c.binarize_threshold, 0.5);
    }

    #[test]
    fn thresholding() {
        assert_eq!(binarize(&[0.7, 0.3, 0.51], 0.5), vec![1, 0, 1]);
    }

    #[test]
    fn untrained_discriminator_is_indifferent() {
        let model = GanModel::init(5, &small(1, 3));
        let real = vec![vec![1.0, 0.0, 1.0, 1.0, 0.0]];
        let mut s = NoiseSampler::new(8, 1);
        let noise = vec![s.draw()];
        assert_eq!(model.discriminate(&real[0]).unwrap(), 0.5);
        let (d, g) = model.losses(&real, &noise).unwrap();
        assert!((d - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn first_epoch_logs_pre_update_loss() {
        let model = train_gan(&[vec![1, 0, 1, 1]], &small(3, 11)).unwrap();
        assert!((model.training_log[0].d_loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(model.training_log.len(), 3);
        assert!(model
            .training_log
            .iter()
            .all(|e| e.d_loss.is_finite() && e.d_loss >= 0.0 && e.g_loss >= 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(train_gan(&[], &small(1, 0)), Err(GanError::NoFailingRows));
        assert!(matches!(
            train_gan(&[vec![1, 0], vec![1]], &small(1, 0)),
            Err(GanError::RowWidth { row: 1, .. })
        ));
        let mut c = small(1, 0);
        c.binarize_threshold = 1.0;
        assert!(matches!(train_gan(&[vec![1]], &c), Err(GanError::Config(_))));
        c = small(0, 0);
        assert!(matches!(train_gan(&[vec![1]], &c), Err(GanError::Config(_))));
    }

    #[test]
    fn deterministic_training() {
        let rows = vec![vec![1, 1, 0, 1], vec![1, 0, 0, 1]];
        let a = train_gan(&rows, &small(20, 5)).unwrap();
        let b = train_gan(&rows, &small(20, 5)).unwrap();
        assert_eq!(a, b);
        let c = train_gan(&rows, &small(20, 6)).unwrap();
        assert_ne!(a.training_log, c.training_log);
    }

    #[test]
    fn samples_are_failing_nonempty_rows() {
        let model = train_gan(&[vec![1, 1, 0, 1, 0]], &small(50, 2)).unwrap();
        let mut s = NoiseSampler::new(8, 9);
        assert!(sample_synthetic(&model, 0, &mut s).unwrap().is_empty());
        let rows = sample_synthetic(&model, 20, &mut s).unwrap();
        assert_eq!(rows.len(), 20);
        for r in rows {
            assert_eq!(r.cells.len(), 5);
            assert!(r.cells.contains(&1));
            assert!(r.cells.iter().all(|&v| v <= 1));
            assert_eq!(r.outcome, TestOutcome::Fail);
        }
    }

    #[test]
    fn collapsed_generator_exhausts_budget() {
        let mut model = GanModel::init(3, &small(1, 0));
        let last = model.generator.layers_mut().last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = -50.0);
        let mut s = NoiseSampler::new(8, 0);
        assert_eq!(
            sample_synthetic(&model, 1, &mut s),
            Err(GanError::ResampleExhausted { attempts: 100 })
        );
    }

    #[test]
    fn sampler_dimension_is_checked() {
        let model = GanModel::init(3, &small(1, 0));
        let mut s = NoiseSampler::new(4, 0);
        assert!(sample_synthetic(&model, 1, &mut s).is_err());
    }

    #[test]
    fn log_csv_layout() {
        let csv = training_log_csv(&[EpochLoss {
            epoch: 0,
            d_loss: 1.5,
            g_loss: 0.25,
            d_accuracy: 0.5,
        }]);
        assert_eq!(csv, "epoch,d_loss,g_loss\n0,1.5,0.25\n");
    }
}
