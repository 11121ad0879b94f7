//! Fault localization on class-balanced coverage data.
//!
//! The pipeline builds a failure-inducing context by backward dynamic slicing,
//! trains a GAN on the failing rows of the context matrix, appends synthetic
//! failing rows until both classes are the same size, and then ranks
//! statements with spectrum formulas or a perceptron.

pub mod augment;
pub mod dataset;
pub mod evaluate;
pub mod fixture;
pub mod gan;
pub mod localize;
pub mod neural;
pub mod pipeline;
pub mod rng;
pub mod slicing;
