//! Heart-murmur classification from phonocardiogram recordings: a pair of
//! Monte-Carlo-dropout ResNet segment classifiers combined by a priority
//! cascade, with an optional gradient-boosted fusion model over demographics
//! and signal features.

pub mod bayes_resnet;
pub mod cascade;
pub mod dsp;
pub mod experiment;
pub mod fusion;
pub mod ingestion;
pub mod label;
pub mod scoring;
pub mod signal_features;
pub mod synthetic;

pub use label::{MurmurLabel, ParseLabelError};
