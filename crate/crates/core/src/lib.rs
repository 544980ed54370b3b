//! Multimodal surgical-feedback classification on synthetic and manifest
//! data: a small tape autodiff, per-modality encoders, late and feature
//! fusion, three training strategies, metrics and an experiment grid.

pub mod binio;
pub mod datagen;
pub mod domain;
pub mod encoders;
pub mod eval;
pub mod fusion;
pub mod harness;
pub mod ingest;
pub mod record;
pub mod strategies;
pub mod tensor;

pub use domain::{derive_seed, Dimension, FeedbackLabelSet, Modality, TranscriptSource};
pub use record::{InstanceRecord, Payload};
