//! Evaluation harness for scoring low-dose CT image quality with large
//! multimodal models: dataset ingestion, noise metadata, prompt building,
//! backend gateway, strategy orchestration, metrics and reporting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod feedback;
pub mod format;
pub mod gateway;
pub mod image;
pub mod metrics;
pub mod noise;
pub mod orchestrator;
pub mod prompt;
pub mod report;
pub mod synth;
