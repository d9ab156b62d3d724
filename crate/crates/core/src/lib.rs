//! Metamorphic-testing harness for black-box image-synthesis models.
//!
//! The crate mutates annotated training sets (foreign-object insertion under an
//! occlusion budget, partial-proportion mutation, sprite recoloring), drives a
//! model-under-test through a directory-and-command protocol, scores the
//! generated images with the Inception Score and a grey-tint metric, collects
//! human Likert ratings, and evaluates metamorphic relations over the
//! resulting metric records.
//!
//! Module map:
//!
//! - [`dataset`]: CUB-style annotation loader and the synthetic fixture generator
//! - [`mutate`]: mutation operators, placement search, test-case presets
//! - [`metrics`]: KL divergence, Inception Score, grey-tint score, score files
//! - [`mrengine`]: metamorphic relations, verdicts, anomaly flags, derivation log
//! - [`modelio`]: subprocess model driver and the built-in mock model
//! - [`likert`]: rating sessions, aggregation, persistence, HTTP service
//! - [`pipeline`] / [`report`]: study orchestration and report rendering

pub mod color;
pub mod dataset;
pub mod likert;
pub mod metrics;
pub mod modelio;
pub mod mrengine;
pub mod mutate;
pub mod numeric;
pub mod pipeline;
pub mod report;
pub mod seed;

/// Version string stamped into manifests and reports.
pub const TOOL_VERSION: &str = concat!("metamorph ", env!("CARGO_PKG_VERSION"));
