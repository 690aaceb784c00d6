//! Distributional bias audit for classifier predictions.
//!
//! For every ground-truth class the predictions are cross-tabulated against a
//! subgroup attribute and the association is measured with Cramér's V. The
//! per-class effect sizes are then summarised by their Fisher-Pearson
//! skewness (SkewSize): a long left tail of large effects means many classes
//! are affected, so higher values indicate a less biased model.

pub mod cli;
pub mod contingency;
pub mod ingest;
pub mod metrics;
pub mod report;
pub mod simulate;

pub use contingency::{ContingencyTable, MevRule};
pub use ingest::{CanonicalizationRules, PredictionRecord};
pub use metrics::{Aggregation, Band, ClassEffect, EffectConfig, EoMode, SkewConvention};
pub use report::{audit, AuditConfig, AuditReport};
