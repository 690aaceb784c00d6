//! Per-class effect sizes, their SkewSize aggregate, and the accuracy and
//! fairness baselines reported next to them.

mod accuracy;
mod fairness;
mod skewness;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contingency::{self, ContingencyError, ContingencyTable, MevFilterOutcome, MevRule};
use crate::ingest::{group_by_class, PredictionRecord};

pub use accuracy::{accuracy_metrics, AccuracySummary};
pub use fairness::{
    demographic_parity, equalized_odds, fairness_summary, Aggregation, EoMode, FairnessSummary,
};
pub use skewness::{fisher_pearson_skewness, skewsize, SkewConvention, SkewSize};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no prediction records")]
    NoRecords,
    #[error("only one subgroup present; a between-subgroup comparison needs at least two")]
    SingleSubgroup,
    #[error("skewness of an empty sample")]
    EmptyInput,
    #[error("SkewSize needs at least 2 defined effect sizes, got {0}")]
    TooFewClasses(usize),
    #[error("effect size {0} outside [0, 1]")]
    OutOfRange(f64),
}

/// Effect-size strength bands, left-closed and right-open except the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Negligible,
    Small,
    Medium,
    Large,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Negligible, Band::Small, Band::Medium, Band::Large];
    /// Lower edges of `Small`, `Medium` and `Large`.
    pub const EDGES: [f64; 3] = [0.1, 0.3, 0.5];

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Negligible => "negligible",
            Band::Small => "small",
            Band::Medium => "medium",
            Band::Large => "large",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify_band(effect_size: f64) -> Result<Band, MetricsError> {
    if !(0.0..=1.0).contains(&effect_size) {
        return Err(MetricsError::OutOfRange(effect_size));
    }
    let [small, medium, large] = Band::EDGES;
    Ok(if effect_size < small {
        Band::Negligible
    } else if effect_size < medium {
        Band::Small
    } else if effect_size < large {
        Band::Medium
    } else {
        Band::Large
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// A single subgroup or a single predicted label: Cramér's V undefined.
    DofZero,
    MevAllRemoved,
    InsufficientData,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionReason::DofZero => "dof_zero",
            ExclusionReason::MevAllRemoved => "mev_all_removed",
            ExclusionReason::InsufficientData => "insufficient_data",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEffect {
    pub class_label: String,
    pub effect_size: Option<f64>,
    pub dof: usize,
    /// Instances counted after filtering (the raw class size when the class
    /// was excluded before or by the filter).
    pub n: u64,
    pub band: Option<Band>,
    pub exclusion_reason: Option<ExclusionReason>,
}

impl ClassEffect {
    pub fn defined(class_label: &str, v: f64, dof: usize, n: u64) -> Self {
        Self {
            class_label: class_label.to_owned(),
            effect_size: Some(v),
            dof,
            n,
            band: Some(classify_band(v).expect("Cramér's V is clamped to [0, 1]")),
            exclusion_reason: None,
        }
    }

    pub fn excluded(class_label: &str, reason: ExclusionReason, dof: usize, n: u64) -> Self {
        Self {
            class_label: class_label.to_owned(),
            effect_size: None,
            dof,
            n,
            band: None,
            exclusion_reason: Some(reason),
        }
    }

    pub fn is_excluded(&self) -> bool {
        self.effect_size.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectConfig {
    pub mev_threshold: f64,
    pub mev_rule: MevRule,
    pub min_class_count: u64,
}

impl Default for EffectConfig {
    fn default() -> Self {
        Self {
            mev_threshold: 5.0,
            mev_rule: MevRule::Min,
            min_class_count: 1,
        }
    }
}

/// Full per-class working: the raw table, the filter outcome and the result.
#[derive(Debug, Clone)]
pub struct ClassAnalysis {
    pub table: ContingencyTable,
    pub filtered: Option<MevFilterOutcome>,
    pub effect: ClassEffect,
}

/// Effect size for one class from its `(subgroup, prediction)` pairs.
pub fn class_analysis(
    class_label: &str,
    pairs: &[(&str, &str)],
    config: &EffectConfig,
) -> Result<ClassAnalysis, ContingencyError> {
    let table = ContingencyTable::from_pairs(pairs.iter().copied())?;
    let raw_n = table.total();
    if raw_n < config.min_class_count {
        let effect = ClassEffect::excluded(
            class_label,
            ExclusionReason::InsufficientData,
            contingency::degrees_of_freedom(&table),
            raw_n,
        );
        return Ok(ClassAnalysis {
            table,
            filtered: None,
            effect,
        });
    }
    let filtered = match contingency::apply_mev_filter_with(&table, config.mev_threshold, config.mev_rule) {
        Ok(outcome) => outcome,
        Err(ContingencyError::AllColumnsRemoved) => {
            let effect = ClassEffect::excluded(class_label, ExclusionReason::MevAllRemoved, 0, raw_n);
            return Ok(ClassAnalysis {
                table,
                filtered: None,
                effect,
            });
        }
        Err(e) => return Err(e),
    };
    let kept = &filtered.kept;
    let dof = contingency::degrees_of_freedom(kept);
    let effect = match contingency::cramers_v(kept) {
        Some(v) => ClassEffect::defined(class_label, v, dof, kept.total()),
        None => ClassEffect::excluded(class_label, ExclusionReason::DofZero, dof, kept.total()),
    };
    Ok(ClassAnalysis {
        table,
        filtered: Some(filtered),
        effect,
    })
}

/// Per-class tables, filters and effect sizes, classes in first-appearance
/// order.
pub fn class_analyses(
    records: &[PredictionRecord],
    config: &EffectConfig,
) -> Result<Vec<ClassAnalysis>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    group_by_class(records)
        .iter()
        .map(|(class, pairs)| {
            class_analysis(class, pairs, config).map_err(|e| match e {
                ContingencyError::EmptyInput => MetricsError::NoRecords,
                other => unreachable!("tables built from observed pairs are valid: {other}"),
            })
        })
        .collect()
}

/// Effect size ν for every ground-truth class.
///
/// With a single subgroup every table has one row, so every class comes back
/// excluded with [`ExclusionReason::DofZero`] rather than as an error; callers
/// that need to reject that case check [`crate::ingest::validate_dataset`].
pub fn per_class_effect_sizes(
    records: &[PredictionRecord],
    config: &EffectConfig,
) -> Result<Vec<ClassEffect>, MetricsError> {
    Ok(class_analyses(records, config)?
        .into_iter()
        .map(|a| a.effect)
        .collect())
}
