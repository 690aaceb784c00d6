//! Multi-class demographic parity and equalized odds, each class binarized
//! one-vs-rest and reported as a max-minus-min gap between subgroups.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::ingest::PredictionRecord;

/// How per-class gaps are combined into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

impl Aggregation {
    fn apply(self, values: impl Iterator<Item = f64>) -> f64 {
        match self {
            Aggregation::Max => values.fold(0.0, f64::max),
            Aggregation::Mean => {
                let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                if n == 0 {
                    0.0
                } else {
                    sum / n as f64
                }
            }
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
        })
    }
}

/// Equalized-odds formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EoMode {
    /// Max minus min over the whole subgroup × binary-label grid.
    #[default]
    Grid,
    /// Largest between-subgroup gap computed separately for positives
    /// (TPR) and negatives (FPR).
    PerLabel,
}

impl fmt::Display for EoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EoMode::Grid => "grid",
            EoMode::PerLabel => "per-label",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGaps {
    pub per_class: BTreeMap<String, f64>,
    pub aggregate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSummary {
    pub per_class_dp: BTreeMap<String, f64>,
    pub per_class_eo: BTreeMap<String, f64>,
    pub dp_aggregate: f64,
    pub eo_aggregate: f64,
    pub aggregation: Aggregation,
    pub eo_mode: EoMode,
}

/// Per-subgroup tallies shared by both criteria.
struct GroupTallies<'a> {
    classes: Vec<&'a str>,
    /// Subgroups in first-appearance order with their record count.
    groups: IndexMap<&'a str, u64>,
    /// (subgroup, label) → records predicted as label.
    predicted: HashMap<(&'a str, &'a str), u64>,
    /// (subgroup, label) → records whose ground truth is label.
    actual: HashMap<(&'a str, &'a str), u64>,
    /// (subgroup, label) → records with ground truth and prediction both label.
    hits: HashMap<(&'a str, &'a str), u64>,
}

impl<'a> GroupTallies<'a> {
    fn new(records: &'a [PredictionRecord]) -> Result<Self, MetricsError> {
        if records.is_empty() {
            return Err(MetricsError::NoRecords);
        }
        let mut classes: IndexMap<&str, ()> = IndexMap::new();
        let mut groups: IndexMap<&str, u64> = IndexMap::new();
        let mut predicted = HashMap::new();
        let mut actual = HashMap::new();
        let mut hits = HashMap::new();
        for r in records {
            let g = r.subgroup.as_str();
            classes.insert(r.ground_truth.as_str(), ());
            *groups.entry(g).or_default() += 1;
            *predicted.entry((g, r.prediction.as_str())).or_default() += 1;
            *actual.entry((g, r.ground_truth.as_str())).or_default() += 1;
            if r.is_correct() {
                *hits.entry((g, r.ground_truth.as_str())).or_default() += 1;
            }
        }
        if groups.len() < 2 {
            return Err(MetricsError::SingleSubgroup);
        }
        Ok(Self {
            classes: classes.into_keys().collect(),
            groups,
            predicted,
            actual,
            hits,
        })
    }

    fn get(map: &HashMap<(&str, &str), u64>, g: &'a str, c: &'a str) -> u64 {
        map.get(&(g, c)).copied().unwrap_or(0)
    }

    fn dp(&self, class: &'a str) -> f64 {
        let rates = self
            .groups
            .iter()
            .map(|(&g, &n)| Self::get(&self.predicted, g, class) as f64 / n as f64);
        spread(rates).unwrap_or(0.0)
    }

    /// `[(positive-label rate, negative-label rate)]` per subgroup; `None`
    /// where the cell has no records.
    fn conditional_rates(&self, class: &'a str) -> Vec<(Option<f64>, Option<f64>)> {
        self.groups
            .iter()
            .map(|(&g, &n)| {
                let pos_n = Self::get(&self.actual, g, class);
                let tp = Self::get(&self.hits, g, class);
                let fp = Self::get(&self.predicted, g, class) - tp;
                let neg_n = n - pos_n;
                let rate = |k: u64, d: u64, label: &str| {
                    if d == 0 {
                        log::debug!("class '{class}': no {label} records in subgroup '{g}', cell skipped");
                        None
                    } else {
                        Some(k as f64 / d as f64)
                    }
                };
                (rate(tp, pos_n, "positive"), rate(fp, neg_n, "negative"))
            })
            .collect()
    }

    fn eo(&self, class: &'a str, mode: EoMode) -> f64 {
        let rates = self.conditional_rates(class);
        match mode {
            EoMode::Grid => spread(rates.iter().flat_map(|&(p, n)| [p, n]).flatten()),
            EoMode::PerLabel => {
                let pos = spread(rates.iter().filter_map(|r| r.0));
                let neg = spread(rates.iter().filter_map(|r| r.1));
                match (pos, neg) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                }
            }
        }
        .unwrap_or(0.0)
    }
}

fn spread(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
    .map(|(lo, hi)| hi - lo)
}

fn collect_gaps<'a>(
    tallies: &GroupTallies<'a>,
    aggregation: Aggregation,
    gap: impl Fn(&'a str) -> f64,
) -> ClassGaps {
    let per_class: BTreeMap<String, f64> = tallies
        .classes
        .iter()
        .map(|&c| (c.to_owned(), gap(c)))
        .collect();
    let aggregate = aggregation.apply(per_class.values().copied());
    ClassGaps {
        per_class,
        aggregate,
    }
}

/// `DP_c = max_a P(pred = c | z = a) − min_a P(pred = c | z = a)` over all
/// records of each subgroup, for every ground-truth class `c`.
pub fn demographic_parity(
    records: &[PredictionRecord],
    aggregation: Aggregation,
) -> Result<ClassGaps, MetricsError> {
    let tallies = GroupTallies::new(records)?;
    Ok(collect_gaps(&tallies, aggregation, |c| tallies.dp(c)))
}

/// Equalized-odds gap per ground-truth class. Cells with no records are
/// skipped.
pub fn equalized_odds(
    records: &[PredictionRecord],
    aggregation: Aggregation,
    mode: EoMode,
) -> Result<ClassGaps, MetricsError> {
    let tallies = GroupTallies::new(records)?;
    Ok(collect_gaps(&tallies, aggregation, |c| tallies.eo(c, mode)))
}

pub fn fairness_summary(
    records: &[PredictionRecord],
    aggregation: Aggregation,
    eo_mode: EoMode,
) -> Result<FairnessSummary, MetricsError> {
    let tallies = GroupTallies::new(records)?;
    let dp = collect_gaps(&tallies, aggregation, |c| tallies.dp(c));
    let eo = collect_gaps(&tallies, aggregation, |c| tallies.eo(c, eo_mode));
    Ok(FairnessSummary {
        per_class_dp: dp.per_class,
        per_class_eo: eo.per_class,
        dp_aggregate: dp.aggregate,
        eo_aggregate: eo.aggregate,
        aggregation,
        eo_mode,
    })
}
