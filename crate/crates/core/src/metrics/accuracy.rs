use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::ingest::PredictionRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub overall: f64,
    pub per_group: BTreeMap<String, f64>,
    pub worst_group: f64,
    /// `overall − worst_group`.
    pub gap: f64,
}

/// Top-1 accuracy overall and per subgroup. Predictions are compared to the
/// ground truth verbatim, so canonicalize both first.
pub fn accuracy_metrics(records: &[PredictionRecord]) -> Result<AccuracySummary, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    let mut correct = 0u64;
    for r in records {
        let hit = r.is_correct() as u64;
        correct += hit;
        let entry = counts.entry(r.subgroup.as_str()).or_default();
        entry.0 += hit;
        entry.1 += 1;
    }
    let overall = correct as f64 / records.len() as f64;
    let per_group: BTreeMap<String, f64> = counts
        .into_iter()
        .map(|(g, (hit, n))| (g.to_owned(), hit as f64 / n as f64))
        .collect();
    let worst_group = per_group.values().copied().fold(f64::INFINITY, f64::min);
    Ok(AccuracySummary {
        overall,
        per_group,
        worst_group,
        gap: (overall - worst_group).max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(name: &str, correct: usize, total: usize) -> Vec<PredictionRecord> {
        (0..total)
            .map(|i| {
                let pred = if i < correct { "c" } else { "other" };
                PredictionRecord::new("c", pred, name)
            })
            .collect()
    }

    #[test]
    fn two_groups() {
        let mut records = group("A", 9, 10);
        records.extend(group("B", 7, 10));
        let acc = accuracy_metrics(&records).unwrap();
        assert!((acc.overall - 0.8).abs() < 1e-12);
        assert!((acc.worst_group - 0.7).abs() < 1e-12);
        assert!((acc.gap - 0.1).abs() < 1e-12);
        assert!((acc.per_group["A"] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn all_correct() {
        let mut records = group("A", 4, 4);
        records.extend(group("B", 6, 6));
        let acc = accuracy_metrics(&records).unwrap();
        assert_eq!((acc.overall, acc.worst_group, acc.gap), (1.0, 1.0, 0.0));
    }

    #[test]
    fn single_group() {
        let acc = accuracy_metrics(&group("A", 5, 10)).unwrap();
        assert_eq!((acc.overall, acc.worst_group, acc.gap), (0.5, 0.5, 0.0));
    }

    #[test]
    fn empty() {
        assert_eq!(accuracy_metrics(&[]), Err(MetricsError::NoRecords));
    }
}
