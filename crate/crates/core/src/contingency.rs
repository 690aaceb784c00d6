//! Labeled contingency tables (subgroup × predicted label) and the
//! chi-squared / effect-size statistics computed on them.
//!
//! Counts are integers; every derived quantity is `f64`. A table never has an
//! all-zero row or column, so every expected frequency is strictly positive.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContingencyError {
    #[error("cannot build a contingency table from an empty pair list")]
    EmptyInput,
    #[error("every column was removed by the minimum-expected-value filter")]
    AllColumnsRemoved,
    #[error("table shape mismatch: {rows} row labels × {cols} column labels but {cells} counts")]
    ShapeMismatch { rows: usize, cols: usize, cells: usize },
    #[error("duplicate {axis} label '{label}'")]
    DuplicateLabel { axis: &'static str, label: String },
    #[error("{axis} '{label}' has a zero total")]
    ZeroMarginal { axis: &'static str, label: String },
    #[error("table must have at least one row and one column")]
    Degenerate,
}

/// Counts of predicted labels (columns) per subgroup (rows) for one class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct ContingencyTable {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    /// Row-major, `row_labels.len() * col_labels.len()` entries.
    counts: Vec<u64>,
    row_totals: Vec<u64>,
    col_totals: Vec<u64>,
    total: u64,
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl TryFrom<TableRepr> for ContingencyTable {
    type Error = ContingencyError;

    fn try_from(repr: TableRepr) -> Result<Self, Self::Error> {
        let cols = repr.col_labels.len();
        let rows = repr.row_labels.len();
        if repr.counts.len() != rows || repr.counts.iter().any(|r| r.len() != cols) {
            return Err(ContingencyError::ShapeMismatch {
                rows,
                cols,
                cells: repr.counts.iter().map(Vec::len).sum(),
            });
        }
        let flat = repr.counts.into_iter().flatten().collect();
        ContingencyTable::new(repr.row_labels, repr.col_labels, flat)
    }
}

impl From<ContingencyTable> for TableRepr {
    fn from(t: ContingencyTable) -> Self {
        let counts = (0..t.n_rows()).map(|i| t.row(i).to_vec()).collect();
        TableRepr {
            row_labels: t.row_labels,
            col_labels: t.col_labels,
            counts,
        }
    }
}

fn check_unique(labels: &[String], axis: &'static str) -> Result<(), ContingencyError> {
    let mut seen = std::collections::HashSet::with_capacity(labels.len());
    for label in labels {
        if !seen.insert(label.as_str()) {
            return Err(ContingencyError::DuplicateLabel {
                axis,
                label: label.clone(),
            });
        }
    }
    Ok(())
}

impl ContingencyTable {
    /// Builds a table from row-major counts, checking every table invariant.
    pub fn new(
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        counts: Vec<u64>,
    ) -> Result<Self, ContingencyError> {
        let (rows, cols) = (row_labels.len(), col_labels.len());
        if rows == 0 || cols == 0 {
            return Err(ContingencyError::Degenerate);
        }
        if counts.len() != rows * cols {
            return Err(ContingencyError::ShapeMismatch {
                rows,
                cols,
                cells: counts.len(),
            });
        }
        check_unique(&row_labels, "row")?;
        check_unique(&col_labels, "column")?;

        let row_totals: Vec<u64> = counts.chunks(cols).map(|r| r.iter().sum()).collect();
        let mut col_totals = vec![0u64; cols];
        for row in counts.chunks(cols) {
            for (acc, &c) in col_totals.iter_mut().zip(row) {
                *acc += c;
            }
        }
        if let Some(i) = row_totals.iter().position(|&t| t == 0) {
            return Err(ContingencyError::ZeroMarginal {
                axis: "row",
                label: row_labels[i].clone(),
            });
        }
        if let Some(j) = col_totals.iter().position(|&t| t == 0) {
            return Err(ContingencyError::ZeroMarginal {
                axis: "column",
                label: col_labels[j].clone(),
            });
        }
        let total = row_totals.iter().sum();
        Ok(Self {
            row_labels,
            col_labels,
            counts,
            row_totals,
            col_totals,
            total,
        })
    }

    /// Cross-tabulates `(subgroup, prediction)` pairs. Row and column labels
    /// appear in first-appearance order.
    pub fn from_pairs<S, P>(pairs: impl IntoIterator<Item = (S, P)>) -> Result<Self, ContingencyError>
    where
        S: AsRef<str>,
        P: AsRef<str>,
    {
        let mut row_index: HashMap<String, usize> = HashMap::new();
        let mut col_index: HashMap<String, usize> = HashMap::new();
        let mut row_labels = Vec::new();
        let mut col_labels = Vec::new();
        let mut cells: Vec<(usize, usize)> = Vec::new();

        for (s, p) in pairs {
            let (s, p) = (s.as_ref(), p.as_ref());
            let i = match row_index.get(s) {
                Some(&i) => i,
                None => {
                    row_labels.push(s.to_owned());
                    row_index.insert(s.to_owned(), row_labels.len() - 1);
                    row_labels.len() - 1
                }
            };
            let j = match col_index.get(p) {
                Some(&j) => j,
                None => {
                    col_labels.push(p.to_owned());
                    col_index.insert(p.to_owned(), col_labels.len() - 1);
                    col_labels.len() - 1
                }
            };
            cells.push((i, j));
        }
        if cells.is_empty() {
            return Err(ContingencyError::EmptyInput);
        }
        let cols = col_labels.len();
        let mut counts = vec![0u64; row_labels.len() * cols];
        for (i, j) in cells {
            counts[i * cols + j] += 1;
        }
        Self::new(row_labels, col_labels, counts)
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn n_rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.n_cols() + col]
    }

    pub fn row(&self, row: usize) -> &[u64] {
        let c = self.n_cols();
        &self.counts[row * c..(row + 1) * c]
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    pub fn col_totals(&self) -> &[u64] {
        &self.col_totals
    }

    /// Grand total N.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Every count multiplied by `factor` (≥ 1).
    pub fn scaled(&self, factor: u64) -> Self {
        assert!(factor >= 1, "scale factor must be positive");
        Self::new(
            self.row_labels.clone(),
            self.col_labels.clone(),
            self.counts.iter().map(|&c| c * factor).collect(),
        )
        .expect("scaling preserves table invariants")
    }

    /// The table with rows and columns reordered: new row `i` is old row
    /// `row_order[i]`, likewise for columns.
    pub fn permuted(&self, row_order: &[usize], col_order: &[usize]) -> Self {
        let rows = row_order.iter().map(|&i| self.row_labels[i].clone()).collect();
        let cols = col_order.iter().map(|&j| self.col_labels[j].clone()).collect();
        let counts = row_order
            .iter()
            .flat_map(|&i| col_order.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.count(i, j))
            .collect();
        Self::new(rows, cols, counts).expect("permutation preserves table invariants")
    }
}

impl fmt::Display for ContingencyTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>12}", "")?;
        for c in &self.col_labels {
            write!(f, " {c:>12}")?;
        }
        for (i, r) in self.row_labels.iter().enumerate() {
            write!(f, "\n{r:>12}")?;
            for c in self.row(i) {
                write!(f, " {c:>12}")?;
            }
        }
        Ok(())
    }
}

/// Expected frequencies under independence, aligned to a [`ContingencyTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedTable {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl ExpectedTable {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols + col]
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Expected cells of column `col`, top to bottom.
    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_rows).map(move |i| self.get(i, col))
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// `e[i][j] = rowTotal(i) · colTotal(j) / N`.
pub fn expected_frequencies(t: &ContingencyTable) -> ExpectedTable {
    let n = t.total() as f64;
    let values = t
        .row_totals()
        .iter()
        .flat_map(|&r| t.col_totals().iter().map(move |&c| r as f64 * c as f64 / n))
        .collect();
    ExpectedTable {
        n_rows: t.n_rows(),
        n_cols: t.n_cols(),
        values,
    }
}

/// Pearson's χ² = Σ (o − e)² / e over every cell. No continuity correction.
pub fn chi_square(t: &ContingencyTable) -> f64 {
    if t.n_rows() == 1 || t.n_cols() == 1 {
        return 0.0;
    }
    let expected = expected_frequencies(t);
    let mut terms: Vec<f64> = t
        .counts
        .iter()
        .zip(expected.values())
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .collect();
    // summing in sorted order makes the result independent of row/column order
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// `min(R, C) − 1`, which equals `min(R − 1, C − 1)`.
pub fn degrees_of_freedom(t: &ContingencyTable) -> usize {
    t.n_rows().min(t.n_cols()) - 1
}

/// Cramér's V, `sqrt(χ² / (N · DF))`. `None` when DF = 0 (a single subgroup
/// or a single predicted label), in which case the association is undefined.
pub fn cramers_v(t: &ContingencyTable) -> Option<f64> {
    let dof = degrees_of_freedom(t);
    if dof == 0 {
        return None;
    }
    if perfectly_associated(t) {
        return Some(1.0);
    }
    let v = (chi_square(t) / (t.total() as f64 * dof as f64)).sqrt();
    // rounding can push a near-perfect association a hair past 1
    Some(v.min(1.0))
}

/// V reaches 1 exactly when every line along the longer axis has a single
/// nonzero cell; detected directly so the result does not depend on rounding.
fn perfectly_associated(t: &ContingencyTable) -> bool {
    let (rows, cols) = (t.n_rows(), t.n_cols());
    if rows <= cols {
        (0..cols).all(|j| (0..rows).filter(|&i| t.count(i, j) > 0).count() == 1)
    } else {
        (0..rows).all(|i| t.row(i).iter().filter(|&&c| c > 0).count() == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiCoefficient {
    pub value: f64,
    /// Set for tables larger than 2×2, where φ is not a bounded effect size.
    pub advisory_only: bool,
}

/// φ = sqrt(χ² / N).
pub fn phi_coefficient(t: &ContingencyTable) -> PhiCoefficient {
    PhiCoefficient {
        value: (chi_square(t) / t.total() as f64).sqrt(),
        advisory_only: t.n_rows() > 2 || t.n_cols() > 2,
    }
}

/// How a column's expected cells are summarised before comparing against the
/// minimum-expected-value threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MevRule {
    #[default]
    Min,
    Mean,
}

impl fmt::Display for MevRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MevRule::Min => "min",
            MevRule::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovedColumn {
    pub label: String,
    /// The summarised expected value that fell below the threshold.
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MevFilterOutcome {
    pub kept: ContingencyTable,
    pub removed_columns: Vec<RemovedColumn>,
    /// Subgroups whose every remaining count was zero after column removal.
    pub dropped_rows: Vec<String>,
    pub threshold: f64,
}

/// Minimum-expected-value filter with the default `min` rule.
pub fn apply_mev_filter(
    t: &ContingencyTable,
    threshold: f64,
) -> Result<MevFilterOutcome, ContingencyError> {
    apply_mev_filter_with(t, threshold, MevRule::Min)
}

/// Removes every column whose summarised expected value is below `threshold`.
///
/// Expectations come from the original table in a single pass; the filter is
/// not re-applied to the reduced table. Rows left empty are dropped.
pub fn apply_mev_filter_with(
    t: &ContingencyTable,
    threshold: f64,
    rule: MevRule,
) -> Result<MevFilterOutcome, ContingencyError> {
    let expected = expected_frequencies(t);
    let mut keep = Vec::with_capacity(t.n_cols());
    let mut removed_columns = Vec::new();
    for j in 0..t.n_cols() {
        let summary = match rule {
            MevRule::Min => expected.column(j).fold(f64::INFINITY, f64::min),
            MevRule::Mean => expected.column(j).sum::<f64>() / t.n_rows() as f64,
        };
        if summary < threshold {
            removed_columns.push(RemovedColumn {
                label: t.col_labels[j].clone(),
                expected: summary,
            });
        } else {
            keep.push(j);
        }
    }
    if keep.is_empty() {
        return Err(ContingencyError::AllColumnsRemoved);
    }
    if removed_columns.is_empty() {
        return Ok(MevFilterOutcome {
            kept: t.clone(),
            removed_columns,
            dropped_rows: Vec::new(),
            threshold,
        });
    }

    let mut row_labels = Vec::new();
    let mut dropped_rows = Vec::new();
    let mut counts = Vec::new();
    for i in 0..t.n_rows() {
        let row: Vec<u64> = keep.iter().map(|&j| t.count(i, j)).collect();
        if row.iter().all(|&c| c == 0) {
            dropped_rows.push(t.row_labels[i].clone());
        } else {
            row_labels.push(t.row_labels[i].clone());
            counts.extend(row);
        }
    }
    let col_labels = keep.iter().map(|&j| t.col_labels[j].clone()).collect();
    let kept = ContingencyTable::new(row_labels, col_labels, counts)?;
    Ok(MevFilterOutcome {
        kept,
        removed_columns,
        dropped_rows,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(counts: &[&[u64]]) -> ContingencyTable {
        let rows = (0..counts.len()).map(|i| format!("r{i}")).collect();
        let cols = (0..counts[0].len()).map(|j| format!("c{j}")).collect();
        ContingencyTable::new(rows, cols, counts.iter().flat_map(|r| r.iter().copied()).collect())
            .unwrap()
    }

    #[test]
    fn build_table_counts_pairs() {
        let t = ContingencyTable::from_pairs([("A", "doctor"), ("A", "doctor"), ("B", "nurse")])
            .unwrap();
        assert_eq!(t.row_labels(), ["A", "B"]);
        assert_eq!(t.col_labels(), ["doctor", "nurse"]);
        assert_eq!(t.row(0), [2, 0]);
        assert_eq!(t.row(1), [0, 1]);

        let single = ContingencyTable::from_pairs([("A", "x")]).unwrap();
        assert_eq!((single.n_rows(), single.n_cols(), single.total()), (1, 1, 1));
    }

    #[test]
    fn build_table_matches_counting_oracle() {
        let mut pairs = Vec::new();
        pairs.extend(std::iter::repeat_n(("A", "doctor"), 50));
        pairs.extend(std::iter::repeat_n(("A", "nurse"), 50));
        pairs.extend(std::iter::repeat_n(("B", "doctor"), 50));
        pairs.extend(std::iter::repeat_n(("B", "surgeon"), 50));
        let t = ContingencyTable::from_pairs(pairs.iter().copied()).unwrap();
        assert_eq!(t.row_labels(), ["A", "B"]);
        assert_eq!(t.col_labels(), ["doctor", "nurse", "surgeon"]);
        for (i, r) in t.row_labels().iter().enumerate() {
            for (j, c) in t.col_labels().iter().enumerate() {
                let oracle = pairs.iter().filter(|(s, p)| s == r && p == c).count() as u64;
                assert_eq!(t.count(i, j), oracle);
            }
        }
        assert_eq!(t.row(0), [50, 50, 0]);
        assert_eq!(t.row(1), [50, 0, 50]);
    }

    #[test]
    fn build_table_rejects_empty() {
        let pairs: Vec<(&str, &str)> = Vec::new();
        assert_eq!(
            ContingencyTable::from_pairs(pairs),
            Err(ContingencyError::EmptyInput)
        );
    }

    #[test]
    fn constructor_enforces_invariants() {
        let l = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(matches!(
            ContingencyTable::new(l(&["a", "b"]), l(&["x"]), vec![1, 0]),
            Err(ContingencyError::ZeroMarginal { axis: "row", .. })
        ));
        assert!(matches!(
            ContingencyTable::new(l(&["a"]), l(&["x", "y"]), vec![1, 0]),
            Err(ContingencyError::ZeroMarginal { axis: "column", .. })
        ));
        assert!(matches!(
            ContingencyTable::new(l(&["a", "a"]), l(&["x"]), vec![1, 1]),
            Err(ContingencyError::DuplicateLabel { .. })
        ));
        assert!(matches!(
            ContingencyTable::new(l(&["a"]), l(&["x"]), vec![1, 1]),
            Err(ContingencyError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn expected_frequencies_examples() {
        let e = expected_frequencies(&table(&[&[10, 0], &[0, 10]]));
        assert_eq!(e.values(), [5.0, 5.0, 5.0, 5.0]);
        let e = expected_frequencies(&table(&[&[5, 5], &[5, 5]]));
        assert_eq!(e.values(), [5.0, 5.0, 5.0, 5.0]);
        let e = expected_frequencies(&table(&[&[6, 2], &[3, 1]]));
        assert_eq!(e.values(), [6.0, 2.0, 3.0, 1.0]);
        assert!((e.sum() - 12.0).abs() < 1e-9 * 12.0);
    }

    #[test]
    fn chi_square_examples() {
        assert_eq!(chi_square(&table(&[&[5, 5], &[5, 5]])), 0.0);
        assert!((chi_square(&table(&[&[10, 0], &[0, 10]])) - 20.0).abs() < 1e-12);
        assert!((chi_square(&table(&[&[30, 10], &[10, 30]])) - 20.0).abs() < 1e-12);
        assert_eq!(chi_square(&table(&[&[3, 4, 5]])), 0.0);
        assert_eq!(chi_square(&table(&[&[3], &[9]])), 0.0);
    }

    #[test]
    fn degrees_of_freedom_uses_smaller_dimension() {
        assert_eq!(degrees_of_freedom(&table(&[&[1, 2, 3], &[4, 5, 6]])), 1);
        assert_eq!(degrees_of_freedom(&table(&[&[1]])), 0);
        assert_eq!(
            degrees_of_freedom(&table(&[&[1, 2, 3], &[4, 5, 6], &[7, 8, 9]])),
            2
        );
    }

    #[test]
    fn cramers_v_examples() {
        assert_eq!(cramers_v(&table(&[&[10, 0], &[0, 10]])), Some(1.0));
        assert_eq!(cramers_v(&table(&[&[5, 5], &[5, 5]])), Some(0.0));
        let v = cramers_v(&table(&[&[30, 10], &[10, 30]])).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        assert_eq!(cramers_v(&table(&[&[4, 7]])), None);
    }

    #[test]
    fn phi_examples() {
        let p = phi_coefficient(&table(&[&[10, 0], &[0, 10]]));
        assert!((p.value - 1.0).abs() < 1e-12 && !p.advisory_only);
        assert_eq!(phi_coefficient(&table(&[&[5, 5], &[5, 5]])).value, 0.0);
        assert!((phi_coefficient(&table(&[&[30, 10], &[10, 30]])).value - 0.5).abs() < 1e-12);
        assert!(phi_coefficient(&table(&[&[1, 2, 3], &[4, 5, 6]])).advisory_only);
    }

    #[test]
    fn mev_filter_removes_low_expected_column() {
        let t = table(&[&[100, 2], &[100, 2]]);
        let out = apply_mev_filter(&t, 5.0).unwrap();
        assert_eq!(out.removed_columns.len(), 1);
        assert_eq!(out.removed_columns[0].label, "c1");
        assert!((out.removed_columns[0].expected - 2.0).abs() < 1e-12);
        assert_eq!((out.kept.n_rows(), out.kept.n_cols()), (2, 1));
    }

    #[test]
    fn mev_filter_identity_cases() {
        let t = table(&[&[3, 0, 1], &[0, 2, 9]]);
        let out = apply_mev_filter(&t, 0.0).unwrap();
        assert_eq!(out.kept, t);
        assert!(out.removed_columns.is_empty());

        let t = table(&[&[50, 50], &[50, 50]]);
        assert_eq!(apply_mev_filter(&t, 5.0).unwrap().kept, t);
    }

    #[test]
    fn mev_filter_drops_emptied_rows() {
        // row r1 only has mass in the rare column
        let t = table(&[&[40, 0], &[0, 1], &[40, 0]]);
        let out = apply_mev_filter(&t, 0.5).unwrap();
        assert_eq!(out.kept.row_labels(), ["r0", "r2"]);
        assert_eq!(out.dropped_rows, ["r1"]);
    }

    #[test]
    fn mev_filter_all_removed() {
        let t = table(&[&[1, 1], &[1, 1]]);
        assert_eq!(
            apply_mev_filter(&t, 5.0),
            Err(ContingencyError::AllColumnsRemoved)
        );
    }

    #[test]
    fn mev_mean_rule_is_more_lenient() {
        // column c1 expected cells: 1.0 and 9.0 → min 1, mean 5
        let t = table(&[&[9, 1], &[81, 9]]);
        let e = expected_frequencies(&t);
        assert!((e.get(0, 1) - 1.0).abs() < 1e-12 && (e.get(1, 1) - 9.0).abs() < 1e-12);
        assert_eq!(apply_mev_filter_with(&t, 5.0, MevRule::Min).unwrap().removed_columns.len(), 1);
        assert!(apply_mev_filter_with(&t, 5.0, MevRule::Mean).unwrap().removed_columns.is_empty());
    }

    #[test]
    fn table_json_shape() {
        let t = table(&[&[2, 0], &[0, 1]]);
        let json = serde_json::to_value(&t).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"row_labels": ["r0", "r1"], "col_labels": ["c0", "c1"], "counts": [[2, 0], [0, 1]]})
        );
        let back: ContingencyTable = serde_json::from_value(json).unwrap();
        assert_eq!(back, t);
        let bad = serde_json::json!({"row_labels": ["a"], "col_labels": ["x"], "counts": [[0]]});
        assert!(serde_json::from_value::<ContingencyTable>(bad).is_err());
    }
}
