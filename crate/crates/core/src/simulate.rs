//! Seeded generators of classifier predictions with known bias structure.
//!
//! A [`ScenarioSpec`] fixes, for every (class, subgroup) cell, the categorical
//! distribution a model's top-1 prediction follows. Sampling is a single
//! ChaCha8 stream per scenario: cells are visited class-major, one uniform draw
//! per record, inverted through the cumulative distribution in
//! `prediction_space` order.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::PredictionRecord;

pub const GENERATOR: &str = "ChaCha8Rng (rand_chacha 0.3), seed_from_u64";

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulateError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("scenarios do not share classes, subgroups and prediction space")]
    MismatchedSpecs,
    #[error("bias strength {0} outside [0, 1]")]
    StrengthOutOfRange(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDistribution {
    pub class: String,
    pub subgroup: String,
    /// Probability per prediction label; labels not listed have probability 0.
    pub probabilities: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct ScenarioSpec {
    classes: Vec<String>,
    subgroups: Vec<String>,
    prediction_space: Vec<String>,
    /// `cells[class_idx * n_subgroups + subgroup_idx][label_idx]`.
    cells: Vec<Vec<f64>>,
    n_per_cell: usize,
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    classes: Vec<String>,
    subgroups: Vec<String>,
    prediction_space: Vec<String>,
    cell_distributions: Vec<CellDistribution>,
    n_per_cell: usize,
}

impl TryFrom<SpecRepr> for ScenarioSpec {
    type Error = SimulateError;

    fn try_from(r: SpecRepr) -> Result<Self, Self::Error> {
        ScenarioSpec::new(r.classes, r.subgroups, r.prediction_space, r.cell_distributions, r.n_per_cell)
    }
}

impl From<ScenarioSpec> for SpecRepr {
    fn from(s: ScenarioSpec) -> Self {
        let cell_distributions = s.cell_list();
        SpecRepr {
            classes: s.classes,
            subgroups: s.subgroups,
            prediction_space: s.prediction_space,
            cell_distributions,
            n_per_cell: s.n_per_cell,
        }
    }
}

fn ensure_unique(labels: &[String], what: &str) -> Result<(), SimulateError> {
    let mut seen = HashSet::new();
    for l in labels {
        if l.trim().is_empty() {
            return Err(SimulateError::InvalidSpec(format!("empty {what} label")));
        }
        if !seen.insert(l) {
            return Err(SimulateError::InvalidSpec(format!("duplicate {what} '{l}'")));
        }
    }
    if labels.is_empty() {
        return Err(SimulateError::InvalidSpec(format!("no {what} labels")));
    }
    Ok(())
}

impl ScenarioSpec {
    pub fn new(
        classes: Vec<String>,
        subgroups: Vec<String>,
        prediction_space: Vec<String>,
        cell_distributions: Vec<CellDistribution>,
        n_per_cell: usize,
    ) -> Result<Self, SimulateError> {
        ensure_unique(&classes, "class")?;
        ensure_unique(&subgroups, "subgroup")?;
        ensure_unique(&prediction_space, "prediction")?;
        if n_per_cell == 0 {
            return Err(SimulateError::InvalidSpec("n_per_cell must be at least 1".into()));
        }
        let n_groups = subgroups.len();
        let mut cells: Vec<Option<Vec<f64>>> = vec![None; classes.len() * n_groups];
        for cell in cell_distributions {
            let ci = classes.iter().position(|c| *c == cell.class).ok_or_else(|| {
                SimulateError::InvalidSpec(format!("unknown class '{}'", cell.class))
            })?;
            let gi = subgroups.iter().position(|g| *g == cell.subgroup).ok_or_else(|| {
                SimulateError::InvalidSpec(format!("unknown subgroup '{}'", cell.subgroup))
            })?;
            let slot = &mut cells[ci * n_groups + gi];
            if slot.is_some() {
                return Err(SimulateError::InvalidSpec(format!(
                    "duplicate cell ({}, {})",
                    cell.class, cell.subgroup
                )));
            }
            let mut probs = vec![0.0; prediction_space.len()];
            for (label, p) in cell.probabilities {
                let j = prediction_space.iter().position(|l| *l == label).ok_or_else(|| {
                    SimulateError::InvalidSpec(format!("label '{label}' not in prediction space"))
                })?;
                probs[j] = p;
            }
            *slot = Some(probs);
        }
        let mut dense = Vec::with_capacity(cells.len());
        for (k, cell) in cells.into_iter().enumerate() {
            let (class, group) = (&classes[k / n_groups], &subgroups[k % n_groups]);
            let probs = cell.ok_or_else(|| {
                SimulateError::InvalidSpec(format!("missing cell ({class}, {group})"))
            })?;
            check_distribution(&probs, class, group)?;
            dense.push(probs);
        }
        Ok(Self {
            classes,
            subgroups,
            prediction_space,
            cells: dense,
            n_per_cell,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn subgroups(&self) -> &[String] {
        &self.subgroups
    }

    pub fn prediction_space(&self) -> &[String] {
        &self.prediction_space
    }

    pub fn n_per_cell(&self) -> usize {
        self.n_per_cell
    }

    pub fn with_n_per_cell(mut self, n: usize) -> Result<Self, SimulateError> {
        if n == 0 {
            return Err(SimulateError::InvalidSpec("n_per_cell must be at least 1".into()));
        }
        self.n_per_cell = n;
        Ok(self)
    }

    fn index(&self, class: &str, subgroup: &str) -> Option<usize> {
        let ci = self.classes.iter().position(|c| c == class)?;
        let gi = self.subgroups.iter().position(|g| g == subgroup)?;
        Some(ci * self.subgroups.len() + gi)
    }

    /// Probability of `label` in the (class, subgroup) cell.
    pub fn probability(&self, class: &str, subgroup: &str, label: &str) -> Option<f64> {
        let k = self.index(class, subgroup)?;
        let j = self.prediction_space.iter().position(|l| l == label)?;
        Some(self.cells[k][j])
    }

    /// Sampled records: `classes × subgroups × n_per_cell`.
    pub fn n_records(&self) -> usize {
        self.cells.len() * self.n_per_cell
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.classes == other.classes
            && self.subgroups == other.subgroups
            && self.prediction_space == other.prediction_space
    }

    fn cell_list(&self) -> Vec<CellDistribution> {
        let n_groups = self.subgroups.len();
        self.cells
            .iter()
            .enumerate()
            .map(|(k, probs)| CellDistribution {
                class: self.classes[k / n_groups].clone(),
                subgroup: self.subgroups[k % n_groups].clone(),
                probabilities: self
                    .prediction_space
                    .iter()
                    .zip(probs)
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(l, &p)| (l.clone(), p))
                    .collect(),
            })
            .collect()
    }
}

fn check_distribution(probs: &[f64], class: &str, group: &str) -> Result<(), SimulateError> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(SimulateError::InvalidSpec(format!(
            "cell ({class}, {group}) has a negative or non-finite probability"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(SimulateError::InvalidSpec(format!(
            "cell ({class}, {group}) sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// Convex mix of an unbiased and a biased scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasInterpolation {
    pub base: ScenarioSpec,
    pub stereo: ScenarioSpec,
    pub strength: f64,
}

/// Cellwise `(1 − λ)·base + λ·stereo`, keeping `base.n_per_cell`.
pub fn interpolate(b: &BiasInterpolation) -> Result<ScenarioSpec, SimulateError> {
    let lambda = b.strength;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SimulateError::StrengthOutOfRange(lambda));
    }
    if !b.base.same_shape(&b.stereo) {
        return Err(SimulateError::MismatchedSpecs);
    }
    if lambda == 0.0 {
        return Ok(b.base.clone());
    }
    if lambda == 1.0 {
        return Ok(ScenarioSpec {
            n_per_cell: b.base.n_per_cell,
            ..b.stereo.clone()
        });
    }
    let cells = b
        .base
        .cells
        .iter()
        .zip(&b.stereo.cells)
        .map(|(p, q)| {
            let mut mixed: Vec<f64> = p
                .iter()
                .zip(q)
                .map(|(&a, &s)| (1.0 - lambda) * a + lambda * s)
                .collect();
            let total: f64 = mixed.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                mixed.iter_mut().for_each(|x| *x /= total);
            }
            mixed
        })
        .collect();
    Ok(ScenarioSpec {
        cells,
        ..b.base.clone()
    })
}

fn draw(probs: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        cumulative += p;
        if p > 0.0 && u < cumulative {
            return j;
        }
    }
    // u landed in the rounding gap above the final cumulative sum
    probs.iter().rposition(|&p| p > 0.0).expect("distribution has positive mass")
}

/// Draws `n_per_cell` predictions i.i.d. per cell. Identical `(spec, seed)`
/// always gives identical records.
pub fn sample_records(spec: &ScenarioSpec, seed: u64) -> Vec<PredictionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_groups = spec.subgroups.len();
    let mut records = Vec::with_capacity(spec.n_records());
    for (k, probs) in spec.cells.iter().enumerate() {
        let class = &spec.classes[k / n_groups];
        let group = &spec.subgroups[k % n_groups];
        for _ in 0..spec.n_per_cell {
            let u: f64 = rng.gen();
            let label = &spec.prediction_space[draw(probs, u)];
            let id = records.len().to_string();
            records.push(PredictionRecord::new(class.clone(), label.clone(), group.clone()).with_id(id));
        }
    }
    records
}

fn labels(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn cell(class: &str, subgroup: &str, probs: &[(&str, f64)]) -> CellDistribution {
    CellDistribution {
        class: class.into(),
        subgroup: subgroup.into(),
        probabilities: probs.iter().map(|&(l, p)| (l.to_owned(), p)).collect(),
    }
}

pub const DSPRITES_CLASSES: [&str; 3] = ["square", "ellipse", "heart"];
pub const DSPRITES_COLORS: [&str; 3] = ["red", "green", "blue"];
/// The class whose green instances the biased model gets wrong.
pub const DSPRITES_AFFECTED: &str = "ellipse";
pub const DSPRITES_AFFECTED_COLOR: &str = "green";
const DSPRITES_ACCURACY: f64 = 0.99;
const DEFAULT_N_PER_CELL: usize = 5000;

fn dsprites_endpoint(biased: bool) -> ScenarioSpec {
    let residual = (1.0 - DSPRITES_ACCURACY) / 2.0;
    let mut cells = Vec::new();
    for &class in &DSPRITES_CLASSES {
        for &color in &DSPRITES_COLORS {
            let probs: Vec<(&str, f64)> = if biased && class == DSPRITES_AFFECTED && color == DSPRITES_AFFECTED_COLOR {
                DSPRITES_CLASSES
                    .iter()
                    .filter(|&&c| c != class)
                    .map(|&c| (c, 0.5))
                    .collect()
            } else {
                DSPRITES_CLASSES
                    .iter()
                    .map(|&c| (c, if c == class { DSPRITES_ACCURACY } else { residual }))
                    .collect()
            };
            cells.push(cell(class, color, &probs));
        }
    }
    ScenarioSpec::new(
        labels(&DSPRITES_CLASSES),
        labels(&DSPRITES_COLORS),
        labels(&DSPRITES_CLASSES),
        cells,
        DEFAULT_N_PER_CELL,
    )
    .expect("dSprites fixture is valid")
}

/// Three shapes × three colours. At strength 0 every cell is 99% accurate
/// with the residual split evenly; at strength 1 green ellipses are predicted
/// as square or heart with equal probability.
pub fn dsprites_scenario(strength: f64) -> Result<ScenarioSpec, SimulateError> {
    interpolate(&BiasInterpolation {
        base: dsprites_endpoint(false),
        stereo: dsprites_endpoint(true),
        strength,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StereotypeVariant {
    /// Errors spread identically across subgroups.
    M1,
    /// Errors routed to stereotyped labels per subgroup.
    M2,
}

impl fmt::Display for StereotypeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StereotypeVariant::M1 => "M1",
            StereotypeVariant::M2 => "M2",
        })
    }
}

pub const STEREOTYPE_CLASSES: [&str; 3] = ["writer", "doctor", "biologist"];
pub const STEREOTYPE_SUBGROUPS: [&str; 2] = ["female", "male"];
const STEREOTYPE_SPACE: [&str; 11] = [
    "writer",
    "doctor",
    "biologist",
    "editor",
    "composer",
    "philosopher",
    "nurse",
    "surgeon",
    "teacher",
    "scientist",
    "banker",
];

/// Occupation fixtures for two models with equal per-class accuracy: M1 makes
/// the same mistakes for both genders, M2 makes gender-stereotyped ones.
///
/// Ground-truth labels come first in the prediction space and no cell confuses
/// one ground-truth class for another, so with a shared seed the two variants
/// draw exactly the same correct/incorrect pattern.
pub fn stereotype_scenario(variant: StereotypeVariant) -> ScenarioSpec {
    let same = |class: &str, probs: &[(&str, f64)]| {
        STEREOTYPE_SUBGROUPS
            .iter()
            .map(|g| cell(class, g, probs))
            .collect::<Vec<_>>()
    };
    let cells: Vec<CellDistribution> = match variant {
        StereotypeVariant::M1 => [
            same("writer", &[("writer", 0.80), ("editor", 0.07), ("composer", 0.07), ("philosopher", 0.06)]),
            same("doctor", &[("doctor", 0.77), ("nurse", 0.115), ("surgeon", 0.115)]),
            same(
                "biologist",
                &[("biologist", 0.85), ("scientist", 0.075), ("teacher", 0.05), ("banker", 0.025)],
            ),
        ]
        .concat(),
        StereotypeVariant::M2 => vec![
            cell("writer", "female", &[("writer", 0.80), ("editor", 0.20)]),
            cell("writer", "male", &[("writer", 0.80), ("composer", 0.10), ("philosopher", 0.10)]),
            cell("doctor", "female", &[("doctor", 0.77), ("nurse", 0.23)]),
            cell("doctor", "male", &[("doctor", 0.77), ("surgeon", 0.23)]),
            cell("biologist", "female", &[("biologist", 0.85), ("teacher", 0.10), ("scientist", 0.05)]),
            cell("biologist", "male", &[("biologist", 0.85), ("scientist", 0.10), ("banker", 0.05)]),
        ],
    };
    ScenarioSpec::new(
        labels(&STEREOTYPE_CLASSES),
        labels(&STEREOTYPE_SUBGROUPS),
        labels(&STEREOTYPE_SPACE),
        cells,
        1000,
    )
    .expect("stereotype fixture is valid")
}
