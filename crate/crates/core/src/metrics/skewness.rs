use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ClassEffect, MetricsError};

/// Normalization of the Fisher-Pearson coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkewConvention {
    /// `g1 = m3 / m2^(3/2)` with biased central moments `m_k = Σd^k / n`.
    #[default]
    Moment,
    /// `Σd³ / (Σd²)^(3/2)`, which equals `g1 / √n`.
    Eq4Literal,
}

impl fmt::Display for SkewConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkewConvention::Moment => "moment",
            SkewConvention::Eq4Literal => "eq4_literal",
        })
    }
}

/// Fisher-Pearson skewness. Zero-variance samples (including a single value)
/// have skewness 0.
pub fn fisher_pearson_skewness(values: &[f64], convention: SkewConvention) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut s2, mut s3) = (0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        s2 += d2;
        s3 += d2 * d;
    }
    let m2 = s2 / n;
    // deviations at the rounding floor of the mean count as zero variance
    if m2 <= (f64::EPSILON * mean).powi(2) {
        return Ok(0.0);
    }
    Ok(match convention {
        SkewConvention::Moment => (s3 / n) / m2.powf(1.5),
        SkewConvention::Eq4Literal => s3 / s2.powf(1.5),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewSize {
    /// Higher is less biased.
    pub value: f64,
    pub classes_used: usize,
    pub classes_excluded: usize,
}

/// Skewness of the defined per-class effect sizes; excluded classes are
/// dropped first.
pub fn skewsize(effects: &[ClassEffect], convention: SkewConvention) -> Result<SkewSize, MetricsError> {
    let values: Vec<f64> = effects.iter().filter_map(|e| e.effect_size).collect();
    if values.len() < 2 {
        return Err(MetricsError::TooFewClasses(values.len()));
    }
    Ok(SkewSize {
        value: fisher_pearson_skewness(&values, convention)?,
        classes_used: values.len(),
        classes_excluded: effects.len() - values.len(),
    })
}
