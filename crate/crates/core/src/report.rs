//! End-to-end audit: records in, [`AuditReport`] out, plus model comparison
//! and the json/csv/markdown renderers.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contingency::{ContingencyTable, MevRule, RemovedColumn};
use crate::ingest::{validate_dataset, PredictionRecord};
use crate::metrics::{
    self, accuracy_metrics, class_analyses, fairness_summary, skewsize, Aggregation, Band,
    EffectConfig, EoMode, ExclusionReason, MetricsError, SkewConvention,
};

pub const SCHEMA_VERSION: u32 = 1;
const SIGNIFICANT_DIGITS: usize = 6;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("inputs do not share a subgroup vocabulary: {0}")]
    SubgroupMismatch(String),
    #[error("comparison needs at least two inputs")]
    TooFewInputs,
    #[error("report failed self-consistency check: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CanonicalizationEcho {
    pub lowercase: bool,
    pub trim: bool,
    pub strip_punctuation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationEcho {
    pub seed: u64,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AuditConfig {
    pub effect: EffectConfig,
    pub skew_convention: SkewConvention,
    pub aggregation: Aggregation,
    pub eo_mode: EoMode,
    /// Report `−SkewSize` (lower is better) instead of SkewSize.
    pub negate_skew: bool,
    /// Embed every class's contingency table in the report.
    pub dump_tables: bool,
    pub canonicalization: CanonicalizationEcho,
    pub synonyms_sha256: Option<String>,
    pub simulation: Option<SimulationEcho>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub mev_threshold: f64,
    pub mev_rule: MevRule,
    pub min_class_count: u64,
    pub skew_convention: SkewConvention,
    pub negate_skew: bool,
    pub aggregation: Aggregation,
    pub eo_mode: EoMode,
    pub band_edges: Vec<f64>,
    pub canonicalization: CanonicalizationEcho,
    pub synonyms_sha256: Option<String>,
    pub simulation: Option<SimulationEcho>,
}

impl From<&AuditConfig> for ConfigEcho {
    fn from(c: &AuditConfig) -> Self {
        Self {
            mev_threshold: c.effect.mev_threshold,
            mev_rule: c.effect.mev_rule,
            min_class_count: c.effect.min_class_count,
            skew_convention: c.skew_convention,
            negate_skew: c.negate_skew,
            aggregation: c.aggregation,
            eo_mode: c.eo_mode,
            band_edges: Band::EDGES.to_vec(),
            canonicalization: c.canonicalization,
            synonyms_sha256: c.synonyms_sha256.clone(),
            simulation: c.simulation.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub n: u64,
    pub effect_size: Option<f64>,
    pub dof: usize,
    pub band: Option<Band>,
    pub excluded: bool,
    pub exclusion_reason: Option<ExclusionReason>,
    pub accuracy: f64,
    pub per_group_accuracy: BTreeMap<String, f64>,
    pub dp: Option<f64>,
    pub eo: Option<f64>,
    pub mev_removed_columns: usize,
    pub mev_dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub skewsize: Option<f64>,
    pub classes_used: usize,
    pub classes_excluded: usize,
    pub overall_accuracy: f64,
    pub worst_group_accuracy: f64,
    pub gap: f64,
    pub dp_aggregate: Option<f64>,
    pub eo_aggregate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDump {
    pub class: String,
    pub table: ContingencyTable,
    pub kept: Option<ContingencyTable>,
    pub removed_columns: Vec<RemovedColumnDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedColumnDump {
    pub label: String,
    pub expected: f64,
}

impl From<&RemovedColumn> for RemovedColumnDump {
    fn from(c: &RemovedColumn) -> Self {
        Self {
            label: c.label.clone(),
            expected: c.expected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub config_echo: ConfigEcho,
    pub n_records: usize,
    pub subgroups: Vec<String>,
    pub per_class: Vec<ClassRow>,
    pub aggregate: Aggregate,
    pub band_histogram: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tables: Option<Vec<TableDump>>,
}

/// (hits, total) per class, then per subgroup within the class.
type ClassGroupTally<'a> = HashMap<&'a str, ((u64, u64), BTreeMap<&'a str, (u64, u64)>)>;

fn per_class_accuracy(records: &[PredictionRecord]) -> ClassGroupTally<'_> {
    let mut tally: ClassGroupTally = HashMap::new();
    for r in records {
        let hit = r.is_correct() as u64;
        let (overall, groups) = tally.entry(r.ground_truth.as_str()).or_default();
        overall.0 += hit;
        overall.1 += 1;
        let g = groups.entry(r.subgroup.as_str()).or_default();
        g.0 += hit;
        g.1 += 1;
    }
    tally
}

fn ratio((hit, n): (u64, u64)) -> f64 {
    hit as f64 / n as f64
}

/// Runs every metric over already-canonicalized records.
pub fn audit(records: &[PredictionRecord], config: &AuditConfig) -> Result<AuditReport, AuditError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords.into());
    }
    let validation = validate_dataset(records);
    let mut warnings = validation.warnings.clone();

    let analyses = class_analyses(records, &config.effect)?;
    let effects: Vec<_> = analyses.iter().map(|a| a.effect.clone()).collect();
    let skew = match skewsize(&effects, config.skew_convention) {
        Ok(s) => Some(if config.negate_skew { -s.value } else { s.value }),
        Err(MetricsError::TooFewClasses(n)) => {
            warnings.push(format!(
                "SkewSize undefined: {n} class(es) with a defined effect size, at least 2 required"
            ));
            None
        }
        Err(e) => return Err(e.into()),
    };
    let accuracy = accuracy_metrics(records)?;
    let fairness = match fairness_summary(records, config.aggregation, config.eo_mode) {
        Ok(f) => Some(f),
        Err(MetricsError::SingleSubgroup) => None,
        Err(e) => return Err(e.into()),
    };
    let class_acc = per_class_accuracy(records);

    let mut band_histogram: BTreeMap<String, usize> =
        Band::ALL.iter().map(|b| (b.as_str().to_owned(), 0)).collect();
    let mut per_class = Vec::with_capacity(analyses.len());
    for a in &analyses {
        let e = &a.effect;
        if let Some(band) = e.band {
            *band_histogram.get_mut(band.as_str()).expect("all bands present") += 1;
        }
        if let Some(reason) = e.exclusion_reason {
            log::info!("class '{}' excluded: {reason}", e.class_label);
        }
        let (overall, groups) = &class_acc[e.class_label.as_str()];
        per_class.push(ClassRow {
            class: e.class_label.clone(),
            n: e.n,
            effect_size: e.effect_size,
            dof: e.dof,
            band: e.band,
            excluded: e.is_excluded(),
            exclusion_reason: e.exclusion_reason,
            accuracy: ratio(*overall),
            per_group_accuracy: groups.iter().map(|(g, &t)| ((*g).to_owned(), ratio(t))).collect(),
            dp: fairness.as_ref().map(|f| f.per_class_dp[&e.class_label]),
            eo: fairness.as_ref().map(|f| f.per_class_eo[&e.class_label]),
            mev_removed_columns: a.filtered.as_ref().map_or(0, |f| f.removed_columns.len()),
            mev_dropped_rows: a.filtered.as_ref().map_or(0, |f| f.dropped_rows.len()),
        });
    }
    let classes_used = effects.iter().filter(|e| !e.is_excluded()).count();

    let tables = config.dump_tables.then(|| {
        analyses
            .iter()
            .map(|a| TableDump {
                class: a.effect.class_label.clone(),
                table: a.table.clone(),
                kept: a.filtered.as_ref().map(|f| f.kept.clone()),
                removed_columns: a
                    .filtered
                    .as_ref()
                    .map(|f| f.removed_columns.iter().map(Into::into).collect())
                    .unwrap_or_default(),
            })
            .collect()
    });

    let report = AuditReport {
        schema_version: SCHEMA_VERSION,
        config_echo: config.into(),
        n_records: records.len(),
        subgroups: validation.subgroups,
        aggregate: Aggregate {
            skewsize: skew,
            classes_used,
            classes_excluded: per_class.len() - classes_used,
            overall_accuracy: accuracy.overall,
            worst_group_accuracy: accuracy.worst_group,
            gap: accuracy.gap,
            dp_aggregate: fairness.as_ref().map(|f| f.dp_aggregate),
            eo_aggregate: fairness.as_ref().map(|f| f.eo_aggregate),
        },
        per_class,
        band_histogram,
        warnings,
        tables,
    };
    report.check_consistency(1e-12).map_err(AuditError::Inconsistent)?;
    Ok(report)
}

impl AuditReport {
    /// Checks the structural invariants every emitted report must satisfy.
    /// `tolerance` bounds the SkewSize recomputation error.
    pub fn check_consistency(&self, tolerance: f64) -> Result<(), String> {
        let agg = &self.aggregate;
        if agg.classes_used + agg.classes_excluded != self.per_class.len() {
            return Err(format!(
                "classes_used {} + classes_excluded {} != {} classes",
                agg.classes_used,
                agg.classes_excluded,
                self.per_class.len()
            ));
        }
        let histogram_total: usize = self.band_histogram.values().sum();
        if histogram_total != agg.classes_used {
            return Err(format!(
                "band histogram sums to {histogram_total}, expected {}",
                agg.classes_used
            ));
        }
        for row in &self.per_class {
            if row.excluded != row.effect_size.is_none() || row.band.is_some() == row.excluded {
                return Err(format!("class '{}' has inconsistent exclusion fields", row.class));
            }
        }
        let values: Vec<f64> = self.per_class.iter().filter_map(|r| r.effect_size).collect();
        let recomputed = if values.len() >= 2 {
            let s = metrics::fisher_pearson_skewness(&values, self.config_echo.skew_convention)
                .map_err(|e| e.to_string())?;
            Some(if self.config_echo.negate_skew { -s } else { s })
        } else {
            None
        };
        match (recomputed, agg.skewsize) {
            (None, None) => Ok(()),
            (Some(a), Some(b)) if (a - b).abs() <= tolerance => Ok(()),
            (a, b) => Err(format!("SkewSize {b:?} does not match recomputed {a:?}")),
        }
    }

    pub fn render(&self, format: RenderFormat) -> String {
        match format {
            RenderFormat::Json => canonical_json(self),
            RenderFormat::Csv => self.to_csv(),
            RenderFormat::Markdown => self.to_markdown(),
        }
    }

    fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "class",
            "n",
            "effect_size",
            "dof",
            "band",
            "excluded",
            "exclusion_reason",
            "accuracy",
            "dp",
            "eo",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(self.subgroups.iter().map(|g| format!("accuracy[{g}]")));
        w.write_record(&header).expect("in-memory write");
        for row in &self.per_class {
            let mut fields = vec![
                row.class.clone(),
                row.n.to_string(),
                fmt_opt(row.effect_size),
                row.dof.to_string(),
                row.band.map(|b| b.to_string()).unwrap_or_default(),
                row.excluded.to_string(),
                row.exclusion_reason.map(|r| r.to_string()).unwrap_or_default(),
                fmt_num(row.accuracy),
                fmt_opt(row.dp),
                fmt_opt(row.eo),
            ];
            fields.extend(
                self.subgroups
                    .iter()
                    .map(|g| fmt_opt(row.per_group_accuracy.get(g).copied())),
            );
            w.write_record(&fields).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| Class | N | Accuracy | WG | Gap | Effect size | Band | DP | EO |");
        let _ = writeln!(out, "|---|---:|---:|---:|---:|---:|---|---:|---:|");
        for row in &self.per_class {
            let wg = row.per_group_accuracy.values().copied().fold(f64::INFINITY, f64::min);
            let band = match (row.band, row.exclusion_reason) {
                (Some(b), _) => b.to_string(),
                (None, Some(r)) => format!("excluded ({r})"),
                (None, None) => String::new(),
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                row.class.replace('|', "\\|"),
                row.n,
                fmt_num(row.accuracy),
                fmt_num(wg),
                fmt_num((row.accuracy - wg).max(0.0)),
                fmt_opt(row.effect_size),
                band,
                fmt_opt(row.dp),
                fmt_opt(row.eo),
            );
        }
        let a = &self.aggregate;
        let label = if self.config_echo.negate_skew { "−SkewSize" } else { "SkewSize" };
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "**{label}**: {} ({} classes used, {} excluded)",
            a.skewsize.map(fmt_num).unwrap_or_else(|| "undefined".into()),
            a.classes_used,
            a.classes_excluded
        );
        let _ = writeln!(
            out,
            "**Accuracy**: {} | **WG**: {} | **Gap**: {} | **DP**: {} | **EO**: {}",
            fmt_num(a.overall_accuracy),
            fmt_num(a.worst_group_accuracy),
            fmt_num(a.gap),
            fmt_opt(a.dp_aggregate),
            fmt_opt(a.eo_aggregate),
        );
        let bands: Vec<String> = Band::ALL
            .iter()
            .map(|b| format!("{b}={}", self.band_histogram.get(b.as_str()).copied().unwrap_or(0)))
            .collect();
        let _ = writeln!(out, "**Band histogram**: {}", bands.join(", "));
        for w in &self.warnings {
            let _ = writeln!(out, "> warning: {w}");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RenderFormat {
    #[default]
    Json,
    Csv,
    Markdown,
}

/// Rounds to six significant digits.
pub fn round_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

fn fmt_num(x: f64) -> String {
    round_significant(x).to_string()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn round_floats(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            *v = serde_json::Number::from_f64(round_significant(x))
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_floats),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with sorted keys and floats rounded to six significant digits,
/// byte-stable for identical inputs.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("report types serialize");
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    pub input_index: usize,
    pub name: String,
    pub skewsize: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mev_threshold: f64,
    pub ranking: Vec<RankEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub report: AuditReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub models: Vec<ModelEntry>,
    /// Most SkewSize first (least biased); ties keep input order and
    /// undefined values go last.
    pub ranking: Vec<RankEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mev_sweep: Option<Vec<SweepRow>>,
}

impl ComparisonReport {
    pub fn render(&self, format: RenderFormat) -> String {
        match format {
            RenderFormat::Json => canonical_json(self),
            RenderFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record([
                    "rank",
                    "name",
                    "skewsize",
                    "classes_used",
                    "overall_accuracy",
                    "worst_group_accuracy",
                    "gap",
                    "dp_aggregate",
                    "eo_aggregate",
                ])
                .expect("in-memory write");
                for r in &self.ranking {
                    let a = &self.models[r.input_index].report.aggregate;
                    w.write_record([
                        r.rank.to_string(),
                        r.name.clone(),
                        fmt_opt(r.skewsize),
                        a.classes_used.to_string(),
                        fmt_num(a.overall_accuracy),
                        fmt_num(a.worst_group_accuracy),
                        fmt_num(a.gap),
                        fmt_opt(a.dp_aggregate),
                        fmt_opt(a.eo_aggregate),
                    ])
                    .expect("in-memory write");
                }
                String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
            }
            RenderFormat::Markdown => {
                let mut out = String::from(
                    "| Rank | Model | SkewSize | Accuracy | WG | Gap | DP | EO |\n|---:|---|---:|---:|---:|---:|---:|---:|\n",
                );
                for r in &self.ranking {
                    let a = &self.models[r.input_index].report.aggregate;
                    let _ = writeln!(
                        out,
                        "| {} | {} | {} | {} | {} | {} | {} | {} |",
                        r.rank,
                        r.name,
                        r.skewsize.map(fmt_num).unwrap_or_else(|| "undefined".into()),
                        fmt_num(a.overall_accuracy),
                        fmt_num(a.worst_group_accuracy),
                        fmt_num(a.gap),
                        fmt_opt(a.dp_aggregate),
                        fmt_opt(a.eo_aggregate),
                    );
                }
                if let Some(sweep) = &self.mev_sweep {
                    let _ = writeln!(out, "\n| MEV | Ranking |\n|---:|---|");
                    for row in sweep {
                        let names: Vec<&str> = row.ranking.iter().map(|r| r.name.as_str()).collect();
                        let _ = writeln!(out, "| {} | {} |", fmt_num(row.mev_threshold), names.join(" > "));
                    }
                }
                out
            }
        }
    }
}

fn rank(names: &[String], skews: &[Option<f64>]) -> Vec<RankEntry> {
    let mut order: Vec<usize> = (0..names.len()).collect();
    // stable sort keeps input order for ties
    order.sort_by(|&a, &b| match (skews[a], skews[b]) {
        (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Equal),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| RankEntry {
            rank: rank + 1,
            input_index: i,
            name: names[i].clone(),
            skewsize: skews[i],
        })
        .collect()
}

/// Audits every input with the same configuration and ranks them by
/// SkewSize. `mev_sweep` re-ranks at each listed threshold.
pub fn compare(
    inputs: &[(String, Vec<PredictionRecord>)],
    config: &AuditConfig,
    mev_sweep: Option<&[f64]>,
) -> Result<ComparisonReport, AuditError> {
    if inputs.len() < 2 {
        return Err(AuditError::TooFewInputs);
    }
    let models = inputs
        .iter()
        .map(|(name, records)| {
            Ok(ModelEntry {
                name: name.clone(),
                report: audit(records, config)?,
            })
        })
        .collect::<Result<Vec<_>, AuditError>>()?;

    let mut vocab: Vec<&String> = models[0].report.subgroups.iter().collect();
    vocab.sort();
    for m in &models[1..] {
        let mut other: Vec<&String> = m.report.subgroups.iter().collect();
        other.sort();
        if other != vocab {
            return Err(AuditError::SubgroupMismatch(format!(
                "'{}' has {:?}, '{}' has {:?}",
                models[0].name, vocab, m.name, other
            )));
        }
    }

    let names: Vec<String> = models.iter().map(|m| m.name.clone()).collect();
    let skews: Vec<Option<f64>> = models.iter().map(|m| m.report.aggregate.skewsize).collect();
    let ranking = rank(&names, &skews);

    let mev_sweep = match mev_sweep {
        None => None,
        Some(thresholds) => Some(
            thresholds
                .iter()
                .map(|&t| {
                    let cfg = AuditConfig {
                        effect: EffectConfig {
                            mev_threshold: t,
                            ..config.effect
                        },
                        dump_tables: false,
                        ..config.clone()
                    };
                    let skews = inputs
                        .iter()
                        .map(|(_, records)| audit(records, &cfg).map(|r| r.aggregate.skewsize))
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(SweepRow {
                        mev_threshold: t,
                        ranking: rank(&names, &skews),
                    })
                })
                .collect::<Result<Vec<_>, AuditError>>()?,
        ),
    };

    Ok(ComparisonReport {
        schema_version: SCHEMA_VERSION,
        models,
        ranking,
        mev_sweep,
    })
}
