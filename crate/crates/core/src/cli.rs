//! `skewsize` command line: `audit`, `compare` and `simulate`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or arguments. Errors
//! are written to stderr as a single JSON object.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contingency::MevRule;
use crate::ingest::{
    read_records, write_records, CanonicalizationRules, ColumnSpec, IngestError, InputFormat,
    PredictionRecord, ReadOptions,
};
use crate::metrics::{Aggregation, EffectConfig, EoMode, SkewConvention};
use crate::report::{
    audit, canonical_json, compare, AuditConfig, AuditError, CanonicalizationEcho, RenderFormat,
    SimulationEcho,
};
use crate::simulate::{
    dsprites_scenario, sample_records, stereotype_scenario, ScenarioSpec, SimulateError,
    StereotypeVariant, GENERATOR,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_INVALID: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "skewsize", version, about = "Audit classifier predictions for distributional bias")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-class effect sizes, SkewSize and baselines for one prediction log.
    Audit(AuditArgs),
    /// Audit several prediction logs and rank them by SkewSize.
    Compare(CompareArgs),
    /// Write a synthetic prediction log with known bias structure.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MevRuleArg {
    Min,
    Mean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SkewArg {
    Moment,
    Eq4,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EoModeArg {
    Grid,
    PerLabel,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RenderArg {
    Json,
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Input file format.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Ground-truth column (CSV) or field (JSONL).
    #[arg(long = "label-col", visible_alias = "label-field", default_value = "gt")]
    pub label_col: String,
    #[arg(long = "pred-col", visible_alias = "pred-field", default_value = "pred")]
    pub pred_col: String,
    #[arg(long = "group-col", visible_alias = "group-field", default_value = "group")]
    pub group_col: String,
    #[arg(long = "id-col", visible_alias = "id-field")]
    pub id_col: Option<String>,
    /// Single-byte CSV delimiter.
    #[arg(long, default_value = ",")]
    pub delimiter: char,
    /// JSON object mapping output variants to canonical labels.
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    #[arg(long)]
    pub lowercase: bool,
    #[arg(long)]
    pub strip_punctuation: bool,
    /// Keep surrounding whitespace in labels.
    #[arg(long)]
    pub no_trim: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// Minimum expected value; columns below it are dropped per class.
    #[arg(long = "mev", default_value_t = 5.0)]
    pub mev: f64,
    #[arg(long, value_enum, default_value = "min")]
    pub mev_rule: MevRuleArg,
    #[arg(long, value_enum, default_value = "moment")]
    pub skew_convention: SkewArg,
    /// Aggregation of per-class DP/EO gaps.
    #[arg(long, value_enum, default_value = "max")]
    pub aggregation: AggregationArg,
    #[arg(long, value_enum, default_value = "grid")]
    pub eo_mode: EoModeArg,
    #[arg(long, default_value_t = 1)]
    pub min_class_count: u64,
    /// Report −SkewSize (lower is better).
    #[arg(long)]
    pub negate_skew: bool,
    /// Include every class's contingency table in the report.
    #[arg(long)]
    pub dump_tables: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub render: RenderArg,
}

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub input_args: InputArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Also write the per-class table as CSV.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Prediction logs to compare (at least two).
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub input_args: InputArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// MEV thresholds to re-rank at: `2..6`, `2..6:0.5` or `2,3.5,5`.
    #[arg(long)]
    pub mev_sweep: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioArg {
    Dsprites,
    Stereotype,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    #[value(name = "M1", alias = "m1")]
    M1,
    #[value(name = "M2", alias = "m2")]
    M2,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Built-in scenario; ignored when `--spec` is given.
    #[arg(long, value_enum, default_value = "dsprites")]
    pub scenario: ScenarioArg,
    /// Scenario JSON file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Bias strength in [0, 1] for the dsprites scenario.
    #[arg(long, default_value_t = 1.0)]
    pub strength: f64,
    #[arg(long, value_enum, default_value = "M2")]
    pub variant: VariantArg,
    /// Records per (class, subgroup) cell.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn invalid(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            kind,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            kind: "io",
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind,
            "exit_code": self.code,
            "message": self.message,
        })
        .to_string()
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        if e.is_validation() {
            CliError::invalid("input", e.to_string())
        } else {
            Self {
                code: EXIT_IO,
                kind: "io",
                message: e.to_string(),
            }
        }
    }
}

impl From<AuditError> for CliError {
    fn from(e: AuditError) -> Self {
        CliError::invalid("validation", e.to_string())
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        CliError::invalid("scenario", e.to_string())
    }
}

/// Sidecar written next to simulated logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSidecar {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub generator: String,
    pub n_records: usize,
    pub spec: ScenarioSpec,
}

pub fn sidecar_path(records_path: &Path) -> PathBuf {
    let mut name: OsString = records_path.as_os_str().to_owned();
    name.push(".scenario.json");
    PathBuf::from(name)
}

fn rules(args: &InputArgs) -> Result<(CanonicalizationRules, Option<String>), CliError> {
    let base = CanonicalizationRules::new(args.lowercase, !args.no_trim, args.strip_punctuation);
    match &args.synonyms {
        None => Ok((base, None)),
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
            let digest = hex::encode(Sha256::digest(&bytes));
            Ok((base.load_synonyms(path)?, Some(digest)))
        }
    }
}

fn read_options(args: &InputArgs) -> Result<ReadOptions, CliError> {
    if !args.delimiter.is_ascii() {
        return Err(CliError::invalid("arguments", "delimiter must be a single ASCII character"));
    }
    Ok(ReadOptions {
        format: match args.format {
            FormatArg::Csv => InputFormat::Csv,
            FormatArg::Jsonl => InputFormat::Jsonl,
        },
        columns: ColumnSpec {
            label: args.label_col.clone(),
            prediction: args.pred_col.clone(),
            group: args.group_col.clone(),
            id: args.id_col.clone(),
        },
        delimiter: args.delimiter as u8,
    })
}

fn load(path: &Path, args: &InputArgs, rules: &CanonicalizationRules) -> Result<Vec<PredictionRecord>, CliError> {
    let mut records = read_records(path, &read_options(args)?).map_err(|e| match e {
        IngestError::Io(io) => CliError::io(path, io),
        other => CliError::invalid("input", format!("{}: {other}", path.display())),
    })?;
    rules.apply(&mut records);
    Ok(records)
}

fn simulation_echo(path: &Path) -> Option<SimulationEcho> {
    let text = fs::read_to_string(sidecar_path(path)).ok()?;
    let sidecar: ScenarioSidecar = serde_json::from_str(&text).ok()?;
    Some(SimulationEcho {
        seed: sidecar.seed,
        generator: sidecar.generator,
    })
}

fn audit_config(
    metrics: &MetricArgs,
    input: &InputArgs,
    synonyms_sha256: Option<String>,
) -> Result<AuditConfig, CliError> {
    if !(metrics.mev.is_finite() && metrics.mev >= 0.0) {
        return Err(CliError::invalid("arguments", "--mev must be a non-negative number"));
    }
    Ok(AuditConfig {
        effect: EffectConfig {
            mev_threshold: metrics.mev,
            mev_rule: match metrics.mev_rule {
                MevRuleArg::Min => MevRule::Min,
                MevRuleArg::Mean => MevRule::Mean,
            },
            min_class_count: metrics.min_class_count,
        },
        skew_convention: match metrics.skew_convention {
            SkewArg::Moment => SkewConvention::Moment,
            SkewArg::Eq4 => SkewConvention::Eq4Literal,
        },
        aggregation: match metrics.aggregation {
            AggregationArg::Max => Aggregation::Max,
            AggregationArg::Mean => Aggregation::Mean,
        },
        eo_mode: match metrics.eo_mode {
            EoModeArg::Grid => EoMode::Grid,
            EoModeArg::PerLabel => EoMode::PerLabel,
        },
        negate_skew: metrics.negate_skew,
        dump_tables: metrics.dump_tables,
        canonicalization: CanonicalizationEcho {
            lowercase: input.lowercase,
            trim: !input.no_trim,
            strip_punctuation: input.strip_punctuation,
        },
        synonyms_sha256,
        simulation: None,
    })
}

fn render_format(r: RenderArg) -> RenderFormat {
    match r {
        RenderArg::Json => RenderFormat::Json,
        RenderArg::Csv => RenderFormat::Csv,
        RenderArg::Markdown => RenderFormat::Markdown,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_audit(args: &AuditArgs) -> Result<(), CliError> {
    let (rules, digest) = rules(&args.input_args)?;
    let records = load(&args.input, &args.input_args, &rules)?;
    let mut config = audit_config(&args.metrics, &args.input_args, digest)?;
    config.simulation = simulation_echo(&args.input);
    let report = audit(&records, &config)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if let Some(path) = &args.csv_out {
        fs::write(path, report.render(RenderFormat::Csv)).map_err(|e| CliError::io(path, e))?;
    }
    emit(args.output.out.as_deref(), &report.render(render_format(args.output.render)))
}

/// Parses `a..b`, `a..b:step` (inclusive) or a comma-separated list.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>, String> {
    let bad = || format!("invalid MEV sweep '{spec}'");
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let values: Vec<f64> = if let Some((start, rest)) = spec.split_once("..") {
        let (end, step) = match rest.split_once(':') {
            Some((e, s)) => (parse(e)?, parse(s)?),
            None => (parse(rest)?, 1.0),
        };
        let start = parse(start)?;
        if step <= 0.0 || end < start {
            return Err(bad());
        }
        let steps = ((end - start) / step + 1e-9).floor() as usize;
        (0..=steps).map(|k| start + k as f64 * step).collect()
    } else {
        spec.split(',').map(parse).collect::<Result<_, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(bad());
    }
    Ok(values)
}

fn run_compare(args: &CompareArgs) -> Result<(), CliError> {
    if args.inputs.len() < 2 {
        return Err(CliError::invalid("arguments", "compare needs at least two --input files"));
    }
    let sweep = args
        .mev_sweep
        .as_deref()
        .map(parse_sweep)
        .transpose()
        .map_err(|e| CliError::invalid("arguments", e))?;
    let (rules, digest) = rules(&args.input_args)?;
    let config = audit_config(&args.metrics, &args.input_args, digest)?;
    let mut inputs = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        inputs.push((path.display().to_string(), load(path, &args.input_args, &rules)?));
    }
    let report = compare(&inputs, &config, sweep.as_deref())?;
    emit(args.output.out.as_deref(), &report.render(render_format(args.output.render)))
}

fn run_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (name, spec) = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let spec: ScenarioSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::invalid("scenario", format!("{}: {e}", path.display())))?;
            (path.display().to_string(), spec)
        }
        None => match args.scenario {
            ScenarioArg::Dsprites => (
                format!("dsprites(strength={})", args.strength),
                dsprites_scenario(args.strength)?,
            ),
            ScenarioArg::Stereotype => {
                let variant = match args.variant {
                    VariantArg::M1 => StereotypeVariant::M1,
                    VariantArg::M2 => StereotypeVariant::M2,
                };
                (format!("stereotype({variant})"), stereotype_scenario(variant))
            }
        },
    };
    let spec = match args.n {
        Some(n) => spec.with_n_per_cell(n)?,
        None => spec,
    };
    let records = sample_records(&spec, args.seed);
    let file = fs::File::create(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    write_records(std::io::BufWriter::new(file), &records).map_err(|e| match e {
        IngestError::Io(io) => CliError::io(&args.out, io),
        other => CliError::invalid("output", other.to_string()),
    })?;
    let sidecar = ScenarioSidecar {
        schema_version: crate::report::SCHEMA_VERSION,
        scenario: name,
        seed: args.seed,
        generator: GENERATOR.to_owned(),
        n_records: records.len(),
        spec,
    };
    let path = sidecar_path(&args.out);
    fs::write(&path, canonical_json(&sidecar)).map_err(|e| CliError::io(&path, e))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Audit(a) => run_audit(a),
        Command::Compare(c) => run_compare(c),
        Command::Simulate(s) => run_simulate(s),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let err = CliError::invalid("arguments", e.to_string());
            eprintln!("{}", err.to_json());
            return err.code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing() {
        assert_eq!(parse_sweep("2..6").unwrap(), [2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(parse_sweep("2..3:0.5").unwrap(), [2.0, 2.5, 3.0]);
        assert_eq!(parse_sweep("1,5").unwrap(), [1.0, 5.0]);
        assert!(parse_sweep("6..2").is_err());
        assert!(parse_sweep("a..b").is_err());
        assert!(parse_sweep("-1").is_err());
    }

    #[test]
    fn sidecar_next_to_records() {
        assert_eq!(sidecar_path(Path::new("out/d.csv")), PathBuf::from("out/d.csv.scenario.json"));
    }

    #[test]
    fn bad_arguments_exit_2() {
        assert_eq!(run(["skewsize", "audit"]), EXIT_INVALID);
        assert_eq!(run(["skewsize", "frobnicate"]), EXIT_INVALID);
    }
}
