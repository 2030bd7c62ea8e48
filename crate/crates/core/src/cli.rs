//! Command-line front end: `compute`, `analyze`, `selftest` and
//! `protocol-echo`.
//!
//! Exit codes: 0 success, 1 usage, 2 oracle failure, 3 data failure. Every
//! failure ends with one JSON line on stderr naming the error.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{self, ContextMode, EngineConfig, EngineError, EstimatorKind, Normalization};
use crate::oracle::server::{serve_http, serve_stdio, EchoResponder, Responder, ToyResponder};
use crate::oracle::{Handshake, OracleError, OracleHandle, OracleOptions, OracleSpec, OutputMode, ToyGameSpec};
use crate::record::{self, validate_instance, Instance, InstanceError, InstanceSpec, InteractionRecord, Modality, RecordError, SCHEMA_VERSION};
use crate::selftest::{run_selftest, SelftestConfig};
use crate::speech::{self, HeatmapSide, PhoneTable, SpeechError, WindowAggregation, WindowStii};
use crate::table::{num, opt_num, Table};
use crate::text::{self, BootstrapConfig, CurvePooling, GridConfig, TextError};

/// Directory for per-instance oracle caches.
pub const CACHE_DIR_ENV: &str = "STII_CACHE_DIR";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{message}")]
    Usage { code: &'static str, message: String },
    #[error("{message}")]
    Oracle { code: String, message: String },
    #[error("{message}")]
    Data { code: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } => 1,
            CliError::Oracle { .. } => 2,
            CliError::Data { .. } => 3,
        }
    }

    pub fn code(&self) -> &str {
        match self {
            CliError::Usage { code, .. } => code,
            CliError::Oracle { code, .. } | CliError::Data { code, .. } => code,
        }
    }

    pub fn json_line(&self) -> String {
        serde_json::json!({
            "error": self.code(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
        .to_string()
    }

    fn usage(message: impl Into<String>) -> Self {
        CliError::Usage {
            code: "Usage",
            message: message.into(),
        }
    }

    fn data(code: &str, message: impl Into<String>) -> Self {
        CliError::Data {
            code: code.into(),
            message: message.into(),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Oracle {
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Oracle(o) => o.into(),
            EngineError::ExactLimitExceeded { .. } => CliError::Usage {
                code: "ExactLimitExceeded",
                message: e.to_string(),
            },
            other => CliError::data("Engine", other.to_string()),
        }
    }
}

impl From<RecordError> for CliError {
    fn from(e: RecordError) -> Self {
        let code = match e {
            RecordError::Malformed(_) => "Malformed",
            RecordError::SchemaMismatch { .. } => "SchemaMismatch",
            RecordError::Invalid(_) => "InvalidRecord",
        };
        CliError::data(code, e.to_string())
    }
}

impl From<InstanceError> for CliError {
    fn from(e: InstanceError) -> Self {
        CliError::data("InvalidInstance", e.to_string())
    }
}

impl From<TextError> for CliError {
    fn from(e: TextError) -> Self {
        let code = match e {
            TextError::EmptyInput => "EmptyInput",
            TextError::MissingAnnotations => "MissingAnnotations",
            TextError::SchemaMismatch(_) => "SchemaMismatch",
            _ => "Annotation",
        };
        CliError::data(code, e.to_string())
    }
}

impl From<SpeechError> for CliError {
    fn from(e: SpeechError) -> Self {
        match e {
            SpeechError::Engine(inner) => inner.into(),
            SpeechError::UnknownPhoneLabel(_) => CliError::data("UnknownPhoneLabel", e.to_string()),
            other => CliError::data("Alignment", other.to_string()),
        }
    }
}

fn io_error(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::data("Io", format!("{}: {e}", path.display()))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_error(path))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(io_error(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSelection {
    /// Consecutive pairs for speech, all pairs otherwise.
    #[default]
    Auto,
    All,
    Consecutive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub min_count: usize,
    pub alpha: f64,
    pub deltas: Vec<f64>,
    /// Longest text instance accepted, in features.
    pub truncation: usize,
    pub resamples: usize,
    pub level: f64,
    /// Seed for bootstrap resampling and small-sample permutation tests.
    pub seed: u64,
    pub pooling: CurvePooling,
    pub aggregation: WindowAggregation,
    pub heatmap_side: HeatmapSide,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            min_count: text::DEFAULT_MIN_COUNT,
            alpha: text::DEFAULT_ALPHA,
            deltas: speech::DEFAULT_DELTAS.to_vec(),
            truncation: 20,
            resamples: crate::stats::DEFAULT_RESAMPLES,
            level: crate::stats::DEFAULT_LEVEL,
            seed: 0,
            pooling: CurvePooling::Pooled,
            aggregation: WindowAggregation::Mean,
            heatmap_side: HeatmapSide::Both,
        }
    }
}

/// Everything that determines a run's outputs. The worker count is not part
/// of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub engine: EngineConfig,
    /// Oracle for instances whose manifest entry names none.
    pub oracle: Option<OracleSpec>,
    pub output_mode: OutputMode,
    pub max_in_flight: usize,
    pub retry: bool,
    pub pairs: PairSelection,
    pub analysis: AnalysisConfig,
    #[serde(skip)]
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            oracle: None,
            output_mode: OutputMode::Raw,
            max_in_flight: 1,
            retry: false,
            pairs: PairSelection::Auto,
            analysis: AnalysisConfig::default(),
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage {
            code: "BadConfig",
            message: e.to_string(),
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let a = &self.analysis;
        if a.truncation < 2 {
            return Err(CliError::usage("truncation must be at least 2"));
        }
        if !(a.alpha > 0.0 && a.alpha < 1.0) || !(a.level > 0.0 && a.level < 1.0) {
            return Err(CliError::usage("alpha and level must lie in (0, 1)"));
        }
        if a.deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(CliError::usage("deltas must be positive"));
        }
        if self.engine.num_permutations == 0 {
            return Err(CliError::usage("num_permutations must be positive"));
        }
        Ok(())
    }

    fn oracle_options(&self) -> OracleOptions {
        OracleOptions {
            output_mode: self.output_mode,
            batch_size: self.engine.batch_size,
            max_in_flight: self.max_in_flight,
            retry: self.retry,
            disk_cache: None,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One line of an instance manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub instance: InstanceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
}

/// Validated entries sorted by instance id.
pub fn read_instance_manifest(text: &str) -> Result<Vec<(Instance, Option<OracleSpec>)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| CliError::data("Malformed", format!("instance manifest line {}: {e}", i + 1)))?;
        out.push((validate_instance(entry.instance)?, entry.oracle));
    }
    out.sort_by(|a, b| a.0.id().cmp(b.0.id()));
    if let Some(w) = out.windows(2).find(|w| w[0].0.id() == w[1].0.id()) {
        return Err(CliError::data("DuplicateInstance", format!("instance {} appears twice", w[0].0.id())));
    }
    Ok(out)
}

fn cache_file(dir: &Path, instance_id: &str) -> PathBuf {
    let safe: String = instance_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .take(64)
        .collect();
    dir.join(format!("{safe}-{}.jsonl", &sha256_hex(instance_id.as_bytes())[..12]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub instance_id: String,
    pub n_features: usize,
    pub pairs: usize,
    pub handshake: Handshake,
    pub oracle_calls: u64,
    pub cache_hits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub records_file: String,
    pub records_sha256: String,
    pub instances: Vec<InstanceSummary>,
}

fn select_pairs(selection: PairSelection, instance: &Instance) -> Vec<(usize, usize)> {
    let n = instance.n_features();
    match (selection, instance.modality()) {
        (PairSelection::All, _) => engine::all_pairs(n),
        (PairSelection::Consecutive, _) | (PairSelection::Auto, Modality::Speech) => engine::consecutive_pairs(n),
        (PairSelection::Auto, _) => engine::all_pairs(n),
    }
}

fn compute_instance(config: &RunConfig, instance: &Instance, spec: Option<&OracleSpec>, cache_dir: Option<&Path>) -> Result<(Vec<InteractionRecord>, InstanceSummary), CliError> {
    let spec = spec.or(config.oracle.as_ref()).ok_or_else(|| CliError::Usage {
        code: "MissingOracle",
        message: format!("no oracle for instance {} and no default oracle configured", instance.id()),
    })?;
    let mut options = config.oracle_options();
    options.disk_cache = cache_dir.map(|d| cache_file(d, instance.id()));
    let oracle = OracleHandle::open(spec, instance, options)?;
    let pairs = select_pairs(config.pairs, instance);
    let records = engine::stii_matrix(&oracle, instance, &pairs, &config.engine.stii_config())?;
    let summary = InstanceSummary {
        instance_id: instance.id().to_string(),
        n_features: instance.n_features(),
        pairs: pairs.len(),
        handshake: oracle.handshake().clone(),
        oracle_calls: oracle.call_count(),
        cache_hits: oracle.cache_hits(),
    };
    Ok((records, summary))
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))
}

/// Computes records for every instance and writes the records file and run
/// manifest into `out_dir`. Instances run in parallel; output order is by
/// instance id, then pair.
pub fn cmd_compute(config: &RunConfig, instances_path: &Path, out_dir: &Path, cache_dir: Option<&Path>) -> Result<RunManifest, CliError> {
    config.validate()?;
    let entries = read_instance_manifest(&read_file(instances_path)?)?;
    if entries.is_empty() {
        return Err(CliError::data("EmptyInput", "instance manifest is empty"));
    }
    for (inst, _) in &entries {
        if inst.modality() == Modality::Text && inst.n_features() > config.analysis.truncation {
            return Err(CliError::data(
                "TruncationExceeded",
                format!("text instance {} has {} features, above the truncation length {}", inst.id(), inst.n_features(), config.analysis.truncation),
            ));
        }
    }
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    let results: Vec<Result<_, CliError>> = thread_pool(config.threads)?.install(|| {
        entries
            .par_iter()
            .map(|(inst, spec)| compute_instance(config, inst, spec.as_ref(), cache_dir))
            .collect()
    });
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for r in results {
        let (recs, summary) = r?;
        records.extend(recs);
        summaries.push(summary);
    }
    std::fs::create_dir_all(out_dir).map_err(io_error(out_dir))?;
    let body = record::write_records(&records);
    write_file(&out_dir.join(RECORDS_FILE), &body)?;
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: config.hash(),
        seed: config.engine.seed,
        config: config.clone(),
        records_file: RECORDS_FILE.into(),
        records_sha256: sha256_hex(body.as_bytes()),
        instances: summaries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&out_dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Curves,
    Syntax,
    Mwe,
    Speech,
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeInputs {
    pub records: PathBuf,
    pub annotations: Option<PathBuf>,
    /// Directory of `<instance_id>.TextGrid` files.
    pub alignments: Option<PathBuf>,
    /// Instance manifest supplying feature timestamps.
    pub instances: Option<PathBuf>,
    /// Empty selects every analysis the inputs allow.
    pub analyses: Vec<Analysis>,
}

fn require(path: &Option<PathBuf>, what: &str, for_analysis: &str) -> Result<PathBuf, CliError> {
    path.clone().ok_or_else(|| CliError::data("MissingAnnotations", format!("{for_analysis} needs {what}")))
}

/// Writes figure-data tables into `out_dir` and returns their file names.
pub fn cmd_analyze(config: &RunConfig, inputs: &AnalyzeInputs, out_dir: &Path) -> Result<Vec<String>, CliError> {
    config.validate()?;
    for p in [Some(&inputs.records), inputs.annotations.as_ref(), inputs.alignments.as_ref(), inputs.instances.as_ref()].into_iter().flatten() {
        if !p.exists() {
            return Err(CliError::Usage {
                code: "MissingPath",
                message: format!("{} does not exist", p.display()),
            });
        }
    }
    let body = read_file(&inputs.records)?;
    let records = record::read_records(&body).map_err(|(line, e)| {
        let inner: CliError = e.into();
        CliError::data(inner.code(), format!("records line {line}: {inner}"))
    })?;
    if records.is_empty() {
        return Err(CliError::data("EmptyInput", "records file is empty"));
    }
    let analyses: BTreeSet<Analysis> = if inputs.analyses.is_empty() {
        let mut a = BTreeSet::new();
        if records.iter().any(|r| r.d_i.is_some()) {
            a.insert(Analysis::Curves);
        }
        if inputs.annotations.is_some() {
            a.extend([Analysis::Syntax, Analysis::Mwe]);
        }
        if inputs.alignments.is_some() {
            a.insert(Analysis::Speech);
        }
        a
    } else {
        inputs.analyses.iter().copied().collect()
    };
    let footer = [
        ("config_hash", config.hash()),
        ("schema_version", SCHEMA_VERSION.to_string()),
        ("records_sha256", sha256_hex(body.as_bytes())),
    ];
    let a = &config.analysis;
    let bootstrap = BootstrapConfig {
        resamples: a.resamples,
        level: a.level,
        seed: a.seed,
    };
    let mut tables: Vec<(String, Table, Vec<(&str, String)>)> = Vec::new();

    if analyses.contains(&Analysis::Curves) {
        tables.push(("distance_curves.tsv".into(), curves_table(&records, a)?, vec![]));
    }
    let annotations = if analyses.contains(&Analysis::Syntax) || analyses.contains(&Analysis::Mwe) {
        let path = require(&inputs.annotations, "an annotation file", "syntax and MWE analyses")?;
        Some(text::read_annotations(&read_file(&path)?)?)
    } else {
        None
    };
    if analyses.contains(&Analysis::Syntax) {
        let grid_cfg = GridConfig {
            min_count: a.min_count,
            alpha: a.alpha,
            seed: a.seed,
        };
        let grid = text::syntax_correlation_grid(&records, annotations.as_deref().unwrap_or_default(), &grid_cfg)?;
        let d = &grid.diagnostics;
        let extra = vec![
            ("unannotated", d.unannotated.to_string()),
            ("unreachable", d.unreachable.to_string()),
            ("no_target", d.no_target.to_string()),
            ("out_of_range", d.out_of_range.to_string()),
            ("rare_syntactic_distance", d.rare_syntactic_distance.to_string()),
            ("kept_syntactic_distances", grid.kept_distances.iter().map(u64::to_string).collect::<Vec<_>>().join(",")),
        ];
        tables.push(("syntax_grid.tsv".into(), grid_table(&grid), extra));
    }
    if analyses.contains(&Analysis::Mwe) {
        let cells = text::mwe_comparison(&records, annotations.as_deref().unwrap_or_default(), &bootstrap)?;
        tables.push(("mwe_comparison.tsv".into(), mwe_table(&cells), vec![]));
    }
    if analyses.contains(&Analysis::Speech) {
        let dir = require(&inputs.alignments, "an alignment directory", "speech analysis")?;
        let manifest = require(&inputs.instances, "an instance manifest with feature times", "speech analysis")?;
        let entries = read_instance_manifest(&read_file(&manifest)?)?;
        let (raw, contrast, heat) = speech_tables(&records, &entries, &dir, a, &bootstrap)?;
        tables.push(("boundary_windows.tsv".into(), raw, vec![]));
        tables.push(("boundary_contrast.tsv".into(), contrast, vec![]));
        tables.push(("consonant_heatmap.tsv".into(), heat, vec![]));
    }

    std::fs::create_dir_all(out_dir).map_err(io_error(out_dir))?;
    let mut names = Vec::new();
    for (name, table, extra) in tables {
        let mut f: Vec<(&str, String)> = footer.to_vec();
        f.extend(extra);
        write_file(&out_dir.join(&name), &table.to_tsv(&f))?;
        names.push(name);
    }
    Ok(names)
}

fn curves_table(records: &[InteractionRecord], a: &AnalysisConfig) -> Result<Table, CliError> {
    let curves = text::distance_curves(records, a.min_count, a.pooling)?;
    let mut t = Table::new(["axis", "distance", "mean_stii", "count", "low_count"]);
    for (axis, points) in [("d_i", &curves.by_pair_distance), ("d_p", &curves.by_prediction_distance)] {
        for p in points {
            t.push(vec![axis.into(), p.distance.to_string(), num(p.mean), p.count.to_string(), p.low_count.to_string()]);
        }
    }
    Ok(t)
}

fn grid_table(grid: &text::SyntaxGrid) -> Table {
    let mut t = Table::new(["d_i", "d_p", "n", "rho", "p_value", "shown", "hidden_reason"]);
    for c in &grid.cells {
        t.push(vec![
            c.key.d_i.to_string(),
            c.key.d_p.to_string(),
            c.n.to_string(),
            opt_num(c.rho),
            opt_num(c.p_value),
            c.shown.to_string(),
            c.hidden_reason.map(|r| r.as_str().to_string()).unwrap_or_default(),
        ]);
    }
    t
}

fn mwe_table(cells: &[text::MweCell]) -> Table {
    let mut t = Table::new(["d_p", "d_i", "series", "count", "mean_stii", "ci_lower", "ci_upper", "gap"]);
    for c in cells {
        for (series, point) in [("strong", c.strong), ("weak", c.weak), ("baseline", c.baseline)] {
            t.push(vec![
                c.key.d_p.to_string(),
                c.key.d_i.to_string(),
                series.into(),
                point.map_or(0, |p| p.count).to_string(),
                opt_num(point.map(|p| p.mean)),
                opt_num(point.map(|p| p.ci.lower)),
                opt_num(point.map(|p| p.ci.upper)),
                point.is_none().to_string(),
            ]);
        }
    }
    t
}

fn speech_tables(
    records: &[InteractionRecord],
    entries: &[(Instance, Option<OracleSpec>)],
    alignment_dir: &Path,
    a: &AnalysisConfig,
    bootstrap: &BootstrapConfig,
) -> Result<(Table, Table, Table), CliError> {
    let table = PhoneTable::builtin();
    let mut by_instance: BTreeMap<&str, Vec<&InteractionRecord>> = BTreeMap::new();
    for r in records {
        by_instance.entry(&r.instance_id).or_default().push(r);
    }
    let mut deltas = a.deltas.clone();
    if !deltas.iter().any(|d| (d - speech::HEATMAP_DELTA).abs() <= 1e-12) {
        deltas.push(speech::HEATMAP_DELTA);
    }
    let mut raw = Table::new(["instance_id", "delta", "boundary_time", "left", "right", "boundary_type", "member_pairs", "empty", "stii"]);
    let mut windows: Vec<WindowStii> = Vec::new();
    for (inst, _) in entries.iter().filter(|(i, _)| i.modality() == Modality::Speech) {
        let Some(recs) = by_instance.get(inst.id()) else { continue };
        let path = alignment_dir.join(format!("{}.TextGrid", inst.id()));
        if !path.exists() {
            return Err(CliError::data("MissingAnnotations", format!("no alignment {} for speech instance {}", path.display(), inst.id())));
        }
        let segments = speech::load_alignment_file(&path)?;
        let times = inst.feature_times().expect("speech instances carry feature times");
        let stii = speech::stii_by_pair(recs.iter().copied());
        for &delta in &deltas {
            for w in speech::boundary_windows(&segments, times, delta) {
                let kind = speech::boundary_type(&w.left_label, &w.right_label, table)?;
                let value = if w.is_empty() { None } else { Some(speech::window_stii_from_records(&w, &stii, a.aggregation)?) };
                raw.push(vec![
                    inst.id().into(),
                    num(delta),
                    num(w.boundary_time),
                    w.left_label.clone(),
                    w.right_label.clone(),
                    kind.as_str().into(),
                    w.member_pairs.len().to_string(),
                    w.is_empty().to_string(),
                    opt_num(value),
                ]);
                if let Some(stii) = value {
                    windows.push(WindowStii { window: w, stii });
                }
            }
        }
    }
    if raw.is_empty() {
        return Err(CliError::data("EmptyInput", "no speech instance has both records and an alignment"));
    }
    let points = speech::boundary_contrast(&windows, table, &a.deltas, bootstrap)?;
    let mut contrast = Table::new(["delta", "boundary_type", "contrasted", "count", "mean_stii", "ci_lower", "ci_upper", "empty"]);
    for p in &points {
        contrast.push(vec![
            num(p.delta),
            p.boundary_type.as_str().into(),
            p.boundary_type.contrasted().to_string(),
            p.count.to_string(),
            opt_num(p.mean),
            opt_num(p.ci.map(|c| c.lower)),
            opt_num(p.ci.map(|c| c.upper)),
            p.is_empty().to_string(),
        ]);
    }
    let cells = speech::consonant_heatmap(&windows, table, speech::HEATMAP_DELTA, a.heatmap_side)?;
    let mut heat = Table::new(["manner", "place", "voicing", "count", "mean_stii"]);
    for c in &cells {
        heat.push(vec![
            c.manner.as_str().into(),
            c.place.as_str().into(),
            if c.voiced { "+V" } else { "-V" }.into(),
            c.count.to_string(),
            opt_num(c.mean),
        ]);
    }
    Ok((raw, contrast, heat))
}

fn parse_choice<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|_| format!("invalid value {s:?}"))
}

fn parse_deltas(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"))).collect()
}

#[derive(Debug, Parser)]
#[command(name = "stii", version, about = "Pairwise Shapley-Taylor interaction indices for black-box models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute interaction records for every instance in a manifest.
    Compute(ComputeArgs),
    /// Turn records into figure-data tables.
    Analyze(AnalyzeArgs),
    /// Check the estimators against exact values on toy games.
    Selftest(SelftestArgs),
    /// Serve the oracle protocol with a mask-echo or toy game.
    ProtocolEcho(EchoArgs),
}

#[derive(Debug, Args)]
struct EngineFlags {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_choice::<EstimatorKind>)]
    estimator: Option<EstimatorKind>,
    #[arg(long, value_parser = parse_choice::<ContextMode>)]
    context_mode: Option<ContextMode>,
    #[arg(long, value_parser = parse_choice::<Normalization>)]
    normalization: Option<Normalization>,
    #[arg(long)]
    num_permutations: Option<u64>,
    #[arg(long)]
    antithetic: bool,
    #[arg(long)]
    exact_limit: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Worker threads; 0 uses every core. Does not affect outputs.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Args)]
struct ComputeArgs {
    #[command(flatten)]
    engine: EngineFlags,
    /// Instance manifest, one JSON object per line.
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_choice::<PairSelection>)]
    pairs: Option<PairSelection>,
    /// Default oracle: a command speaking the protocol on stdio.
    #[arg(long, num_args = 1.., allow_hyphen_values = true, conflicts_with = "oracle_url")]
    oracle_command: Option<Vec<String>>,
    /// Default oracle: an HTTP endpoint speaking the protocol.
    #[arg(long)]
    oracle_url: Option<String>,
    #[arg(long, value_parser = parse_choice::<OutputMode>)]
    output_mode: Option<OutputMode>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    retry: bool,
    #[arg(long)]
    truncation: Option<usize>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    engine: EngineFlags,
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    alignments: Option<PathBuf>,
    #[arg(long)]
    instances: Option<PathBuf>,
    /// Analyses to run; defaults to every one the inputs allow.
    #[arg(long, value_delimiter = ',', value_parser = parse_choice::<Analysis>)]
    analysis: Vec<Analysis>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated window half-widths in seconds.
    #[arg(long, value_parser = parse_deltas)]
    deltas: Option<Vec<f64>>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long, value_parser = parse_choice::<CurvePooling>)]
    pooling: Option<CurvePooling>,
    /// Sum window interactions instead of averaging them.
    #[arg(long)]
    window_sum: bool,
    #[arg(long, value_parser = parse_choice::<HeatmapSide>)]
    heatmap_side: Option<HeatmapSide>,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    trials: u64,
    #[arg(long, default_value_t = 2000)]
    num_permutations: u64,
}

#[derive(Debug, Args)]
struct EchoArgs {
    /// Mask length for the echo responder.
    #[arg(long, required_unless_present = "toy")]
    n_features: Option<usize>,
    /// Serve this toy game (JSON) instead of echoing masks.
    #[arg(long)]
    toy: Option<PathBuf>,
    /// Declare no batch support in the handshake.
    #[arg(long)]
    no_batch: bool,
    /// Serve HTTP on this address instead of stdio.
    #[arg(long)]
    http: Option<String>,
    #[arg(long)]
    max_requests: Option<usize>,
}

fn base_config(flags: &EngineFlags) -> Result<RunConfig, CliError> {
    let mut config = match &flags.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Usage {
                    code: "MissingPath",
                    message: format!("{} does not exist", path.display()),
                });
            }
            RunConfig::from_toml(&read_file(path)?)?
        }
        None => RunConfig::default(),
    };
    let e = &mut config.engine;
    if let Some(v) = flags.seed {
        e.seed = v;
        config.analysis.seed = v;
    }
    if let Some(v) = flags.estimator {
        e.estimator = v;
    }
    if let Some(v) = flags.context_mode {
        e.context_mode = v;
    }
    if let Some(v) = flags.normalization {
        e.normalization = v;
    }
    if let Some(v) = flags.num_permutations {
        e.num_permutations = v;
    }
    if flags.antithetic {
        e.antithetic = true;
    }
    if let Some(v) = flags.exact_limit {
        e.exact_limit = v;
    }
    if let Some(v) = flags.batch_size {
        e.batch_size = v;
    }
    config.threads = flags.threads;
    Ok(config)
}

fn run_compute(args: ComputeArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut config = base_config(&args.engine)?;
    if let Some(v) = args.pairs {
        config.pairs = v;
    }
    if let Some(cmd) = args.oracle_command {
        config.oracle = Some(OracleSpec::Subprocess { command: cmd });
    }
    if let Some(url) = args.oracle_url {
        config.oracle = Some(OracleSpec::Http { url });
    }
    if let Some(v) = args.output_mode {
        config.output_mode = v;
    }
    if let Some(v) = args.max_in_flight {
        config.max_in_flight = v;
    }
    if args.retry {
        config.retry = true;
    }
    if let Some(v) = args.truncation {
        config.analysis.truncation = v;
    }
    if !args.instances.exists() {
        return Err(CliError::Usage {
            code: "MissingPath",
            message: format!("{} does not exist", args.instances.display()),
        });
    }
    let cache_dir = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from);
    let manifest = cmd_compute(&config, &args.instances, &args.out, cache_dir.as_deref())?;
    let n_records: usize = manifest.instances.iter().map(|i| i.pairs).sum();
    let _ = writeln!(out, "{} instances, {n_records} records, config {}", manifest.instances.len(), manifest.config_hash);
    Ok(0)
}

fn run_analyze(args: AnalyzeArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut config = base_config(&args.engine)?;
    let a = &mut config.analysis;
    if let Some(v) = args.min_count {
        a.min_count = v;
    }
    if let Some(v) = args.alpha {
        a.alpha = v;
    }
    if let Some(v) = args.deltas {
        a.deltas = v;
    }
    if let Some(v) = args.resamples {
        a.resamples = v;
    }
    if let Some(v) = args.level {
        a.level = v;
    }
    if let Some(v) = args.pooling {
        a.pooling = v;
    }
    if args.window_sum {
        a.aggregation = WindowAggregation::Sum;
    }
    if let Some(v) = args.heatmap_side {
        a.heatmap_side = v;
    }
    let inputs = AnalyzeInputs {
        records: args.records,
        annotations: args.annotations,
        alignments: args.alignments,
        instances: args.instances,
        analyses: args.analysis,
    };
    for name in cmd_analyze(&config, &inputs, &args.out)? {
        let _ = writeln!(out, "{}", args.out.join(name).display());
    }
    Ok(0)
}

fn run_selftest_cmd(args: SelftestArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let report = run_selftest(&SelftestConfig {
        seed: args.seed,
        trials: args.trials,
        num_permutations: args.num_permutations,
        ..Default::default()
    });
    let _ = out.write_all(report.render().as_bytes());
    Ok(if report.all_passed() { 0 } else { 3 })
}

fn run_echo(args: EchoArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let supports_batch = !args.no_batch;
    let responder: Box<dyn Responder> = match &args.toy {
        Some(path) => {
            let spec: ToyGameSpec = serde_json::from_str(&read_file(path)?).map_err(|e| CliError::Usage {
                code: "BadConfig",
                message: format!("{}: {e}", path.display()),
            })?;
            Box::new(ToyResponder {
                game: spec.build()?,
                supports_batch,
            })
        }
        None => Box::new(EchoResponder {
            n_features: args.n_features.unwrap_or_default(),
            supports_batch,
        }),
    };
    let io_fail = |e: io::Error| CliError::Oracle {
        code: "BackendUnreachable".into(),
        message: e.to_string(),
    };
    match &args.http {
        Some(addr) => {
            let listener = std::net::TcpListener::bind(addr).map_err(io_fail)?;
            let local = listener.local_addr().map_err(io_fail)?;
            let _ = writeln!(out, "listening on http://{local}");
            let _ = out.flush();
            serve_http(responder.as_ref(), listener, args.max_requests).map_err(io_fail)?;
        }
        None => {
            let stdin = io::stdin();
            serve_stdio(responder.as_ref(), stdin.lock(), out).map_err(io_fail)?;
        }
    }
    Ok(0)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let _ = write!(err, "{e}");
            let usage = CliError::usage(e.kind().to_string());
            let _ = writeln!(err, "{}", usage.json_line());
            return usage.exit_code();
        }
    };
    let result = match cli.command {
        Command::Compute(a) => run_compute(a, out),
        Command::Analyze(a) => run_analyze(a, out),
        Command::Selftest(a) => run_selftest_cmd(a, out),
        Command::ProtocolEcho(a) => run_echo(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "{}", e.json_line());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_ignores_threads() {
        let a = RunConfig::default();
        let b = RunConfig { threads: 16, ..RunConfig::default() };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig {
            engine: EngineConfig { seed: 1, ..Default::default() },
            ..Default::default()
        };
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn config_from_toml() {
        let text = r#"
pairs = "consecutive"
[engine]
estimator = "exact"
seed = 7
[oracle]
kind = "toy"
n_features = 3
game = { kind = "majority", threshold = 2 }
[analysis]
min_count = 10
deltas = [0.05, 0.1]
"#;
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.engine.estimator, EstimatorKind::Exact);
        assert_eq!(c.pairs, PairSelection::Consecutive);
        assert_eq!(c.analysis.deltas, vec![0.05, 0.1]);
        assert!(matches!(c.oracle, Some(OracleSpec::Toy(_))));
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(CliError::Usage { .. })));
        let bad = RunConfig {
            analysis: AnalysisConfig { truncation: 1, ..Default::default() },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn error_lines_are_json() {
        let e: CliError = OracleError::BackendUnreachable("gone".into()).into();
        assert_eq!(e.exit_code(), 2);
        let v: serde_json::Value = serde_json::from_str(&e.json_line()).unwrap();
        assert_eq!(v["error"], "BackendUnreachable");
        assert_eq!(v["exit_code"], 2);
        let e: CliError = TextError::EmptyInput.into();
        assert_eq!((e.exit_code(), e.code()), (3, "EmptyInput"));
    }

    #[test]
    fn cache_files_are_distinct_and_safe() {
        let dir = Path::new("/tmp");
        let a = cache_file(dir, "a/b");
        let b = cache_file(dir, "a_b");
        assert_ne!(a, b);
        assert!(!a.file_name().unwrap().to_string_lossy().contains('/'));
    }

    #[test]
    fn choices_parse_with_dashes() {
        assert_eq!(parse_choice::<ContextMode>("empty-context"), Ok(ContextMode::EmptyContext));
        assert_eq!(parse_choice::<Analysis>("mwe"), Ok(Analysis::Mwe));
        assert!(parse_choice::<Analysis>("nope").is_err());
        assert_eq!(parse_deltas("0.02, 0.1"), Ok(vec![0.02, 0.1]));
    }
}
