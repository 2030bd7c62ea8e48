//! Phone alignments, boundary windows and interval-aggregated interactions.

mod phones;
mod textgrid;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use thiserror::Error;

use crate::engine::{self, EngineError, StiiConfig};
use crate::oracle::OracleHandle;
use crate::record::{Instance, InteractionRecord};
use crate::stats::{self, BootstrapCI};
use crate::text::{stratum_seed, BootstrapConfig};

pub use phones::{classify_phone, is_silence, Manner, PhoneClass, PhoneTable, Place, PHONE_TABLE_VERSION};
pub use textgrid::{parse_textgrid, Interval, TextGrid, Tier};

/// Timestamps within this many seconds of a window edge count as inside.
pub const BOUNDARY_EPS: f64 = 1e-9;
pub const DEFAULT_DELTAS: [f64; 7] = [0.02, 0.04, 0.06, 0.08, 0.10, 0.15, 0.20];
pub const HEATMAP_DELTA: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpeechError {
    #[error("alignment parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("segments of {file_id} overlap or are out of order at {at}s")]
    Overlap { file_id: String, at: f64 },
    #[error("unknown phone label {0:?}")]
    UnknownPhoneLabel(String),
    #[error("phone table: {0}")]
    TableFormat(String),
    #[error("window has no member pairs")]
    EmptyWindow,
    #[error("no interaction record for pair ({0}, {1})")]
    MissingPair(usize, usize),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhoneSegment {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
    pub file_id: String,
}

/// Segments of the `phones` tier, validated against `table`.
pub fn load_alignment_with(text: &str, file_id: &str, table: &PhoneTable) -> Result<Vec<PhoneSegment>, SpeechError> {
    let grid = parse_textgrid(text)?;
    let tier = grid
        .tiers
        .iter()
        .find(|t| t.is_interval && t.name.eq_ignore_ascii_case("phones"))
        .ok_or_else(|| SpeechError::Parse {
            line: 0,
            message: "no interval tier named \"phones\"".into(),
        })?;
    let mut segments: Vec<PhoneSegment> = Vec::with_capacity(tier.intervals.len());
    for iv in &tier.intervals {
        if !(iv.xmin < iv.xmax) {
            return Err(SpeechError::Parse {
                line: 0,
                message: format!("interval {:?} has start {} not before end {}", iv.text, iv.xmin, iv.xmax),
            });
        }
        if let Some(prev) = segments.last() {
            if iv.xmin < prev.end_s - BOUNDARY_EPS {
                return Err(SpeechError::Overlap {
                    file_id: file_id.into(),
                    at: iv.xmin,
                });
            }
        }
        if !is_silence(&iv.text) {
            table.classify(&iv.text)?;
        }
        segments.push(PhoneSegment {
            label: iv.text.trim().to_string(),
            start_s: iv.xmin,
            end_s: iv.xmax,
            file_id: file_id.into(),
        });
    }
    Ok(segments)
}

pub fn load_alignment(text: &str, file_id: &str) -> Result<Vec<PhoneSegment>, SpeechError> {
    load_alignment_with(text, file_id, PhoneTable::builtin())
}

/// Reads an alignment file, accepting UTF-8 or BOM-marked UTF-16. The file
/// stem becomes the file id.
pub fn load_alignment_file(path: &Path) -> Result<Vec<PhoneSegment>, SpeechError> {
    let io = |e: std::io::Error| SpeechError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let bytes = std::fs::read(path).map_err(io)?;
    let text = decode(&bytes).ok_or_else(|| SpeechError::Io {
        path: path.display().to_string(),
        message: "not UTF-8 or UTF-16 text".into(),
    })?;
    let file_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    load_alignment(&text, &file_id)
}

fn decode(bytes: &[u8]) -> Option<String> {
    let utf16 = |big: bool| {
        let units: Vec<u16> = bytes[2..]
            .chunks_exact(2)
            .map(|c| if big { u16::from_be_bytes([c[0], c[1]]) } else { u16::from_le_bytes([c[0], c[1]]) })
            .collect();
        String::from_utf16(&units).ok()
    };
    match bytes {
        [0xFF, 0xFE, ..] => utf16(false),
        [0xFE, 0xFF, ..] => utf16(true),
        _ => String::from_utf8(bytes.to_vec()).ok(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryWindow {
    pub boundary_time: f64,
    pub left_label: String,
    pub right_label: String,
    pub delta: f64,
    /// Consecutive `(t, t + 1)` pairs, earliest first.
    pub member_pairs: Vec<(usize, usize)>,
}

impl BoundaryWindow {
    /// Empty windows are kept as data and flagged by this.
    pub fn is_empty(&self) -> bool {
        self.member_pairs.is_empty()
    }
}

/// Consecutive pairs whose left timestamp lies in `[t_b - delta, t_b + delta]`.
/// The first pair starts at the earliest timestamp not before `t_b - delta`.
pub fn window_pairs(feature_times: &[f64], boundary_time: f64, delta: f64) -> Vec<(usize, usize)> {
    let lo = boundary_time - delta - BOUNDARY_EPS;
    let hi = boundary_time + delta + BOUNDARY_EPS;
    let first = feature_times.partition_point(|&t| t < lo);
    (first..feature_times.len().saturating_sub(1))
        .take_while(|&t| feature_times[t] <= hi)
        .map(|t| (t, t + 1))
        .collect()
}

/// One window per internal boundary between consecutive segments.
pub fn boundary_windows(segments: &[PhoneSegment], feature_times: &[f64], delta: f64) -> Vec<BoundaryWindow> {
    segments
        .windows(2)
        .map(|w| BoundaryWindow {
            boundary_time: w[0].end_s,
            left_label: w[0].label.clone(),
            right_label: w[1].label.clone(),
            delta,
            member_pairs: window_pairs(feature_times, w[0].end_s, delta),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowAggregation {
    #[default]
    Mean,
    Sum,
}

fn aggregate(window: &BoundaryWindow, aggregation: WindowAggregation, mut stii_of: impl FnMut((usize, usize)) -> Result<f64, SpeechError>) -> Result<f64, SpeechError> {
    if window.is_empty() {
        return Err(SpeechError::EmptyWindow);
    }
    let mut total = 0.0;
    for &pair in &window.member_pairs {
        total += stii_of(pair)?;
    }
    Ok(match aggregation {
        WindowAggregation::Mean => total / window.member_pairs.len() as f64,
        WindowAggregation::Sum => total,
    })
}

/// Aggregated STII of the window's pairs, computed through the engine.
pub fn window_stii(oracle: &OracleHandle, instance: &Instance, window: &BoundaryWindow, config: &StiiConfig, aggregation: WindowAggregation) -> Result<f64, SpeechError> {
    aggregate(window, aggregation, |pair| Ok(engine::stii(oracle, instance, pair, config)?.stii))
}

/// Aggregated STII of the window's pairs, read from computed records.
pub fn window_stii_from_records(window: &BoundaryWindow, stii_by_pair: &HashMap<(usize, usize), f64>, aggregation: WindowAggregation) -> Result<f64, SpeechError> {
    aggregate(window, aggregation, |pair| {
        stii_by_pair.get(&pair).copied().ok_or(SpeechError::MissingPair(pair.0, pair.1))
    })
}

pub fn stii_by_pair<'a>(records: impl IntoIterator<Item = &'a InteractionRecord>) -> HashMap<(usize, usize), f64> {
    records.into_iter().map(|r| (r.pair, r.stii)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowStii {
    pub window: BoundaryWindow,
    pub stii: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryType {
    /// A consonant and a vowel, in either order.
    ConsonantVowel,
    ConsonantConsonant,
    VowelVowel,
    SilenceAdjacent,
}

impl BoundaryType {
    pub const ALL: [BoundaryType; 4] = [
        BoundaryType::ConsonantVowel,
        BoundaryType::ConsonantConsonant,
        BoundaryType::VowelVowel,
        BoundaryType::SilenceAdjacent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryType::ConsonantVowel => "consonant-vowel",
            BoundaryType::ConsonantConsonant => "consonant-consonant",
            BoundaryType::VowelVowel => "vowel-vowel",
            BoundaryType::SilenceAdjacent => "silence-adjacent",
        }
    }

    /// Whether the type is part of the consonant/vowel contrast proper.
    pub fn contrasted(self) -> bool {
        matches!(self, BoundaryType::ConsonantVowel | BoundaryType::ConsonantConsonant)
    }
}

pub fn boundary_type(left: &str, right: &str, table: &PhoneTable) -> Result<BoundaryType, SpeechError> {
    if is_silence(left) || is_silence(right) {
        return Ok(BoundaryType::SilenceAdjacent);
    }
    let l = table.classify(left)?.is_vowel;
    let r = table.classify(right)?.is_vowel;
    Ok(match (l, r) {
        (true, true) => BoundaryType::VowelVowel,
        (false, false) => BoundaryType::ConsonantConsonant,
        _ => BoundaryType::ConsonantVowel,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastPoint {
    pub delta: f64,
    pub boundary_type: BoundaryType,
    pub count: usize,
    pub mean: Option<f64>,
    pub ci: Option<BootstrapCI>,
}

impl ContrastPoint {
    /// No windows of this type at this delta.
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

fn same_delta(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

/// Mean window STII per delta and boundary type, with bootstrap CIs. Every
/// (delta, type) combination is emitted; empty ones carry no mean.
pub fn boundary_contrast(windows: &[WindowStii], table: &PhoneTable, deltas: &[f64], config: &BootstrapConfig) -> Result<Vec<ContrastPoint>, SpeechError> {
    let mut out = Vec::with_capacity(deltas.len() * BoundaryType::ALL.len());
    for (di, &delta) in deltas.iter().enumerate() {
        let mut by_type: HashMap<BoundaryType, Vec<f64>> = HashMap::new();
        for w in windows.iter().filter(|w| same_delta(w.window.delta, delta)) {
            let kind = boundary_type(&w.window.left_label, &w.window.right_label, table)?;
            by_type.entry(kind).or_default().push(w.stii);
        }
        for (ki, kind) in BoundaryType::ALL.into_iter().enumerate() {
            let values = by_type.remove(&kind).unwrap_or_default();
            let ci = if values.is_empty() {
                None
            } else {
                let seed = stratum_seed(config.seed, di as u64, ki as u64);
                Some(stats::bootstrap_mean_ci(&values, config.resamples, config.level, seed).map_err(|e| SpeechError::TableFormat(e.to_string()))?)
            };
            out.push(ContrastPoint {
                delta,
                boundary_type: kind,
                count: values.len(),
                mean: ci.map(|c| c.mean),
                ci,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapSide {
    /// Windows where the consonant is on either side of the boundary.
    #[default]
    Both,
    /// Only windows where the consonant precedes the boundary.
    Left,
    /// Only windows where the consonant follows the boundary.
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatCell {
    pub manner: Manner,
    pub place: Place,
    pub voiced: bool,
    pub count: usize,
    pub mean: Option<f64>,
}

/// Mean window STII per (manner, place, voicing) consonant cell, over
/// windows at `delta`. Every cell the table can fill is emitted.
pub fn consonant_heatmap(windows: &[WindowStii], table: &PhoneTable, delta: f64, side: HeatmapSide) -> Result<Vec<HeatCell>, SpeechError> {
    type Key = (Manner, Place, bool);
    let cells: BTreeSet<Key> = table
        .classes()
        .filter_map(|c| Some((c.manner?, c.place?, c.voiced)))
        .collect();
    let mut sums: HashMap<Key, (f64, usize)> = HashMap::new();
    for w in windows.iter().filter(|w| same_delta(w.window.delta, delta)) {
        let mut labels = Vec::with_capacity(2);
        if side != HeatmapSide::Right {
            labels.push(&w.window.left_label);
        }
        if side != HeatmapSide::Left {
            labels.push(&w.window.right_label);
        }
        let mut keys = BTreeSet::new();
        for label in labels {
            if is_silence(label) {
                continue;
            }
            let c = table.classify(label)?;
            if let (Some(m), Some(p)) = (c.manner, c.place) {
                keys.insert((m, p, c.voiced));
            }
        }
        for key in keys {
            let e = sums.entry(key).or_default();
            e.0 += w.stii;
            e.1 += 1;
        }
    }
    Ok(cells
        .into_iter()
        .map(|key @ (manner, place, voiced)| {
            let (sum, count) = sums.get(&key).copied().unwrap_or_default();
            HeatCell {
                manner,
                place,
                voiced,
                count,
                mean: (count > 0).then(|| sum / count as f64),
            }
        })
        .collect())
}
