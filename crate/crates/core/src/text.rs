//! Text analyses joining interaction records with token annotations:
//! positional-distance curves, the syntactic-distance correlation grid and
//! the multiword-expression comparison.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::nearest_target_distance;
use crate::record::{InteractionRecord, SCHEMA_VERSION};
use crate::stats::{self, BootstrapCI, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextError {
    #[error("pair ({0}, {1}) is not ordered")]
    OrderViolation(usize, usize),
    #[error("token index {index} out of range for {len} tokens")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dependency heads of {0} contain a cycle")]
    Cycle(String),
    #[error("overlap group {group} in {instance} is not contiguous")]
    NonContiguousOverlap { instance: String, group: u32 },
    #[error("annotation arrays of {0} disagree in length")]
    LengthMismatch(String),
    #[error("no records to analyze")]
    EmptyInput,
    #[error("malformed annotation line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("annotation schema_version {0} unsupported")]
    SchemaMismatch(u32),
    #[error("no annotations for any analyzed record")]
    MissingAnnotations,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MweStrength {
    Strong,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MweTag {
    pub group: u32,
    pub strength: MweStrength,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenAnnotation {
    pub token_index: usize,
    pub head_index: Option<usize>,
    pub mwe_group: Option<MweTag>,
    pub overlap_group: Option<u32>,
}

/// Annotations of one sentence, validated.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceAnnotation {
    pub instance_id: String,
    pub tokens: Vec<String>,
    pub target_index: Option<usize>,
    pub annotations: Vec<TokenAnnotation>,
}

/// One line of the annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationLine {
    pub schema_version: u32,
    pub instance_id: String,
    pub tokens: Vec<String>,
    pub heads: Vec<Option<usize>>,
    #[serde(default)]
    pub mwe: Vec<Option<MweTag>>,
    #[serde(default)]
    pub overlap: Vec<Option<u32>>,
    #[serde(default)]
    pub target_index: Option<usize>,
}

impl SentenceAnnotation {
    pub fn from_line(line: AnnotationLine) -> Result<Self, TextError> {
        if line.schema_version != SCHEMA_VERSION {
            return Err(TextError::SchemaMismatch(line.schema_version));
        }
        let n = line.tokens.len();
        let id = line.instance_id.clone();
        let mwe = if line.mwe.is_empty() { vec![None; n] } else { line.mwe };
        let overlap = if line.overlap.is_empty() { vec![None; n] } else { line.overlap };
        if line.heads.len() != n || mwe.len() != n || overlap.len() != n {
            return Err(TextError::LengthMismatch(id));
        }
        let annotations = (0..n)
            .map(|i| TokenAnnotation {
                token_index: i,
                head_index: line.heads[i],
                mwe_group: mwe[i],
                overlap_group: overlap[i],
            })
            .collect();
        let sentence = Self {
            instance_id: line.instance_id,
            tokens: line.tokens,
            target_index: line.target_index,
            annotations,
        };
        sentence.validate()?;
        Ok(sentence)
    }

    pub fn to_line(&self) -> AnnotationLine {
        AnnotationLine {
            schema_version: SCHEMA_VERSION,
            instance_id: self.instance_id.clone(),
            tokens: self.tokens.clone(),
            heads: self.annotations.iter().map(|a| a.head_index).collect(),
            mwe: self.annotations.iter().map(|a| a.mwe_group).collect(),
            overlap: self.annotations.iter().map(|a| a.overlap_group).collect(),
            target_index: self.target_index,
        }
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    /// Heads in range, head graph acyclic, overlap groups contiguous.
    pub fn validate(&self) -> Result<(), TextError> {
        let n = self.annotations.len();
        for a in &self.annotations {
            if let Some(h) = a.head_index {
                if h >= n {
                    return Err(TextError::IndexOutOfRange { index: h, len: n });
                }
            }
        }
        for start in 0..n {
            let mut cur = start;
            for _ in 0..=n {
                match self.annotations[cur].head_index {
                    Some(h) => cur = h,
                    None => break,
                }
                if cur == start {
                    return Err(TextError::Cycle(self.instance_id.clone()));
                }
            }
            if self.annotations[cur].head_index.is_some() {
                return Err(TextError::Cycle(self.instance_id.clone()));
            }
        }
        let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
        for (i, a) in self.annotations.iter().enumerate() {
            if let Some(g) = a.overlap_group {
                if let Some(&last) = seen.get(&g) {
                    if last + 1 != i {
                        return Err(TextError::NonContiguousOverlap {
                            instance: self.instance_id.clone(),
                            group: g,
                        });
                    }
                }
                seen.insert(g, i);
            }
        }
        Ok(())
    }
}

pub fn read_annotations(text: &str) -> Result<Vec<SentenceAnnotation>, TextError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line: AnnotationLine = serde_json::from_str(l).map_err(|e| TextError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            SentenceAnnotation::from_line(line)
        })
        .collect()
}

pub fn write_annotations(sentences: &[SentenceAnnotation]) -> String {
    sentences
        .iter()
        .map(|s| serde_json::to_string(&s.to_line()).expect("annotation serializes") + "\n")
        .collect()
}

/// Interacting pair distance: `t2 - t1`.
pub fn pair_distance(t1: usize, t2: usize, _target: usize) -> Result<u64, TextError> {
    if t1 >= t2 {
        return Err(TextError::OrderViolation(t1, t2));
    }
    Ok((t2 - t1) as u64)
}

/// Distance from the nearer pair member to the predicted position.
pub fn prediction_distance(t1: usize, t2: usize, target: usize) -> u64 {
    nearest_target_distance(t1, t2, target)
}

/// Edges on the shortest undirected dependency path between two tokens.
/// Tokens of one overlap group count as a single node. `None` when the
/// tokens sit in different trees.
pub fn syntactic_distance(sentence: &SentenceAnnotation, t1: usize, t2: usize) -> Result<Option<u64>, TextError> {
    let n = sentence.len();
    for t in [t1, t2] {
        if t >= n {
            return Err(TextError::IndexOutOfRange { index: t, len: n });
        }
    }
    let mut adjacency: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];
    for a in &sentence.annotations {
        if let Some(h) = a.head_index {
            adjacency[a.token_index].push((h, 1));
            adjacency[h].push((a.token_index, 1));
        }
    }
    for w in sentence.annotations.windows(2) {
        if w[0].overlap_group.is_some() && w[0].overlap_group == w[1].overlap_group {
            adjacency[w[0].token_index].push((w[1].token_index, 0));
            adjacency[w[1].token_index].push((w[0].token_index, 0));
        }
    }
    // 0-1 breadth-first search
    let mut dist = vec![u64::MAX; n];
    let mut queue = VecDeque::new();
    dist[t1] = 0;
    queue.push_back(t1);
    while let Some(u) = queue.pop_front() {
        for &(v, w) in &adjacency[u] {
            if dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
                if w == 0 {
                    queue.push_front(v);
                } else {
                    queue.push_back(v);
                }
            }
        }
    }
    Ok((dist[t2] != u64::MAX).then_some(dist[t2]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvePooling {
    /// Every record weighs the same.
    #[default]
    Pooled,
    /// Mean within each instance first, then across instances.
    PerInstance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub distance: u64,
    pub mean: f64,
    pub count: usize,
    pub low_count: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceCurves {
    pub by_pair_distance: Vec<CurvePoint>,
    pub by_prediction_distance: Vec<CurvePoint>,
}

pub const DEFAULT_MIN_COUNT: usize = 50;
pub const DEFAULT_ALPHA: f64 = 0.05;

fn curve(records: &[InteractionRecord], key: impl Fn(&InteractionRecord) -> Option<u64>, min_count: usize, pooling: CurvePooling) -> Vec<CurvePoint> {
    // distance -> instance -> values, in record order
    let mut bins: BTreeMap<u64, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for r in records {
        if let Some(d) = key(r) {
            bins.entry(d).or_default().entry(&r.instance_id).or_default().push(r.stii);
        }
    }
    bins.into_iter()
        .map(|(distance, per_instance)| {
            let count: usize = per_instance.values().map(Vec::len).sum();
            let mean = match pooling {
                CurvePooling::Pooled => {
                    // record order, not instance order
                    let total: f64 = records
                        .iter()
                        .filter(|r| key(r) == Some(distance))
                        .map(|r| r.stii)
                        .sum();
                    total / count as f64
                }
                CurvePooling::PerInstance => {
                    let means: Vec<f64> = per_instance
                        .values()
                        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                        .collect();
                    means.iter().sum::<f64>() / means.len() as f64
                }
            };
            CurvePoint {
                distance,
                mean,
                count,
                low_count: count < min_count,
            }
        })
        .collect()
}

/// Mean STII per interacting pair distance and per prediction distance.
/// Bins under `min_count` are kept and flagged.
pub fn distance_curves(records: &[InteractionRecord], min_count: usize, pooling: CurvePooling) -> Result<DistanceCurves, TextError> {
    if records.is_empty() {
        return Err(TextError::EmptyInput);
    }
    Ok(DistanceCurves {
        by_pair_distance: curve(records, |r| r.d_i, min_count, pooling),
        by_prediction_distance: curve(records, |r| r.d_p, min_count, pooling),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub min_count: usize,
    pub alpha: f64,
    /// Seed of the permutation test used when a cell has fewer than 20 points.
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            min_count: DEFAULT_MIN_COUNT,
            alpha: DEFAULT_ALPHA,
            seed: stats::DEFAULT_PERMUTATION_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StratumKey {
    pub d_i: u64,
    pub d_p: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenReason {
    InsufficientData,
    Degenerate,
    NotSignificant,
    NoDirectModifier,
}

impl HiddenReason {
    pub fn as_str(self) -> &'static str {
        match self {
            HiddenReason::InsufficientData => "insufficient data",
            HiddenReason::Degenerate => "degenerate",
            HiddenReason::NotSignificant => "not significant",
            HiddenReason::NoDirectModifier => "no direct modifier",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub key: StratumKey,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub n: usize,
    pub shown: bool,
    pub hidden_reason: Option<HiddenReason>,
}

/// Records left out of the join, by cause.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinDiagnostics {
    pub unannotated: usize,
    pub unreachable: usize,
    pub no_target: usize,
    pub out_of_range: usize,
    pub rare_syntactic_distance: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntaxGrid {
    pub cells: Vec<GridCell>,
    pub diagnostics: JoinDiagnostics,
    /// Syntactic distances with at least `min_count` points.
    pub kept_distances: Vec<u64>,
}

/// A record joined with its sentence.
struct Joined<'a> {
    key: StratumKey,
    record: &'a InteractionRecord,
    sentence: &'a SentenceAnnotation,
}

fn index_annotations(annotations: &[SentenceAnnotation]) -> HashMap<&str, &SentenceAnnotation> {
    annotations.iter().map(|s| (s.instance_id.as_str(), s)).collect()
}

fn join<'a>(records: &'a [InteractionRecord], annotations: &'a [SentenceAnnotation], diag: &mut JoinDiagnostics) -> Vec<Joined<'a>> {
    let by_id = index_annotations(annotations);
    let mut joined = Vec::new();
    for r in records {
        let Some(sentence) = by_id.get(r.instance_id.as_str()) else {
            diag.unannotated += 1;
            continue;
        };
        let (a, b) = r.pair;
        if b >= sentence.len() {
            diag.out_of_range += 1;
            continue;
        }
        let d_p = match (r.d_p, sentence.target_index) {
            (Some(d), _) => d,
            (None, Some(t)) => prediction_distance(a, b, t),
            (None, None) => {
                diag.no_target += 1;
                continue;
            }
        };
        joined.push(Joined {
            key: StratumKey {
                d_i: (b - a) as u64,
                d_p,
            },
            record: r,
            sentence,
        });
    }
    joined
}

/// Spearman correlation of syntactic distance with STII in each
/// (d_i, d_p) stratum, with the display filters applied.
pub fn syntax_correlation_grid(records: &[InteractionRecord], annotations: &[SentenceAnnotation], config: &GridConfig) -> Result<SyntaxGrid, TextError> {
    if records.is_empty() {
        return Err(TextError::EmptyInput);
    }
    let mut diagnostics = JoinDiagnostics::default();
    let joined = join(records, annotations, &mut diagnostics);
    if joined.is_empty() && diagnostics.unannotated == records.len() {
        return Err(TextError::MissingAnnotations);
    }
    let mut points: Vec<(StratumKey, u64, f64)> = Vec::new();
    for j in &joined {
        match syntactic_distance(j.sentence, j.record.pair.0, j.record.pair.1)? {
            Some(d) => points.push((j.key, d, j.record.stii)),
            None => diagnostics.unreachable += 1,
        }
    }
    let mut synd_counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &(_, d, _) in &points {
        *synd_counts.entry(d).or_default() += 1;
    }
    let kept: BTreeSet<u64> = synd_counts
        .iter()
        .filter(|(_, &c)| c >= config.min_count)
        .map(|(&d, _)| d)
        .collect();
    let direct_di: BTreeSet<u64> = points.iter().filter(|p| p.1 == 1).map(|p| p.0.d_i).collect();

    let mut cells: BTreeMap<StratumKey, Vec<(f64, f64)>> = BTreeMap::new();
    for &(key, d, stii) in &points {
        let cell = cells.entry(key).or_default();
        if kept.contains(&d) {
            cell.push((d as f64, stii));
        } else {
            diagnostics.rare_syntactic_distance += 1;
        }
    }

    let cells = cells
        .into_iter()
        .map(|(key, pts)| {
            let n = pts.len();
            let hidden = |reason, rho, p| GridCell {
                key,
                rho,
                p_value: p,
                n,
                shown: false,
                hidden_reason: Some(reason),
            };
            if n < config.min_count.max(3) {
                return Ok(hidden(HiddenReason::InsufficientData, None, None));
            }
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let corr = match stats::spearman_seeded(&xs, &ys, config.seed) {
                Ok(c) => c,
                Err(StatsError::DegenerateInput) => return Ok(hidden(HiddenReason::Degenerate, None, None)),
                Err(e) => return Err(TextError::Stats(e)),
            };
            let (rho, p) = (Some(corr.rho), Some(corr.p_value));
            if corr.p_value >= config.alpha {
                return Ok(hidden(HiddenReason::NotSignificant, rho, p));
            }
            if !direct_di.contains(&key.d_i) {
                return Ok(hidden(HiddenReason::NoDirectModifier, rho, p));
            }
            Ok(GridCell {
                key,
                rho,
                p_value: p,
                n,
                shown: true,
                hidden_reason: None,
            })
        })
        .collect::<Result<Vec<_>, TextError>>()?;
    Ok(SyntaxGrid {
        cells,
        diagnostics,
        kept_distances: kept.into_iter().collect(),
    })
}

/// MWE strength when both tokens share an MWE group.
pub fn shared_mwe(sentence: &SentenceAnnotation, a: usize, b: usize) -> Option<MweStrength> {
    let ta = sentence.annotations.get(a)?.mwe_group?;
    let tb = sentence.annotations.get(b)?.mwe_group?;
    (ta.group == tb.group).then_some(ta.strength)
}

/// Tags such as `mwe:strong` and `syntactic_distance:2` for a pair.
pub fn stratum_tags(sentence: &SentenceAnnotation, a: usize, b: usize) -> Vec<String> {
    let mut tags = Vec::new();
    if let Some(s) = shared_mwe(sentence, a, b) {
        tags.push(format!("mwe:{}", if s == MweStrength::Strong { "strong" } else { "weak" }));
    }
    if let Ok(Some(d)) = syntactic_distance(sentence, a, b) {
        tags.push(format!("syntactic_distance:{d}"));
    }
    tags
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub mean: f64,
    pub count: usize,
    pub ci: BootstrapCI,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MweCell {
    pub key: StratumKey,
    /// `None` marks a gap: no pairs of that kind in the stratum.
    pub strong: Option<SeriesPoint>,
    pub weak: Option<SeriesPoint>,
    pub baseline: Option<SeriesPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: stats::DEFAULT_RESAMPLES,
            level: stats::DEFAULT_LEVEL,
            seed: 0,
        }
    }
}

/// Seed for one stratum, shared by its series so identical populations get
/// identical intervals.
pub(crate) fn stratum_seed(base: u64, a: u64, b: u64) -> u64 {
    base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

fn series(values: &[f64], config: &BootstrapConfig, seed: u64) -> Result<Option<SeriesPoint>, TextError> {
    if values.is_empty() {
        return Ok(None);
    }
    let ci = stats::bootstrap_mean_ci(values, config.resamples, config.level, seed)?;
    Ok(Some(SeriesPoint {
        mean: ci.mean,
        count: values.len(),
        ci,
    }))
}

/// Strong-MWE, weak-MWE and all-pairs mean STII per (d_p, d_i) stratum.
/// The baseline includes MWE pairs.
pub fn mwe_comparison(records: &[InteractionRecord], annotations: &[SentenceAnnotation], config: &BootstrapConfig) -> Result<Vec<MweCell>, TextError> {
    if records.is_empty() {
        return Err(TextError::EmptyInput);
    }
    let mut diagnostics = JoinDiagnostics::default();
    let joined = join(records, annotations, &mut diagnostics);
    if joined.is_empty() && diagnostics.unannotated == records.len() {
        return Err(TextError::MissingAnnotations);
    }
    #[derive(Default)]
    struct Buckets {
        strong: Vec<f64>,
        weak: Vec<f64>,
        all: Vec<f64>,
    }
    // ordered by d_p facet, then d_i
    let mut strata: BTreeMap<(u64, u64), Buckets> = BTreeMap::new();
    for j in &joined {
        let b = strata.entry((j.key.d_p, j.key.d_i)).or_default();
        b.all.push(j.record.stii);
        match shared_mwe(j.sentence, j.record.pair.0, j.record.pair.1) {
            Some(MweStrength::Strong) => b.strong.push(j.record.stii),
            Some(MweStrength::Weak) => b.weak.push(j.record.stii),
            None => {}
        }
    }
    strata
        .into_iter()
        .map(|((d_p, d_i), b)| {
            let seed = stratum_seed(config.seed, d_p, d_i);
            Ok(MweCell {
                key: StratumKey { d_i, d_p },
                strong: series(&b.strong, config, seed)?,
                weak: series(&b.weak, config, seed)?,
                baseline: series(&b.all, config, seed)?,
            })
        })
        .collect()
}
