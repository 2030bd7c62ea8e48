//! Shared data model: analysis instances, coalition masks, oracle value
//! vectors and the line-delimited interaction record format.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version written into every record line and checked on read.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("instance needs at least 2 features, got {n_features}")]
    ZeroFeatures { n_features: usize },
    #[error("output_dim must be at least 1")]
    ZeroOutputDim,
    #[error("target index {target} out of range for {n_features} features")]
    BadTargetIndex { target: usize, n_features: usize },
    #[error("feature times must be strictly increasing (index {index})")]
    NonIncreasingTimes { index: usize },
    #[error("speech instance is missing feature_times")]
    MissingTimesForSpeech,
    #[error("feature_times given for a {0} instance; only speech instances carry times")]
    UnexpectedTimes(Modality),
    #[error("expected {expected} feature times, got {got}")]
    TimesLengthMismatch { expected: usize, got: usize },
    #[error("feature time at index {index} is not finite")]
    NonFiniteTime { index: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("malformed record line: {0}")]
    Malformed(String),
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    SchemaMismatch { found: u32 },
    #[error("invalid record: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Speech,
    Toy,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Speech => "speech",
            Modality::Toy => "toy",
        })
    }
}

/// Untrusted description of an instance, as read from a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub instance_id: String,
    pub n_features: usize,
    pub output_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_index: Option<usize>,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_times: Option<Vec<f64>>,
}

/// One validated analysis unit. Construct through [`validate_instance`].
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    id: String,
    n_features: usize,
    output_dim: usize,
    target_index: Option<usize>,
    modality: Modality,
    feature_times: Option<Vec<f64>>,
}

impl Instance {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Position of the predicted token. `n_features` denotes the next position.
    pub fn target_index(&self) -> Option<usize> {
        self.target_index
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn feature_times(&self) -> Option<&[f64]> {
        self.feature_times.as_deref()
    }

    pub fn to_spec(&self) -> InstanceSpec {
        InstanceSpec {
            instance_id: self.id.clone(),
            n_features: self.n_features,
            output_dim: self.output_dim,
            target_index: self.target_index,
            modality: self.modality,
            feature_times: self.feature_times.clone(),
        }
    }

    /// Shorthand for a toy instance, panicking on invalid sizes.
    pub fn toy(id: impl Into<String>, n_features: usize, output_dim: usize) -> Self {
        validate_instance(InstanceSpec {
            instance_id: id.into(),
            n_features,
            output_dim,
            target_index: None,
            modality: Modality::Toy,
            feature_times: None,
        })
        .expect("invalid toy instance")
    }
}

pub fn validate_instance(candidate: InstanceSpec) -> Result<Instance, InstanceError> {
    let n = candidate.n_features;
    if n < 2 {
        return Err(InstanceError::ZeroFeatures { n_features: n });
    }
    if candidate.output_dim == 0 {
        return Err(InstanceError::ZeroOutputDim);
    }
    if let Some(target) = candidate.target_index {
        if target > n {
            return Err(InstanceError::BadTargetIndex { target, n_features: n });
        }
    }
    match (&candidate.feature_times, candidate.modality) {
        (None, Modality::Speech) => return Err(InstanceError::MissingTimesForSpeech),
        (Some(_), m @ (Modality::Text | Modality::Toy)) => {
            return Err(InstanceError::UnexpectedTimes(m))
        }
        (Some(times), Modality::Speech) => {
            if times.len() != n {
                return Err(InstanceError::TimesLengthMismatch {
                    expected: n,
                    got: times.len(),
                });
            }
            if let Some(index) = times.iter().position(|t| !t.is_finite()) {
                return Err(InstanceError::NonFiniteTime { index });
            }
            if let Some(w) = times.windows(2).position(|w| w[1] <= w[0]) {
                return Err(InstanceError::NonIncreasingTimes { index: w + 1 });
            }
        }
        (None, _) => {}
    }
    Ok(Instance {
        id: candidate.instance_id,
        n_features: n,
        output_dim: candidate.output_dim,
        target_index: candidate.target_index,
        modality: candidate.modality,
        feature_times: candidate.feature_times,
    })
}

/// Presence bits over an instance's features; 1 keeps the feature, 0 ablates it.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoalitionMask {
    len: usize,
    words: Vec<u64>,
}

impl CoalitionMask {
    pub fn empty(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    /// The unablated input.
    pub fn full(len: usize) -> Self {
        let mut mask = Self::empty(len);
        for i in 0..len {
            mask.insert(i);
        }
        mask
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Self::empty(len);
        for i in indices {
            mask.insert(i);
        }
        mask
    }

    /// Low `len` bits of `bits`, bit i = feature i.
    pub fn from_u64(len: usize, bits: u64) -> Self {
        assert!(len <= 64, "from_u64 supports at most 64 features");
        let mut mask = Self::empty(len);
        if len > 0 {
            let keep = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
            mask.words[0] = bits & keep;
        }
        mask
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, i: usize) -> bool {
        assert!(i < self.len, "feature {i} out of range");
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.len, "feature {i} out of range");
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        assert!(i < self.len, "feature {i} out of range");
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn with(&self, i: usize) -> Self {
        let mut m = self.clone();
        m.insert(i);
        m
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.contains(i))
    }

    /// Wire encoding: one '0'/'1' per feature, leftmost is feature 0.
    pub fn to_bit_string(&self) -> String {
        (0..self.len)
            .map(|i| if self.contains(i) { '1' } else { '0' })
            .collect()
    }

    pub fn parse_bit_string(s: &str) -> Option<Self> {
        let mut mask = Self::empty(s.len());
        for (i, c) in s.chars().enumerate() {
            match c {
                '1' => mask.insert(i),
                '0' => {}
                _ => return None,
            }
        }
        Some(mask)
    }
}

impl fmt::Debug for CoalitionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoalitionMask({})", self.to_bit_string())
    }
}

/// Finite oracle output for one mask.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValueVector(Vec<f64>);

impl ValueVector {
    /// Returns the index of the first non-finite entry on failure.
    pub fn new(values: Vec<f64>) -> Result<Self, usize> {
        match values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(i),
            None => Ok(Self(values)),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ValueVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Exact,
    Sampled,
}

/// One pairwise interaction measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub instance_id: String,
    pub pair: (usize, usize),
    pub stii: f64,
    pub d_i: Option<u64>,
    pub d_p: Option<u64>,
    pub strata_tags: Vec<String>,
    pub estimator: Estimator,
    pub num_permutations: u64,
    pub seed: u64,
    /// Standard error of the sampled estimate, absent for exact records.
    pub stderr: Option<f64>,
}

impl InteractionRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        let (a, b) = self.pair;
        if a >= b {
            return Err(RecordError::Invalid(format!("pair ({a},{b}) not ordered")));
        }
        if !self.stii.is_finite() || self.stii < 0.0 {
            return Err(RecordError::Invalid(format!("stii {} not a finite non-negative", self.stii)));
        }
        if let Some(d) = self.d_i {
            if d != (b - a) as u64 {
                return Err(RecordError::Invalid(format!("d_i {d} != {}", b - a)));
            }
        }
        if let Some(se) = self.stderr {
            if !se.is_finite() || se < 0.0 {
                return Err(RecordError::Invalid(format!("stderr {se} invalid")));
            }
        }
        if self.estimator == Estimator::Exact && self.num_permutations != 0 {
            return Err(RecordError::Invalid("exact record with num_permutations > 0".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    schema_version: u32,
    instance_id: String,
    pair: (usize, usize),
    stii: f64,
    #[serde(default)]
    d_i: Option<u64>,
    #[serde(default)]
    d_p: Option<u64>,
    #[serde(default)]
    strata_tags: Vec<String>,
    estimator: Estimator,
    num_permutations: u64,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stderr: Option<f64>,
}

/// One JSON object, no trailing newline. Fields always appear in the same order.
pub fn serialize_record(record: &InteractionRecord) -> String {
    let line = RecordLine {
        schema_version: SCHEMA_VERSION,
        instance_id: record.instance_id.clone(),
        pair: record.pair,
        stii: record.stii,
        d_i: record.d_i,
        d_p: record.d_p,
        strata_tags: record.strata_tags.clone(),
        estimator: record.estimator,
        num_permutations: record.num_permutations,
        seed: record.seed,
        stderr: record.stderr,
    };
    serde_json::to_string(&line).expect("record serialization is infallible")
}

pub fn deserialize_record(line: &str) -> Result<InteractionRecord, RecordError> {
    #[derive(Deserialize)]
    struct Version {
        schema_version: u32,
    }
    let version: Version =
        serde_json::from_str(line).map_err(|e| RecordError::Malformed(e.to_string()))?;
    if version.schema_version != SCHEMA_VERSION {
        return Err(RecordError::SchemaMismatch {
            found: version.schema_version,
        });
    }
    let l: RecordLine =
        serde_json::from_str(line).map_err(|e| RecordError::Malformed(e.to_string()))?;
    let record = InteractionRecord {
        instance_id: l.instance_id,
        pair: l.pair,
        stii: l.stii,
        d_i: l.d_i,
        d_p: l.d_p,
        strata_tags: l.strata_tags,
        estimator: l.estimator,
        num_permutations: l.num_permutations,
        seed: l.seed,
        stderr: l.stderr,
    };
    record.validate()?;
    Ok(record)
}

/// Reads a whole records stream, skipping blank lines.
pub fn read_records(text: &str) -> Result<Vec<InteractionRecord>, (usize, RecordError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| deserialize_record(l).map_err(|e| (i + 1, e)))
        .collect()
}

pub fn write_records(records: &[InteractionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serialize_record(r));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(stii: f64, pair: (usize, usize)) -> InteractionRecord {
        InteractionRecord {
            instance_id: "s0".into(),
            pair,
            stii,
            d_i: Some((pair.1 - pair.0) as u64),
            d_p: None,
            strata_tags: vec![],
            estimator: Estimator::Exact,
            num_permutations: 0,
            seed: 0,
            stderr: None,
        }
    }

    #[test]
    fn zero_record_serializes_and_round_trips() {
        let r = record(0.0, (0, 1));
        let line = serialize_record(&r);
        assert!(line.contains("\"stii\":0.0"), "{line}");
        assert!(line.contains("\"pair\":[0,1]"), "{line}");
        assert!(line.starts_with("{\"schema_version\":1,"));
        assert_eq!(deserialize_record(&line).unwrap(), r);
    }

    #[test]
    fn tag_order_preserved() {
        let mut r = record(0.25, (2, 5));
        r.strata_tags = vec!["mwe:strong".into(), "syntactic_distance:2".into(), "a".into()];
        let back = deserialize_record(&serialize_record(&r)).unwrap();
        assert_eq!(back.strata_tags, r.strata_tags);
    }

    #[test]
    fn rejects_wrong_schema_and_bad_records() {
        let line = serialize_record(&record(0.1, (0, 1))).replace("\"schema_version\":1", "\"schema_version\":7");
        assert_eq!(deserialize_record(&line), Err(RecordError::SchemaMismatch { found: 7 }));
        let line = serialize_record(&record(0.1, (0, 1))).replace("[0,1]", "[1,0]");
        assert!(matches!(deserialize_record(&line), Err(RecordError::Invalid(_))));
        assert!(matches!(deserialize_record("nope"), Err(RecordError::Malformed(_))));
    }

    #[test]
    fn unknown_fields_ignored() {
        let line = serialize_record(&record(0.5, (0, 3)));
        let extended = line.replacen('{', "{\"extra\":true,", 1);
        assert_eq!(deserialize_record(&extended).unwrap(), record(0.5, (0, 3)));
    }

    #[test]
    fn validate_instance_examples() {
        let ok = validate_instance(InstanceSpec {
            instance_id: "t".into(),
            n_features: 2,
            output_dim: 1,
            target_index: None,
            modality: Modality::Toy,
            feature_times: None,
        });
        assert!(ok.is_ok());

        let zero = validate_instance(InstanceSpec {
            n_features: 0,
            ..ok.clone().unwrap().to_spec()
        });
        assert_eq!(zero, Err(InstanceError::ZeroFeatures { n_features: 0 }));

        let speech = InstanceSpec {
            instance_id: "a".into(),
            n_features: 2,
            output_dim: 3,
            target_index: None,
            modality: Modality::Speech,
            feature_times: Some(vec![0.1, 0.1]),
        };
        assert_eq!(
            validate_instance(speech.clone()),
            Err(InstanceError::NonIncreasingTimes { index: 1 })
        );
        assert_eq!(
            validate_instance(InstanceSpec { feature_times: None, ..speech.clone() }),
            Err(InstanceError::MissingTimesForSpeech)
        );
        assert_eq!(
            validate_instance(InstanceSpec { target_index: Some(3), ..speech.clone() }.clone()),
            Err(InstanceError::BadTargetIndex { target: 3, n_features: 2 })
        );
        let good = InstanceSpec { feature_times: Some(vec![0.01, 0.03]), target_index: Some(2), ..speech };
        assert!(validate_instance(good).is_ok());
    }

    #[test]
    fn mask_bit_strings() {
        let m = CoalitionMask::from_indices(5, [0, 3]);
        assert_eq!(m.to_bit_string(), "10010");
        assert_eq!(CoalitionMask::parse_bit_string("10010"), Some(m.clone()));
        assert_eq!(CoalitionMask::parse_bit_string("10x"), None);
        assert_eq!(m.count_ones(), 2);
        assert_eq!(m.ones().collect::<Vec<_>>(), vec![0, 3]);
        let wide = CoalitionMask::full(130);
        assert_eq!(wide.count_ones(), 130);
        assert_eq!(CoalitionMask::from_u64(3, 0b101), CoalitionMask::from_indices(3, [0, 2]));
    }

    fn arb_record() -> impl Strategy<Value = InteractionRecord> {
        (
            "[a-z0-9_:-]{1,12}",
            0usize..500,
            1usize..500,
            prop_oneof![Just(0.0), 0.0f64..1e6, (0.0f64..1.0).prop_map(|x| x * 1e-300)],
            any::<bool>(),
            proptest::option::of(0u64..1000),
            proptest::collection::vec("[ -~]{0,10}", 0..4),
            any::<bool>(),
            0u64..1_000_000,
            any::<u64>(),
            proptest::option::of(0.0f64..10.0),
        )
            .prop_map(|(id, a, gap, stii, with_di, d_p, tags, exact, m, seed, se)| {
                InteractionRecord {
                    instance_id: id,
                    pair: (a, a + gap),
                    stii,
                    d_i: with_di.then_some(gap as u64),
                    d_p,
                    strata_tags: tags,
                    estimator: if exact { Estimator::Exact } else { Estimator::Sampled },
                    num_permutations: if exact { 0 } else { m },
                    seed,
                    stderr: if exact { None } else { se },
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn records_round_trip_bit_exactly(r in arb_record()) {
            let line = serialize_record(&r);
            prop_assert!(!line.contains('\n'));
            let back = deserialize_record(&line).unwrap();
            prop_assert_eq!(back.stii.to_bits(), r.stii.to_bits());
            prop_assert_eq!(back, r);
        }
    }
}
