//! Value oracles: "mask in, value vector out" over in-process toy games, a
//! subprocess speaking the wire protocol, or an HTTP endpoint, behind one
//! deduplicating cache.

pub mod http;
pub mod server;
pub mod subprocess;
pub mod toy;
pub mod wire;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{CoalitionMask, Instance, ValueVector};
pub use toy::{ToyGame, ToyGameKind, ToyGameSpec};
pub use wire::Handshake;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("malformed oracle response: {0}")]
    MalformedResponse(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("oracle returned a non-finite value at mask {mask}, dimension {index}")]
    NonFiniteValue { mask: String, index: usize },
    #[error("oracle reported error {code}: {message}")]
    Backend { code: String, message: String },
    #[error("invalid toy game: {0}")]
    InvalidGame(String),
    #[error("oracle is bound to instance {bound:?}, not {requested:?}")]
    WrongInstance { bound: String, requested: String },
    #[error("oracle cache file: {0}")]
    Cache(String),
}

impl OracleError {
    /// Stable name used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            OracleError::BackendUnreachable(_) => "BackendUnreachable",
            OracleError::MalformedResponse(_) => "MalformedResponse",
            OracleError::DimensionMismatch(_) => "DimensionMismatch",
            OracleError::NonFiniteValue { .. } => "NonFiniteValue",
            OracleError::Backend { .. } => "BackendError",
            OracleError::InvalidGame(_) => "InvalidGame",
            OracleError::WrongInstance { .. } => "WrongInstance",
            OracleError::Cache(_) => "CacheError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    #[default]
    Raw,
    /// Softmax-normalized outputs. Raw backends are normalized here;
    /// probability backends are checked against the contract.
    Probability,
}

/// Anything that can evaluate a batch of masks.
pub trait Backend: Send + Sync {
    fn handshake(&self) -> &Handshake;
    /// Returns one vector per mask, in order.
    fn eval(&self, masks: &[CoalitionMask]) -> Result<Vec<Vec<f64>>, OracleError>;
}

pub struct ToyBackend {
    game: ToyGame,
    handshake: Handshake,
}

impl ToyBackend {
    pub fn new(game: ToyGame) -> Self {
        let handshake = Handshake {
            n_features: game.n_features(),
            output_dim: game.output_dim(),
            supports_batch: true,
            output_mode: OutputMode::Raw,
            granularity: None,
        };
        Self { game, handshake }
    }
}

impl Backend for ToyBackend {
    fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn eval(&self, masks: &[CoalitionMask]) -> Result<Vec<Vec<f64>>, OracleError> {
        Ok(masks.iter().map(|m| self.game.value(m)).collect())
    }
}

pub(crate) fn check_eval_response(reply: wire::Response, id: u64) -> Result<Vec<Vec<f64>>, OracleError> {
    match reply {
        wire::Response::Eval { id: got, values } if got == id => Ok(values),
        wire::Response::Eval { id: got, .. } => Err(OracleError::MalformedResponse(format!(
            "response id {got} does not match request {id}"
        ))),
        wire::Response::Error { code, message, .. } => Err(OracleError::Backend { code, message }),
        wire::Response::Hello(_) => Err(OracleError::MalformedResponse(
            "unexpected hello in reply to eval".into(),
        )),
    }
}

/// Where an oracle lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleSpec {
    Toy(ToyGameSpec),
    Subprocess { command: Vec<String> },
    Http { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleOptions {
    pub output_mode: OutputMode,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retry: bool,
    /// Write-through cache file of (instance_id, mask) -> values lines.
    #[serde(skip)]
    pub disk_cache: Option<PathBuf>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            output_mode: OutputMode::Raw,
            batch_size: 64,
            max_in_flight: 1,
            retry: false,
            disk_cache: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DiskEntry {
    instance_id: String,
    mask: String,
    values: Vec<f64>,
}

struct DiskCache {
    file: File,
}

impl DiskCache {
    fn open(path: &Path, instance_id: &str, n_features: usize) -> Result<(Self, Vec<(CoalitionMask, ValueVector)>), OracleError> {
        let io = |e: std::io::Error| OracleError::Cache(format!("{}: {e}", path.display()));
        let mut entries = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for line in reader.lines() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: DiskEntry = serde_json::from_str(&line)
                    .map_err(|e| OracleError::Cache(format!("{}: {e}", path.display())))?;
                if entry.instance_id != instance_id {
                    continue;
                }
                let mask = CoalitionMask::parse_bit_string(&entry.mask)
                    .filter(|m| m.len() == n_features)
                    .ok_or_else(|| OracleError::Cache(format!("bad mask {:?}", entry.mask)))?;
                let values = ValueVector::new(entry.values)
                    .map_err(|_| OracleError::Cache("non-finite cached value".into()))?;
                entries.push((mask, values));
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok((Self { file }, entries))
    }

    fn append(&mut self, instance_id: &str, items: &[(CoalitionMask, Arc<ValueVector>)]) -> Result<(), OracleError> {
        let mut buf = String::new();
        for (mask, values) in items {
            let entry = DiskEntry {
                instance_id: instance_id.to_string(),
                mask: mask.to_bit_string(),
                values: values.as_slice().to_vec(),
            };
            buf.push_str(&serde_json::to_string(&entry).expect("cache entry serializes"));
            buf.push('\n');
        }
        self.file
            .write_all(buf.as_bytes())
            .map_err(|e| OracleError::Cache(e.to_string()))
    }
}

/// A backend bound to one instance, with an evaluation cache.
pub struct OracleHandle {
    backend: Box<dyn Backend>,
    instance_id: String,
    n_features: usize,
    output_dim: usize,
    options: OracleOptions,
    cache: Mutex<HashMap<CoalitionMask, Arc<ValueVector>>>,
    disk: Option<Mutex<DiskCache>>,
    call_count: AtomicU64,
    cache_hits: AtomicU64,
}

impl OracleHandle {
    /// Binds `backend` to `instance`, checking the handshake dimensions.
    pub fn new(backend: Box<dyn Backend>, instance: &Instance, options: OracleOptions) -> Result<Self, OracleError> {
        let hello = backend.handshake();
        if hello.n_features != instance.n_features() {
            return Err(OracleError::DimensionMismatch(format!(
                "oracle serves {} features, instance {} has {}",
                hello.n_features,
                instance.id(),
                instance.n_features()
            )));
        }
        if hello.output_dim != instance.output_dim() {
            return Err(OracleError::DimensionMismatch(format!(
                "oracle output_dim {} != instance output_dim {}",
                hello.output_dim,
                instance.output_dim()
            )));
        }
        let mut cache = HashMap::new();
        let disk = match &options.disk_cache {
            Some(path) => {
                let (disk, entries) = DiskCache::open(path, instance.id(), instance.n_features())?;
                for (mask, values) in entries {
                    if values.len() != instance.output_dim() {
                        return Err(OracleError::Cache("cached vector has wrong dimension".into()));
                    }
                    cache.insert(mask, Arc::new(values));
                }
                Some(Mutex::new(disk))
            }
            None => None,
        };
        Ok(Self {
            backend,
            instance_id: instance.id().to_string(),
            n_features: instance.n_features(),
            output_dim: instance.output_dim(),
            options,
            cache: Mutex::new(cache),
            disk,
            call_count: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        })
    }

    pub fn toy(spec: &ToyGameSpec, instance: &Instance) -> Result<Self, OracleError> {
        Self::new(Box::new(ToyBackend::new(spec.build()?)), instance, OracleOptions::default())
    }

    /// Connects to whatever `spec` describes.
    pub fn open(spec: &OracleSpec, instance: &Instance, options: OracleOptions) -> Result<Self, OracleError> {
        let backend: Box<dyn Backend> = match spec {
            OracleSpec::Toy(game) => Box::new(ToyBackend::new(game.build()?)),
            OracleSpec::Subprocess { command } => {
                Box::new(subprocess::SubprocessBackend::spawn(command.clone(), options.retry)?)
            }
            OracleSpec::Http { url } => Box::new(http::HttpBackend::connect(url.clone(), options.retry)?),
        };
        Self::new(backend, instance, options)
    }

    pub fn handshake(&self) -> &Handshake {
        self.backend.handshake()
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    /// Number of masks the backend actually evaluated.
    pub fn call_count(&self) -> u64 {
        self.call_count.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub(crate) fn check_instance(&self, instance: &Instance) -> Result<(), OracleError> {
        if instance.id() != self.instance_id || instance.n_features() != self.n_features {
            return Err(OracleError::WrongInstance {
                bound: self.instance_id.clone(),
                requested: instance.id().to_string(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, instance: &Instance, mask: &CoalitionMask) -> Result<Arc<ValueVector>, OracleError> {
        self.check_instance(instance)?;
        Ok(self.eval_masks(std::slice::from_ref(mask))?.pop().expect("one value per mask"))
    }

    pub fn evaluate_batch(&self, instance: &Instance, masks: &[CoalitionMask]) -> Result<Vec<Arc<ValueVector>>, OracleError> {
        self.check_instance(instance)?;
        self.eval_masks(masks)
    }

    /// Cached batch evaluation; the instance check is the caller's job.
    pub(crate) fn eval_masks(&self, masks: &[CoalitionMask]) -> Result<Vec<Arc<ValueVector>>, OracleError> {
        if let Some(bad) = masks.iter().find(|m| m.len() != self.n_features) {
            return Err(OracleError::DimensionMismatch(format!(
                "mask of length {} for {} features",
                bad.len(),
                self.n_features
            )));
        }
        let mut missing: Vec<CoalitionMask> = Vec::new();
        {
            let cache = self.cache.lock().expect("oracle cache poisoned");
            let mut pending = std::collections::HashSet::new();
            for m in masks {
                if !cache.contains_key(m) && pending.insert(m) {
                    missing.push(m.clone());
                }
            }
        }
        let fresh = if missing.is_empty() { Vec::new() } else { self.fetch(&missing)? };
        let hits = (masks.len() - missing.len()) as u64;
        self.cache_hits.fetch_add(hits, Ordering::Relaxed);
        self.call_count.fetch_add(missing.len() as u64, Ordering::Relaxed);

        let mut cache = self.cache.lock().expect("oracle cache poisoned");
        let mut stored = Vec::with_capacity(fresh.len());
        for (mask, values) in missing.into_iter().zip(fresh) {
            // first writer wins so repeated masks stay bit-identical
            let entry = cache.entry(mask.clone()).or_insert_with(|| Arc::new(values));
            stored.push((mask, Arc::clone(entry)));
        }
        let out = masks
            .iter()
            .map(|m| Arc::clone(cache.get(m).expect("mask cached above")))
            .collect();
        drop(cache);
        if let Some(disk) = &self.disk {
            disk.lock()
                .expect("disk cache poisoned")
                .append(&self.instance_id, &stored)?;
        }
        Ok(out)
    }

    /// Sends `masks` to the backend in chunks; all-or-nothing.
    fn fetch(&self, masks: &[CoalitionMask]) -> Result<Vec<ValueVector>, OracleError> {
        let chunk = if self.backend.handshake().supports_batch {
            self.options.batch_size.max(1)
        } else {
            1
        };
        let chunks: Vec<&[CoalitionMask]> = masks.chunks(chunk).collect();
        let in_flight = self.options.max_in_flight.max(1);
        let mut raw: Vec<Vec<f64>> = Vec::with_capacity(masks.len());
        if in_flight == 1 || chunks.len() == 1 {
            for c in &chunks {
                raw.extend(self.fetch_chunk(c)?);
            }
        } else {
            for group in chunks.chunks(in_flight) {
                let results: Vec<Result<Vec<Vec<f64>>, OracleError>> = std::thread::scope(|s| {
                    let handles: Vec<_> = group
                        .iter()
                        .map(|c| s.spawn(move || self.fetch_chunk(c)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("oracle request thread panicked"))
                        .collect()
                });
                for r in results {
                    raw.extend(r?);
                }
            }
        }
        masks
            .iter()
            .zip(raw)
            .map(|(m, v)| self.finish(m, v))
            .collect()
    }

    fn fetch_chunk(&self, chunk: &[CoalitionMask]) -> Result<Vec<Vec<f64>>, OracleError> {
        let values = self.backend.eval(chunk)?;
        if values.len() != chunk.len() {
            return Err(OracleError::MalformedResponse(format!(
                "sent {} masks, received {} vectors",
                chunk.len(),
                values.len()
            )));
        }
        Ok(values)
    }

    fn finish(&self, mask: &CoalitionMask, values: Vec<f64>) -> Result<ValueVector, OracleError> {
        if values.len() != self.output_dim {
            return Err(OracleError::DimensionMismatch(format!(
                "backend returned {} values, expected {}",
                values.len(),
                self.output_dim
            )));
        }
        let values = ValueVector::new(values).map_err(|index| OracleError::NonFiniteValue {
            mask: mask.to_bit_string(),
            index,
        })?;
        match (self.options.output_mode, self.backend.handshake().output_mode) {
            (OutputMode::Raw, _) => Ok(values),
            (OutputMode::Probability, OutputMode::Raw) => {
                Ok(ValueVector::new(softmax(values.as_slice())).expect("softmax of finite values is finite"))
            }
            (OutputMode::Probability, OutputMode::Probability) => {
                check_distribution(values.as_slice()).map_err(|msg| {
                    OracleError::MalformedResponse(format!("mask {}: {msg}", mask.to_bit_string()))
                })?;
                Ok(values)
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_distribution(p: &[f64]) -> Result<(), String> {
    if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(format!("probability {x} outside [0,1]"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(format!("probabilities sum to {total}"));
    }
    Ok(())
}

/// Replacement applied to an ablated speech frame: silence of the same length.
pub fn ablate_speech_frame(frame: &[f32]) -> Vec<f32> {
    vec![0.0; frame.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Instance;

    fn mask(bits: &str) -> CoalitionMask {
        CoalitionMask::parse_bit_string(bits).unwrap()
    }

    fn linear_handle() -> (OracleHandle, Instance) {
        let inst = Instance::toy("lin", 2, 1);
        (OracleHandle::toy(&ToyGameSpec::linear(vec![2.0, 3.0]), &inst).unwrap(), inst)
    }

    #[test]
    fn evaluate_linear() {
        let (h, inst) = linear_handle();
        assert_eq!(h.evaluate(&inst, &mask("11")).unwrap().as_slice(), &[5.0]);
        assert_eq!(h.evaluate(&inst, &mask("01")).unwrap().as_slice(), &[3.0]);
        assert_eq!(h.call_count(), 2);
    }

    #[test]
    fn batch_dedupes_and_preserves_order() {
        let (h, inst) = linear_handle();
        let out = h
            .evaluate_batch(&inst, &[mask("11"), mask("01"), mask("11")])
            .unwrap();
        let flat: Vec<f64> = out.iter().map(|v| v[0]).collect();
        assert_eq!(flat, vec![5.0, 3.0, 5.0]);
        assert_eq!(h.call_count(), 2);
        assert_eq!(h.cache_hits(), 1);
        assert!(h.evaluate_batch(&inst, &[]).unwrap().is_empty());
        h.evaluate(&inst, &mask("01")).unwrap();
        assert_eq!(h.call_count(), 2);
        assert_eq!(h.cache_hits(), 2);
    }

    #[test]
    fn full_enumeration_counts_distinct_masks() {
        let n = 12;
        let inst = Instance::toy("big", n, 1);
        let h = OracleHandle::toy(&ToyGameSpec::majority(n, 6), &inst).unwrap();
        let mut masks: Vec<_> = (0..1u64 << n).map(|b| CoalitionMask::from_u64(n, b)).collect();
        masks.extend(masks[..100].to_vec());
        let out = h.evaluate_batch(&inst, &masks).unwrap();
        assert_eq!(out.len(), 4196);
        assert_eq!(h.call_count(), 4096);
    }

    #[test]
    fn mismatches_are_errors() {
        let (h, inst) = linear_handle();
        assert!(matches!(h.evaluate(&inst, &mask("111")), Err(OracleError::DimensionMismatch(_))));
        let other = Instance::toy("other", 2, 1);
        assert!(matches!(h.evaluate(&other, &mask("11")), Err(OracleError::WrongInstance { .. })));
        let wide = Instance::toy("lin", 3, 1);
        assert!(matches!(
            OracleHandle::toy(&ToyGameSpec::linear(vec![2.0, 3.0]), &wide),
            Err(OracleError::DimensionMismatch(_))
        ));
    }

    struct Fixed(Handshake, Vec<f64>);

    impl Backend for Fixed {
        fn handshake(&self) -> &Handshake {
            &self.0
        }
        fn eval(&self, masks: &[CoalitionMask]) -> Result<Vec<Vec<f64>>, OracleError> {
            Ok(vec![self.1.clone(); masks.len()])
        }
    }

    fn fixed(mode: OutputMode, values: Vec<f64>, dim: usize) -> Box<dyn Backend> {
        Box::new(Fixed(
            Handshake {
                n_features: 2,
                output_dim: dim,
                supports_batch: true,
                output_mode: mode,
                granularity: None,
            },
            values,
        ))
    }

    #[test]
    fn backend_value_contract() {
        let inst = Instance::toy("x", 2, 2);
        let probs = OracleOptions {
            output_mode: OutputMode::Probability,
            ..Default::default()
        };
        let h = OracleHandle::new(fixed(OutputMode::Raw, vec![1.0, f64::NAN], 2), &inst, OracleOptions::default()).unwrap();
        assert!(matches!(h.evaluate(&inst, &mask("11")), Err(OracleError::NonFiniteValue { index: 1, .. })));

        let h = OracleHandle::new(fixed(OutputMode::Raw, vec![1.0], 2), &inst, OracleOptions::default()).unwrap();
        assert!(matches!(h.evaluate(&inst, &mask("11")), Err(OracleError::DimensionMismatch(_))));

        let h = OracleHandle::new(fixed(OutputMode::Probability, vec![0.7, 0.7], 2), &inst, probs.clone()).unwrap();
        assert!(matches!(h.evaluate(&inst, &mask("11")), Err(OracleError::MalformedResponse(_))));

        let h = OracleHandle::new(fixed(OutputMode::Raw, vec![3.0, -1.0], 2), &inst, probs).unwrap();
        let p = h.evaluate(&inst, &mask("10")).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[1] > 0.0);
    }

    #[test]
    fn probability_mode_always_normalized() {
        let n = 8;
        let inst = Instance::toy("p", n, 3);
        let spec = ToyGameSpec::pairwise_product(
            (0..n).map(|i| (0..n).map(|j| (i + 2 * j) as f64 * 0.3).collect()).collect(),
        )
        .with_scales(vec![1.0, -2.0, 0.5]);
        let opts = OracleOptions { output_mode: OutputMode::Probability, ..Default::default() };
        let h = OracleHandle::new(Box::new(ToyBackend::new(spec.build().unwrap())), &inst, opts).unwrap();
        for bits in 0..1u64 << n {
            let v = h.evaluate(&inst, &CoalitionMask::from_u64(n, bits)).unwrap();
            assert!((v.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(v.as_slice().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn disk_cache_write_through() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let inst = Instance::toy("lin", 2, 1);
        let opts = OracleOptions { disk_cache: Some(path.clone()), ..Default::default() };
        let game = ToyGameSpec::linear(vec![0.1, 0.2]).build().unwrap();
        let h = OracleHandle::new(Box::new(ToyBackend::new(game.clone())), &inst, opts.clone()).unwrap();
        let first = h.evaluate(&inst, &mask("11")).unwrap();
        assert_eq!(h.call_count(), 1);
        drop(h);
        let h = OracleHandle::new(Box::new(ToyBackend::new(game)), &inst, opts).unwrap();
        let again = h.evaluate(&inst, &mask("11")).unwrap();
        assert_eq!(h.call_count(), 0);
        assert_eq!(first[0].to_bits(), again[0].to_bits());
    }

    #[test]
    fn silence_ablation() {
        assert_eq!(ablate_speech_frame(&[0.1, -0.2, 0.3]), vec![0.0, 0.0, 0.0]);
        assert!(ablate_speech_frame(&[]).is_empty());
        let second = vec![0.25f32; 16_000];
        let silent = ablate_speech_frame(&second);
        assert_eq!(silent.len(), 16_000);
        assert!(silent.iter().all(|&x| x == 0.0));
    }
}
