//! Shapley values and pairwise Shapley-Taylor interaction indices, exact by
//! powerset enumeration or estimated by permutation sampling.
//!
//! The pairwise index of features `a`, `b` is built from the mixed second
//! difference
//!
//! ```text
//! d_ab v(S) = v(S + a + b) - v(S + a) - v(S + b) + v(S)
//! ```
//!
//! taken per output dimension and averaged over contexts `S` drawn from the
//! remaining features (uniform over context sizes, then uniform within a
//! size). The resulting vector's L2 norm is divided by the norm of the
//! unablated output `v(N)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{OracleError, OracleHandle};
use crate::record::{l2_norm, CoalitionMask, Estimator, Instance, InteractionRecord};

pub const DEFAULT_EXACT_LIMIT: usize = 20;

/// Samples evaluated per oracle batch.
const SAMPLE_CHUNK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("exact computation over {n_features} features exceeds the limit of {limit}")]
    ExactLimitExceeded { n_features: usize, limit: usize },
    #[error("feature set is empty")]
    EmptyFeatureSet,
    #[error("feature {index} out of range for {n_features} features")]
    FeatureOutOfRange { index: usize, n_features: usize },
    #[error("interaction pair needs two distinct features, got ({0}, {0})")]
    SamePair(usize),
    #[error("unablated output has zero norm; cannot normalize")]
    ZeroNormalizer,
    #[error("num_permutations must be at least 1")]
    ZeroPermutations,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Weight of a context of size `s` drawn from `rest` remaining features.
pub type WeightFn = fn(rest: usize, s: usize) -> f64;

/// s! (rest - s)! / (rest + 1)!: uniform over context sizes, then uniform
/// over the contexts of that size.
pub fn shapley_weight(rest: usize, s: usize) -> f64 {
    assert!(s <= rest);
    // 1 / ((rest + 1) * C(rest, s)), with C built from the smaller side
    let k = s.min(rest - s);
    let mut binom = 1.0f64;
    for i in 0..k {
        binom = binom * (rest - i) as f64 / (i + 1) as f64;
    }
    1.0 / ((rest + 1) as f64 * binom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyResult {
    pub feature_set: Vec<usize>,
    pub phi: Vec<f64>,
    pub estimator: Estimator,
    pub num_permutations: u64,
    pub seed: u64,
    pub stderr_estimate: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCheck {
    /// Samples between checks.
    pub window: u64,
    /// Stop once the estimate moves less than this, relative to its size.
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub num_permutations: u64,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default)]
    pub convergence_check: Option<ConvergenceCheck>,
}

impl SamplingConfig {
    pub fn new(num_permutations: u64, seed: u64) -> Self {
        Self {
            num_permutations,
            seed,
            antithetic: false,
            convergence_check: None,
        }
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self::new(1000, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// Average the second difference over contexts of the other features.
    #[default]
    ContextSampled,
    /// Only the empty context: four oracle calls per pair.
    EmptyContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    FullSequenceNorm,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Exact,
    #[default]
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiiConfig {
    pub estimator: EstimatorKind,
    pub context_mode: ContextMode,
    pub normalization: Normalization,
    pub sampling: SamplingConfig,
    pub exact_limit: usize,
}

impl Default for StiiConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Sampled,
            context_mode: ContextMode::ContextSampled,
            normalization: Normalization::FullSequenceNorm,
            sampling: SamplingConfig::default(),
            exact_limit: DEFAULT_EXACT_LIMIT,
        }
    }
}

impl StiiConfig {
    pub fn exact() -> Self {
        Self {
            estimator: EstimatorKind::Exact,
            ..Self::default()
        }
    }

    pub fn sampled(num_permutations: u64, seed: u64) -> Self {
        Self {
            sampling: SamplingConfig::new(num_permutations, seed),
            ..Self::default()
        }
    }

    pub fn with_context(mut self, mode: ContextMode) -> Self {
        self.context_mode = mode;
        self
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiiEstimate {
    pub stii: f64,
    /// Standard error of `stii`; `None` for exact values or a single sample.
    pub stderr: Option<f64>,
    pub num_permutations: u64,
}

fn check_feature(index: usize, n: usize) -> Result<(), EngineError> {
    if index >= n {
        return Err(EngineError::FeatureOutOfRange { index, n_features: n });
    }
    Ok(())
}

fn check_limit(n: usize, limit: usize) -> Result<(), EngineError> {
    if n > limit {
        return Err(EngineError::ExactLimitExceeded { n_features: n, limit });
    }
    Ok(())
}

/// Features of `0..n` not in `excluded`, ascending.
fn remaining(n: usize, excluded: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !excluded.contains(i)).collect()
}

fn canonical_set(n: usize, feature_set: &[usize]) -> Result<Vec<usize>, EngineError> {
    if feature_set.is_empty() {
        return Err(EngineError::EmptyFeatureSet);
    }
    for &i in feature_set {
        check_feature(i, n)?;
    }
    let mut set = feature_set.to_vec();
    set.sort_unstable();
    set.dedup();
    Ok(set)
}

fn canonical_pair(n: usize, (a, b): (usize, usize)) -> Result<(usize, usize), EngineError> {
    check_feature(a, n)?;
    check_feature(b, n)?;
    if a == b {
        return Err(EngineError::SamePair(a));
    }
    Ok((a.min(b), a.max(b)))
}

/// Contexts of `rest` enumerated by subset bits; yields (size, mask over N).
fn enumerate_contexts(n: usize, rest: &[usize]) -> impl Iterator<Item = (usize, CoalitionMask)> + '_ {
    (0..1u64 << rest.len()).map(move |bits| {
        let mask = CoalitionMask::from_indices(
            n,
            rest.iter().enumerate().filter(|(k, _)| bits >> k & 1 == 1).map(|(_, &i)| i),
        );
        (bits.count_ones() as usize, mask)
    })
}

fn with_all(mask: &CoalitionMask, extra: &[usize]) -> CoalitionMask {
    let mut m = mask.clone();
    for &i in extra {
        m.insert(i);
    }
    m
}

pub fn exact_shapley(
    oracle: &OracleHandle,
    instance: &Instance,
    feature_set: &[usize],
    exact_limit: usize,
) -> Result<ShapleyResult, EngineError> {
    exact_shapley_weighted(oracle, instance, feature_set, exact_limit, shapley_weight)
}

/// [`exact_shapley`] with a caller-supplied context weight.
pub fn exact_shapley_weighted(
    oracle: &OracleHandle,
    instance: &Instance,
    feature_set: &[usize],
    exact_limit: usize,
    weight: WeightFn,
) -> Result<ShapleyResult, EngineError> {
    oracle.check_instance(instance)?;
    let n = instance.n_features();
    check_limit(n, exact_limit)?;
    let set = canonical_set(n, feature_set)?;
    let rest = remaining(n, &set);
    let weights: Vec<f64> = (0..=rest.len()).map(|s| weight(rest.len(), s)).collect();
    let mut phi = vec![0.0; instance.output_dim()];

    let contexts: Vec<(usize, CoalitionMask)> = enumerate_contexts(n, &rest).collect();
    for chunk in contexts.chunks(4096) {
        let mut masks = Vec::with_capacity(chunk.len() * 2);
        for (_, s) in chunk {
            masks.push(with_all(s, &set));
            masks.push(s.clone());
        }
        let values = oracle.eval_masks(&masks)?;
        for ((size, _), v) in chunk.iter().zip(values.chunks(2)) {
            let w = weights[*size];
            for (d, p) in phi.iter_mut().enumerate() {
                *p += w * (v[0][d] - v[1][d]);
            }
        }
    }
    Ok(ShapleyResult {
        feature_set: set,
        phi,
        estimator: Estimator::Exact,
        num_permutations: 0,
        seed: 0,
        stderr_estimate: None,
    })
}

/// One sampled context: a permutation of the free features and the slot at
/// which the target set is inserted.
struct ContextSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    antithetic: bool,
    pending_reverse: Option<usize>,
}

impl ContextSampler {
    fn new(free: Vec<usize>, config: &SamplingConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: free,
            antithetic: config.antithetic,
            pending_reverse: None,
        }
    }

    /// Context members for the next sample.
    fn next_context(&mut self) -> Vec<usize> {
        let len = self.order.len();
        if let Some(slot) = self.pending_reverse.take() {
            // reversed permutation, mirrored slot: the complement context
            return self.order[slot..].to_vec();
        }
        self.order.shuffle(&mut self.rng);
        let slot = self.rng.random_range(0..=len);
        if self.antithetic {
            self.pending_reverse = Some(slot);
        }
        self.order[..slot].to_vec()
    }
}

/// Running per-dimension mean and variance over sampling units, where a
/// unit is one sample or, with antithetic sampling, the mean of a pair.
struct UnitStats {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    units: Vec<Vec<f64>>,
    keep_units: bool,
}

impl UnitStats {
    fn new(dim: usize, keep_units: bool) -> Self {
        Self {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            units: Vec::new(),
            keep_units,
        }
    }

    fn push(&mut self, unit: Vec<f64>) {
        debug_assert_eq!(unit.len(), self.dim);
        self.count += 1;
        let c = self.count as f64;
        for d in 0..self.dim {
            let delta = unit[d] - self.mean[d];
            self.mean[d] += delta / c;
            self.m2[d] += delta * (unit[d] - self.mean[d]);
        }
        if self.keep_units {
            self.units.push(unit);
        }
    }

    fn stderr(&self) -> Option<Vec<f64>> {
        if self.count < 2 {
            return None;
        }
        let c = self.count as f64;
        Some(self.m2.iter().map(|m2| (m2 / (c - 1.0)).sqrt() / c.sqrt()).collect())
    }

    /// Standard error of the norm of the mean, by projecting each unit on
    /// the mean's direction.
    fn norm_stderr(&self) -> Option<f64> {
        if self.count < 2 {
            return None;
        }
        let c = self.count as f64;
        let norm = l2_norm(&self.mean);
        if norm == 0.0 || !self.keep_units {
            let total_var: f64 = self.m2.iter().map(|m2| m2 / (c - 1.0)).sum();
            return Some((total_var / c).sqrt());
        }
        let project = |u: &[f64]| u.iter().zip(&self.mean).map(|(x, m)| x * m).sum::<f64>() / norm;
        let z_mean = self.units.iter().map(|u| project(u)).sum::<f64>() / c;
        let ss: f64 = self.units.iter().map(|u| (project(u) - z_mean).powi(2)).sum();
        Some((ss / (c - 1.0)).sqrt() / c.sqrt())
    }
}

/// Drives `num_permutations` samples in oracle-sized chunks. `masks_for`
/// lists the masks of one context; `unit_of` turns their values into a
/// per-dimension contribution. Returns stats and the samples drawn.
fn run_sampler(
    oracle: &OracleHandle,
    dim: usize,
    mut sampler: ContextSampler,
    config: &SamplingConfig,
    masks_per_sample: usize,
    keep_units: bool,
    masks_for: impl Fn(&[usize], &mut Vec<CoalitionMask>),
    unit_of: impl Fn(&[std::sync::Arc<crate::record::ValueVector>], &mut [f64]),
) -> Result<(UnitStats, u64), EngineError> {
    if config.num_permutations == 0 {
        return Err(EngineError::ZeroPermutations);
    }
    let total = config.num_permutations;
    let chunk = match config.convergence_check {
        Some(c) => c.window.clamp(1, SAMPLE_CHUNK as u64),
        None => SAMPLE_CHUNK as u64,
    };
    let mut stats = UnitStats::new(dim, keep_units);
    let mut drawn = 0u64;
    let mut pending: Option<Vec<f64>> = None;
    let mut last_check: Option<Vec<f64>> = None;
    let mut since_check = 0u64;
    while drawn < total {
        let take = chunk.min(total - drawn);
        let mut masks = Vec::with_capacity(take as usize * masks_per_sample);
        for _ in 0..take {
            masks_for(&sampler.next_context(), &mut masks);
        }
        let values = oracle.eval_masks(&masks)?;
        for sample in values.chunks(masks_per_sample) {
            let mut unit = vec![0.0; dim];
            unit_of(sample, &mut unit);
            if config.antithetic {
                match pending.take() {
                    None => pending = Some(unit),
                    Some(first) => {
                        stats.push(first.iter().zip(&unit).map(|(x, y)| 0.5 * (x + y)).collect())
                    }
                }
            } else {
                stats.push(unit);
            }
        }
        drawn += take;
        since_check += take;
        if let Some(check) = config.convergence_check {
            if since_check >= check.window && pending.is_none() && stats.count > 0 {
                since_check = 0;
                if let Some(prev) = &last_check {
                    let scale = l2_norm(&stats.mean).max(f64::MIN_POSITIVE);
                    let moved = l2_norm(
                        &prev.iter().zip(&stats.mean).map(|(p, m)| p - m).collect::<Vec<_>>(),
                    );
                    if moved <= check.rel_tol * scale {
                        break;
                    }
                }
                last_check = Some(stats.mean.clone());
            }
        }
    }
    if let Some(last) = pending {
        stats.push(last);
    }
    Ok((stats, drawn))
}

pub fn sampled_shapley(
    oracle: &OracleHandle,
    instance: &Instance,
    feature_set: &[usize],
    config: &SamplingConfig,
) -> Result<ShapleyResult, EngineError> {
    oracle.check_instance(instance)?;
    let n = instance.n_features();
    let set = canonical_set(n, feature_set)?;
    let sampler = ContextSampler::new(remaining(n, &set), config);
    let (stats, drawn) = run_sampler(
        oracle,
        instance.output_dim(),
        sampler,
        config,
        2,
        false,
        |ctx, masks| {
            let s = CoalitionMask::from_indices(n, ctx.iter().copied());
            masks.push(with_all(&s, &set));
            masks.push(s);
        },
        |v, unit| {
            for (d, u) in unit.iter_mut().enumerate() {
                *u = v[0][d] - v[1][d];
            }
        },
    )?;
    Ok(ShapleyResult {
        feature_set: set,
        stderr_estimate: stats.stderr(),
        phi: stats.mean,
        estimator: Estimator::Sampled,
        num_permutations: drawn,
        seed: config.seed,
    })
}

fn normalizer(oracle: &OracleHandle, instance: &Instance, normalization: Normalization) -> Result<f64, EngineError> {
    match normalization {
        Normalization::None => Ok(1.0),
        Normalization::FullSequenceNorm => {
            let full = oracle.eval_masks(&[CoalitionMask::full(instance.n_features())])?;
            let norm = full[0].l2_norm();
            if norm == 0.0 {
                return Err(EngineError::ZeroNormalizer);
            }
            Ok(norm)
        }
    }
}

fn second_difference(v: &[std::sync::Arc<crate::record::ValueVector>], out: &mut [f64]) {
    // masks are ordered S+ab, S+a, S+b, S
    for (d, o) in out.iter_mut().enumerate() {
        *o = v[0][d] - v[1][d] - v[2][d] + v[3][d];
    }
}

fn pair_masks(n: usize, ctx: &[usize], a: usize, b: usize, masks: &mut Vec<CoalitionMask>) {
    let s = CoalitionMask::from_indices(n, ctx.iter().copied());
    masks.push(with_all(&s, &[a, b]));
    masks.push(s.with(a));
    masks.push(s.with(b));
    masks.push(s);
}

fn empty_context_difference(oracle: &OracleHandle, instance: &Instance, a: usize, b: usize) -> Result<Vec<f64>, EngineError> {
    let mut masks = Vec::with_capacity(4);
    pair_masks(instance.n_features(), &[], a, b, &mut masks);
    let values = oracle.eval_masks(&masks)?;
    let mut delta = vec![0.0; instance.output_dim()];
    second_difference(&values, &mut delta);
    Ok(delta)
}

pub fn exact_stii(
    oracle: &OracleHandle,
    instance: &Instance,
    pair: (usize, usize),
    config: &StiiConfig,
) -> Result<f64, EngineError> {
    oracle.check_instance(instance)?;
    let n = instance.n_features();
    let (a, b) = canonical_pair(n, pair)?;
    let delta = match config.context_mode {
        ContextMode::EmptyContext => empty_context_difference(oracle, instance, a, b)?,
        ContextMode::ContextSampled => {
            check_limit(n, config.exact_limit)?;
            let rest = remaining(n, &[a, b]);
            let weights: Vec<f64> = (0..=rest.len()).map(|s| shapley_weight(rest.len(), s)).collect();
            let mut delta = vec![0.0; instance.output_dim()];
            let mut unit = vec![0.0; instance.output_dim()];
            let contexts: Vec<(usize, CoalitionMask)> = enumerate_contexts(n, &rest).collect();
            for chunk in contexts.chunks(2048) {
                let mut masks = Vec::with_capacity(chunk.len() * 4);
                for (_, s) in chunk {
                    masks.push(with_all(s, &[a, b]));
                    masks.push(s.with(a));
                    masks.push(s.with(b));
                    masks.push(s.clone());
                }
                let values = oracle.eval_masks(&masks)?;
                for ((size, _), v) in chunk.iter().zip(values.chunks(4)) {
                    second_difference(v, &mut unit);
                    let w = weights[*size];
                    for (acc, u) in delta.iter_mut().zip(&unit) {
                        *acc += w * u;
                    }
                }
            }
            delta
        }
    };
    Ok(l2_norm(&delta) / normalizer(oracle, instance, config.normalization)?)
}

pub fn sampled_stii(
    oracle: &OracleHandle,
    instance: &Instance,
    pair: (usize, usize),
    config: &StiiConfig,
) -> Result<StiiEstimate, EngineError> {
    oracle.check_instance(instance)?;
    let n = instance.n_features();
    let (a, b) = canonical_pair(n, pair)?;
    let norm = normalizer(oracle, instance, config.normalization)?;
    if config.context_mode == ContextMode::EmptyContext {
        let delta = empty_context_difference(oracle, instance, a, b)?;
        return Ok(StiiEstimate {
            stii: l2_norm(&delta) / norm,
            stderr: None,
            num_permutations: 0,
        });
    }
    // Every pair draws from the same seeded stream: the same shuffles and
    // slots applied to its own n - 2 free features.
    let sampler = ContextSampler::new(remaining(n, &[a, b]), &config.sampling);
    let (stats, drawn) = run_sampler(
        oracle,
        instance.output_dim(),
        sampler,
        &config.sampling,
        4,
        true,
        |ctx, masks| pair_masks(n, ctx, a, b, masks),
        second_difference,
    )?;
    Ok(StiiEstimate {
        stii: l2_norm(&stats.mean) / norm,
        stderr: stats.norm_stderr().map(|s| s / norm),
        num_permutations: drawn,
    })
}

/// Exact or sampled, per `config.estimator`.
pub fn stii(
    oracle: &OracleHandle,
    instance: &Instance,
    pair: (usize, usize),
    config: &StiiConfig,
) -> Result<StiiEstimate, EngineError> {
    match config.estimator {
        EstimatorKind::Exact => Ok(StiiEstimate {
            stii: exact_stii(oracle, instance, pair, config)?,
            stderr: None,
            num_permutations: 0,
        }),
        EstimatorKind::Sampled => sampled_stii(oracle, instance, pair, config),
    }
}

/// Positional distance from the pair's nearer member to the target.
pub(crate) fn nearest_target_distance(a: usize, b: usize, target: usize) -> u64 {
    (target.abs_diff(a)).min(target.abs_diff(b)) as u64
}

/// One record per pair, in the given order. Pairs are evaluated
/// sequentially so oracle counters are reproducible.
pub fn stii_matrix(
    oracle: &OracleHandle,
    instance: &Instance,
    pairs: &[(usize, usize)],
    config: &StiiConfig,
) -> Result<Vec<InteractionRecord>, EngineError> {
    pairs
        .iter()
        .map(|&pair| {
            let (a, b) = canonical_pair(instance.n_features(), pair)?;
            let est = stii(oracle, instance, (a, b), config)?;
            let (d_i, d_p) = match instance.target_index() {
                Some(t) => (Some((b - a) as u64), Some(nearest_target_distance(a, b, t))),
                None => (None, None),
            };
            let exact = config.estimator == EstimatorKind::Exact;
            Ok(InteractionRecord {
                instance_id: instance.id().to_string(),
                pair: (a, b),
                stii: est.stii,
                d_i,
                d_p,
                strata_tags: Vec::new(),
                estimator: if exact { Estimator::Exact } else { Estimator::Sampled },
                num_permutations: est.num_permutations,
                seed: if exact { 0 } else { config.sampling.seed },
                stderr: est.stderr,
            })
        })
        .collect()
}

/// All `(a, b)` with `a < b`.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
}

/// `(t, t + 1)` for every feature but the last.
pub fn consecutive_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n.saturating_sub(1)).map(|t| (t, t + 1)).collect()
}

/// Engine settings as read from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub estimator: EstimatorKind,
    pub context_mode: ContextMode,
    pub normalization: Normalization,
    pub num_permutations: u64,
    pub seed: u64,
    pub antithetic: bool,
    pub exact_limit: usize,
    pub batch_size: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Sampled,
            context_mode: ContextMode::ContextSampled,
            normalization: Normalization::FullSequenceNorm,
            num_permutations: 1000,
            seed: 0,
            antithetic: false,
            exact_limit: DEFAULT_EXACT_LIMIT,
            batch_size: 64,
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn stii_config(&self) -> StiiConfig {
        StiiConfig {
            estimator: self.estimator,
            context_mode: self.context_mode,
            normalization: self.normalization,
            sampling: SamplingConfig {
                num_permutations: self.num_permutations,
                seed: self.seed,
                antithetic: self.antithetic,
                convergence_check: None,
            },
            exact_limit: self.exact_limit,
        }
    }
}
