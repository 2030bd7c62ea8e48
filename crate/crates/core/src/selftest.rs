//! Exact-versus-sampled checks of the estimator invariants on toy games.

use std::fmt::Write as _;

use crate::engine::{
    self, exact_shapley_weighted, exact_stii, sampled_shapley, sampled_stii, shapley_weight, ContextMode, EngineError,
    Normalization, SamplingConfig, StiiConfig, WeightFn, DEFAULT_EXACT_LIMIT,
};
use crate::oracle::{OracleHandle, ToyGameSpec};
use crate::record::{CoalitionMask, Instance};

/// The five toy games on `n` features, with fixed parameters.
pub fn standard_games(n: usize) -> Vec<(&'static str, ToyGameSpec)> {
    let linear: Vec<f64> = (0..n).map(|i| if i % 3 == 2 { 0.0 } else { 0.5 + 0.25 * i as f64 * if i % 2 == 0 { 1.0 } else { -1.0 } }).collect();
    let pairwise: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i < j { 1.0 / (1.0 + (i + 2 * j) as f64) } else { 0.0 }).collect())
        .collect();
    vec![
        ("linear", ToyGameSpec::linear(linear)),
        ("unanimity", ToyGameSpec::unanimity(n, vec![0, n - 1])),
        ("majority", ToyGameSpec::majority(n, n / 2 + 1)),
        ("pairwise_product", ToyGameSpec::pairwise_product(pairwise).with_scales(vec![1.0, -0.5])),
        ("decaying_interaction", ToyGameSpec::decaying_interaction(n, 0.5)),
    ]
}

#[derive(Debug, Clone, Copy)]
pub struct SelftestConfig {
    pub seed: u64,
    /// Context weight used by the exact Shapley estimator under test.
    pub weight: WeightFn,
    pub trials: u64,
    pub num_permutations: u64,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            weight: shapley_weight,
            trials: 20,
            num_permutations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub results: Vec<PropertyResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.results.iter().find(|r| r.name == name)
    }

    /// One `PASS name: detail` or `FAIL name: detail` line per property.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            let _ = writeln!(out, "{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        }
        out
    }
}

fn setup(spec: &ToyGameSpec) -> (OracleHandle, Instance) {
    let inst = Instance::toy(format!("selftest-{}", spec.n_features), spec.n_features, spec.output_dim());
    let oracle = OracleHandle::toy(spec, &inst).expect("standard games are valid");
    (oracle, inst)
}

fn outcome(name: &'static str, result: Result<String, String>) -> PropertyResult {
    match result {
        Ok(detail) => PropertyResult { name, passed: true, detail },
        Err(detail) => PropertyResult { name, passed: false, detail },
    }
}

fn engine_err(e: EngineError) -> String {
    format!("engine error: {e}")
}

fn efficiency(weight: WeightFn) -> Result<String, String> {
    let mut checked = 0;
    for n in [2, 5, 8, 12] {
        for (name, spec) in standard_games(n) {
            let (oracle, inst) = setup(&spec);
            let full = oracle.evaluate(&inst, &CoalitionMask::full(n)).map_err(|e| e.to_string())?;
            let empty = oracle.evaluate(&inst, &CoalitionMask::empty(n)).map_err(|e| e.to_string())?;
            let mut total = vec![0.0; inst.output_dim()];
            for i in 0..n {
                let r = exact_shapley_weighted(&oracle, &inst, &[i], DEFAULT_EXACT_LIMIT, weight).map_err(engine_err)?;
                for (t, p) in total.iter_mut().zip(&r.phi) {
                    *t += p;
                }
            }
            for d in 0..inst.output_dim() {
                let gap = (total[d] - (full[d] - empty[d])).abs();
                if gap > 1e-9 {
                    return Err(format!("{name} n={n}: sum of values misses v(N) - v(empty) by {gap:e}"));
                }
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} games, tolerance 1e-9"))
}

fn dummy() -> Result<String, String> {
    let n = 6;
    let (_, spec) = standard_games(n).swap_remove(0);
    let (oracle, inst) = setup(&spec);
    // feature 2 carries weight zero
    let phi = engine::exact_shapley(&oracle, &inst, &[2], DEFAULT_EXACT_LIMIT).map_err(engine_err)?.phi[0];
    if phi != 0.0 {
        return Err(format!("zero-weight feature has value {phi}"));
    }
    for b in (0..n).filter(|&b| b != 2) {
        let s = exact_stii(&oracle, &inst, (2, b), &StiiConfig::exact()).map_err(engine_err)?;
        if s != 0.0 {
            return Err(format!("zero-weight feature interacts with {b}: {s}"));
        }
    }
    Ok("zero value and zero interaction with every partner".into())
}

fn symmetry(seed: u64) -> Result<String, String> {
    let n = 6;
    let mut checked = 0;
    for (name, spec) in standard_games(n) {
        let (oracle, inst) = setup(&spec);
        for (a, b) in engine::all_pairs(n) {
            for mode in [ContextMode::ContextSampled, ContextMode::EmptyContext] {
                let cfg = StiiConfig::exact().with_context(mode);
                let ab = exact_stii(&oracle, &inst, (a, b), &cfg).map_err(engine_err)?;
                let ba = exact_stii(&oracle, &inst, (b, a), &cfg).map_err(engine_err)?;
                if ab.to_bits() != ba.to_bits() {
                    return Err(format!("{name} ({a},{b}): {ab} vs {ba}"));
                }
            }
            let cfg = StiiConfig::sampled(64, seed);
            let ab = sampled_stii(&oracle, &inst, (a, b), &cfg).map_err(engine_err)?;
            let ba = sampled_stii(&oracle, &inst, (b, a), &cfg).map_err(engine_err)?;
            if ab != ba {
                return Err(format!("{name} ({a},{b}) sampled: {} vs {}", ab.stii, ba.stii));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} pairs, exact and sampled"))
}

fn consistency(seed: u64, trials: u64, m: u64) -> Result<String, String> {
    let n = 6;
    let (mut within, mut total) = (0u64, 0u64);
    for (_, spec) in standard_games(n) {
        let (oracle, inst) = setup(&spec);
        let exact_phi = engine::exact_shapley(&oracle, &inst, &[1], DEFAULT_EXACT_LIMIT).map_err(engine_err)?.phi;
        let exact_s = exact_stii(&oracle, &inst, (0, n - 1), &StiiConfig::exact()).map_err(engine_err)?;
        for t in 0..trials {
            let s = seed.wrapping_add(t);
            let r = sampled_shapley(&oracle, &inst, &[1], &SamplingConfig::new(m, s)).map_err(engine_err)?;
            let se = r.stderr_estimate.unwrap_or_default();
            let ok = r.phi.iter().zip(&exact_phi).zip(&se).all(|((p, e), s)| (p - e).abs() <= 3.0 * s + 1e-12);
            within += ok as u64;
            let st = sampled_stii(&oracle, &inst, (0, n - 1), &StiiConfig::sampled(m, s)).map_err(engine_err)?;
            let ok = (st.stii - exact_s).abs() <= 3.0 * st.stderr.unwrap_or(0.0) + 1e-12;
            within += ok as u64;
            total += 2;
        }
    }
    // the 3-sigma band holds in about 99.7% of trials
    let needed = (total as f64 * 0.95).ceil() as u64;
    let detail = format!("{within}/{total} estimates within 3 stderr (need {needed})");
    if within >= needed {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn normalization_equivariance() -> Result<String, String> {
    let n = 6;
    let c = 3.5;
    for (name, spec) in standard_games(n) {
        let scales = spec.output_scales.clone().unwrap_or_else(|| vec![1.0]);
        let scaled = spec.clone().with_scales(scales.iter().map(|s| s * c).collect());
        let (o1, i1) = setup(&spec);
        let (o2, i2) = setup(&scaled);
        for pair in engine::all_pairs(n) {
            for norm in [Normalization::FullSequenceNorm, Normalization::None] {
                let cfg = StiiConfig::exact().with_normalization(norm);
                let base = exact_stii(&o1, &i1, pair, &cfg);
                let big = exact_stii(&o2, &i2, pair, &cfg);
                let (base, big) = match (base, big) {
                    (Ok(a), Ok(b)) => (a, b),
                    (Err(EngineError::ZeroNormalizer), Err(EngineError::ZeroNormalizer)) => continue,
                    (a, b) => return Err(format!("{name} {pair:?}: {a:?} vs {b:?}")),
                };
                let expected = if norm == Normalization::None { base * c } else { base };
                if (big - expected).abs() > 1e-12 * expected.abs().max(1.0) {
                    return Err(format!("{name} {pair:?} {norm:?}: {big} vs {expected}"));
                }
            }
        }
    }
    Ok(format!("scale {c}: normalized unchanged, unnormalized scaled"))
}

fn non_negativity(seed: u64) -> Result<String, String> {
    let mut checked = 0;
    for n in [2, 4, 7] {
        for (name, spec) in standard_games(n) {
            let (oracle, inst) = setup(&spec);
            for pair in engine::all_pairs(n) {
                for cfg in [StiiConfig::exact(), StiiConfig::sampled(32, seed)] {
                    let s = engine::stii(&oracle, &inst, pair, &cfg.with_normalization(Normalization::None)).map_err(engine_err)?;
                    if !(s.stii >= 0.0) {
                        return Err(format!("{name} {pair:?}: {}", s.stii));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} estimates"))
}

/// Runs every property; deterministic in `config`.
pub fn run_selftest(config: &SelftestConfig) -> SelftestReport {
    SelftestReport {
        results: vec![
            outcome("efficiency", efficiency(config.weight)),
            outcome("dummy", dummy()),
            outcome("symmetry", symmetry(config.seed)),
            outcome("consistency", consistency(config.seed, config.trials, config.num_permutations)),
            outcome("normalization_equivariance", normalization_equivariance()),
            outcome("non_negativity", non_negativity(config.seed)),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Binomial count of the contexts, a plausible but wrong weight.
    fn count_weight(rest: usize, s: usize) -> f64 {
        (0..s).fold(1.0, |c, i| c * (rest - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn fresh_build_passes() {
        let report = run_selftest(&SelftestConfig::default());
        assert!(report.all_passed(), "{}", report.render());
        assert_eq!(report.results.len(), 6);
    }

    #[test]
    fn wrong_weight_fails_efficiency() {
        let report = run_selftest(&SelftestConfig {
            weight: count_weight,
            ..Default::default()
        });
        assert!(!report.get("efficiency").unwrap().passed);
        assert!(report.get("dummy").unwrap().passed);
    }

    #[test]
    fn report_is_deterministic() {
        let cfg = SelftestConfig { seed: 9, trials: 5, ..Default::default() };
        assert_eq!(run_selftest(&cfg).render(), run_selftest(&cfg).render());
    }
}
