//! Spearman rank correlation with two-sided p-values, and percentile
//! bootstrap confidence intervals for a mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

/// Seed of the Monte Carlo permutation test when none is given.
pub const DEFAULT_PERMUTATION_SEED: u64 = 0x5eed_5eed;
pub const MONTE_CARLO_PERMUTATIONS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("a variable is constant; correlation undefined")]
    DegenerateInput,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("no values to summarize")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    TApprox,
    Permutation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: PValueMethod,
}

/// 1-based ranks; ties share the mean of the ranks they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, StatsError> {
    spearman_seeded(xs, ys, DEFAULT_PERMUTATION_SEED)
}

/// Two-sided Spearman test. p-values: t-approximation for n >= 20, full
/// permutation enumeration for n < 8, seeded Monte Carlo permutations between.
pub fn spearman_seeded(xs: &[f64], ys: &[f64], seed: u64) -> Result<CorrelationResult, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(StatsError::TooFewPoints(n));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let rx = midranks(xs);
    let ry = midranks(ys);
    if rx.iter().all(|&r| r == rx[0]) || ry.iter().all(|&r| r == ry[0]) {
        return Err(StatsError::DegenerateInput);
    }
    let rho = pearson(&rx, &ry);
    let (p_value, method) = if n >= 20 {
        (t_approx_p(rho, n), PValueMethod::TApprox)
    } else {
        (permutation_p(&rx, &ry, rho, seed), PValueMethod::Permutation)
    };
    Ok(CorrelationResult {
        rho,
        p_value,
        n,
        method,
    })
}

fn t_approx_p(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// The null distribution only depends on the two rank multisets, so both
/// are sorted and put in a canonical order; this makes the p-value exactly
/// symmetric in its arguments.
fn permutation_p(rx: &[f64], ry: &[f64], rho: f64, seed: u64) -> f64 {
    let mut a = rx.to_vec();
    let mut b = ry.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if b.iter().zip(&a).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Less) {
        std::mem::swap(&mut a, &mut b);
    }
    let threshold = rho.abs() - 1e-12;
    let n = a.len();
    if n < 8 {
        let mut perm = b.clone();
        let mut total = 0u64;
        let mut extreme = 0u64;
        for_each_permutation(&mut perm, n, &mut |p| {
            total += 1;
            if pearson(&a, p).abs() >= threshold {
                extreme += 1;
            }
        });
        extreme as f64 / total as f64
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm = b;
        let mut extreme = 0usize;
        for _ in 0..MONTE_CARLO_PERMUTATIONS {
            // Fisher-Yates
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            if pearson(&a, &perm).abs() >= threshold {
                extreme += 1;
            }
        }
        (extreme + 1) as f64 / (MONTE_CARLO_PERMUTATIONS + 1) as f64
    }
}

/// Heap's algorithm.
fn for_each_permutation(items: &mut [f64], k: usize, visit: &mut impl FnMut(&[f64])) {
    if k <= 1 {
        visit(items);
        return;
    }
    for i in 0..k - 1 {
        for_each_permutation(items, k - 1, visit);
        if k % 2 == 0 {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
    for_each_permutation(items, k - 1, visit);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub resamples: usize,
    pub seed: u64,
    /// Set when there is a single value and the interval collapses onto it.
    pub degenerate: bool,
}

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Percentile bootstrap of the mean. Resample `i` draws from its own
/// ChaCha stream of `seed`, so the result does not depend on thread count.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<BootstrapCI, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 || resamples == 0 {
        return Ok(BootstrapCI {
            mean,
            lower: mean,
            upper: mean,
            resamples,
            seed,
            degenerate: true,
        });
    }
    let mut means: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let total: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
            total / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let lower = quantile_sorted(&means, tail).min(mean);
    let upper = quantile_sorted(&means, 1.0 - tail).max(mean);
    Ok(BootstrapCI {
        mean,
        lower,
        upper,
        resamples,
        seed,
        degenerate: false,
    })
}

/// Linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn spearman_examples() {
        let r = spearman(&[1.0, 2.0, 3.0], &[1.0, 4.0, 9.0]).unwrap();
        assert_eq!(r.rho, 1.0);
        assert_eq!(r.method, PValueMethod::Permutation);
        // 2 of 6 orderings reach |rho| = 1
        assert!((r.p_value - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[9.0, 4.0, 1.0]).unwrap().rho, -1.0);
    }

    #[test]
    fn midrank_hand_computation() {
        // xs ranks: 1, 2.5, 2.5, 4 ; ys ranks: 1, 2, 3, 4
        assert_eq!(midranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        // centered: x = [-1.5, 0, 0, 1.5], y = [-1.5, -0.5, 0.5, 1.5]
        // sxy = 4.5, sxx = 4.5, syy = 5 -> rho = 4.5 / sqrt(22.5)
        let expected = 4.5 / 22.5f64.sqrt();
        assert!((r.rho - expected).abs() < 1e-15);
    }

    #[test]
    fn spearman_errors() {
        assert_eq!(spearman(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch(2, 1)));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooFewPoints(2)));
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::DegenerateInput));
        assert_eq!(spearman(&[1.0, f64::NAN, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::NonFinite));
    }

    #[test]
    fn p_value_regimes() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x * 1.7).sin() + x * 0.1).collect();
        assert_eq!(spearman(&xs, &ys).unwrap().method, PValueMethod::TApprox);
        let r = spearman(&xs[..12], &ys[..12]).unwrap();
        assert_eq!(r.method, PValueMethod::Permutation);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        // the seed makes the Monte Carlo regime reproducible
        assert_eq!(spearman(&xs[..12], &ys[..12]).unwrap(), r);
    }

    #[test]
    fn t_approx_agrees_with_permutation_for_moderate_n() {
        // a weak positive association on 20 points
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = (0..20).map(|i| ((i * 7) % 20) as f64 + i as f64 * 0.5).collect();
        let t = spearman(&xs, &ys).unwrap();
        let rx = midranks(&xs);
        let ry = midranks(&ys);
        let perm = permutation_p(&rx, &ry, t.rho, 1);
        assert!((t.p_value - perm).abs() < 0.02, "{} vs {perm}", t.p_value);
    }

    #[test]
    fn bootstrap_examples() {
        let flat = vec![0.5; 100];
        let ci = bootstrap_mean_ci(&flat, 1000, 0.95, 3).unwrap();
        assert_eq!((ci.mean, ci.lower, ci.upper), (0.5, 0.5, 0.5));
        assert!(!ci.degenerate);

        let one = bootstrap_mean_ci(&[0.7], 1000, 0.95, 3).unwrap();
        assert!(one.degenerate);
        assert_eq!((one.lower, one.upper), (0.7, 0.7));

        assert_eq!(bootstrap_mean_ci(&[], 10, 0.95, 0), Err(StatsError::EmptyInput));

        let vals: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).cos()).collect();
        let a = bootstrap_mean_ci(&vals, 500, 0.9, 12).unwrap();
        assert_eq!(a, bootstrap_mean_ci(&vals, 500, 0.9, 12).unwrap());
        assert!(a.lower < a.mean && a.mean < a.upper);
    }

    #[test]
    fn bootstrap_width_shrinks_like_inverse_sqrt_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let widths: Vec<f64> = [100usize, 1000, 10_000]
            .iter()
            .map(|&n| {
                let vals: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let ci = bootstrap_mean_ci(&vals, 1000, 0.95, 5).unwrap();
                ci.upper - ci.lower
            })
            .collect();
        assert!(widths[0] > widths[1] && widths[1] > widths[2], "{widths:?}");
        for w in widths.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 10f64.sqrt()).abs() < 0.8, "{ratio}");
        }
    }

    fn tied_data() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec((0i32..6).prop_map(f64::from), n),
                proptest::collection::vec(-50.0f64..50.0, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn monotone_transforms_leave_result_unchanged((xs, ys) in tied_data()) {
            if let Ok(r) = spearman(&xs, &ys) {
                let tx: Vec<f64> = xs.iter().map(|x| x.powi(3) * 2.0 + 1.0).collect();
                let ty: Vec<f64> = ys.iter().map(|y| y.exp()).collect();
                prop_assert_eq!(spearman(&tx, &ty).unwrap(), r);
            }
        }

        #[test]
        fn symmetric_and_sign_flips((xs, ys) in tied_data()) {
            if let Ok(r) = spearman(&xs, &ys) {
                prop_assert_eq!(spearman(&ys, &xs).unwrap(), r);
                let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
                prop_assert_eq!(spearman(&neg, &ys).unwrap().rho, -r.rho);
                prop_assert!(r.rho.abs() <= 1.0 && (0.0..=1.0).contains(&r.p_value));
            }
        }
    }
}
