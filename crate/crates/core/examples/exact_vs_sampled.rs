//! Exact enumeration against permutation sampling on a majority game.
//!
//! Run with `cargo run --example exact_vs_sampled`.

use stii::engine::{exact_shapley, exact_stii, sampled_shapley, sampled_stii, SamplingConfig, StiiConfig, DEFAULT_EXACT_LIMIT};
use stii::{Instance, OracleHandle, ToyGameSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 10;
    let spec = ToyGameSpec::majority(n, 6);
    let inst = Instance::toy("majority-10", n, 1);
    let oracle = OracleHandle::toy(&spec, &inst)?;

    let exact = exact_shapley(&oracle, &inst, &[3], DEFAULT_EXACT_LIMIT)?.phi[0];
    println!("feature 3, exact value {exact:.6}");
    for m in [10, 100, 1_000, 10_000] {
        let r = sampled_shapley(&oracle, &inst, &[3], &SamplingConfig::new(m, 1))?;
        let se = r.stderr_estimate.as_ref().map_or(f64::NAN, |s| s[0]);
        println!("  m={m:>6}  estimate {:.6}  stderr {se:.6}  error {:+.6}", r.phi[0], r.phi[0] - exact);
    }

    let exact = exact_stii(&oracle, &inst, (2, 7), &StiiConfig::exact())?;
    println!("pair (2, 7), exact interaction {exact:.6}");
    for m in [10, 100, 1_000, 10_000] {
        let r = sampled_stii(&oracle, &inst, (2, 7), &StiiConfig::sampled(m, 1))?;
        println!("  m={m:>6}  estimate {:.6}  stderr {:.6}", r.stii, r.stderr.unwrap_or(f64::NAN));
    }
    println!("oracle calls {} (cache hits {})", oracle.call_count(), oracle.cache_hits());
    Ok(())
}
