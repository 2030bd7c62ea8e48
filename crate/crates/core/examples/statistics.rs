//! Rank correlation with ties and percentile bootstrap intervals.
//!
//! Run with `cargo run --example statistics`.

use stii::stats::{bootstrap_mean_ci, midranks, spearman};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = [1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 4.0, 5.0];
    let y = [0.9, 0.7, 0.8, 0.5, 0.4, 0.45, 0.3, 0.1];
    println!("midranks of x: {:?}", midranks(&x));
    let r = spearman(&x, &y)?;
    println!("n={} rho={:.4} p={:.4} ({:?})", r.n, r.rho, r.p_value, r.method);

    let long_x: Vec<f64> = (0..40).map(|i| (i % 7) as f64).collect();
    let long_y: Vec<f64> = long_x.iter().enumerate().map(|(i, v)| -v + (i % 3) as f64).collect();
    let r = spearman(&long_x, &long_y)?;
    println!("n={} rho={:.4} p={:.2e} ({:?})", r.n, r.rho, r.p_value, r.method);

    let sample: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
    let ci = bootstrap_mean_ci(&sample, 2000, 0.95, 7)?;
    println!("mean {:.4}, 95% interval [{:.4}, {:.4}] from {} resamples", ci.mean, ci.lower, ci.upper, ci.resamples);
    Ok(())
}
