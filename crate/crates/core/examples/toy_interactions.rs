//! Pairwise interaction matrices for the five analytic toy games.
//!
//! Run with `cargo run --example toy_interactions`.

use stii::engine::{all_pairs, stii_matrix, StiiConfig};
use stii::selftest::standard_games;
use stii::{Instance, OracleHandle};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 6;
    for (name, spec) in standard_games(n) {
        let inst = Instance::toy(name, n, spec.output_dim());
        let oracle = OracleHandle::toy(&spec, &inst)?;
        let records = stii_matrix(&oracle, &inst, &all_pairs(n), &StiiConfig::exact())?;
        let mut grid = vec![vec![f64::NAN; n]; n];
        for r in &records {
            grid[r.pair.0][r.pair.1] = r.stii;
            grid[r.pair.1][r.pair.0] = r.stii;
        }
        println!("{name}");
        for row in grid {
            let cells: Vec<String> = row.iter().map(|v| if v.is_nan() { "     .".into() } else { format!("{v:6.3}") }).collect();
            println!("  {}", cells.join(" "));
        }
    }
    Ok(())
}
