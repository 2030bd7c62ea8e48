//! Correlation between interaction strength and dependency-tree distance,
//! stratified by token distance and distance to the predicted token.
//!
//! The toy sentences are built so that tokens close in the tree interact
//! more, which should show up as negative correlations.
//!
//! Run with `cargo run --example syntax_grid`.

use stii::engine::{all_pairs, stii_matrix, StiiConfig};
use stii::record::validate_instance;
use stii::text::{syntactic_distance, syntax_correlation_grid, AnnotationLine, GridConfig, SentenceAnnotation};
use stii::{InstanceSpec, Modality, OracleHandle, ToyGameSpec};

fn heads(n: usize, salt: usize) -> Vec<Option<usize>> {
    (0..n).map(|i| if i == 0 { None } else { Some((i * 7 + salt * 13) % i) }).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 10;
    let mut records = Vec::new();
    let mut annotations = Vec::new();
    for s in 0..60 {
        let id = format!("sent{s:02}");
        let sentence = SentenceAnnotation::from_line(AnnotationLine {
            schema_version: 1,
            instance_id: id.clone(),
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
            heads: heads(n, s),
            mwe: vec![],
            overlap: vec![],
            target_index: Some(n),
        })?;
        let mut weights = vec![vec![0.0; n]; n];
        for (a, b) in all_pairs(n) {
            let tree = syntactic_distance(&sentence, a, b)?.unwrap_or(n as u64) as f64;
            weights[a][b] = (-0.7 * tree).exp() * (1.0 + 0.1 * ((a * 31 + b * 17 + s) % 5) as f64);
        }
        let inst = validate_instance(InstanceSpec {
            instance_id: id,
            n_features: n,
            output_dim: 1,
            target_index: Some(n),
            modality: Modality::Text,
            feature_times: None,
        })?;
        let oracle = OracleHandle::toy(&ToyGameSpec::pairwise_product(weights), &inst)?;
        records.extend(stii_matrix(&oracle, &inst, &all_pairs(n), &StiiConfig::exact())?);
        annotations.push(sentence);
    }

    let grid = syntax_correlation_grid(&records, &annotations, &GridConfig { min_count: 20, alpha: 0.05, seed: 0 })?;
    println!("{:>3} {:>3} {:>5} {:>8} {:>10}  status", "d_i", "d_p", "n", "rho", "p");
    for c in &grid.cells {
        let status = if c.shown { "shown".to_string() } else { c.hidden_reason.map_or("hidden".into(), |r| r.as_str().to_string()) };
        let rho = c.rho.map_or("-".into(), |r| format!("{r:.3}"));
        let p = c.p_value.map_or("-".into(), |p| format!("{p:.2e}"));
        println!("{:>3} {:>3} {:>5} {:>8} {:>10}  {status}", c.key.d_i, c.key.d_p, c.n, rho, p);
    }
    println!("{:?}", grid.diagnostics);
    Ok(())
}
