//! Mean interaction against token distance for a batch of synthetic
//! sentences whose pairwise interactions decay with distance.
//!
//! Run with `cargo run --example distance_curves`.

use stii::engine::{all_pairs, stii_matrix, StiiConfig};
use stii::record::validate_instance;
use stii::text::{distance_curves, CurvePooling};
use stii::{InstanceSpec, Modality, OracleHandle, ToyGameSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 12;
    let mut records = Vec::new();
    for s in 0..8 {
        let inst = validate_instance(InstanceSpec {
            instance_id: format!("sent{s}"),
            n_features: n,
            output_dim: 1,
            target_index: Some(n),
            modality: Modality::Text,
            feature_times: None,
        })?;
        let spec = ToyGameSpec::decaying_interaction(n, 0.3 + 0.1 * s as f64);
        let oracle = OracleHandle::toy(&spec, &inst)?;
        records.extend(stii_matrix(&oracle, &inst, &all_pairs(n), &StiiConfig::sampled(256, 0))?);
    }
    let curves = distance_curves(&records, 20, CurvePooling::Pooled)?;
    println!("{:>4} {:>12} {:>6}   (pair distance)", "d_i", "mean", "count");
    for p in &curves.by_pair_distance {
        println!("{:>4} {:>12.6} {:>6}{}", p.distance, p.mean, p.count, if p.low_count { "  low count" } else { "" });
    }
    println!("{:>4} {:>12} {:>6}   (distance to the predicted token)", "d_p", "mean", "count");
    for p in &curves.by_prediction_distance {
        println!("{:>4} {:>12.6} {:>6}{}", p.distance, p.mean, p.count, if p.low_count { "  low count" } else { "" });
    }
    Ok(())
}
