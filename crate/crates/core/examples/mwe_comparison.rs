//! Interaction inside multiword expressions against the all-pairs baseline,
//! with bootstrap intervals per stratum.
//!
//! Run with `cargo run --example mwe_comparison`.

use stii::engine::{all_pairs, stii_matrix, StiiConfig};
use stii::record::validate_instance;
use stii::text::{mwe_comparison, shared_mwe, AnnotationLine, BootstrapConfig, MweStrength, MweTag, SentenceAnnotation, SeriesPoint};
use stii::{InstanceSpec, Modality, OracleHandle, ToyGameSpec};

fn show(label: &str, p: &Option<SeriesPoint>) -> String {
    match p {
        Some(p) => format!("{label} {:.3} [{:.3}, {:.3}] n={}", p.mean, p.ci.lower, p.ci.upper, p.count),
        None => format!("{label} -"),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = 8;
    let mut records = Vec::new();
    let mut annotations = Vec::new();
    for s in 0..40usize {
        let id = format!("sent{s:02}");
        // a strong expression at (s % 5, s % 5 + 1) and a weak one two tokens later
        let start = s % 5;
        let mwe = (0..n)
            .map(|i| match i.checked_sub(start) {
                Some(0 | 1) => Some(MweTag { group: 0, strength: MweStrength::Strong }),
                Some(2 | 3) => Some(MweTag { group: 1, strength: MweStrength::Weak }),
                _ => None,
            })
            .collect();
        let sentence = SentenceAnnotation::from_line(AnnotationLine {
            schema_version: 1,
            instance_id: id.clone(),
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
            heads: (0..n).map(|i| i.checked_sub(1)).collect(),
            mwe,
            overlap: vec![],
            target_index: Some(n),
        })?;
        let mut weights = vec![vec![0.0; n]; n];
        for (a, b) in all_pairs(n) {
            let boost = match shared_mwe(&sentence, a, b) {
                Some(MweStrength::Strong) => 3.0,
                Some(MweStrength::Weak) => 1.5,
                None => 1.0,
            };
            weights[a][b] = boost * (-0.5 * (b - a) as f64).exp() * (1.0 + 0.05 * ((a + b + s) % 4) as f64);
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

    let cells = mwe_comparison(&records, &annotations, &BootstrapConfig { resamples: 1000, level: 0.95, seed: 3 })?;
    for c in cells.iter().filter(|c| c.strong.is_some() || c.weak.is_some()) {
        println!("d_p={} d_i={}: {} | {} | {}", c.key.d_p, c.key.d_i, show("strong", &c.strong), show("weak", &c.weak), show("all", &c.baseline));
    }
    Ok(())
}
