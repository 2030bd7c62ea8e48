//! The compute and analyze stages end to end on a toy manifest, writing
//! records, a run manifest and the figure-data tables to a temporary
//! directory.
//!
//! Run with `cargo run --example pipeline`.

use stii::cli::{cmd_analyze, cmd_compute, AnalyzeInputs, ManifestEntry, RunConfig};
use stii::engine::EstimatorKind;
use stii::{InstanceSpec, Modality, OracleSpec, ToyGameSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let n = 10;
    let manifest: String = (0..15)
        .map(|s| {
            let entry = ManifestEntry {
                instance: InstanceSpec {
                    instance_id: format!("sent{s:02}"),
                    n_features: n,
                    output_dim: 1,
                    target_index: Some(n),
                    modality: Modality::Text,
                    feature_times: None,
                },
                oracle: Some(OracleSpec::Toy(ToyGameSpec::decaying_interaction(n, 0.5 + 0.05 * s as f64))),
            };
            serde_json::to_string(&entry).unwrap() + "\n"
        })
        .collect();
    let instances = dir.path().join("instances.jsonl");
    std::fs::write(&instances, manifest)?;

    let mut config = RunConfig::default();
    config.engine.estimator = EstimatorKind::Sampled;
    config.engine.num_permutations = 128;
    config.analysis.min_count = 10;
    let run = dir.path().join("run");
    let summary = cmd_compute(&config, &instances, &run, None)?;
    println!("config {} wrote {} instances, records sha256 {}", &summary.config_hash[..12], summary.instances.len(), &summary.records_sha256[..12]);

    let tables = dir.path().join("tables");
    let inputs = AnalyzeInputs { records: run.join("records.jsonl"), ..Default::default() };
    for name in cmd_analyze(&config, &inputs, &tables)? {
        println!("--- {name}");
        print!("{}", std::fs::read_to_string(tables.join(name))?);
    }
    Ok(())
}
