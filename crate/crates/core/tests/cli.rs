//! End-to-end runs of the `stii` binary.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use stii::record::{read_records, serialize_record};
use stii::{Estimator, InteractionRecord, Modality, ToyGameSpec};

const BIN: &str = env!("CARGO_BIN_EXE_stii");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("STII_CACHE_DIR").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().expect("an error line")).unwrap()
}

#[test]
fn compute_linear_toy_gives_zero_interactions() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.jsonl");
    write_manifest(&manifest, &[toy_entry("lin", ToyGameSpec::linear(vec![0.3, -1.0, 2.5, 0.7, 1.1]), Modality::Toy, Some(5), None)]);
    let out = dir.path().join("out");
    let o = run(&["compute", "--instances", p(&manifest), "--out", p(&out), "--num-permutations", "200", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records = read_records(&std::fs::read_to_string(out.join("records.jsonl")).unwrap()).unwrap();
    assert_eq!(records.len(), 10);
    assert!(records.iter().all(|r| r.stii <= 1e-12 && r.estimator == Estimator::Sampled && r.seed == 3));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["instances"][0]["oracle_calls"].as_u64().unwrap() > 0);
}

#[test]
fn compute_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _, _) = mixed_corpus(dir.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&["compute", "--instances", p(&manifest), "--out", p(&out), "--num-permutations", "50", "--seed", "9"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((std::fs::read(out.join("records.jsonl")).unwrap(), std::fs::read(out.join("manifest.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn disk_cache_serves_repeat_runs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.jsonl");
    write_manifest(&manifest, &[toy_entry("maj", ToyGameSpec::majority(6, 3), Modality::Toy, None, None)]);
    let cache = dir.path().join("cache");
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let o = Command::new(BIN)
            .args(["compute", "--instances", p(&manifest), "--out", p(&out), "--estimator", "exact"])
            .env("STII_CACHE_DIR", &cache)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        runs.push((std::fs::read(out.join("records.jsonl")).unwrap(), m["instances"][0]["oracle_calls"].as_u64().unwrap()));
    }
    assert_eq!(runs[0].0, runs[1].0);
    assert_eq!(runs[0].1, 64);
    assert_eq!(runs[1].1, 0);
}

#[test]
fn unreachable_oracle_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.jsonl");
    let mut entry = toy_entry("x", ToyGameSpec::majority(3, 2), Modality::Toy, None, None);
    entry.oracle = None;
    write_manifest(&manifest, &[entry]);
    let o = run(&["compute", "--instances", p(&manifest), "--out", p(&dir.path().join("o")), "--oracle-command", "/nonexistent/oracle"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "BackendUnreachable");
}

#[test]
fn data_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("o");
    let o = run(&["analyze", "--records", p(&empty), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_line(&o)["error"], "EmptyInput");

    let recs = dir.path().join("r.jsonl");
    let rec = InteractionRecord {
        instance_id: "a".into(),
        pair: (0, 1),
        stii: 0.5,
        d_i: Some(1),
        d_p: Some(2),
        strata_tags: vec![],
        estimator: Estimator::Exact,
        num_permutations: 0,
        seed: 0,
        stderr: None,
    };
    std::fs::write(&recs, serialize_record(&rec) + "\n").unwrap();
    let o = run(&["analyze", "--records", p(&recs), "--out", p(&out), "--analysis", "syntax"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_line(&o)["error"], "MissingAnnotations");

    let future = dir.path().join("future.jsonl");
    std::fs::write(&future, serialize_record(&rec).replace("\"schema_version\":1", "\"schema_version\":2") + "\n").unwrap();
    let o = run(&["analyze", "--records", p(&future), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_line(&o)["error"], "SchemaMismatch");

    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["exit_code"], 1);

    let o = run(&["analyze", "--records", p(&dir.path().join("nope.jsonl")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["error"], "MissingPath");

    let bad_manifest = dir.path().join("bad.jsonl");
    std::fs::write(&bad_manifest, r#"{"instance_id":"s","n_features":2,"output_dim":1,"modality":"speech","feature_times":[0.1,0.1]}"#).unwrap();
    let o = run(&["compute", "--instances", p(&bad_manifest), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_line(&o)["error"], "InvalidInstance");
}

#[test]
fn analyze_monotone_records_gives_non_increasing_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::new();
    for s in 0..5 {
        for a in 0..10usize {
            for b in a + 1..10 {
                let rec = InteractionRecord {
                    instance_id: format!("i{s}"),
                    pair: (a, b),
                    stii: 1.0 / (b - a) as f64,
                    d_i: Some((b - a) as u64),
                    d_p: Some((10 - b) as u64),
                    strata_tags: vec![],
                    estimator: Estimator::Exact,
                    num_permutations: 0,
                    seed: 0,
                    stderr: None,
                };
                body += &(serialize_record(&rec) + "\n");
            }
        }
    }
    let recs = dir.path().join("r.jsonl");
    std::fs::write(&recs, body).unwrap();
    let out = dir.path().join("tables");
    let o = run(&["analyze", "--records", p(&recs), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("distance_curves.tsv")).unwrap();
    let means: Vec<f64> = table
        .lines()
        .filter(|l| l.starts_with("d_i\t"))
        .map(|l| l.split('\t').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(means.len(), 9);
    assert!(means.windows(2).all(|w| w[1] <= w[0]));
    assert!(table.contains("# config_hash="));
    assert!(table.contains("# schema_version=1"));
}

#[test]
fn full_pipeline_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, annotations, align) = mixed_corpus(dir.path());
    let out = dir.path().join("run");
    let o = run(&["compute", "--instances", p(&manifest), "--out", p(&out), "--num-permutations", "64", "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tables = dir.path().join("tables");
    let o = run(&[
        "analyze",
        "--records",
        p(&out.join("records.jsonl")),
        "--out",
        p(&tables),
        "--annotations",
        p(&annotations),
        "--alignments",
        p(&align),
        "--instances",
        p(&manifest),
        "--min-count",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["distance_curves", "syntax_grid", "mwe_comparison", "boundary_windows", "boundary_contrast", "consonant_heatmap"] {
        let t = std::fs::read_to_string(tables.join(format!("{name}.tsv"))).unwrap();
        assert!(t.lines().count() > 4, "{name}: {t}");
    }
    let contrast = std::fs::read_to_string(tables.join("boundary_contrast.tsv")).unwrap();
    assert!(contrast.contains("consonant-vowel") && contrast.contains("silence-adjacent"));
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest", "--trials", "10"]);
    assert!(o.status.success());
    let report = String::from_utf8(o.stdout).unwrap();
    assert_eq!(report.lines().count(), 6);
    assert!(report.lines().all(|l| l.starts_with("PASS ")));
}
