//! Fixture builders shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use stii::cli::ManifestEntry;
use stii::text::{AnnotationLine, MweStrength, MweTag};
use stii::{InstanceSpec, Modality, OracleSpec, ToyGameSpec};

pub fn toy_entry(id: &str, spec: ToyGameSpec, modality: Modality, target: Option<usize>, times: Option<Vec<f64>>) -> ManifestEntry {
    ManifestEntry {
        instance: InstanceSpec {
            instance_id: id.into(),
            n_features: spec.n_features,
            output_dim: spec.output_dim(),
            target_index: target,
            modality,
            feature_times: times,
        },
        oracle: Some(OracleSpec::Toy(spec)),
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) {
    let body: String = entries.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
    std::fs::write(path, body).unwrap();
}

/// Heads of a deterministic random tree: token i > 0 attaches to a token
/// before it.
pub fn tree_heads(n: usize, salt: u64) -> Vec<Option<usize>> {
    (0..n)
        .map(|i| if i == 0 { None } else { Some(((salt.wrapping_mul(2654435761) >> 3).wrapping_add(i as u64 * 7919) % i as u64) as usize) })
        .collect()
}

pub fn annotation(id: &str, n: usize, salt: u64) -> AnnotationLine {
    let mwe = (0..n)
        .map(|i| match (salt % 3, i) {
            (0, 1 | 2) => Some(MweTag { group: 0, strength: MweStrength::Strong }),
            (1, 3 | 4) => Some(MweTag { group: 1, strength: MweStrength::Weak }),
            _ => None,
        })
        .collect();
    AnnotationLine {
        schema_version: 1,
        instance_id: id.into(),
        tokens: (0..n).map(|i| format!("tok{i}")).collect(),
        heads: tree_heads(n, salt),
        mwe,
        overlap: vec![],
        target_index: Some(n),
    }
}

pub fn write_annotations(path: &Path, lines: &[AnnotationLine]) {
    let body: String = lines.iter().map(|l| serde_json::to_string(l).unwrap() + "\n").collect();
    std::fs::write(path, body).unwrap();
}

/// A short-layout alignment file with a single `phones` tier.
pub fn textgrid(intervals: &[(&str, f64, f64)]) -> String {
    let end = intervals.last().map_or(0.0, |i| i.2);
    let mut s = format!("\"ooTextFile\"\n\"TextGrid\"\n0\n{end}\n<exists>\n1\n\"IntervalTier\"\n\"phones\"\n0\n{end}\n{}\n", intervals.len());
    for (label, a, b) in intervals {
        s += &format!("{a}\n{b}\n\"{label}\"\n");
    }
    s
}

/// Text instances with annotations plus one speech instance with an
/// alignment, all served by toy games. Returns (manifest, annotations,
/// alignment dir).
pub fn mixed_corpus(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let mut entries = Vec::new();
    let mut anns = Vec::new();
    for s in 0..12u64 {
        let id = format!("sent{s:02}");
        let n = 8;
        let spec = ToyGameSpec::decaying_interaction(n, 0.4 + 0.05 * s as f64).with_scales(vec![1.0, 0.5]);
        entries.push(toy_entry(&id, spec, Modality::Text, Some(n), None));
        anns.push(annotation(&id, n, s));
    }
    let n = 30;
    let times: Vec<f64> = (0..n).map(|i| 0.01 + 0.02 * i as f64).collect();
    let mut weights = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            weights[i][j] = 1.0 / (1.0 + (j - i) as f64 + (i % 5) as f64);
        }
    }
    entries.push(toy_entry("utt1", ToyGameSpec::pairwise_product(weights), Modality::Speech, None, Some(times)));
    let manifest = dir.join("instances.jsonl");
    write_manifest(&manifest, &entries);
    let annotations = dir.join("annotations.jsonl");
    write_annotations(&annotations, &anns);
    let align = dir.join("alignments");
    std::fs::create_dir_all(&align).unwrap();
    let grid = textgrid(&[("", 0.0, 0.1), ("B", 0.1, 0.2), ("AH1", 0.2, 0.33), ("S", 0.33, 0.41), ("T", 0.41, 0.5), ("IY0", 0.5, 0.6)]);
    std::fs::write(align.join("utt1.TextGrid"), grid).unwrap();
    (manifest, annotations, align)
}
