//! Interaction around phone boundaries: windows of consecutive frame pairs
//! near each boundary, contrasted by boundary type and broken down by
//! consonant class.
//!
//! Run with `cargo run --example speech_boundaries`.

use stii::engine::{consecutive_pairs, stii_matrix, StiiConfig};
use stii::record::validate_instance;
use stii::speech::{
    boundary_contrast, boundary_windows, consonant_heatmap, load_alignment, stii_by_pair, window_stii_from_records,
    HeatmapSide, PhoneTable, WindowAggregation, WindowStii,
};
use stii::text::BootstrapConfig;
use stii::{InstanceSpec, Modality, OracleHandle, ToyGameSpec};

const ALIGNMENT: &str = r#"File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 1.2
tiers? <exists>
size = 1
item []:
    item [1]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 1.2
        intervals: size = 8
        intervals [1]:
            xmin = 0
            xmax = 0.15
            text = "sil"
        intervals [2]:
            xmin = 0.15
            xmax = 0.3
            text = "K"
        intervals [3]:
            xmin = 0.3
            xmax = 0.45
            text = "AE1"
        intervals [4]:
            xmin = 0.45
            xmax = 0.55
            text = "T"
        intervals [5]:
            xmin = 0.55
            xmax = 0.7
            text = "S"
        intervals [6]:
            xmin = 0.7
            xmax = 0.85
            text = "IY1"
        intervals [7]:
            xmin = 0.85
            xmax = 1.0
            text = "N"
        intervals [8]:
            xmin = 1.0
            xmax = 1.2
            text = "sp"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let segments = load_alignment(ALIGNMENT, "utt")?;
    let table = PhoneTable::builtin();
    // one feature frame every 20 ms
    let n = 60;
    let times: Vec<f64> = (0..n).map(|i| 0.01 + 0.02 * i as f64).collect();
    let inst = validate_instance(InstanceSpec {
        instance_id: "utt".into(),
        n_features: n,
        output_dim: 1,
        target_index: None,
        modality: Modality::Speech,
        feature_times: Some(times.clone()),
    })?;
    // neighbouring frames interact more strongly inside vowels
    let mut weights = vec![vec![0.0; n]; n];
    for i in 0..n - 1 {
        let vowel = segments.iter().any(|s| s.start_s <= times[i] && times[i] < s.end_s && s.label.starts_with(['A', 'E', 'I', 'O', 'U']));
        weights[i][i + 1] = if vowel { 1.0 } else { 0.4 };
    }
    let oracle = OracleHandle::toy(&ToyGameSpec::pairwise_product(weights), &inst)?;
    // 60 frames is past exact enumeration; a pairwise game has no sampling noise
    let records = stii_matrix(&oracle, &inst, &consecutive_pairs(n), &StiiConfig::sampled(64, 0))?;
    let lookup = stii_by_pair(&records);

    let deltas = [0.02, 0.06, 0.1];
    let mut windows = Vec::new();
    for &delta in &deltas {
        for window in boundary_windows(&segments, &times, delta) {
            let stii = window_stii_from_records(&window, &lookup, WindowAggregation::Mean)?;
            if delta == 0.1 {
                println!("{:>4} | {:<4} at {:.2}s: {} pairs, mean {stii:.4}", window.left_label, window.right_label, window.boundary_time, window.member_pairs.len());
            }
            windows.push(WindowStii { window, stii });
        }
    }

    let bootstrap = BootstrapConfig { resamples: 500, level: 0.95, seed: 0 };
    for p in boundary_contrast(&windows, table, &deltas, &bootstrap)? {
        if let Some(mean) = p.mean {
            println!("delta {:.2} {:<20} n={} mean {mean:.4}", p.delta, p.boundary_type.as_str(), p.count);
        }
    }
    for c in consonant_heatmap(&windows, table, 0.1, HeatmapSide::Both)?.iter().filter(|c| c.count > 0) {
        println!("{} {} {}: {:.4} over {} windows", c.manner.as_str(), c.place.as_str(), if c.voiced { "voiced" } else { "voiceless" }, c.mean.unwrap_or(f64::NAN), c.count);
    }
    Ok(())
}
