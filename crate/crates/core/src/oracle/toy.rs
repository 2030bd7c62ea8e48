//! Analytic cooperative games used to validate the estimators.

use serde::{Deserialize, Serialize};

use super::OracleError;
use crate::record::CoalitionMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToyGameKind {
    /// v(S) = sum of the weights of present features.
    Linear { weights: Vec<f64> },
    /// v(S) = 1 when every required feature is present.
    Unanimity { required: Vec<usize> },
    /// v(S) = 1 when at least `threshold` features are present.
    Majority { threshold: usize },
    /// v(S) = sum over present pairs i < j of `weights[i][j]`.
    PairwiseProduct { weights: Vec<Vec<f64>> },
    /// v(S) = sum over present pairs i < j of exp(-rate * (j - i)).
    DecayingInteraction { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGameSpec {
    pub n_features: usize,
    pub game: ToyGameKind,
    /// Per-dimension multipliers of the scalar game; defaults to `[1.0]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_scales: Option<Vec<f64>>,
}

impl ToyGameSpec {
    pub fn new(n_features: usize, game: ToyGameKind) -> Self {
        Self {
            n_features,
            game,
            output_scales: None,
        }
    }

    pub fn linear(weights: Vec<f64>) -> Self {
        Self::new(weights.len(), ToyGameKind::Linear { weights })
    }

    pub fn unanimity(n_features: usize, required: Vec<usize>) -> Self {
        Self::new(n_features, ToyGameKind::Unanimity { required })
    }

    pub fn majority(n_features: usize, threshold: usize) -> Self {
        Self::new(n_features, ToyGameKind::Majority { threshold })
    }

    pub fn pairwise_product(weights: Vec<Vec<f64>>) -> Self {
        Self::new(weights.len(), ToyGameKind::PairwiseProduct { weights })
    }

    pub fn decaying_interaction(n_features: usize, rate: f64) -> Self {
        Self::new(n_features, ToyGameKind::DecayingInteraction { rate })
    }

    pub fn with_scales(mut self, scales: Vec<f64>) -> Self {
        self.output_scales = Some(scales);
        self
    }

    pub fn output_dim(&self) -> usize {
        self.output_scales.as_ref().map_or(1, Vec::len)
    }

    pub fn build(&self) -> Result<ToyGame, OracleError> {
        let n = self.n_features;
        let bad = |msg: String| Err(OracleError::InvalidGame(msg));
        match &self.game {
            ToyGameKind::Linear { weights } => {
                if weights.len() != n {
                    return bad(format!("linear weights length {} != n_features {n}", weights.len()));
                }
            }
            ToyGameKind::Unanimity { required } => {
                if let Some(i) = required.iter().find(|&&i| i >= n) {
                    return bad(format!("unanimity member {i} outside 0..{n}"));
                }
            }
            ToyGameKind::Majority { .. } => {}
            ToyGameKind::PairwiseProduct { weights } => {
                if weights.len() != n || weights.iter().any(|row| row.len() != n) {
                    return bad(format!("pairwise weight matrix must be {n}x{n}"));
                }
            }
            ToyGameKind::DecayingInteraction { rate } => {
                if !rate.is_finite() {
                    return bad("decay rate must be finite".into());
                }
            }
        }
        let scales = self.output_scales.clone().unwrap_or_else(|| vec![1.0]);
        if scales.is_empty() || scales.iter().any(|s| !s.is_finite()) {
            return bad("output_scales must be non-empty and finite".into());
        }
        Ok(ToyGame {
            spec: self.clone(),
            scales,
        })
    }
}

/// A validated toy game.
#[derive(Debug, Clone)]
pub struct ToyGame {
    spec: ToyGameSpec,
    scales: Vec<f64>,
}

impl ToyGame {
    pub fn spec(&self) -> &ToyGameSpec {
        &self.spec
    }

    pub fn n_features(&self) -> usize {
        self.spec.n_features
    }

    pub fn output_dim(&self) -> usize {
        self.scales.len()
    }

    pub fn scalar(&self, mask: &CoalitionMask) -> f64 {
        match &self.spec.game {
            ToyGameKind::Linear { weights } => mask.ones().map(|i| weights[i]).sum(),
            ToyGameKind::Unanimity { required } => {
                if required.iter().all(|&i| mask.contains(i)) {
                    1.0
                } else {
                    0.0
                }
            }
            ToyGameKind::Majority { threshold } => {
                if mask.count_ones() >= *threshold {
                    1.0
                } else {
                    0.0
                }
            }
            ToyGameKind::PairwiseProduct { weights } => {
                let present: Vec<usize> = mask.ones().collect();
                let mut total = 0.0;
                for (k, &i) in present.iter().enumerate() {
                    for &j in &present[k + 1..] {
                        total += weights[i][j];
                    }
                }
                total
            }
            ToyGameKind::DecayingInteraction { rate } => {
                let present: Vec<usize> = mask.ones().collect();
                let mut total = 0.0;
                for (k, &i) in present.iter().enumerate() {
                    for &j in &present[k + 1..] {
                        total += (-rate * (j - i) as f64).exp();
                    }
                }
                total
            }
        }
    }

    pub fn value(&self, mask: &CoalitionMask) -> Vec<f64> {
        let v = self.scalar(mask);
        self.scales.iter().map(|s| s * v).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &str) -> CoalitionMask {
        CoalitionMask::parse_bit_string(bits).unwrap()
    }

    // Direct restatement of each game on a u64 bitmask, independent of CoalitionMask.
    fn reference(spec: &ToyGameSpec, bits: u64) -> f64 {
        let n = spec.n_features;
        let has = |i: usize| bits >> i & 1 == 1;
        match &spec.game {
            ToyGameKind::Linear { weights } => {
                (0..n).filter(|&i| has(i)).map(|i| weights[i]).sum()
            }
            ToyGameKind::Unanimity { required } => required.iter().all(|&i| has(i)) as u8 as f64,
            ToyGameKind::Majority { threshold } => (bits.count_ones() as usize >= *threshold) as u8 as f64,
            ToyGameKind::PairwiseProduct { weights } => {
                let mut t = 0.0;
                for i in 0..n {
                    for j in i + 1..n {
                        if has(i) && has(j) {
                            t += weights[i][j];
                        }
                    }
                }
                t
            }
            ToyGameKind::DecayingInteraction { rate } => {
                let mut t = 0.0;
                for i in 0..n {
                    for j in i + 1..n {
                        if has(i) && has(j) {
                            t += (-rate * (j - i) as f64).exp();
                        }
                    }
                }
                t
            }
        }
    }

    #[test]
    fn spec_examples() {
        let linear = ToyGameSpec::linear(vec![2.0, 3.0]).build().unwrap();
        assert_eq!(linear.value(&mask("11")), vec![5.0]);
        assert_eq!(linear.value(&mask("01")), vec![3.0]);

        let unanimity = ToyGameSpec::unanimity(2, vec![0, 1]).build().unwrap();
        assert_eq!(unanimity.value(&mask("10")), vec![0.0]);
        assert_eq!(unanimity.value(&mask("11")), vec![1.0]);

        let product = ToyGameSpec::pairwise_product(vec![vec![0.0, 2.0], vec![2.0, 0.0]])
            .build()
            .unwrap();
        assert_eq!(product.value(&mask("11")), vec![2.0]);
        for m in ["10", "01", "00"] {
            assert_eq!(product.value(&mask(m)), vec![0.0]);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ToyGameSpec::new(3, ToyGameKind::Linear { weights: vec![1.0] }).build().is_err());
        assert!(ToyGameSpec::unanimity(3, vec![0, 3]).build().is_err());
        assert!(ToyGameSpec::pairwise_product(vec![vec![0.0; 2]; 3]).build().is_err());
        assert!(ToyGameSpec::linear(vec![1.0, 1.0]).with_scales(vec![]).build().is_err());
    }

    #[test]
    fn exhaustive_agreement_with_reference() {
        let n = 12;
        let weights: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let matrix: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| ((i * 7 + j * 3) % 5) as f64 - 2.0).collect())
            .collect();
        let specs = [
            ToyGameSpec::linear(weights),
            ToyGameSpec::unanimity(n, vec![1, 4, 9]),
            ToyGameSpec::majority(n, 7),
            ToyGameSpec::pairwise_product(matrix),
            ToyGameSpec::decaying_interaction(n, 0.8),
        ];
        for spec in &specs {
            let game = spec.build().unwrap();
            for bits in 0..(1u64 << n) {
                let m = CoalitionMask::from_u64(n, bits);
                assert_eq!(game.scalar(&m), reference(spec, bits), "{spec:?} {bits:b}");
            }
        }
    }

    #[test]
    fn scales_give_multi_dimensional_output() {
        let g = ToyGameSpec::linear(vec![1.0, 2.0]).with_scales(vec![1.0, -0.5]).build().unwrap();
        assert_eq!(g.output_dim(), 2);
        assert_eq!(g.value(&mask("11")), vec![3.0, -1.5]);
    }
}
