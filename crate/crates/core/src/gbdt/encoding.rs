//! Smoothed target-mean encoding of categorical columns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalEncoder {
    /// Weighted mean target over all fitting rows; unseen categories map here.
    pub prior_mean: f64,
    pub prior_strength: f64,
    pub values: BTreeMap<String, f64>,
}

impl CategoricalEncoder {
    pub fn encode(&self, category: &str) -> f64 {
        self.values
            .get(category)
            .copied()
            .unwrap_or(self.prior_mean)
    }
}

/// Fits `enc(v) = (Σ w·y + k·ȳ) / (Σ w + k)` over rows with category `v`,
/// where `ȳ` is the global weighted mean and `k` the prior strength. Rows with
/// zero weight carry no information and do not register their category.
pub fn encode_categoricals(
    column: &[String],
    target: &[f64],
    weights: &[f64],
    prior_strength: f64,
) -> (CategoricalEncoder, Vec<f64>) {
    let total_w: f64 = weights.iter().sum();
    let prior_mean = if total_w > 0.0 {
        target.iter().zip(weights).map(|(y, w)| y * w).sum::<f64>() / total_w
    } else {
        0.0
    };
    let mut sums: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for ((c, &y), &w) in column.iter().zip(target).zip(weights) {
        if w > 0.0 {
            let e = sums.entry(c.as_str()).or_insert((0.0, 0.0));
            e.0 += w * y;
            e.1 += w;
        }
    }
    let values = sums
        .into_iter()
        .map(|(c, (wy, w))| {
            let enc = if prior_strength.is_infinite() {
                prior_mean
            } else {
                (wy + prior_strength * prior_mean) / (w + prior_strength)
            };
            (c.to_string(), enc)
        })
        .collect();
    let encoder = CategoricalEncoder {
        prior_mean,
        prior_strength,
        values,
    };
    let encoded = column.iter().map(|c| encoder.encode(c)).collect();
    (encoder, encoded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_category_maps_to_global_mean() {
        let (enc, out) =
            encode_categoricals(&col(&["a", "a", "a"]), &[1.0, 2.0, 6.0], &[1.0; 3], 5.0);
        assert!((enc.encode("a") - 3.0).abs() < 1e-12);
        assert!(out.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn exact_means_without_prior() {
        let mut c = vec!["A".to_string(); 10];
        c.extend(vec!["B".to_string(); 10]);
        let mut y = vec![1.0; 10];
        y.extend(vec![0.0; 10]);
        let (enc, _) = encode_categoricals(&c, &y, &[1.0; 20], 0.0);
        assert_eq!(enc.encode("A"), 1.0);
        assert_eq!(enc.encode("B"), 0.0);
        assert_eq!(enc.encode("unseen"), 0.5);
    }

    #[test]
    fn infinite_prior_collapses_to_mean() {
        let (enc, _) =
            encode_categoricals(&col(&["a", "b"]), &[0.0, 4.0], &[1.0, 1.0], f64::INFINITY);
        assert_eq!(enc.encode("a"), 2.0);
        assert_eq!(enc.encode("b"), 2.0);
        let (enc, _) = encode_categoricals(&col(&["a", "b"]), &[0.0, 4.0], &[1.0, 1.0], 1e12);
        assert!((enc.encode("a") - 2.0).abs() < 1e-9);
    }
}
