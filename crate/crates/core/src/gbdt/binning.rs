//! Quantile histogram bins fitted on training values.

use serde::{Deserialize, Serialize};

/// Largest supported bin count (bins are stored as `u8`).
pub const MAX_BINS: usize = 256;

/// Upper bin edges: a value `x` falls in bin `b` when
/// `edges[b - 1] < x <= edges[b]`. Missing values go to bin 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMapper {
    pub edges: Vec<f64>,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

impl BinMapper {
    pub fn fit(values: &[f64], max_bins: usize) -> Self {
        let mut s: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
        s.sort_by(f64::total_cmp);
        let mut unique = s.clone();
        unique.dedup();
        let mut edges = Vec::new();
        if unique.len() <= max_bins {
            edges.extend(unique.windows(2).map(|w| midpoint(w[0], w[1])));
        } else {
            let n = s.len();
            for k in 1..max_bins {
                let pos = k * n / max_bins;
                if pos == 0 || pos >= n || s[pos - 1] >= s[pos] {
                    continue;
                }
                let e = midpoint(s[pos - 1], s[pos]);
                if edges.last().is_none_or(|last| e > *last) {
                    edges.push(e);
                }
            }
        }
        Self { edges }
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn bin(&self, x: f64) -> u8 {
        if x.is_nan() {
            0
        } else {
            self.edges.partition_point(|e| *e < x) as u8
        }
    }

    /// Threshold equivalent to "bin <= b".
    pub fn threshold(&self, b: usize) -> f64 {
        self.edges[b]
    }
}
