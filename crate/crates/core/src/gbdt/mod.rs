//! Gradient-boosted regression trees on weighted squared error.
//!
//! Numeric features are quantile-binned once on the training rows; categorical
//! features are replaced by a smoothed target-mean encoding and then binned like
//! any numeric column. Trees grow level-wise to `max_depth`. Rows with zero
//! weight are dropped before anything is fitted, so they cannot influence bins,
//! encodings or the random streams.

mod binning;
mod encoding;
mod tree;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use binning::{BinMapper, MAX_BINS};
pub use encoding::{encode_categoricals, CategoricalEncoder};
pub use tree::{Node, Tree};

use crate::error::{Error, Result};
use crate::seed;
use tree::{grow_tree, GrowInput, GrowParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub l2_leaf_reg: f64,
    pub feature_subsample: f64,
    pub row_subsample: f64,
    pub min_samples_leaf: usize,
    pub histogram_bins: usize,
    pub early_stopping_rounds: usize,
    /// Pseudo-count pulling category encodings toward the global mean.
    pub categorical_prior: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            learning_rate: 0.05,
            max_depth: 6,
            l2_leaf_reg: 3.0,
            feature_subsample: 1.0,
            row_subsample: 1.0,
            min_samples_leaf: 1,
            histogram_bins: 255,
            early_stopping_rounds: 500,
            categorical_prior: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.learning_rate) {
            return Err(Error::Config(format!(
                "learning_rate {} not in (0, 1]",
                self.learning_rate
            )));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be >= 1".into()));
        }
        if !(self.l2_leaf_reg >= 0.0 && self.l2_leaf_reg.is_finite()) {
            return Err(Error::Config(format!(
                "l2_leaf_reg {} must be >= 0",
                self.l2_leaf_reg
            )));
        }
        if !unit(self.feature_subsample) || !unit(self.row_subsample) {
            return Err(Error::Config("subsample ratios must lie in (0, 1]".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be >= 1".into()));
        }
        if !(2..=MAX_BINS).contains(&self.histogram_bins) {
            return Err(Error::Config(format!(
                "histogram_bins must lie in 2..={MAX_BINS}"
            )));
        }
        if self.early_stopping_rounds > self.max_iterations {
            return Err(Error::Config(format!(
                "early_stopping_rounds {} exceeds max_iterations {}",
                self.early_stopping_rounds, self.max_iterations
            )));
        }
        if !(self.categorical_prior >= 0.0) {
            return Err(Error::Config("categorical_prior must be >= 0".into()));
        }
        Ok(())
    }
}

/// Column-major model inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Features {
    pub numeric_names: Vec<String>,
    pub numeric: Vec<Vec<f64>>,
    pub categorical_names: Vec<String>,
    pub categorical: Vec<Vec<String>>,
}

impl Features {
    pub fn n_rows(&self) -> usize {
        self.numeric
            .first()
            .map(Vec::len)
            .or_else(|| self.categorical.first().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn n_features(&self) -> usize {
        self.numeric.len() + self.categorical.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.numeric_names
            .iter()
            .chain(&self.categorical_names)
            .cloned()
            .collect()
    }

    fn select(&self, rows: &[usize]) -> Self {
        Self {
            numeric_names: self.numeric_names.clone(),
            numeric: self
                .numeric
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            categorical_names: self.categorical_names.clone(),
            categorical: self
                .categorical
                .iter()
                .map(|c| rows.iter().map(|&r| c[r].clone()).collect())
                .collect(),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.n_rows();
        if self.numeric.len() != self.numeric_names.len()
            || self.categorical.len() != self.categorical_names.len()
        {
            return Err(Error::invalid("feature names and columns differ in count"));
        }
        if self.numeric.iter().any(|c| c.len() != n)
            || self.categorical.iter().any(|c| c.len() != n)
        {
            return Err(Error::invalid("feature columns differ in length"));
        }
        for (name, col) in self.numeric_names.iter().zip(&self.numeric) {
            if let Some(row) = col.iter().position(|v| v.is_infinite()) {
                return Err(Error::NonFinite {
                    what: format!("feature {name}"),
                    row,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub features: Features,
    pub target: Vec<f64>,
    pub weight: Vec<f64>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Rows with the given indices, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(rows),
            target: rows.iter().map(|&r| self.target[r]).collect(),
            weight: rows.iter().map(|&r| self.weight[r]).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        self.features.check()?;
        if self.features.n_rows() != self.target.len() && self.features.n_features() > 0 {
            return Err(Error::invalid("feature and target row counts differ"));
        }
        if self.weight.len() != self.target.len() {
            return Err(Error::invalid("weight and target row counts differ"));
        }
        if let Some(row) = self.target.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "target".into(),
                row,
            });
        }
        if let Some(row) = self.weight.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NonFinite {
                what: "weight".into(),
                row,
            });
        }
        Ok(())
    }
}

/// Per-iteration training/validation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub train_rmse: f64,
    pub valid_rmse: Option<f64>,
}

/// Fitted boosted-tree regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub config: TrainConfig,
    pub numeric_names: Vec<String>,
    pub categorical_names: Vec<String>,
    pub encoders: Vec<CategoricalEncoder>,
    pub bin_edges: Vec<BinMapper>,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Number of leading trees used for prediction.
    pub best_iteration: usize,
    /// Entry 0 is the base score alone; entry `k` follows tree `k`.
    pub history: Vec<IterationLog>,
}

/// Training inputs after zero-weight removal, encoding and binning. Reusable
/// across configurations that share `histogram_bins` and `categorical_prior`.
#[derive(Debug, Clone)]
pub struct PreparedTrain {
    numeric_names: Vec<String>,
    categorical_names: Vec<String>,
    encoders: Vec<CategoricalEncoder>,
    mappers: Vec<BinMapper>,
    binned: Vec<Vec<u8>>,
    target: Vec<f64>,
    weight: Vec<f64>,
    histogram_bins: usize,
    categorical_prior: f64,
}

#[derive(Debug, Clone)]
pub struct PreparedEval {
    binned: Vec<Vec<u8>>,
    target: Vec<f64>,
    weight: Vec<f64>,
}

fn encode_with(encoders: &[CategoricalEncoder], features: &Features) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = features.numeric.clone();
    for (enc, col) in encoders.iter().zip(&features.categorical) {
        cols.push(col.iter().map(|c| enc.encode(c)).collect());
    }
    cols
}

impl PreparedTrain {
    pub fn new(train: &Dataset, histogram_bins: usize, categorical_prior: f64) -> Result<Self> {
        train.check()?;
        let keep: Vec<usize> = (0..train.n_rows())
            .filter(|&r| train.weight[r] > 0.0)
            .collect();
        if keep.is_empty() {
            return Err(Error::ZeroWeight);
        }
        let data = if keep.len() == train.n_rows() {
            train.clone()
        } else {
            train.select(&keep)
        };
        let total: f64 = data.weight.iter().sum();
        let n = data.n_rows() as f64;
        // mean weight 1 makes l2_leaf_reg and the gain floor independent of weight units
        let weight: Vec<f64> = data.weight.iter().map(|w| w * n / total).collect();

        let mut encoders = Vec::with_capacity(data.features.categorical.len());
        for col in &data.features.categorical {
            let (enc, _) = encode_categoricals(col, &data.target, &weight, categorical_prior);
            encoders.push(enc);
        }
        let encoded = encode_with(&encoders, &data.features);
        let mappers: Vec<BinMapper> = encoded
            .iter()
            .map(|c| BinMapper::fit(c, histogram_bins))
            .collect();
        let binned = encoded
            .iter()
            .zip(&mappers)
            .map(|(c, m)| c.iter().map(|&v| m.bin(v)).collect())
            .collect();
        Ok(Self {
            numeric_names: data.features.numeric_names.clone(),
            categorical_names: data.features.categorical_names.clone(),
            encoders,
            mappers,
            binned,
            target: data.target,
            weight,
            histogram_bins,
            categorical_prior,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn eval(&self, data: &Dataset) -> Result<PreparedEval> {
        data.check()?;
        if data.features.numeric_names != self.numeric_names
            || data.features.categorical_names != self.categorical_names
        {
            return Err(Error::invalid(
                "evaluation features differ from training features",
            ));
        }
        let encoded = encode_with(&self.encoders, &data.features);
        let binned = encoded
            .iter()
            .zip(&self.mappers)
            .map(|(c, m)| c.iter().map(|&v| m.bin(v)).collect())
            .collect();
        Ok(PreparedEval {
            binned,
            target: data.target.clone(),
            weight: data.weight.clone(),
        })
    }
}

fn weighted_rmse(target: &[f64], pred: &[f64], weight: &[f64]) -> f64 {
    let mut se = 0.0;
    let mut w = 0.0;
    for ((y, p), wt) in target.iter().zip(pred).zip(weight) {
        se += wt * (y - p) * (y - p);
        w += wt;
    }
    if w > 0.0 {
        (se / w).sqrt()
    } else {
        0.0
    }
}

/// Fits a boosted ensemble; early stopping applies when `valid` is non-empty.
pub fn fit(train: &Dataset, valid: &Dataset, config: &TrainConfig) -> Result<Ensemble> {
    config.validate()?;
    let prepared = PreparedTrain::new(train, config.histogram_bins, config.categorical_prior)?;
    let eval = if valid.is_empty() {
        None
    } else {
        Some(prepared.eval(valid)?)
    };
    fit_prepared(&prepared, eval.as_ref(), config)
}

pub fn fit_prepared(
    prepared: &PreparedTrain,
    valid: Option<&PreparedEval>,
    config: &TrainConfig,
) -> Result<Ensemble> {
    config.validate()?;
    if config.histogram_bins != prepared.histogram_bins
        || config.categorical_prior != prepared.categorical_prior
    {
        return Err(Error::invalid(
            "config binning/encoding differs from the prepared data",
        ));
    }
    let valid = valid.filter(|v| !v.target.is_empty() && v.weight.iter().sum::<f64>() > 0.0);
    let n = prepared.n_rows();
    let n_features = prepared.binned.len();
    let y = &prepared.target;
    let w = &prepared.weight;

    let w_sum: f64 = w.iter().sum();
    let (y_min, y_max) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let base_score = (y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / w_sum).clamp(y_min, y_max);
    let spread: f64 = y
        .iter()
        .zip(w)
        .map(|(y, w)| w * (y - base_score) * (y - base_score))
        .sum();

    let n_bins: Vec<usize> = prepared.mappers.iter().map(BinMapper::n_bins).collect();
    let thresholds: Vec<Vec<f64>> = prepared.mappers.iter().map(|m| m.edges.clone()).collect();
    let params = GrowParams {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        l2: config.l2_leaf_reg,
        gain_floor: 1e-12 * spread,
    };
    let lr = config.learning_rate;
    let mut rng = seed::rng(config.seed);

    let mut pred = vec![base_score; n];
    let mut valid_pred = valid.map(|v| vec![base_score; v.target.len()]);
    let valid_rmse = |vp: &Option<Vec<f64>>| {
        valid
            .zip(vp.as_ref())
            .map(|(v, p)| weighted_rmse(&v.target, p, &v.weight))
    };
    let mut history = vec![IterationLog {
        train_rmse: weighted_rmse(y, &pred, w),
        valid_rmse: valid_rmse(&valid_pred),
    }];
    let mut best = (history[0].valid_rmse.unwrap_or(f64::INFINITY), 0usize);
    let mut trees = Vec::new();
    let mut grad = vec![0.0; n];

    for it in 0..config.max_iterations {
        for r in 0..n {
            grad[r] = w[r] * (y[r] - pred[r]);
        }
        let features: Vec<usize> = if config.feature_subsample < 1.0 && n_features > 1 {
            let k = ((config.feature_subsample * n_features as f64).round() as usize)
                .clamp(1, n_features);
            let mut f = sample(&mut rng, n_features, k).into_vec();
            f.sort_unstable();
            f
        } else {
            (0..n_features).collect()
        };
        let rows: Vec<u32> = if config.row_subsample < 1.0 {
            (0..n as u32)
                .filter(|_| rng.random::<f64>() < config.row_subsample)
                .collect()
        } else {
            (0..n as u32).collect()
        };
        if rows.is_empty() {
            continue;
        }
        let input = GrowInput {
            binned: &prepared.binned,
            n_bins: &n_bins,
            thresholds: &thresholds,
            features: &features,
            grad: &grad,
            hess: w,
        };
        let tree = grow_tree(&input, rows, &params);
        if tree.is_single_leaf() {
            // no split beats the gain floor; further trees would be constant shifts
            break;
        }
        for (r, p) in pred.iter_mut().enumerate() {
            *p += lr * tree.leaf_binned(&prepared.binned, r);
        }
        if let (Some(v), Some(vp)) = (valid, valid_pred.as_mut()) {
            for (r, p) in vp.iter_mut().enumerate() {
                *p += lr * tree.leaf_binned(&v.binned, r);
            }
        }
        trees.push(tree);
        let log = IterationLog {
            train_rmse: weighted_rmse(y, &pred, w),
            valid_rmse: valid_rmse(&valid_pred),
        };
        history.push(log);
        if let Some(v) = log.valid_rmse {
            if v < best.0 {
                best = (v, it + 1);
            } else if it + 1 - best.1 >= config.early_stopping_rounds {
                break;
            }
        }
    }
    let best_iteration = if valid.is_some() { best.1 } else { trees.len() };
    Ok(Ensemble {
        config: config.clone(),
        numeric_names: prepared.numeric_names.clone(),
        categorical_names: prepared.categorical_names.clone(),
        encoders: prepared.encoders.clone(),
        bin_edges: prepared.mappers.clone(),
        base_score,
        trees,
        best_iteration,
        history,
    })
}

impl Ensemble {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.numeric_names
            .iter()
            .chain(&self.categorical_names)
            .cloned()
            .collect()
    }

    pub fn predict(&self, features: &Features) -> Result<Vec<f64>> {
        features.check()?;
        if features.numeric_names != self.numeric_names
            || features.categorical_names != self.categorical_names
        {
            return Err(Error::invalid(
                "prediction features differ from training features",
            ));
        }
        let cols = encode_with(&self.encoders, features);
        let lr = self.config.learning_rate;
        let used = &self.trees[..self.best_iteration.min(self.trees.len())];
        Ok((0..features.n_rows())
            .map(|r| {
                let mut p = self.base_score;
                for t in used {
                    p += lr * t.leaf_raw(&cols, r);
                }
                p
            })
            .collect())
    }

    /// Total split gain per feature over the trees used for prediction, in
    /// percent of the overall gain. All zeros when no split exists.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let names = self.feature_names();
        let mut gains = vec![0.0; names.len()];
        for t in &self.trees[..self.best_iteration.min(self.trees.len())] {
            t.add_gains(&mut gains);
        }
        let total: f64 = gains.iter().sum();
        names
            .into_iter()
            .zip(gains)
            .map(|(n, g)| (n, if total > 0.0 { 100.0 * g / total } else { 0.0 }))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn predict(model: &Ensemble, rows: &Features) -> Result<Vec<f64>> {
    model.predict(rows)
}

pub fn feature_importance(model: &Ensemble) -> Vec<(String, f64)> {
    model.feature_importance()
}
