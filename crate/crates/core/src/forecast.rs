//! Direct multi-horizon training: chronological splits, hyperparameter search,
//! refits, holdout evaluation and the seasonal moving-average baseline.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, CATEGORICAL_NAMES, HORIZONS};
use crate::gbdt::{self, Dataset, Ensemble, Features, PreparedTrain, TrainConfig};
use crate::panel::{ItemKey, SalesPanel};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub test_holdout_weeks: usize,
    pub valid_fraction_of_train: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_holdout_weeks: 18,
            valid_fraction_of_train: 0.10,
        }
    }
}

/// Week boundaries shared by every series: train `[0, train_end)`,
/// valid `[train_end, valid_end)`, test `[valid_end, n_weeks)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitWeeks {
    pub train_end: usize,
    pub valid_end: usize,
    pub n_weeks: usize,
}

impl SplitWeeks {
    pub fn valid_weeks(&self) -> usize {
        self.valid_end - self.train_end
    }

    pub fn test_weeks(&self) -> usize {
        self.n_weeks - self.valid_end
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.test_holdout_weeks == 0 {
            return Err(Error::Config("test_holdout_weeks must be >= 1".into()));
        }
        if !(self.valid_fraction_of_train > 0.0 && self.valid_fraction_of_train < 1.0) {
            return Err(Error::Config(format!(
                "valid_fraction_of_train {} not in (0, 1)",
                self.valid_fraction_of_train
            )));
        }
        Ok(())
    }

    pub fn weeks(&self, n_weeks: usize) -> Result<SplitWeeks> {
        self.validate()?;
        let valid_end = n_weeks
            .checked_sub(self.test_holdout_weeks)
            .filter(|v| *v >= 2)
            .ok_or(Error::EmptyPartition("train"))?;
        let valid = (self.valid_fraction_of_train * valid_end as f64).ceil() as usize;
        let train_end = valid_end - valid.min(valid_end - 1);
        Ok(SplitWeeks {
            train_end,
            valid_end,
            n_weeks,
        })
    }
}

/// Rows of one partition together with their scale factors.
#[derive(Debug, Clone, Default)]
pub struct Partition {
    pub rows: Vec<usize>,
    pub data: Dataset,
    pub scale: Vec<f64>,
}

impl Partition {
    fn new(matrix: &FeatureMatrix, rows: Vec<usize>, horizon: usize) -> Self {
        Self {
            data: rows_dataset(matrix, &rows, Some(horizon)),
            scale: rows.iter().map(|&r| matrix.scale[r]).collect(),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct HorizonData {
    pub horizon: usize,
    pub weeks: SplitWeeks,
    pub train: Partition,
    pub valid: Partition,
    pub test: Partition,
}

/// Model inputs for the given matrix rows; targets are zero when `horizon` is `None`.
pub fn rows_dataset(matrix: &FeatureMatrix, rows: &[usize], horizon: Option<usize>) -> Dataset {
    let features = Features {
        numeric_names: matrix.numeric_names(),
        numeric: matrix
            .columns
            .iter()
            .map(|c| rows.iter().map(|&r| c.values[r]).collect())
            .collect(),
        categorical_names: CATEGORICAL_NAMES.iter().map(|s| s.to_string()).collect(),
        categorical: (0..CATEGORICAL_NAMES.len())
            .map(|c| {
                rows.iter()
                    .map(|&r| matrix.categorical_value(c, r))
                    .collect()
            })
            .collect(),
    };
    let target = match horizon {
        Some(h) => rows.iter().map(|&r| matrix.targets[h - 1][r]).collect(),
        None => vec![0.0; rows.len()],
    };
    Dataset {
        features,
        target,
        weight: rows.iter().map(|&r| matrix.weight[r]).collect(),
    }
}

fn check_horizon(horizon: usize) -> Result<()> {
    if (1..=HORIZONS).contains(&horizon) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "horizon {horizon} not in 1..={HORIZONS}"
        )))
    }
}

/// Splits the rows with a known horizon-`h` target chronologically by feature
/// week. Train and valid rows whose target week falls past their partition are
/// left out so no partition learns from a later one's demand. Rows before a
/// series' first in-stock sale are left out everywhere: their scale factor
/// is the floor of 1, so their targets would sit in raw units.
pub fn assemble_dataset(
    matrix: &FeatureMatrix,
    horizon: usize,
    split: &SplitSpec,
) -> Result<HorizonData> {
    check_horizon(horizon)?;
    let weeks = split.weeks(matrix.n_weeks)?;
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for item in 0..matrix.items.len() {
        for t in 0..matrix.n_weeks {
            let row = matrix.row(item, t);
            if !matrix.active[row] || matrix.targets[horizon - 1][row].is_nan() {
                continue;
            }
            let target_week = t + horizon;
            if t < weeks.train_end {
                if target_week < weeks.train_end {
                    train.push(row);
                }
            } else if t < weeks.valid_end {
                if target_week < weeks.valid_end {
                    valid.push(row);
                }
            } else {
                test.push(row);
            }
        }
    }
    if train.is_empty() {
        return Err(Error::EmptyPartition("train"));
    }
    Ok(HorizonData {
        horizon,
        weeks,
        train: Partition::new(matrix, train, horizon),
        valid: Partition::new(matrix, valid, horizon),
        test: Partition::new(matrix, test, horizon),
    })
}

/// Every active row with a known horizon-`h` target.
pub fn assemble_live(matrix: &FeatureMatrix, horizon: usize) -> Result<Partition> {
    check_horizon(horizon)?;
    let rows: Vec<usize> = (0..matrix.n_rows())
        .filter(|&r| matrix.active[r] && !matrix.targets[horizon - 1][r].is_nan())
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyPartition("train"));
    }
    Ok(Partition::new(matrix, rows, horizon))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
    pub log: bool,
}

impl Range {
    pub fn linear(low: f64, high: f64) -> Self {
        Self {
            low,
            high,
            log: false,
        }
    }

    pub fn log(low: f64, high: f64) -> Self {
        Self {
            low,
            high,
            log: true,
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        let ok = self.low.is_finite() && self.high.is_finite() && self.low <= self.high;
        if !ok || (self.log && self.low <= 0.0) {
            return Err(Error::Config(format!(
                "search range for {name} is empty or invalid"
            )));
        }
        Ok(())
    }

    fn draw(&self, u: f64) -> f64 {
        if self.log {
            (self.low.ln() + u * (self.high.ln() - self.low.ln())).exp()
        } else {
            self.low + u * (self.high - self.low)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub max_depth: (usize, usize),
    pub learning_rate: Range,
    pub l2_leaf_reg: Range,
    pub feature_subsample: Range,
    pub row_subsample: Range,
    pub min_samples_leaf: Range,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            max_depth: (3, 10),
            learning_rate: Range::log(0.01, 0.3),
            l2_leaf_reg: Range::log(0.1, 30.0),
            feature_subsample: Range::linear(0.5, 1.0),
            row_subsample: Range::linear(0.5, 1.0),
            min_samples_leaf: Range::log(1.0, 100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HpoConfig {
    pub trials: usize,
    pub seed: u64,
    pub search_space: SearchSpace,
}

impl Default for HpoConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            search_space: SearchSpace::default(),
        }
    }
}

impl HpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("hpo trials must be >= 1".into()));
        }
        let s = &self.search_space;
        if s.max_depth.0 == 0 || s.max_depth.0 > s.max_depth.1 {
            return Err(Error::Config(
                "max_depth search range is empty or invalid".into(),
            ));
        }
        s.learning_rate.check("learning_rate")?;
        s.l2_leaf_reg.check("l2_leaf_reg")?;
        s.feature_subsample.check("feature_subsample")?;
        s.row_subsample.check("row_subsample")?;
        s.min_samples_leaf.check("min_samples_leaf")?;
        Ok(())
    }
}

/// Proposes trial configurations.
pub trait ConfigSampler {
    fn propose(&mut self, base: &TrainConfig, trial: usize) -> TrainConfig;
}

/// Independent uniform draws (log-uniform where the range says so).
pub struct RandomSearch {
    space: SearchSpace,
    rng: seed::Rng,
}

impl RandomSearch {
    pub fn new(space: SearchSpace, seed: u64) -> Self {
        Self {
            space,
            rng: seed::rng(seed),
        }
    }
}

impl ConfigSampler for RandomSearch {
    fn propose(&mut self, base: &TrainConfig, _trial: usize) -> TrainConfig {
        let s = &self.space;
        let rng = &mut self.rng;
        let max_depth = rng.random_range(s.max_depth.0..=s.max_depth.1);
        let learning_rate = s.learning_rate.draw(rng.random());
        let l2_leaf_reg = s.l2_leaf_reg.draw(rng.random());
        let feature_subsample = s.feature_subsample.draw(rng.random());
        let row_subsample = s.row_subsample.draw(rng.random());
        let min_samples_leaf = s.min_samples_leaf.draw(rng.random()).round().max(1.0) as usize;
        TrainConfig {
            max_depth,
            learning_rate,
            l2_leaf_reg,
            feature_subsample,
            row_subsample,
            min_samples_leaf,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: TrainConfig,
    pub best_iteration: usize,
    pub trees_built: usize,
    /// Weighted RMSE on the scaled validation target.
    pub valid_rmse_scaled: f64,
    /// Plain MAE on validation rows in original units.
    pub valid_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSearch {
    pub horizon: usize,
    pub best_trial: usize,
    pub trials: Vec<TrialRecord>,
}

impl HorizonSearch {
    pub fn best(&self) -> &TrialRecord {
        &self.trials[self.best_trial]
    }

    /// Best configuration with its iteration budget fixed for a refit without
    /// validation data.
    pub fn refit_config(&self) -> TrainConfig {
        let best = self.best();
        TrainConfig {
            max_iterations: best.best_iteration,
            early_stopping_rounds: best.config.early_stopping_rounds.min(best.best_iteration),
            ..best.config.clone()
        }
    }
}

pub struct HpoOutcome {
    pub searches: Vec<HorizonSearch>,
    /// Best-trial models fitted on the train partition, one per horizon.
    pub models: Vec<Ensemble>,
}

/// Mean absolute error in original units: predictions and targets are both
/// multiplied back by each row's scale factor.
pub fn original_mae(pred_scaled: &[f64], target_scaled: &[f64], scale: &[f64]) -> f64 {
    let n = pred_scaled.len();
    if n == 0 {
        return f64::NAN;
    }
    pred_scaled
        .iter()
        .zip(target_scaled)
        .zip(scale)
        .map(|((p, y), s)| (p * s - y * s).abs())
        .sum::<f64>()
        / n as f64
}

fn scaled_rmse(model: &Ensemble, part: &Partition) -> Result<(Vec<f64>, f64)> {
    let pred = model.predict(&part.data.features)?;
    let (mut se, mut w) = (0.0, 0.0);
    for ((p, y), wt) in pred.iter().zip(&part.data.target).zip(&part.data.weight) {
        se += wt * (p - y) * (p - y);
        w += wt;
    }
    let rmse = if w > 0.0 { (se / w).sqrt() } else { f64::NAN };
    Ok((pred, rmse))
}

/// Random search per horizon, scored by original-unit validation MAE. Ties go
/// to the earlier trial. Each horizon draws from its own stream, so horizons
/// never influence each other.
pub fn hpo_search(data: &[HorizonData], hpo: &HpoConfig, base: &TrainConfig) -> Result<HpoOutcome> {
    hpo.validate()?;
    base.validate()?;
    let mut searches = Vec::with_capacity(data.len());
    let mut models = Vec::with_capacity(data.len());
    for hd in data {
        if hd.valid.is_empty() {
            return Err(Error::EmptyPartition("valid"));
        }
        let h = hd.horizon;
        let mut sampler = RandomSearch::new(
            hpo.search_space.clone(),
            seed::derive_indexed(hpo.seed, "hpo", h as u64),
        );
        let configs: Vec<TrainConfig> = (0..hpo.trials)
            .map(|trial| TrainConfig {
                seed: seed::derive(base.seed, &format!("h{h}/trial{trial}")),
                ..sampler.propose(base, trial)
            })
            .collect();
        let prepared =
            PreparedTrain::new(&hd.train.data, base.histogram_bins, base.categorical_prior)?;
        let eval = prepared.eval(&hd.valid.data)?;
        let fitted: Vec<(TrialRecord, Ensemble)> = configs
            .into_par_iter()
            .enumerate()
            .map(|(trial, config)| {
                let model = gbdt::fit_prepared(&prepared, Some(&eval), &config)?;
                let (pred, rmse) = scaled_rmse(&model, &hd.valid)?;
                let mae = original_mae(&pred, &hd.valid.data.target, &hd.valid.scale);
                Ok((
                    TrialRecord {
                        trial,
                        config,
                        best_iteration: model.best_iteration,
                        trees_built: model.n_trees(),
                        valid_rmse_scaled: rmse,
                        valid_mae: mae,
                    },
                    model,
                ))
            })
            .collect::<Result<_>>()?;
        let mut best = 0;
        for (i, (rec, _)) in fitted.iter().enumerate() {
            if rec.valid_mae < fitted[best].0.valid_mae {
                best = i;
            }
        }
        let (records, mut fitted_models): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
        models.push(fitted_models.swap_remove(best));
        searches.push(HorizonSearch {
            horizon: h,
            best_trial: best,
            trials: records,
        });
    }
    Ok(HpoOutcome { searches, models })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Refit on train + valid and score the test holdout.
    Backtest,
    /// Refit on every row with a known target.
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub rows: usize,
    pub mae: f64,
    /// Mean of forecast minus actual, original units.
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub mae: f64,
    pub bias: f64,
    pub per_horizon: Vec<HorizonMetrics>,
}

pub struct FinalFit {
    pub models: Vec<Ensemble>,
    pub holdout: Option<HoldoutReport>,
}

fn concat(a: &Partition, b: &Partition, matrix: &FeatureMatrix, horizon: usize) -> Partition {
    let mut rows = a.rows.clone();
    rows.extend(&b.rows);
    rows.sort_unstable();
    Partition::new(matrix, rows, horizon)
}

/// Refits each horizon with its given configuration (normally
/// [`HorizonSearch::refit_config`]); `configs[h - 1]` belongs to horizon `h`.
pub fn fit_final(
    matrix: &FeatureMatrix,
    split: &SplitSpec,
    configs: &[TrainConfig],
    mode: FitMode,
) -> Result<FinalFit> {
    if configs.len() != HORIZONS {
        return Err(Error::invalid(format!(
            "expected {HORIZONS} configs, got {}",
            configs.len()
        )));
    }
    let mut models = Vec::with_capacity(HORIZONS);
    let mut metrics = Vec::new();
    let (mut abs_sum, mut err_sum, mut n) = (0.0, 0.0, 0usize);
    for (i, config) in configs.iter().enumerate() {
        let h = i + 1;
        match mode {
            FitMode::Live => {
                let all = assemble_live(matrix, h)?;
                models.push(gbdt::fit(&all.data, &Dataset::default(), config)?);
            }
            FitMode::Backtest => {
                let hd = assemble_dataset(matrix, h, split)?;
                let train = concat(&hd.train, &hd.valid, matrix, h);
                let model = gbdt::fit(&train.data, &Dataset::default(), config)?;
                let pred = model.predict(&hd.test.data.features)?;
                let (mut a, mut e) = (0.0, 0.0);
                for ((p, y), s) in pred.iter().zip(&hd.test.data.target).zip(&hd.test.scale) {
                    let err = p * s - y * s;
                    a += err.abs();
                    e += err;
                }
                let rows = hd.test.len();
                abs_sum += a;
                err_sum += e;
                n += rows;
                let denom = rows.max(1) as f64;
                metrics.push(HorizonMetrics {
                    horizon: h,
                    rows,
                    mae: a / denom,
                    bias: e / denom,
                });
                models.push(model);
            }
        }
    }
    let holdout = (mode == FitMode::Backtest).then(|| HoldoutReport {
        mae: abs_sum / n.max(1) as f64,
        bias: err_sum / n.max(1) as f64,
        per_horizon: metrics,
    });
    Ok(FinalFit { models, holdout })
}

/// Point forecasts per item for horizons 1..=3 at one decision week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet<T> {
    pub decision_week: usize,
    pub items: Vec<ItemKey>,
    pub values: Vec<[T; HORIZONS]>,
}

impl<T: Copy> ForecastSet<T> {
    pub fn horizon(&self, h: usize) -> Vec<T> {
        self.values.iter().map(|v| v[h - 1]).collect()
    }
}

/// Model predictions for every item's row at `week`, back in original units.
pub fn predict_horizons(
    models: &[Ensemble],
    matrix: &FeatureMatrix,
    week: usize,
) -> Result<ForecastSet<f64>> {
    if models.len() != HORIZONS {
        return Err(Error::invalid(format!(
            "expected {HORIZONS} models, got {}",
            models.len()
        )));
    }
    if week >= matrix.n_weeks {
        return Err(Error::invalid(format!(
            "no feature rows for week {week} ({} weeks built)",
            matrix.n_weeks
        )));
    }
    let rows: Vec<usize> = (0..matrix.items.len())
        .map(|i| matrix.row(i, week))
        .collect();
    let data = rows_dataset(matrix, &rows, None);
    let mut values = vec![[0.0; HORIZONS]; rows.len()];
    for (h, model) in models.iter().enumerate() {
        let pred = model.predict(&data.features)?;
        for ((v, p), &r) in values.iter_mut().zip(pred).zip(&rows) {
            v[h] = p * matrix.scale[r];
        }
    }
    Ok(ForecastSet {
        decision_week: week,
        items: matrix.items.clone(),
        values,
    })
}

/// Nearest integer with halves rounded up.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

pub fn postprocess(forecasts: &ForecastSet<f64>) -> ForecastSet<i64> {
    ForecastSet {
        decision_week: forecasts.decision_week,
        items: forecasts.items.clone(),
        values: forecasts
            .values
            .iter()
            .map(|v| v.map(|x| round_half_up(x).max(0)))
            .collect(),
    }
}

const BASELINE_WINDOW: usize = 13;

/// Trailing 13-week in-stock mean times a week-of-year seasonal index.
///
/// The index for a target week is the in-stock mean of all history weeks
/// (up to the decision week) sharing its ISO week number, over the overall
/// in-stock mean; it is 1 when either is undefined or the overall mean is 0.
pub fn baseline_seasonal_ma(panel: &SalesPanel, decision_week: usize) -> Result<ForecastSet<f64>> {
    if decision_week >= panel.n_weeks() {
        return Err(Error::invalid(format!(
            "decision week {decision_week} outside {} weeks",
            panel.n_weeks()
        )));
    }
    let axis = panel.axis();
    let woy: Vec<u32> = (0..=decision_week).map(|k| axis.iso_week(k)).collect();
    let target_woy: Vec<u32> = (1..=HORIZONS)
        .map(|h| axis.iso_week(decision_week + h))
        .collect();
    let start = (decision_week + 1).saturating_sub(BASELINE_WINDOW);
    let values = (0..panel.n_items())
        .map(|i| {
            let eff = panel.effective(i);
            let hist = &eff.values[..=decision_week];
            let base = mean(hist[start..].iter().flatten().copied()).unwrap_or(0.0);
            let overall = mean(hist.iter().flatten().copied());
            let mut out = [0.0; HORIZONS];
            for (o, w) in out.iter_mut().zip(&target_woy) {
                let same = mean(
                    hist.iter()
                        .zip(&woy)
                        .filter(|(_, k)| *k == w)
                        .filter_map(|(v, _)| *v),
                );
                let index = match (same, overall) {
                    (Some(s), Some(m)) if m > 0.0 => s / m,
                    _ => 1.0,
                };
                *o = base * index;
            }
            out
        })
        .collect();
    Ok(ForecastSet {
        decision_week,
        items: panel.items().to_vec(),
        values,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Writes `Store,Product,decision_week,h1,h2,h3` rows for each set in order.
pub fn write_forecasts(sets: &[ForecastSet<i64>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(out, "Store,Product,decision_week,h1,h2,h3").map_err(io_err)?;
    for set in sets {
        for (key, v) in set.items.iter().zip(&set.values) {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                key.store, key.product, set.decision_week, v[0], v[1], v[2]
            )
            .map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}
