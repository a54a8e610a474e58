//! Stockout-aware tabular features.
//!
//! Every statistic is computed on the effective series (out-of-stock weeks
//! masked as missing), using only weeks up to and including the row's week.
//! Level-dependent statistics are divided by a per-series dynamic scale factor
//! so that one global model sees comparable magnitudes across items.
//!
//! Missing values are `f64::NAN` inside a [`FeatureMatrix`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{EffectiveSeries, ItemKey, SalesPanel};

/// Number of forecast horizons (weeks ahead) modelled.
pub const HORIZONS: usize = 3;

const MAD_CONSISTENCY: f64 = 1.4826;
const MAD_EPSILON: f64 = 1e-9;
const SPIKE_Z: f64 = 3.0;
const MIN_SEASONAL_PAIRS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    pub short_lags: Vec<usize>,
    pub seasonal_lags: Vec<usize>,
    pub roll_windows: Vec<usize>,
    pub ewm_spans: Vec<usize>,
    pub std_window: usize,
    pub iqr_window: usize,
    pub momentum_ks: Vec<usize>,
    pub slope_window: usize,
    pub fourier_harmonics: usize,
    pub season_period: usize,
    pub spike_window: usize,
    pub spike_cap: usize,
    pub nonzero_rate_window: usize,
    pub warmstart_min_obs: usize,
    pub scale_window: usize,
    pub decay_factor: f64,
    pub decay_block_weeks: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            short_lags: vec![0, 1, 2, 3],
            seasonal_lags: vec![51, 52, 53],
            roll_windows: vec![3, 5, 13],
            ewm_spans: vec![5, 10],
            std_window: 8,
            iqr_window: 13,
            momentum_ks: vec![1, 5],
            slope_window: 4,
            fourier_harmonics: 3,
            season_period: 52,
            spike_window: 13,
            spike_cap: 104,
            nonzero_rate_window: 12,
            warmstart_min_obs: 45,
            scale_window: 53,
            decay_factor: 0.5,
            decay_block_weeks: 53,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        let windows = self
            .roll_windows
            .iter()
            .chain(&self.ewm_spans)
            .chain(&self.momentum_ks)
            .chain([
                &self.std_window,
                &self.iqr_window,
                &self.slope_window,
                &self.spike_window,
                &self.nonzero_rate_window,
                &self.scale_window,
                &self.decay_block_weeks,
            ]);
        for w in windows {
            if *w == 0 {
                return Err(Error::Config("feature windows must be >= 1".into()));
            }
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor {} must lie in (0, 1]",
                self.decay_factor
            )));
        }
        if self.season_period < 2 {
            return Err(Error::Config("season_period must be >= 2".into()));
        }
        Ok(())
    }
}

/// Whether a numeric column is divided by the scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Scaled,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<f64>,
}

pub const CATEGORICAL_NAMES: [&str; 4] = ["Store", "Product", "unique_id", "week_of_year"];

/// One row per (item, week), item-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub items: Vec<ItemKey>,
    pub n_weeks: usize,
    pub columns: Vec<NumericColumn>,
    /// ISO week number of each row's week (1..=53).
    pub week_of_year: Vec<u32>,
    pub scale: Vec<f64>,
    pub weight: Vec<f64>,
    /// Whether the series has recorded an in-stock sale at or before the row's week.
    pub active: Vec<bool>,
    /// `targets[h - 1][row]`: effective demand at `week + h` over the row's scale.
    pub targets: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.items.len() * self.n_weeks
    }

    pub fn row(&self, item: usize, week: usize) -> usize {
        item * self.n_weeks + week
    }

    pub fn item_of(&self, row: usize) -> usize {
        row / self.n_weeks
    }

    pub fn week_of(&self, row: usize) -> usize {
        row % self.n_weeks
    }

    pub fn column(&self, name: &str) -> Option<&NumericColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn numeric_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn categorical_value(&self, col: usize, row: usize) -> String {
        let key = &self.items[self.item_of(row)];
        match col {
            0 => key.store.clone(),
            1 => key.product.clone(),
            2 => key.unique_id(),
            3 => self.week_of_year[row].to_string(),
            _ => panic!("categorical column {col} out of range"),
        }
    }

    /// Writes the long-format export; missing values are empty cells.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        let mut header: Vec<String> = vec![
            "Store".into(),
            "Product".into(),
            "unique_id".into(),
            "week".into(),
        ];
        header.push("week_of_year".into());
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        header.push("scale_factor".into());
        header.push("observation_weight".into());
        header.extend((1..=self.targets.len()).map(|h| format!("target_h{h}")));
        writeln!(out, "{}", header.join(",")).map_err(io_err)?;
        let cell = |v: f64| {
            if v.is_nan() {
                String::new()
            } else {
                v.to_string()
            }
        };
        for row in 0..self.n_rows() {
            let key = &self.items[self.item_of(row)];
            let mut rec = vec![
                key.store.clone(),
                key.product.clone(),
                key.unique_id(),
                self.week_of(row).to_string(),
                self.week_of_year[row].to_string(),
            ];
            rec.extend(self.columns.iter().map(|c| cell(c.values[row])));
            rec.push(cell(self.scale[row]));
            rec.push(cell(self.weight[row]));
            rec.extend(self.targets.iter().map(|t| cell(t[row])));
            writeln!(out, "{}", rec.join(",")).map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Per-week scale factor of a series, always at least 1.
///
/// Uses the trailing-window in-stock mean once the window holds enough
/// in-stock weeks, the expanding in-stock mean before that, and 1 when no
/// in-stock history exists yet. Both means are annualised by the window length.
pub fn compute_scale_factor(series: &EffectiveSeries, spec: &FeatureSpec) -> Vec<f64> {
    let y = &series.values;
    let window = spec.scale_window;
    let annualise = window as f64;
    let mut cum_sum = 0.0;
    let mut cum_n = 0usize;
    let mut out = Vec::with_capacity(y.len());
    for t in 0..y.len() {
        if let Some(v) = y[t] {
            cum_sum += v;
            cum_n += 1;
        }
        let start = (t + 1).saturating_sub(window);
        let (w_sum, w_n) = y[start..=t]
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        let level = if w_n >= spec.warmstart_min_obs {
            annualise * (w_sum / w_n as f64)
        } else if cum_n > 0 {
            annualise * (cum_sum / cum_n as f64)
        } else {
            1.0
        };
        out.push(level.max(1.0));
    }
    out
}

/// Recency weights in trailing blocks: the newest block weighs 1 and each older
/// block is multiplied by `decay_factor`.
pub fn observation_weights(series_length: usize, spec: &FeatureSpec) -> Vec<f64> {
    (0..series_length)
        .map(|t| {
            let age = (series_length - 1 - t) / spec.decay_block_weeks;
            spec.decay_factor.powi(age as i32)
        })
        .collect()
}

fn valid_window(y: &[Option<f64>], t: usize, w: usize) -> Vec<f64> {
    let start = (t + 1).saturating_sub(w);
    y[start..=t].iter().flatten().copied().collect()
}

fn lag(y: &[Option<f64>], t: usize, k: usize) -> Option<f64> {
    t.checked_sub(k).and_then(|s| y[s])
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Linearly interpolated quantile of sorted values.
fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

pub(crate) fn median(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| quantile_sorted(&sorted(v), 0.5))
}

fn sample_std(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v)?;
    let ss = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    Some((ss / (v.len() - 1) as f64).sqrt())
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Rolling correlation between the series and itself one season earlier.
/// Zero when fewer than eight valid pairs exist or either leg is constant.
pub fn seasonality_strength(series: &EffectiveSeries, spec: &FeatureSpec) -> Vec<f64> {
    let y = &series.values;
    let p = spec.season_period;
    (0..y.len())
        .map(|t| {
            let start = (t + 1).saturating_sub(p).max(p);
            let pairs: Vec<(f64, f64)> = (start..=t)
                .filter_map(|s| Some((y[s]?, y[s - p]?)))
                .collect();
            if pairs.len() < MIN_SEASONAL_PAIRS {
                return 0.0;
            }
            pearson(&pairs).unwrap_or(0.0)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeStat {
    /// Missing when the week is out of stock or the window holds no data.
    pub robust_z: Option<f64>,
    pub spike: bool,
    pub time_since_spike: usize,
}

/// Rolling median/MAD z-score, spike flag and weeks since the last spike.
pub fn spike_stats(series: &EffectiveSeries, spec: &FeatureSpec) -> Vec<SpikeStat> {
    let y = &series.values;
    let cap = spec.spike_cap;
    let mut since = cap;
    let mut out = Vec::with_capacity(y.len());
    for t in 0..y.len() {
        let win = valid_window(y, t, spec.spike_window);
        let mut z = None;
        let mut spike = false;
        if let (Some(v), Some(med)) = (y[t], median(&win)) {
            let deviations: Vec<f64> = win.iter().map(|x| (x - med).abs()).collect();
            let mad = median(&deviations).unwrap_or(0.0);
            let score = (v - med) / (MAD_CONSISTENCY * mad + MAD_EPSILON);
            spike = score > SPIKE_Z || (med == 0.0 && v > 0.0);
            z = Some(score);
        }
        since = if spike { 0 } else { (since + 1).min(cap) };
        out.push(SpikeStat {
            robust_z: z,
            spike,
            time_since_spike: since,
        });
    }
    out
}

/// Exponentially weighted mean over the valid observations seen so far.
fn ewm(y: &[Option<f64>], span: usize) -> Vec<Option<f64>> {
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut m: Option<f64> = None;
    y.iter()
        .map(|v| {
            if let Some(v) = v {
                m = Some(match m {
                    None => *v,
                    Some(prev) => alpha * v + (1.0 - alpha) * prev,
                });
            }
            m
        })
        .collect()
}

struct SeriesColumns {
    columns: Vec<(String, ColumnKind, Vec<f64>)>,
    scale: Vec<f64>,
    active: Vec<bool>,
    targets: Vec<Vec<f64>>,
}

fn nan(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn series_columns(series: &EffectiveSeries, woy: &[u32], spec: &FeatureSpec) -> SeriesColumns {
    let y = &series.values;
    let n = y.len();
    let scale = compute_scale_factor(series, spec);
    let mut columns: Vec<(String, ColumnKind, Vec<f64>)> = Vec::new();
    let scaled = |name: String, raw: Vec<Option<f64>>| (name, ColumnKind::Scaled, raw);
    let mut raw_scaled = Vec::new();

    for &k in spec.short_lags.iter().chain(&spec.seasonal_lags) {
        raw_scaled.push(scaled(
            format!("lag_{k}"),
            (0..n).map(|t| lag(y, t, k)).collect(),
        ));
    }
    for &w in &spec.roll_windows {
        let wins: Vec<Vec<f64>> = (0..n).map(|t| valid_window(y, t, w)).collect();
        raw_scaled.push(scaled(
            format!("roll_mean_{w}"),
            wins.iter().map(|v| mean(v)).collect(),
        ));
        raw_scaled.push(scaled(
            format!("roll_median_{w}"),
            wins.iter().map(|v| median(v)).collect(),
        ));
    }
    for &span in &spec.ewm_spans {
        raw_scaled.push(scaled(format!("ewm_{span}"), ewm(y, span)));
    }
    raw_scaled.push(scaled(
        format!("std_{}", spec.std_window),
        (0..n)
            .map(|t| sample_std(&valid_window(y, t, spec.std_window)))
            .collect(),
    ));
    raw_scaled.push(scaled(
        format!("iqr_{}", spec.iqr_window),
        (0..n)
            .map(|t| {
                let w = valid_window(y, t, spec.iqr_window);
                (!w.is_empty()).then(|| {
                    let s = sorted(&w);
                    quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)
                })
            })
            .collect(),
    ));
    for &k in &spec.momentum_ks {
        raw_scaled.push(scaled(
            format!("momentum_{k}"),
            (0..n).map(|t| Some(y[t]? - lag(y, t, k)?)).collect(),
        ));
    }
    raw_scaled.push(scaled(
        format!("slope_{}", spec.slope_window),
        (0..n)
            .map(|t| {
                let diffs: Vec<f64> = (0..spec.slope_window)
                    .filter_map(|j| Some(lag(y, t, j)? - lag(y, t, j + 1)?))
                    .collect();
                mean(&diffs)
            })
            .collect(),
    ));
    let p = spec.season_period;
    raw_scaled.push(scaled(
        "last_year_window".into(),
        (0..n)
            .map(|t| {
                let vals: Vec<f64> = (p.saturating_sub(2)..=p + 2)
                    .filter_map(|k| lag(y, t, k))
                    .collect();
                mean(&vals)
            })
            .collect(),
    ));
    for (name, kind, raw) in raw_scaled {
        let values = raw
            .iter()
            .zip(&scale)
            .map(|(v, s)| nan(v.map(|v| v / s)))
            .collect();
        columns.push((name, kind, values));
    }

    for k in 1..=spec.fourier_harmonics {
        let angle = |w: u32| 2.0 * PI * k as f64 * w.min(p as u32) as f64 / p as f64;
        columns.push((
            format!("fourier_sin_{k}"),
            ColumnKind::Plain,
            woy.iter().map(|&w| angle(w).sin()).collect(),
        ));
        columns.push((
            format!("fourier_cos_{k}"),
            ColumnKind::Plain,
            woy.iter().map(|&w| angle(w).cos()).collect(),
        ));
    }
    columns.push((
        "seasonality_strength".into(),
        ColumnKind::Plain,
        seasonality_strength(series, spec),
    ));
    let spikes = spike_stats(series, spec);
    columns.push((
        "robust_z".into(),
        ColumnKind::Plain,
        spikes.iter().map(|s| nan(s.robust_z)).collect(),
    ));
    columns.push((
        "spike".into(),
        ColumnKind::Plain,
        spikes
            .iter()
            .map(|s| if s.spike { 1.0 } else { 0.0 })
            .collect(),
    ));
    columns.push((
        "time_since_spike".into(),
        ColumnKind::Plain,
        spikes.iter().map(|s| s.time_since_spike as f64).collect(),
    ));
    columns.push((
        format!("nonzero_rate_{}", spec.nonzero_rate_window),
        ColumnKind::Plain,
        (0..n)
            .map(|t| {
                let w = valid_window(y, t, spec.nonzero_rate_window);
                nan((!w.is_empty())
                    .then(|| w.iter().filter(|v| **v > 0.0).count() as f64 / w.len() as f64))
            })
            .collect(),
    ));

    let targets = (1..=HORIZONS)
        .map(|h| {
            (0..n)
                .map(|t| nan(y.get(t + h).copied().flatten().map(|v| v / scale[t])))
                .collect()
        })
        .collect();
    let active = y
        .iter()
        .scan(false, |seen, v| {
            *seen |= v.is_some_and(|v| v > 0.0);
            Some(*seen)
        })
        .collect();
    SeriesColumns {
        columns,
        scale,
        active,
        targets,
    }
}

/// Builds the full feature matrix of a panel (before imputation).
pub fn build_features(panel: &SalesPanel, spec: &FeatureSpec) -> Result<FeatureMatrix> {
    spec.validate()?;
    let n_weeks = panel.n_weeks();
    let woy: Vec<u32> = (0..n_weeks).map(|k| panel.axis().iso_week(k)).collect();
    let per_item: Vec<SeriesColumns> = (0..panel.n_items())
        .into_par_iter()
        .map(|i| series_columns(&panel.effective(i), &woy, spec))
        .collect();
    let weights = observation_weights(n_weeks, spec);

    let first = &per_item[0];
    let mut columns: Vec<NumericColumn> = first
        .columns
        .iter()
        .map(|(name, kind, _)| NumericColumn {
            name: name.clone(),
            kind: *kind,
            values: Vec::with_capacity(panel.n_items() * n_weeks),
        })
        .collect();
    let mut scale = Vec::with_capacity(panel.n_items() * n_weeks);
    let mut active = Vec::with_capacity(panel.n_items() * n_weeks);
    let mut targets: Vec<Vec<f64>> = (0..HORIZONS)
        .map(|_| Vec::with_capacity(panel.n_items() * n_weeks))
        .collect();
    for item in &per_item {
        for (col, (_, _, values)) in columns.iter_mut().zip(&item.columns) {
            col.values.extend_from_slice(values);
        }
        scale.extend_from_slice(&item.scale);
        active.extend_from_slice(&item.active);
        for (t, src) in targets.iter_mut().zip(&item.targets) {
            t.extend_from_slice(src);
        }
    }
    Ok(FeatureMatrix {
        items: panel.items().to_vec(),
        n_weeks,
        columns,
        week_of_year: woy.repeat(panel.n_items()),
        scale,
        weight: weights.repeat(panel.n_items()),
        active,
        targets,
    })
}

/// Fitted two-level median fill values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub cutoff: usize,
    pub columns: Vec<String>,
    /// Per-series medians keyed by unique id; `None` where the series had no data.
    pub per_series: BTreeMap<String, Vec<Option<f64>>>,
    pub global: Vec<f64>,
    /// Columns with no observed value at or before the cutoff (filled with 0).
    pub all_missing: Vec<String>,
}

impl Imputer {
    /// Fits medians on rows whose week is at or before `cutoff`.
    pub fn fit(matrix: &FeatureMatrix, cutoff: usize) -> Result<Self> {
        if cutoff >= matrix.n_weeks {
            return Err(Error::invalid(format!(
                "imputation cutoff {cutoff} outside {} weeks",
                matrix.n_weeks
            )));
        }
        let mut per_series: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
        let mut global = Vec::with_capacity(matrix.columns.len());
        let mut all_missing = Vec::new();
        for (item, key) in matrix.items.iter().enumerate() {
            let medians = matrix
                .columns
                .iter()
                .map(|c| {
                    let vals: Vec<f64> = (0..=cutoff)
                        .map(|w| c.values[matrix.row(item, w)])
                        .filter(|v| !v.is_nan())
                        .collect();
                    median(&vals)
                })
                .collect();
            per_series.insert(key.unique_id(), medians);
        }
        for c in &matrix.columns {
            let vals: Vec<f64> = (0..matrix.items.len())
                .flat_map(|i| (0..=cutoff).map(move |w| (i, w)))
                .map(|(i, w)| c.values[matrix.row(i, w)])
                .filter(|v| !v.is_nan())
                .collect();
            match median(&vals) {
                Some(m) => global.push(m),
                None => {
                    all_missing.push(c.name.clone());
                    global.push(0.0);
                }
            }
        }
        Ok(Self {
            cutoff,
            columns: matrix.numeric_names(),
            per_series,
            global,
            all_missing,
        })
    }

    /// Fills every missing numeric cell; series unseen at fit time use the
    /// global medians.
    pub fn apply(&self, matrix: &mut FeatureMatrix) -> Result<()> {
        if matrix.numeric_names() != self.columns {
            return Err(Error::invalid(
                "feature columns differ from the fitted imputer",
            ));
        }
        for (item, key) in matrix.items.iter().enumerate() {
            let series = self.per_series.get(&key.unique_id());
            for (c, col) in matrix.columns.iter_mut().enumerate() {
                let fill = series.and_then(|m| m[c]).unwrap_or(self.global[c]);
                let start = item * matrix.n_weeks;
                for v in &mut col.values[start..start + matrix.n_weeks] {
                    if v.is_nan() {
                        *v = fill;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Two-level median imputation against a training cutoff week.
pub fn impute(
    matrix: &FeatureMatrix,
    train_week_cutoff: usize,
) -> Result<(FeatureMatrix, Imputer)> {
    let imputer = Imputer::fit(matrix, train_week_cutoff)?;
    let mut out = matrix.clone();
    imputer.apply(&mut out)?;
    Ok((out, imputer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::WeekAxis;
    use chrono::NaiveDate;

    fn series(v: &[Option<f64>]) -> EffectiveSeries {
        EffectiveSeries { values: v.to_vec() }
    }

    fn full(v: &[f64]) -> EffectiveSeries {
        series(&v.iter().map(|x| Some(*x)).collect::<Vec<_>>())
    }

    fn panel_of(rows: Vec<(Vec<f64>, Vec<bool>)>) -> SalesPanel {
        let n = rows[0].0.len();
        let axis = WeekAxis::from_start(NaiveDate::from_ymd_opt(2021, 4, 12).unwrap(), n).unwrap();
        let items = (0..rows.len())
            .map(|i| ItemKey::new("s", format!("p{i}")))
            .collect();
        let (sales, flags) = rows.into_iter().unzip();
        SalesPanel::new(items, axis, sales, flags).unwrap()
    }

    #[test]
    fn scale_factor_examples() {
        let spec = FeatureSpec::default();
        let s = compute_scale_factor(&full(&[2.0; 60]), &spec);
        assert_eq!(s[59], 106.0);
        let s = compute_scale_factor(&full(&[0.0; 60]), &spec);
        assert!(s.iter().all(|v| *v == 1.0));
        let warm: Vec<f64> = (0..30)
            .map(|i| if i % 2 == 0 { 1.0 } else { 2.0 })
            .collect();
        let s = compute_scale_factor(&full(&warm), &spec);
        assert!((s[29] - 79.5).abs() < 1e-12);
        let s = compute_scale_factor(&series(&[None, None, Some(3.0)]), &spec);
        assert_eq!(s, vec![1.0, 1.0, 159.0]);
    }

    #[test]
    fn weights_example_blocks() {
        let spec = FeatureSpec::default();
        let w = observation_weights(160, &spec);
        assert!(w[107..].iter().all(|v| *v == 1.0));
        assert!(w[54..107].iter().all(|v| *v == 0.5));
        assert!(w[1..54].iter().all(|v| *v == 0.25));
        assert_eq!(w[0], 0.125);
        assert!(observation_weights(10, &spec).iter().all(|v| *v == 1.0));
        let flat = FeatureSpec {
            decay_factor: 1.0,
            ..FeatureSpec::default()
        };
        assert!(observation_weights(300, &flat).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn seasonality_strength_cases() {
        let spec = FeatureSpec::default();
        let sin: Vec<f64> = (0..200)
            .map(|t| 5.0 + (2.0 * PI * t as f64 / 52.0).sin())
            .collect();
        let s = seasonality_strength(&full(&sin), &spec);
        assert!((s[199] - 1.0).abs() < 1e-6);
        let s = seasonality_strength(&full(&[4.0; 200]), &spec);
        assert!(s.iter().all(|v| *v == 0.0));
        // fewer than eight pairs available
        assert_eq!(seasonality_strength(&full(&sin[..58]), &spec)[57], 0.0);
    }

    #[test]
    fn spike_cases() {
        let spec = FeatureSpec::default();
        let mut v = vec![0.0; 20];
        v[15] = 2.0;
        let st = spike_stats(&full(&v), &spec);
        assert!(st[15].spike);
        assert_eq!(st[16].time_since_spike, 1);
        assert_eq!(st[14].time_since_spike, 104);

        let st = spike_stats(&full(&[3.0; 30]), &spec);
        assert!(st.iter().all(|s| !s.spike && s.robust_z == Some(0.0)));

        let mut v = vec![1.0; 12];
        v.push(20.0);
        let st = spike_stats(&full(&v), &spec);
        // direct evaluation: median 1, MAD 0, so z = 19 / 1e-9
        let expected = 19.0 / (1.4826 * 0.0 + 1e-9);
        assert_eq!(st[12].robust_z, Some(expected));
        assert!(st[12].spike);

        let st = spike_stats(&series(&[Some(1.0), None]), &spec);
        assert_eq!(st[1].robust_z, None);
        assert!(!st[1].spike);
    }

    #[test]
    fn fourier_quarter_period() {
        let spec = FeatureSpec::default();
        // 2021-03-29 is ISO week 13
        let axis = WeekAxis::from_start(NaiveDate::from_ymd_opt(2021, 3, 29).unwrap(), 1).unwrap();
        assert_eq!(axis.iso_week(0), 13);
        let p = SalesPanel::new(
            vec![ItemKey::new("a", "b")],
            axis,
            vec![vec![1.0]],
            vec![vec![true]],
        )
        .unwrap();
        let m = build_features(&p, &spec).unwrap();
        assert!((m.column("fourier_sin_1").unwrap().values[0] - 1.0).abs() < 1e-12);
        assert!(m.column("fourier_cos_1").unwrap().values[0].abs() < 1e-12);
    }

    #[test]
    fn masked_lag_is_missing_and_targets_follow_flags() {
        let spec = FeatureSpec::default();
        let p = panel_of(vec![(
            vec![3.0, 0.0, 5.0, 4.0, 2.0],
            vec![true, false, true, true, true],
        )]);
        let m = build_features(&p, &spec).unwrap();
        assert!(m.column("lag_0").unwrap().values[1].is_nan());
        assert!(!m.column("lag_0").unwrap().values[2].is_nan());
        // target h=1 at week 0 points at the stocked-out week
        assert!(m.targets[0][0].is_nan());
        assert!(!m.targets[1][0].is_nan());
        // beyond history
        assert!(m.targets[2][2].is_nan());
        // rolling mean skips the masked week rather than counting it as zero
        let rm = m.column("roll_mean_3").unwrap().values[2] * m.scale[2];
        assert!((rm - 4.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_removes_level() {
        let spec = FeatureSpec::default();
        let base: Vec<f64> = (0..80).map(|t| 3.0 + (t % 7) as f64).collect();
        let flags = vec![true; 80];
        let p1 = panel_of(vec![(base.clone(), flags.clone())]);
        let p2 = panel_of(vec![(base.iter().map(|v| v * 7.0).collect(), flags)]);
        let (m1, m2) = (
            build_features(&p1, &spec).unwrap(),
            build_features(&p2, &spec).unwrap(),
        );
        for (a, b) in m1.columns.iter().zip(&m2.columns) {
            if a.kind == ColumnKind::Scaled {
                for (x, y) in a.values.iter().zip(&b.values) {
                    assert!(
                        x.is_nan() && y.is_nan() || (x - y).abs() <= 1e-9 * x.abs().max(1e-12),
                        "{}",
                        a.name
                    );
                }
            }
        }
    }

    #[test]
    fn imputation_levels() {
        let spec = FeatureSpec::default();
        let s1: Vec<f64> = (0..70).map(|t| 1.0 + (t % 3) as f64).collect();
        let p = panel_of(vec![(s1.clone(), vec![true; 70]), (s1, vec![true; 70])]);
        let m = build_features(&p, &spec).unwrap();
        let (imp, fitted) = impute(&m, 60).unwrap();
        let lag52 = m.column("lag_52").unwrap();
        let lag52_imp = imp.column("lag_52").unwrap();
        let own: Vec<f64> = (0..=60)
            .map(|w| lag52.values[w])
            .filter(|v| !v.is_nan())
            .collect();
        assert_eq!(lag52_imp.values[0], median(&own).unwrap());
        assert!(fitted.all_missing.is_empty());
        // non-missing cells untouched, idempotent
        for (a, b) in m.columns.iter().zip(&imp.columns) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!(x.is_nan() || x == y);
                assert!(!y.is_nan());
            }
        }
        // targets keep their NaNs, so compare the debug rendering
        let (again, _) = impute(&imp, 60).unwrap();
        assert_eq!(format!("{again:?}"), format!("{imp:?}"));
    }

    #[test]
    fn unseen_series_uses_global_medians() {
        let spec = FeatureSpec::default();
        let s: Vec<f64> = (0..60).map(|t| (t % 4) as f64).collect();
        let train = panel_of(vec![(s.clone(), vec![true; 60])]);
        let m = build_features(&train, &spec).unwrap();
        let (_, imputer) = impute(&m, 59).unwrap();
        let other = SalesPanel::new(
            vec![ItemKey::new("new", "series")],
            train.axis().clone(),
            vec![s],
            vec![vec![true; 60]],
        )
        .unwrap();
        let mut m2 = build_features(&other, &spec).unwrap();
        imputer.apply(&mut m2).unwrap();
        let idx = imputer.columns.iter().position(|c| c == "lag_52").unwrap();
        assert_eq!(m2.column("lag_52").unwrap().values[0], imputer.global[idx]);
    }

    #[test]
    fn untouched_when_nothing_missing() {
        let spec = FeatureSpec::default();
        let p = panel_of(vec![(
            (0..70).map(|t| (t % 5) as f64 + 1.0).collect(),
            vec![true; 70],
        )]);
        let m = build_features(&p, &spec).unwrap();
        let (mut imp, _) = impute(&m, 69).unwrap();
        // drop columns with structural gaps and compare one that is always filled
        imp.columns.retain(|c| c.name == "fourier_sin_1");
        assert_eq!(
            imp.columns[0].values,
            m.column("fourier_sin_1").unwrap().values
        );
    }

    #[test]
    fn entirely_missing_feature_is_reported() {
        let spec = FeatureSpec::default();
        let p = panel_of(vec![(vec![1.0; 10], vec![true; 10])]);
        let m = build_features(&p, &spec).unwrap();
        let (imp, fitted) = impute(&m, 9).unwrap();
        assert!(fitted.all_missing.contains(&"lag_52".to_string()));
        assert!(imp
            .column("lag_52")
            .unwrap()
            .values
            .iter()
            .all(|v| *v == 0.0));
    }
}
