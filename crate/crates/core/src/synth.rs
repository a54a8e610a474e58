//! Synthetic weekly panels with heterogeneous scale, intermittency,
//! seasonality, trend, stockouts and delayed starts.

use std::f64::consts::PI;
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{
    write_flags_wide, write_inventory, InventorySnapshot, ItemKey, SalesPanel, WeekAxis,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_items: usize,
    pub n_weeks: usize,
    /// Monday of week 0.
    pub start: NaiveDate,
    pub n_stores: usize,
    /// Mean weekly demand, drawn log-uniformly.
    pub scale_range: (f64, f64),
    /// Probability that a week has no demand at all.
    pub zero_prob_range: (f64, f64),
    /// Relative amplitude of the yearly sinusoid.
    pub seasonal_amplitude_range: (f64, f64),
    /// Relative level change per year.
    pub trend_range: (f64, f64),
    /// Probability that an item-week is out of stock.
    pub stockout_rate: f64,
    /// Share of items whose history starts after week 0.
    pub delayed_start_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_items: 200,
            n_weeks: 200,
            start: NaiveDate::from_ymd_opt(2021, 4, 12).expect("valid date"),
            n_stores: 10,
            scale_range: (0.3, 100.0),
            zero_prob_range: (0.0, 0.7),
            seasonal_amplitude_range: (0.0, 0.6),
            trend_range: (-0.2, 0.3),
            stockout_rate: 0.05,
            delayed_start_rate: 0.15,
            seed: 0,
        }
    }
}

/// Parameters drawn for one item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemRegime {
    pub scale: f64,
    pub zero_prob: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub trend: f64,
    pub start_week: usize,
}

fn check_range(name: &str, r: (f64, f64), lo: f64, hi: f64) -> Result<()> {
    if !(r.0.is_finite() && r.1.is_finite() && lo <= r.0 && r.0 <= r.1 && r.1 <= hi) {
        return Err(Error::Config(format!(
            "{name} range {r:?} must lie in [{lo}, {hi}] and be ordered"
        )));
    }
    Ok(())
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.n_weeks == 0 || self.n_stores == 0 {
            return Err(Error::Config(
                "n_items, n_weeks and n_stores must be >= 1".into(),
            ));
        }
        check_range("scale", self.scale_range, f64::MIN_POSITIVE, f64::MAX)?;
        check_range("zero_prob", self.zero_prob_range, 0.0, 1.0)?;
        check_range(
            "seasonal_amplitude",
            self.seasonal_amplitude_range,
            0.0,
            1.0,
        )?;
        check_range("trend", self.trend_range, -1.0, f64::MAX)?;
        check_range(
            "stockout_rate",
            (self.stockout_rate, self.stockout_rate),
            0.0,
            1.0,
        )?;
        check_range(
            "delayed_start_rate",
            (self.delayed_start_rate, self.delayed_start_rate),
            0.0,
            1.0,
        )?;
        Ok(())
    }
}

fn uniform(rng: &mut seed::Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

/// Weekly demand intensity before zero inflation.
pub fn intensity(regime: &ItemRegime, week: usize) -> f64 {
    let years = week as f64 / 52.0;
    let season = 1.0 + regime.amplitude * (2.0 * PI * years + regime.phase).sin();
    (regime.scale * season * (1.0 + regime.trend * years)).max(0.0)
}

pub struct SyntheticPanel {
    pub panel: SalesPanel,
    pub regimes: Vec<ItemRegime>,
    /// Latent demand before stockout censoring.
    pub demand: Vec<Vec<f64>>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticPanel> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.seed, "synth"));
    let axis = WeekAxis::from_start(spec.start, spec.n_weeks)?;
    let mut items = Vec::with_capacity(spec.n_items);
    let mut regimes = Vec::with_capacity(spec.n_items);
    let mut demand = Vec::with_capacity(spec.n_items);
    let mut sales = Vec::with_capacity(spec.n_items);
    let mut flags = Vec::with_capacity(spec.n_items);
    let (lo, hi) = (spec.scale_range.0.ln(), spec.scale_range.1.ln());
    for i in 0..spec.n_items {
        items.push(ItemKey::new(
            format!("{}", i % spec.n_stores),
            format!("{}", i / spec.n_stores),
        ));
        let delayed = rng.random::<f64>() < spec.delayed_start_rate;
        let regime = ItemRegime {
            scale: uniform(&mut rng, (lo, hi)).exp(),
            zero_prob: uniform(&mut rng, spec.zero_prob_range),
            amplitude: uniform(&mut rng, spec.seasonal_amplitude_range),
            phase: rng.random_range(0.0..2.0 * PI),
            trend: uniform(&mut rng, spec.trend_range),
            start_week: if delayed {
                rng.random_range(0..spec.n_weeks.div_ceil(2))
            } else {
                0
            },
        };
        let mut d = vec![0.0; spec.n_weeks];
        let mut s = vec![0.0; spec.n_weeks];
        let mut f = vec![true; spec.n_weeks];
        for t in 0..spec.n_weeks {
            let active = rng.random::<f64>() >= regime.zero_prob;
            let lambda = intensity(&regime, t) / (1.0 - regime.zero_prob).max(1e-9);
            let draw = if active && lambda > 0.0 {
                Poisson::new(lambda)
                    .map_err(|e| Error::invalid(e.to_string()))?
                    .sample(&mut rng)
            } else {
                0.0
            };
            let out = rng.random::<f64>() < spec.stockout_rate;
            if t < regime.start_week {
                continue;
            }
            d[t] = draw;
            if out {
                f[t] = false;
            } else {
                s[t] = draw;
            }
        }
        regimes.push(regime);
        demand.push(d);
        sales.push(s);
        flags.push(f);
    }
    let panel = SalesPanel::new(items, axis, sales, flags)?;
    Ok(SyntheticPanel {
        panel,
        regimes,
        demand,
    })
}

/// Writes `sales.csv`, `in_stock.csv` and `inventory.csv` (warm-start stock
/// at the last week) into `dir`.
pub fn write_synthetic(
    synth: &SyntheticPanel,
    dir: impl AsRef<Path>,
    lead_time: usize,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    crate::panel::write_sales_wide(&synth.panel, dir.join("sales.csv"))?;
    write_flags_wide(&synth.panel, dir.join("in_stock.csv"))?;
    let snap: InventorySnapshot =
        crate::pipeline::warm_start_snapshot(&synth.panel, synth.panel.n_weeks() - 1, lead_time);
    write_inventory(&synth.panel, &snap, dir.join("inventory.csv"))
}
