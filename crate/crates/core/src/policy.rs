//! Forecasts plus inventory state to orders: projection to the delivery week,
//! cost-aware target stock with a square-root buffer, calibration of the buffer
//! multiplier, and the coverage benchmark.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, HORIZONS};
use crate::forecast::{self, postprocess, predict_horizons, round_half_up, ForecastSet};
use crate::gbdt::Ensemble;
use crate::panel::{CostParams, InventorySnapshot, ItemKey, SalesPanel};
use crate::simulator::{run_episode, OrderingPolicy, SimState};

/// Service level minimising single-period expected cost, `c_s / (c_s + c_h)`.
pub fn critical_fractile(costs: &CostParams) -> Result<f64> {
    let total = costs.shortage_cost + costs.holding_cost;
    if !(total > 0.0) {
        return Err(Error::Config(
            "shortage and holding cost are both zero".into(),
        ));
    }
    Ok(costs.shortage_cost / total)
}

// Wichura's AS241 (PPND16): relative accuracy about 1e-16.
#[allow(clippy::excessive_precision)]
const A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
#[allow(clippy::excessive_precision)]
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
#[allow(clippy::excessive_precision)]
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
#[allow(clippy::excessive_precision)]
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
#[allow(clippy::excessive_precision)]
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
#[allow(clippy::excessive_precision)]
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

fn poly(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Standard normal quantile.
pub fn inv_norm_cdf(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("quantile {q} not in (0, 1)")));
    }
    let d = q - 0.5;
    if d.abs() <= 0.425 {
        let r = 0.180625 - d * d;
        return Ok(d * poly(&A, r) / poly(&B, r));
    }
    let r = (-(q.min(1.0 - q)).ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    Ok(if d < 0.0 { -x } else { x })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub costs: CostParams,
    pub critical_fractile: f64,
    pub safety_factor: f64,
    pub phi: f64,
}

impl PolicyParams {
    pub fn new(costs: CostParams, phi: f64) -> Result<Self> {
        costs.validate()?;
        if !(phi >= 0.0 && phi.is_finite()) {
            return Err(Error::Config(format!(
                "phi {phi} must be a finite value >= 0"
            )));
        }
        if costs.lead_time_weeks + 1 > HORIZONS {
            return Err(Error::Config(format!(
                "lead time {} needs forecasts beyond horizon {HORIZONS}",
                costs.lead_time_weeks
            )));
        }
        let q = critical_fractile(&costs)?;
        if q >= 1.0 {
            return Err(Error::Config(
                "holding cost must be > 0 for a finite order-up-to level".into(),
            ));
        }
        // free shortages give q = 0 and an infinitely negative buffer
        let safety_factor = if q == 0.0 {
            f64::NEG_INFINITY
        } else if q == 0.5 {
            0.0
        } else {
            inv_norm_cdf(q)?
        };
        Ok(Self {
            costs,
            critical_fractile: q,
            safety_factor,
            phi,
        })
    }

    pub fn with_phi(&self, phi: f64) -> Self {
        Self {
            phi,
            ..self.clone()
        }
    }
}

/// Projected inventory at the delivery week of an order placed now.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Projection {
    /// `(I_{t+k}, Ẽ_{t+k})` for `k = 1..=lead`.
    pub steps: Vec<(i64, i64)>,
    /// `Ĩ`, the stock on hand when the order arrives.
    pub delivered_week_stock: i64,
}

/// Rolls end-of-week stock forward through the scheduled receipts, consuming
/// the point forecast each week and never going below zero.
pub fn project_item(end_inv: i64, receipts: &[i64], forecasts: &[i64]) -> Result<Projection> {
    if end_inv < 0 || receipts.iter().chain(forecasts).any(|v| *v < 0) {
        return Err(Error::invalid("projection inputs must be >= 0"));
    }
    if forecasts.len() < receipts.len() {
        return Err(Error::invalid(
            "one forecast per scheduled receipt week is required",
        ));
    }
    let mut ending = end_inv;
    let mut steps = Vec::with_capacity(receipts.len());
    for (r, d) in receipts.iter().zip(forecasts) {
        let on_hand = ending + r;
        ending = (on_hand - d).max(0);
        steps.push((on_hand, ending));
    }
    Ok(Projection {
        steps,
        delivered_week_stock: ending,
    })
}

/// Per-item projection with `receipts[i]` holding `R_{t+1}..R_{t+lead}`.
pub fn project_inventory(
    end_inv: &[i64],
    receipts: &[Vec<i64>],
    forecasts: &ForecastSet<i64>,
) -> Result<Vec<Projection>> {
    if end_inv.len() != receipts.len() || end_inv.len() != forecasts.values.len() {
        return Err(Error::invalid("projection inputs differ in item count"));
    }
    end_inv
        .iter()
        .zip(receipts)
        .zip(&forecasts.values)
        .map(|((&e, r), f)| project_item(e, r, f))
        .collect()
}

/// `B = D̂ + z·φ·√D̂`.
pub fn target_stock(demand: &[f64], params: &PolicyParams) -> Vec<f64> {
    if params.phi == 0.0 {
        return demand.to_vec();
    }
    let k = params.safety_factor * params.phi;
    demand
        .iter()
        .map(|&d| if d > 0.0 { d + k * d.sqrt() } else { d })
        .collect()
}

pub fn order_quantity(target: &[f64], projected: &[i64]) -> Vec<i64> {
    target
        .iter()
        .zip(projected)
        .map(|(&b, &i)| {
            if b > i as f64 {
                round_half_up(b - i as f64)
            } else {
                0
            }
        })
        .collect()
}

/// Orders for one decision given end-of-week stock, the pipeline and
/// post-processed forecasts.
pub fn decide_orders(
    state: &SimState,
    forecasts: &ForecastSet<i64>,
    params: &PolicyParams,
) -> Result<Vec<i64>> {
    let lead = params.costs.lead_time_weeks;
    if forecasts.values.len() != state.n_items() {
        return Err(Error::invalid(format!(
            "forecasts cover {} items, state has {}",
            forecasts.values.len(),
            state.n_items()
        )));
    }
    let receipts: Vec<Vec<i64>> = (0..state.n_items())
        .map(|i| state.in_transit(i)[..lead].to_vec())
        .collect();
    let projected: Vec<i64> = project_inventory(&state.on_hand, &receipts, forecasts)?
        .iter()
        .map(|p| p.delivered_week_stock)
        .collect();
    let delivery: Vec<f64> = forecasts.values.iter().map(|v| v[lead] as f64).collect();
    Ok(order_quantity(&target_stock(&delivery, params), &projected))
}

/// Cost-aware order-up-to policy replaying precomputed forecasts, one set per
/// decision.
pub struct CostAwarePolicy<'a> {
    pub params: PolicyParams,
    pub forecasts: &'a [ForecastSet<i64>],
}

impl OrderingPolicy for CostAwarePolicy<'_> {
    fn orders(&mut self, state: &SimState, decision: usize) -> Result<Vec<i64>> {
        let f = self
            .forecasts
            .get(decision)
            .ok_or_else(|| Error::invalid(format!("no forecasts for decision {decision}")))?;
        decide_orders(state, f, &self.params)
    }
}

/// Weeks of forecast demand the benchmark keeps in its inventory position.
pub const COVERAGE_WEEKS: f64 = 4.0;

/// Coverage rule: order up to four weeks of forecast demand on the inventory
/// position (on hand plus everything in transit).
pub fn coverage_orders(weekly_forecast: &[f64], state: &SimState) -> Vec<i64> {
    weekly_forecast
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let position = state.on_hand[i] + state.total_in_transit(i);
            round_half_up(COVERAGE_WEEKS * f - position as f64).max(0)
        })
        .collect()
}

/// Benchmark orders at `decision_week` from the seasonal moving-average
/// baseline at the delivery horizon.
pub fn benchmark_coverage_policy(
    panel: &SalesPanel,
    decision_week: usize,
    state: &SimState,
) -> Result<Vec<i64>> {
    let base = forecast::baseline_seasonal_ma(panel, decision_week)?;
    Ok(coverage_orders(&base.horizon(state.lead_time + 1), state))
}

/// Coverage benchmark replaying precomputed baseline forecasts.
pub struct CoveragePolicy<'a> {
    pub baseline: &'a [ForecastSet<f64>],
}

impl OrderingPolicy for CoveragePolicy<'_> {
    fn orders(&mut self, state: &SimState, decision: usize) -> Result<Vec<i64>> {
        let f = self
            .baseline
            .get(decision)
            .ok_or_else(|| Error::invalid(format!("no baseline for decision {decision}")))?;
        Ok(coverage_orders(&f.horizon(state.lead_time + 1), state))
    }
}

/// `0.00, 0.05, ..., 3.00`.
pub fn default_phi_grid() -> Vec<f64> {
    (0..=60).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub phi: f64,
    pub grid: Vec<f64>,
    /// Total replay cost at each grid point.
    pub cost_curve: Vec<f64>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("phi grid is empty".into()));
    }
    if grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config(
            "phi grid must be finite, >= 0 and ascending".into(),
        ));
    }
    Ok(())
}

/// Replays the demand trace once per grid value with the same frozen
/// forecasts and returns the cheapest value, the smallest on ties.
pub fn calibrate_phi_replay(
    forecasts: &[ForecastSet<i64>],
    demand: &[Vec<i64>],
    init: &InventorySnapshot,
    costs: &CostParams,
    grid: &[f64],
) -> Result<Calibration> {
    check_grid(grid)?;
    if forecasts.is_empty() {
        return Err(Error::invalid("calibration window has no decisions"));
    }
    let base = PolicyParams::new(*costs, 0.0)?;
    let cost_curve: Vec<f64> = grid
        .par_iter()
        .map(|&phi| {
            let mut policy = CostAwarePolicy {
                params: base.with_phi(phi),
                forecasts,
            };
            run_episode(demand, init, &mut policy, costs, forecasts.len()).map(|l| l.total_cost())
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, c) in cost_curve.iter().enumerate() {
        if *c < cost_curve[best] {
            best = i;
        }
    }
    Ok(Calibration {
        phi: grid[best],
        grid: grid.to_vec(),
        cost_curve,
    })
}

/// Decision weeks `first, first + 1, ...`; the replay costs the weeks from
/// `first + 1` through `first + decisions + lead`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayWindow {
    pub first_decision_week: usize,
    pub decisions: usize,
}

impl ReplayWindow {
    /// Window whose costed weeks are exactly `[start, end)`.
    pub fn covering(start: usize, end: usize, lead: usize) -> Result<Self> {
        if start == 0 || end < start + lead + 1 {
            return Err(Error::invalid(format!(
                "replay window [{start}, {end}) is shorter than lead time + 1 weeks"
            )));
        }
        Ok(Self {
            first_decision_week: start - 1,
            decisions: end - start - lead,
        })
    }

    pub fn decision_weeks(&self) -> std::ops::Range<usize> {
        self.first_decision_week..self.first_decision_week + self.decisions
    }

    pub fn costed_weeks(&self, lead: usize) -> std::ops::Range<usize> {
        self.first_decision_week + 1..self.first_decision_week + 1 + self.decisions + lead
    }
}

/// Observed sales over the window's costed weeks, rounded to units.
pub fn replay_demand(
    panel: &SalesPanel,
    window: &ReplayWindow,
    lead: usize,
) -> Result<Vec<Vec<i64>>> {
    let weeks = window.costed_weeks(lead);
    if window.decisions == 0 || weeks.end > panel.n_weeks() {
        return Err(Error::invalid(format!(
            "replay weeks {weeks:?} not inside {} history weeks",
            panel.n_weeks()
        )));
    }
    Ok(weeks
        .map(|t| {
            (0..panel.n_items())
                .map(|i| round_half_up(panel.sales(i)[t]).max(0))
                .collect()
        })
        .collect())
}

/// Post-processed model forecasts for every decision week of the window.
pub fn model_forecasts(
    models: &[Ensemble],
    matrix: &FeatureMatrix,
    window: &ReplayWindow,
) -> Result<Vec<ForecastSet<i64>>> {
    window
        .decision_weeks()
        .map(|t| predict_horizons(models, matrix, t).map(|f| postprocess(&f)))
        .collect()
}

pub fn baseline_forecasts(
    panel: &SalesPanel,
    window: &ReplayWindow,
) -> Result<Vec<ForecastSet<f64>>> {
    window
        .decision_weeks()
        .map(|t| forecast::baseline_seasonal_ma(panel, t))
        .collect()
}

/// Grid search of `φ` by replaying `window` with forecasts from frozen models.
pub fn calibrate_phi(
    panel: &SalesPanel,
    matrix: &FeatureMatrix,
    models: &[Ensemble],
    init: &InventorySnapshot,
    costs: &CostParams,
    window: &ReplayWindow,
    grid: &[f64],
) -> Result<Calibration> {
    let demand = replay_demand(panel, window, costs.lead_time_weeks)?;
    let forecasts = model_forecasts(models, matrix, window)?;
    calibrate_phi_replay(&forecasts, &demand, init, costs, grid)
}

/// Writes an order sheet: `Store,Product,decision_week,order_qty`.
pub fn write_orders(
    items: &[ItemKey],
    decision_week: usize,
    orders: &[i64],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(out, "Store,Product,decision_week,order_qty").map_err(io_err)?;
    for (key, q) in items.iter().zip(orders) {
        writeln!(out, "{},{},{},{}", key.store, key.product, decision_week, q).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads an order sheet into panel item order. Every panel item must appear
/// exactly once.
pub fn read_orders(path: impl AsRef<Path>, items: &[ItemKey]) -> Result<Vec<i64>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let headers = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::format(path, format!("missing column {name}")))
    };
    let (store, product, qty) = (col("Store")?, col("Product")?, col("order_qty")?);
    let index: HashMap<&ItemKey, usize> = items.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let mut orders: Vec<Option<i64>> = vec![None; items.len()];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let key = ItemKey::new(rec[store].trim(), rec[product].trim());
        let &i = index
            .get(&key)
            .ok_or_else(|| Error::UnknownItem(key.to_string()))?;
        let q: i64 = rec[qty].trim().parse().map_err(|_| {
            Error::format(
                path,
                format!("row {}: bad order_qty {:?}", line + 2, &rec[qty]),
            )
        })?;
        if q < 0 {
            return Err(Error::NegativeQuantity {
                what: "order",
                item: i,
                week: 0,
                value: q,
            });
        }
        if orders[i].replace(q).is_some() {
            return Err(Error::format(path, format!("item {key} listed twice")));
        }
    }
    orders
        .into_iter()
        .zip(items)
        .map(|(q, k)| q.ok_or_else(|| Error::format(path, format!("no order for item {k}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn costs(cs: f64, ch: f64) -> CostParams {
        CostParams::new(cs, ch, 2).unwrap()
    }

    #[test]
    fn fractile_examples() {
        assert!((critical_fractile(&costs(1.0, 0.2)).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(critical_fractile(&costs(1.0, 1.0)).unwrap(), 0.5);
        assert_eq!(critical_fractile(&costs(9.0, 1.0)).unwrap(), 0.9);
    }

    #[test]
    fn quantile_examples() {
        assert!((inv_norm_cdf(5.0 / 6.0).unwrap() - 0.967_422).abs() < 1e-4);
        assert_eq!(inv_norm_cdf(0.5).unwrap(), 0.0);
        assert!((inv_norm_cdf(0.975).unwrap() - 1.959_964).abs() < 1e-6);
        assert!(inv_norm_cdf(0.0).is_err());
        assert!(inv_norm_cdf(1.0).is_err());
        assert!(inv_norm_cdf(f64::NAN).is_err());
        for q in [0.01, 0.3, 0.2] {
            assert!((inv_norm_cdf(q).unwrap() + inv_norm_cdf(1.0 - q).unwrap()).abs() < 1e-14);
        }
        assert!(inv_norm_cdf(1e-300).unwrap() < -37.0);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(
            project_item(2, &[3, 0], &[4, 2])
                .unwrap()
                .delivered_week_stock,
            0
        );
        assert_eq!(
            project_item(4, &[1, 2], &[0, 0])
                .unwrap()
                .delivered_week_stock,
            7
        );
        let p = project_item(0, &[0, 10], &[0, 3]).unwrap();
        assert_eq!(p.delivered_week_stock, 7);
        assert_eq!(p.steps, vec![(0, 0), (10, 7)]);
        assert!(project_item(-1, &[0, 0], &[0, 0]).is_err());
    }

    #[test]
    fn target_and_order_examples() {
        let p = PolicyParams::new(costs(1.0, 0.2), 1.0).unwrap();
        assert_eq!(target_stock(&[0.0], &p), vec![0.0]);
        let b = target_stock(&[100.0], &p)[0];
        assert!((b - 109.674).abs() < 1e-3);
        let sym = PolicyParams::new(costs(1.0, 1.0), 2.5).unwrap();
        assert_eq!(target_stock(&[37.0], &sym), vec![37.0]);
        assert_eq!(order_quantity(&[7.4, 2.0, 4.5], &[3, 5, 0]), vec![4, 0, 5]);
    }

    #[test]
    fn coverage_examples() {
        let snap = InventorySnapshot {
            on_hand: vec![12, 30, 0],
            in_transit: vec![vec![3, 0], vec![0, 0], vec![0, 0]],
        };
        let state = SimState::from_snapshot(&snap, 2).unwrap();
        assert_eq!(coverage_orders(&[5.0, 5.0, 0.0], &state), vec![5, 0, 0]);
    }

    #[test]
    fn replay_window_bounds() {
        let w = ReplayWindow::covering(139, 157, 2).unwrap();
        assert_eq!(w.first_decision_week, 138);
        assert_eq!(w.decisions, 16);
        assert_eq!(w.costed_weeks(2), 139..157);
        assert!(ReplayWindow::covering(10, 12, 2).is_err());
    }
}
