//! Oracles shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use invplan::features::{build_features, ColumnKind, FeatureMatrix, FeatureSpec};
use invplan::gbdt::{Dataset, Features, TrainConfig};
use invplan::panel::{ItemKey, SalesPanel, WeekAxis};
use invplan::synth::{generate, SyntheticSpec};
use rand::Rng;

pub fn monday() -> chrono::NaiveDate {
    chrono::NaiveDate::from_ymd_opt(2021, 4, 12).unwrap()
}

pub fn panel_from(sales: Vec<Vec<f64>>, flags: Vec<Vec<bool>>) -> SalesPanel {
    let n = sales[0].len();
    let items = (0..sales.len())
        .map(|i| ItemKey::new("0", i.to_string()))
        .collect();
    SalesPanel::new(
        items,
        WeekAxis::from_start(monday(), n).unwrap(),
        sales,
        flags,
    )
    .unwrap()
}

pub fn synthetic(n_items: usize, n_weeks: usize, seed: u64) -> SalesPanel {
    generate(&SyntheticSpec {
        n_items,
        n_weeks,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .panel
}

/// Row `row` of every causal column, as bit patterns so NaN compares equal.
fn causal_row(m: &FeatureMatrix, row: usize) -> Vec<u64> {
    let mut out: Vec<u64> = m.columns.iter().map(|c| c.values[row].to_bits()).collect();
    out.push(m.scale[row].to_bits());
    out.push(m.week_of_year[row] as u64);
    out.push(m.active[row] as u64);
    out
}

/// Recomputes features on histories cut right after each sampled week and
/// returns the pairs whose row differs from the full-history row in any bit.
/// Targets look ahead by construction and the recency weights are anchored at
/// the newest week, so neither is compared.
pub fn causality_violations(panel: &SalesPanel, pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let spec = FeatureSpec::default();
    let full = build_features(panel, &spec).unwrap();
    let mut rng = invplan::seed::rng(seed);
    let mut bad = Vec::new();
    for _ in 0..pairs {
        let item = rng.random_range(0..panel.n_items());
        let week = rng.random_range(0..panel.n_weeks());
        let cut = build_features(&panel.truncated(week + 1).unwrap(), &spec).unwrap();
        if causal_row(&full, full.row(item, week)) != causal_row(&cut, cut.row(item, week)) {
            bad.push((item, week));
        }
    }
    bad
}

/// A panel whose scale factor never touches the floor: every series is in
/// stock with positive sales in week 0 and keeps a high level.
pub fn clip_free_panel(n_items: usize, n_weeks: usize, seed: u64) -> SalesPanel {
    let mut rng = invplan::seed::rng(seed);
    let mut sales = Vec::new();
    let mut flags = Vec::new();
    for _ in 0..n_items {
        let level = rng.random_range(2.0..40.0);
        let amp = rng.random_range(0.0..0.5);
        let mut s = Vec::with_capacity(n_weeks);
        let mut f = Vec::with_capacity(n_weeks);
        for t in 0..n_weeks {
            let in_stock = t == 0 || rng.random::<f64>() > 0.08;
            let season = 1.0 + amp * (2.0 * std::f64::consts::PI * t as f64 / 52.0).sin();
            let v = (level * season * rng.random_range(0.5..1.5))
                .round()
                .max(1.0);
            f.push(in_stock);
            s.push(if in_stock { v } else { 0.0 });
        }
        sales.push(s);
        flags.push(f);
    }
    panel_from(sales, flags)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a.is_nan() || b.is_nan() {
        return a.is_nan() && b.is_nan();
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Largest relative deviation seen when all sales are multiplied by `c`:
/// scaled columns and targets should not move, the scale factor should
/// move by exactly `c`. Returns `None` when the clip binds somewhere (the
/// precondition fails) and otherwise the count of cells off by more than
/// `tol`.
pub fn equivariance_violations(panel: &SalesPanel, c: f64, tol: f64) -> Option<usize> {
    let spec = FeatureSpec::default();
    let a = build_features(panel, &spec).unwrap();
    if a.scale.iter().any(|&s| s <= 1.0) {
        return None;
    }
    let b = build_features(&panel.scaled(c).unwrap(), &spec).unwrap();
    let mut bad = 0;
    for (ca, cb) in a.columns.iter().zip(&b.columns) {
        if ca.kind != ColumnKind::Scaled {
            continue;
        }
        bad += ca
            .values
            .iter()
            .zip(&cb.values)
            .filter(|(x, y)| !rel_close(**x, **y, tol))
            .count();
    }
    for (ta, tb) in a.targets.iter().zip(&b.targets) {
        bad += ta
            .iter()
            .zip(tb)
            .filter(|(x, y)| !rel_close(**x, **y, tol))
            .count();
    }
    bad += a
        .scale
        .iter()
        .zip(&b.scale)
        .filter(|(x, y)| !rel_close(c * **x, **y, tol))
        .count();
    Some(bad)
}

pub fn numeric_dataset(cols: Vec<(&str, Vec<f64>)>, target: Vec<f64>) -> Dataset {
    let n = target.len();
    Dataset {
        features: Features {
            numeric_names: cols.iter().map(|c| c.0.to_string()).collect(),
            numeric: cols.into_iter().map(|c| c.1).collect(),
            ..Features::default()
        },
        target,
        weight: vec![1.0; n],
    }
}

/// `y = 1{x > 0.5}` on 200 evenly spaced points.
pub fn step_dataset() -> Dataset {
    let x: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
    let y = x.iter().map(|v| if *v > 0.5 { 1.0 } else { 0.0 }).collect();
    numeric_dataset(vec![("x", x)], y)
}

pub fn stumps(iterations: usize) -> TrainConfig {
    TrainConfig {
        max_iterations: iterations,
        learning_rate: 0.3,
        max_depth: 1,
        l2_leaf_reg: 0.0,
        early_stopping_rounds: 0,
        ..TrainConfig::default()
    }
}

pub fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    (pred
        .iter()
        .zip(target)
        .map(|(p, y)| (p - y).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Noisy regression data with a few interacting features and a categorical.
pub fn noisy_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = invplan::seed::rng(seed);
    let x1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
    let x3: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let cat: Vec<String> = (0..n).map(|_| rng.random_range(0..6).to_string()).collect();
    let target = (0..n)
        .map(|i| {
            let c: f64 = cat[i].parse().unwrap();
            x1[i] * x2[i] + (3.0 * x3[i]).sin() + 0.2 * c + rng.random_range(-0.3..0.3)
        })
        .collect();
    let weight = (0..n).map(|_| rng.random_range(0.25..2.0)).collect();
    Dataset {
        features: Features {
            numeric_names: vec!["x1".into(), "x2".into(), "x3".into()],
            numeric: vec![x1, x2, x3],
            categorical_names: vec!["c".into()],
            categorical: vec![cat],
        },
        target,
        weight,
    }
}

/// Every per-week law of the lost-sales dynamics, checked against the raw
/// trace, the orders fed in and the starting snapshot. Returns one message
/// per broken law.
pub fn law_violations(
    ledger: &invplan::simulator::CostLedger,
    demand: &[Vec<i64>],
    orders: &[Vec<i64>],
    init: &invplan::panel::InventorySnapshot,
    c: &invplan::panel::CostParams,
) -> Vec<String> {
    let lead = c.lead_time_weeks;
    let horizon = orders.len();
    let mut bad = Vec::new();
    let mut check = |ok: bool, what: &str, r: usize, i: usize| {
        if !ok {
            bad.push(format!("{what} at week {r} item {i}"));
        }
    };
    if ledger.weeks.len() != horizon + lead {
        return vec![format!(
            "{} costed weeks, expected {}",
            ledger.weeks.len(),
            horizon + lead
        )];
    }
    let (mut shortage, mut holding) = (0.0, 0.0);
    for (r, w) in ledger.weeks.iter().enumerate() {
        for i in 0..w.on_hand.len() {
            // Lost demand never carries over: each week sees the raw trace.
            check(w.demand[i] == demand[r][i], "backorder", r, i);
            check(
                w.sales[i] == w.on_hand[i].min(w.demand[i]) && w.sales[i] >= 0,
                "sales bound",
                r,
                i,
            );
            check(
                w.lost[i] == (w.demand[i] - w.on_hand[i]).max(0),
                "lost",
                r,
                i,
            );
            check(w.ending[i] == w.on_hand[i] - w.sales[i], "ending", r, i);
            check(w.lost[i] * w.ending[i] == 0, "complementarity", r, i);
            let from_init = if r < lead { init.in_transit[i][r] } else { 0 };
            let from_orders = if (lead..horizon + lead).contains(&r) {
                orders[r - lead][i]
            } else {
                0
            };
            check(
                w.receipts[i] == from_init + from_orders,
                "receipt timing",
                r,
                i,
            );
            let before = if r == 0 {
                init.on_hand[i]
            } else {
                ledger.weeks[r - 1].ending[i]
            };
            check(
                w.on_hand[i] == before + w.receipts[i],
                "flow conservation",
                r,
                i,
            );
        }
        // Unit totals are integers, so charging them once is exact.
        let sh = c.shortage_cost * w.lost.iter().sum::<i64>() as f64;
        let ho = c.holding_cost * w.ending.iter().sum::<i64>() as f64;
        check(
            w.shortage_cost == sh && w.holding_cost == ho,
            "week cost",
            r,
            0,
        );
        check(
            w.week_cost == w.shortage_cost + w.holding_cost,
            "week total",
            r,
            0,
        );
        shortage += w.shortage_cost;
        holding += w.holding_cost;
    }
    check(ledger.shortage_total == shortage, "shortage total", 0, 0);
    check(ledger.holding_total == holding, "holding total", 0, 0);
    check(
        ledger.total_cost() == shortage + holding,
        "cost identity",
        0,
        0,
    );
    bad
}
