//! Periodic-review lost-sales dynamics with a fixed lead time.
//!
//! Timing within one week `t`:
//! 1. receipts due at `t` are added to the shelf (`I_t = E_{t-1} + R_t`);
//! 2. demand is served up to the shelf stock; the excess is lost;
//! 3. shortage and holding costs are charged on lost units and end stock;
//! 4. an order may be placed, arriving at the start of `t + lead + 1`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{CostParams, InventorySnapshot, ItemKey};

/// Everything that happened to every item in one simulated week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekOutcome {
    pub week: usize,
    pub receipts: Vec<i64>,
    pub on_hand: Vec<i64>,
    pub demand: Vec<i64>,
    pub sales: Vec<i64>,
    pub lost: Vec<i64>,
    pub ending: Vec<i64>,
    /// Orders placed at the end of this week.
    pub orders: Vec<i64>,
    pub shortage_cost: f64,
    pub holding_cost: f64,
    pub week_cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub shortage_total: f64,
    pub holding_total: f64,
    /// Orders placed at the opening decision point, before the first costed week.
    pub opening_orders: Vec<i64>,
    pub weeks: Vec<WeekOutcome>,
}

impl CostLedger {
    pub fn total_cost(&self) -> f64 {
        self.shortage_total + self.holding_total
    }

    /// Number of costed weeks.
    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }
}

pub fn total_cost(ledger: &CostLedger) -> f64 {
    ledger.total_cost()
}

/// Inventory state of one episode.
///
/// `on_hand` is the stock currently on the shelf: the start-of-week level
/// `I_t` before the week's demand, the end-of-week level `E_t` after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub week: usize,
    pub lead_time: usize,
    pub on_hand: Vec<i64>,
    /// `pipeline[i][k]` arrives at the start of week `week + 1 + k`.
    pipeline: Vec<Vec<i64>>,
    last_receipts: Vec<i64>,
    pub ledger: CostLedger,
}

fn check_nonnegative(what: &'static str, week: usize, values: &[i64]) -> Result<()> {
    match values.iter().enumerate().find(|(_, v)| **v < 0) {
        Some((item, &value)) => Err(Error::NegativeQuantity {
            what,
            item,
            week,
            value,
        }),
        None => Ok(()),
    }
}

impl SimState {
    /// State at a decision point: `snapshot.on_hand` is on the shelf and
    /// `snapshot.in_transit[i][k]` arrives `k + 1` weeks from now.
    pub fn from_snapshot(snapshot: &InventorySnapshot, lead_time: usize) -> Result<Self> {
        snapshot.validate(lead_time)?;
        let pipeline = snapshot
            .in_transit
            .iter()
            .map(|t| {
                let mut slots = vec![0; lead_time + 1];
                slots[..t.len()].copy_from_slice(t);
                slots
            })
            .collect();
        Ok(Self {
            week: 0,
            lead_time,
            on_hand: snapshot.on_hand.clone(),
            pipeline,
            last_receipts: vec![0; snapshot.n_items()],
            ledger: CostLedger::default(),
        })
    }

    pub fn n_items(&self) -> usize {
        self.on_hand.len()
    }

    /// Scheduled receipts for item `i`; index `k` arrives at `week + 1 + k`.
    pub fn in_transit(&self, item: usize) -> &[i64] {
        &self.pipeline[item]
    }

    pub fn total_in_transit(&self, item: usize) -> i64 {
        self.pipeline[item].iter().sum()
    }

    /// Serves `demand` from the shelf and charges the week's costs.
    pub fn realize_demand(&mut self, demand: &[i64], costs: &CostParams) -> Result<&WeekOutcome> {
        if demand.len() != self.n_items() {
            return Err(Error::invalid(format!(
                "demand has {} items, state has {}",
                demand.len(),
                self.n_items()
            )));
        }
        check_nonnegative("demand", self.week, demand)?;
        let n = self.n_items();
        let mut sales = Vec::with_capacity(n);
        let mut lost = Vec::with_capacity(n);
        let mut ending = Vec::with_capacity(n);
        let mut lost_units = 0i64;
        let mut held_units = 0i64;
        for (&stock, &d) in self.on_hand.iter().zip(demand) {
            let s = stock.min(d);
            let l = (d - stock).max(0);
            let e = stock - s;
            sales.push(s);
            lost.push(l);
            ending.push(e);
            lost_units += l;
            held_units += e;
        }
        let shortage_cost = costs.shortage_cost * lost_units as f64;
        let holding_cost = costs.holding_cost * held_units as f64;
        let outcome = WeekOutcome {
            week: self.week,
            receipts: self.last_receipts.clone(),
            on_hand: std::mem::replace(&mut self.on_hand, ending.clone()),
            demand: demand.to_vec(),
            sales,
            lost,
            ending,
            orders: vec![0; n],
            shortage_cost,
            holding_cost,
            week_cost: shortage_cost + holding_cost,
        };
        self.ledger.shortage_total += shortage_cost;
        self.ledger.holding_total += holding_cost;
        self.ledger.weeks.push(outcome);
        Ok(self.ledger.weeks.last().expect("just pushed"))
    }

    /// Places orders at the end of the current week.
    pub fn place_orders(&mut self, orders: &[i64]) -> Result<()> {
        if orders.len() != self.n_items() {
            return Err(Error::invalid(format!(
                "orders have {} items, state has {}",
                orders.len(),
                self.n_items()
            )));
        }
        check_nonnegative("order", self.week, orders)?;
        let lead = self.lead_time;
        for (slots, &q) in self.pipeline.iter_mut().zip(orders) {
            slots[lead] += q;
        }
        match self.ledger.weeks.last_mut() {
            Some(last) if last.week == self.week => {
                for (o, &q) in last.orders.iter_mut().zip(orders) {
                    *o += q;
                }
            }
            _ => {
                let opening = &mut self.ledger.opening_orders;
                opening.resize(orders.len(), 0);
                for (o, &q) in opening.iter_mut().zip(orders) {
                    *o += q;
                }
            }
        }
        Ok(())
    }

    /// Moves to the start of the next week and shelves the receipts due then.
    pub fn advance(&mut self) {
        self.week += 1;
        for ((stock, slots), received) in self
            .on_hand
            .iter_mut()
            .zip(self.pipeline.iter_mut())
            .zip(self.last_receipts.iter_mut())
        {
            *received = slots[0];
            *stock += slots[0];
            slots.rotate_left(1);
            *slots.last_mut().expect("lead + 1 slots") = 0;
        }
    }
}

/// One week of the dynamics for a state positioned at the start of its week
/// (`on_hand = I_t`): serve demand, charge costs, place orders, advance.
pub fn step_week(
    mut state: SimState,
    demand: &[i64],
    orders: &[i64],
    costs: &CostParams,
) -> Result<(SimState, WeekOutcome)> {
    check_nonnegative("order", state.week, orders)?;
    state.realize_demand(demand, costs)?;
    state.place_orders(orders)?;
    let outcome = state.ledger.weeks.last().expect("realized").clone();
    state.advance();
    Ok((state, outcome))
}

/// Decides orders at a decision point. `decision` counts decisions from 0.
pub trait OrderingPolicy {
    fn orders(&mut self, state: &SimState, decision: usize) -> Result<Vec<i64>>;
}

impl<F> OrderingPolicy for F
where
    F: FnMut(&SimState, usize) -> Result<Vec<i64>>,
{
    fn orders(&mut self, state: &SimState, decision: usize) -> Result<Vec<i64>> {
        self(state, decision)
    }
}

/// Runs `horizon` ordering decisions followed by `lead_time` drain weeks with
/// zero orders, so every order placed is delivered and costed.
///
/// `init` is the state at the first decision point (end of week 0); `demand[r]`
/// is the demand of costed week `r + 1`.
pub fn run_episode<P: OrderingPolicy + ?Sized>(
    demand: &[Vec<i64>],
    init: &InventorySnapshot,
    policy: &mut P,
    costs: &CostParams,
    horizon: usize,
) -> Result<CostLedger> {
    costs.validate()?;
    if horizon == 0 {
        return Err(Error::invalid("episode horizon must be >= 1"));
    }
    let weeks = horizon + costs.lead_time_weeks;
    if demand.len() < weeks {
        return Err(Error::TraceTooShort {
            needed: weeks,
            got: demand.len(),
        });
    }
    let mut state = SimState::from_snapshot(init, costs.lead_time_weeks)?;
    let zeros = vec![0; state.n_items()];
    for (r, week_demand) in demand.iter().take(weeks).enumerate() {
        if r < horizon {
            let orders = policy.orders(&state, r)?;
            state.place_orders(&orders)?;
        } else {
            state.place_orders(&zeros)?;
        }
        state.advance();
        state.realize_demand(week_demand, costs)?;
    }
    Ok(state.ledger)
}

/// Writes the per item-week episode table followed by a summary line.
pub fn write_episode_report(
    ledger: &CostLedger,
    items: &[ItemKey],
    costs: &CostParams,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    writeln!(
        out,
        "week,item,demand,sales,lost,ending,receipts,order,week_cost"
    )
    .map_err(io_err)?;
    if !ledger.opening_orders.is_empty() {
        for (i, key) in items.iter().enumerate() {
            writeln!(out, "0,{key},0,0,0,,0,{},0", ledger.opening_orders[i]).map_err(io_err)?;
        }
    }
    for w in &ledger.weeks {
        for (i, key) in items.iter().enumerate() {
            let cost =
                costs.shortage_cost * w.lost[i] as f64 + costs.holding_cost * w.ending[i] as f64;
            writeln!(
                out,
                "{},{key},{},{},{},{},{},{},{}",
                w.week,
                w.demand[i],
                w.sales[i],
                w.lost[i],
                w.ending[i],
                w.receipts[i],
                w.orders[i],
                cost
            )
            .map_err(io_err)?;
        }
    }
    writeln!(
        out,
        "# shortage_total={},holding_total={},total={}",
        ledger.shortage_total,
        ledger.holding_total,
        ledger.total_cost()
    )
    .map_err(io_err)?;
    out.flush().map_err(io_err)
}

/// Shortage, holding and total cost from the summary line of an episode report.
pub fn read_episode_totals(path: impl AsRef<Path>) -> Result<(f64, f64, f64)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let line = text
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::format(path, "no summary line"))?;
    let mut totals = [None; 3];
    for part in line.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("bad summary field {part:?}")))?;
        let slot = match key.trim() {
            "shortage_total" => 0,
            "holding_total" => 1,
            "total" => 2,
            _ => continue,
        };
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("bad summary value {value:?}")))?;
        totals[slot] = Some(v);
    }
    match totals {
        [Some(s), Some(h), Some(t)] => Ok((s, h, t)),
        _ => Err(Error::format(path, "summary line lacks a total")),
    }
}
