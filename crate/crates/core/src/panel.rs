//! Weekly sales panel: ingestion, validation and the effective-demand view.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A store–product pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemKey {
    pub store: String,
    pub product: String,
}

impl ItemKey {
    pub fn new(store: impl Into<String>, product: impl Into<String>) -> Self {
        Self {
            store: store.into(),
            product: product.into(),
        }
    }

    /// Series identifier used as a categorical feature.
    pub fn unique_id(&self) -> String {
        format!("{}_{}", self.store, self.product)
    }
}

impl fmt::Display for ItemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.store, self.product)
    }
}

/// Ordered week-start dates (Mondays), exactly seven days apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekAxis {
    start_dates: Vec<NaiveDate>,
}

impl WeekAxis {
    pub fn new(start_dates: Vec<NaiveDate>) -> Result<Self> {
        if start_dates.is_empty() {
            return Err(Error::invalid("week axis is empty"));
        }
        for (k, d) in start_dates.iter().enumerate() {
            if d.weekday() != Weekday::Mon {
                return Err(Error::invalid(format!(
                    "week {k} starts on {d}, not a Monday"
                )));
            }
            if k > 0 && *d - start_dates[k - 1] != Duration::days(7) {
                return Err(Error::invalid(format!(
                    "week {k} ({d}) is not 7 days after {}",
                    start_dates[k - 1]
                )));
            }
        }
        Ok(Self { start_dates })
    }

    pub fn from_start(first: NaiveDate, n_weeks: usize) -> Result<Self> {
        Self::new(
            (0..n_weeks)
                .map(|k| first + Duration::weeks(k as i64))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.start_dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.start_dates
    }

    /// Week-start date at index `k`; extrapolates past the end of the axis.
    pub fn date(&self, k: usize) -> NaiveDate {
        self.start_dates[0] + Duration::weeks(k as i64)
    }

    /// ISO week number (1..=53) of week `k`'s Monday.
    pub fn iso_week(&self, k: usize) -> u32 {
        self.date(k).iso_week().week()
    }

    /// Returns an axis holding the first `n` weeks.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            start_dates: self.start_dates[..n].to_vec(),
        }
    }
}

/// Weekly sales and in-stock flags for every item.
#[derive(Debug, Clone, PartialEq)]
pub struct SalesPanel {
    items: Vec<ItemKey>,
    axis: WeekAxis,
    sales: Vec<Vec<f64>>,
    in_stock: Vec<Vec<bool>>,
    index: HashMap<ItemKey, usize>,
}

/// A week where the item is flagged out of stock but records positive sales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub item: ItemKey,
    pub week: usize,
    pub date: NaiveDate,
    pub sales: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl SalesPanel {
    /// Builds a panel, rejecting structural defects. The sales/flag consistency
    /// rule is not enforced here; see [`SalesPanel::validate`].
    pub fn new(
        items: Vec<ItemKey>,
        axis: WeekAxis,
        sales: Vec<Vec<f64>>,
        in_stock: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("panel has no items"));
        }
        if sales.len() != items.len() || in_stock.len() != items.len() {
            return Err(Error::invalid(
                "sales/flags row count differs from item count",
            ));
        }
        let mut index = HashMap::with_capacity(items.len());
        for (i, key) in items.iter().enumerate() {
            if index.insert(key.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate item {key}")));
            }
        }
        let n_weeks = axis.len();
        for (i, (s, f)) in sales.iter().zip(&in_stock).enumerate() {
            if s.len() != n_weeks || f.len() != n_weeks {
                return Err(Error::invalid(format!(
                    "item {} has {} sales / {} flag weeks, axis has {n_weeks}",
                    items[i],
                    s.len(),
                    f.len()
                )));
            }
            if let Some((w, v)) = s
                .iter()
                .enumerate()
                .find(|(_, v)| !v.is_finite() || **v < 0.0)
            {
                return Err(Error::invalid(format!(
                    "item {} week {w}: sales {v} must be a nonnegative number",
                    items[i]
                )));
            }
        }
        Ok(Self {
            items,
            axis,
            sales,
            in_stock,
            index,
        })
    }

    pub fn items(&self) -> &[ItemKey] {
        &self.items
    }

    pub fn axis(&self) -> &WeekAxis {
        &self.axis
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.axis.len()
    }

    pub fn sales(&self, item: usize) -> &[f64] {
        &self.sales[item]
    }

    pub fn in_stock(&self, item: usize) -> &[bool] {
        &self.in_stock[item]
    }

    pub fn item_index(&self, key: &ItemKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Lists every item-week flagged out of stock that still records sales.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (i, key) in self.items.iter().enumerate() {
            for (w, (&s, &f)) in self.sales[i].iter().zip(&self.in_stock[i]).enumerate() {
                if !f && s != 0.0 {
                    violations.push(Violation {
                        item: key.clone(),
                        week: w,
                        date: self.axis.date(w),
                        sales: s,
                    });
                }
            }
        }
        ValidationReport { violations }
    }

    /// Effective demand of item `i`: sales where in stock, missing otherwise.
    pub fn effective(&self, item: usize) -> EffectiveSeries {
        EffectiveSeries {
            values: self.sales[item]
                .iter()
                .zip(&self.in_stock[item])
                .map(|(&s, &f)| f.then_some(s))
                .collect(),
        }
    }

    /// Returns the panel restricted to the first `n_weeks` weeks.
    pub fn truncated(&self, n_weeks: usize) -> Result<Self> {
        if n_weeks == 0 || n_weeks > self.n_weeks() {
            return Err(Error::invalid(format!(
                "cannot truncate {} weeks to {n_weeks}",
                self.n_weeks()
            )));
        }
        Self::new(
            self.items.clone(),
            self.axis.truncated(n_weeks),
            self.sales.iter().map(|s| s[..n_weeks].to_vec()).collect(),
            self.in_stock
                .iter()
                .map(|f| f[..n_weeks].to_vec())
                .collect(),
        )
    }

    /// Multiplies every sales value by `factor`, keeping the flags.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.items.clone(),
            self.axis.clone(),
            self.sales
                .iter()
                .map(|s| s.iter().map(|v| v * factor).collect())
                .collect(),
            self.in_stock.clone(),
        )
    }
}

/// Sales with out-of-stock weeks masked as missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSeries {
    pub values: Vec<Option<f64>>,
}

impl EffectiveSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn effective_demand(panel: &SalesPanel, item: &ItemKey) -> Result<EffectiveSeries> {
    let idx = panel
        .item_index(item)
        .ok_or_else(|| Error::UnknownItem(item.to_string()))?;
    Ok(panel.effective(idx))
}

/// Summary statistics of a panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDiagnostics {
    pub n_items: usize,
    pub n_weeks: usize,
    pub first_week: NaiveDate,
    pub last_week: NaiveDate,
    /// Share of item-weeks with zero sales.
    pub zero_rate: f64,
    /// Share of item-weeks flagged out of stock.
    pub stockout_rate: f64,
    pub min_item_mean: f64,
    pub max_item_mean: f64,
    /// Index of the first week with positive sales, per item (`None` if never sold).
    pub series_start: Vec<Option<usize>>,
    /// Number of items whose first sale happens after week 0.
    pub delayed_starts: usize,
    pub never_sold: usize,
}

pub fn panel_diagnostics(panel: &SalesPanel) -> PanelDiagnostics {
    let total = (panel.n_items() * panel.n_weeks()) as f64;
    let mut zeros = 0usize;
    let mut stockouts = 0usize;
    let mut min_mean = f64::INFINITY;
    let mut max_mean = f64::NEG_INFINITY;
    let mut series_start = Vec::with_capacity(panel.n_items());
    for i in 0..panel.n_items() {
        let s = panel.sales(i);
        zeros += s.iter().filter(|v| **v == 0.0).count();
        stockouts += panel.in_stock(i).iter().filter(|f| !**f).count();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        min_mean = min_mean.min(mean);
        max_mean = max_mean.max(mean);
        series_start.push(s.iter().position(|v| *v > 0.0));
    }
    let delayed_starts = series_start
        .iter()
        .filter(|s| matches!(s, Some(k) if *k > 0))
        .count();
    let never_sold = series_start.iter().filter(|s| s.is_none()).count();
    PanelDiagnostics {
        n_items: panel.n_items(),
        n_weeks: panel.n_weeks(),
        first_week: panel.axis.date(0),
        last_week: panel.axis.date(panel.n_weeks() - 1),
        zero_rate: zeros as f64 / total,
        stockout_rate: stockouts as f64 / total,
        min_item_mean: min_mean,
        max_item_mean: max_mean,
        series_start,
        delayed_starts,
        never_sold,
    }
}

/// Shortage/holding cost rates and the replenishment lead time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub shortage_cost: f64,
    pub holding_cost: f64,
    pub lead_time_weeks: usize,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            shortage_cost: 1.0,
            holding_cost: 0.2,
            lead_time_weeks: 2,
        }
    }
}

impl CostParams {
    pub fn new(shortage_cost: f64, holding_cost: f64, lead_time_weeks: usize) -> Result<Self> {
        let c = Self {
            shortage_cost,
            holding_cost,
            lead_time_weeks,
        };
        c.validate()?;
        Ok(c)
    }

    /// Checks finiteness and signs. A zero shortage cost is accepted so
    /// degenerate cost structures can still be evaluated.
    pub fn validate(&self) -> Result<()> {
        if !self.shortage_cost.is_finite() || self.shortage_cost < 0.0 {
            return Err(Error::Config(format!(
                "shortage_cost {} must be >= 0",
                self.shortage_cost
            )));
        }
        if !self.holding_cost.is_finite() || self.holding_cost < 0.0 {
            return Err(Error::Config(format!(
                "holding_cost {} must be >= 0",
                self.holding_cost
            )));
        }
        if self.shortage_cost + self.holding_cost <= 0.0 {
            return Err(Error::Config(
                "shortage_cost and holding_cost are both zero".into(),
            ));
        }
        Ok(())
    }
}

/// On-hand stock and scheduled receipts at a decision point.
///
/// `in_transit[i][k]` arrives at the start of the (k+1)-th following week.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventorySnapshot {
    pub on_hand: Vec<i64>,
    pub in_transit: Vec<Vec<i64>>,
}

impl InventorySnapshot {
    pub fn empty(n_items: usize, lead_time: usize) -> Self {
        Self {
            on_hand: vec![0; n_items],
            in_transit: vec![vec![0; lead_time]; n_items],
        }
    }

    pub fn n_items(&self) -> usize {
        self.on_hand.len()
    }

    pub fn validate(&self, lead_time: usize) -> Result<()> {
        if self.in_transit.len() != self.on_hand.len() {
            return Err(Error::invalid("in_transit and on_hand item counts differ"));
        }
        for (i, (&oh, transit)) in self.on_hand.iter().zip(&self.in_transit).enumerate() {
            if oh < 0 {
                return Err(Error::NegativeQuantity {
                    what: "on_hand",
                    item: i,
                    week: 0,
                    value: oh,
                });
            }
            if transit.len() > lead_time {
                return Err(Error::invalid(format!(
                    "item {i} has arrivals {} weeks out, lead time is {lead_time}",
                    transit.len()
                )));
            }
            if let Some((k, &q)) = transit.iter().enumerate().find(|(_, q)| **q < 0) {
                return Err(Error::NegativeQuantity {
                    what: "in_transit",
                    item: i,
                    week: k + 1,
                    value: q,
                });
            }
        }
        Ok(())
    }
}

const KEY_COLUMNS: [&str; 2] = ["Store", "Product"];

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(file))
}

fn open_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

struct WideTable {
    dates: Vec<NaiveDate>,
    rows: Vec<(ItemKey, Vec<String>)>,
}

fn read_wide(path: &Path) -> Result<WideTable> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    if headers.len() < 3
        || headers[0].trim() != KEY_COLUMNS[0]
        || headers[1].trim() != KEY_COLUMNS[1]
    {
        return Err(Error::format(
            path,
            "header must start with Store,Product followed by week columns",
        ));
    }
    let mut dates = Vec::with_capacity(headers.len() - 2);
    for h in headers.iter().skip(2) {
        let d = NaiveDate::parse_from_str(h.trim(), "%Y-%m-%d")
            .map_err(|e| Error::format(path, format!("malformed date header {h:?}: {e}")))?;
        if d.weekday() != Weekday::Mon {
            return Err(Error::format(
                path,
                format!("column date {d} is not a Monday"),
            ));
        }
        dates.push(d);
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        if record.len() != headers.len() {
            return Err(Error::format(
                path,
                format!(
                    "row {} has {} cells, header has {}",
                    line + 2,
                    record.len(),
                    headers.len()
                ),
            ));
        }
        let key = ItemKey::new(record[0].trim(), record[1].trim());
        let cells = record
            .iter()
            .skip(2)
            .map(|c| c.trim().to_string())
            .collect();
        rows.push((key, cells));
    }
    if rows.is_empty() {
        return Err(Error::format(path, "no item rows"));
    }
    Ok(WideTable { dates, rows })
}

fn parse_flag(cell: &str) -> Option<bool> {
    match cell.to_ascii_lowercase().as_str() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Loads the wide sales and in-stock files and reports flag/sales inconsistencies.
pub fn load_sales_wide(
    sales_path: impl AsRef<Path>,
    flags_path: impl AsRef<Path>,
) -> Result<(SalesPanel, ValidationReport)> {
    let sales_path = sales_path.as_ref();
    let flags_path = flags_path.as_ref();
    let sales_tab = read_wide(sales_path)?;
    let flags_tab = read_wide(flags_path)?;
    if sales_tab.dates != flags_tab.dates {
        return Err(Error::format(
            flags_path,
            "week columns differ from the sales file",
        ));
    }
    let axis =
        WeekAxis::new(sales_tab.dates).map_err(|e| Error::format(sales_path, e.to_string()))?;

    let mut flag_rows: HashMap<ItemKey, Vec<String>> = HashMap::with_capacity(flags_tab.rows.len());
    for (key, cells) in flags_tab.rows {
        if flag_rows.insert(key.clone(), cells).is_some() {
            return Err(Error::format(flags_path, format!("duplicate item {key}")));
        }
    }
    if flag_rows.len() != sales_tab.rows.len() {
        return Err(Error::format(
            flags_path,
            format!(
                "{} items in flags file, {} in sales file",
                flag_rows.len(),
                sales_tab.rows.len()
            ),
        ));
    }

    let mut items = Vec::with_capacity(sales_tab.rows.len());
    let mut sales = Vec::with_capacity(sales_tab.rows.len());
    let mut in_stock = Vec::with_capacity(sales_tab.rows.len());
    for (key, cells) in sales_tab.rows {
        let flag_cells = flag_rows.remove(&key).ok_or_else(|| {
            Error::format(flags_path, format!("item {key} missing from flags file"))
        })?;
        let mut row = Vec::with_capacity(cells.len());
        for (w, c) in cells.iter().enumerate() {
            let v: f64 = c.parse().map_err(|_| {
                Error::format(sales_path, format!("item {key} week {w}: bad number {c:?}"))
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::format(
                    sales_path,
                    format!("item {key} week {w}: negative or non-finite sales {c}"),
                ));
            }
            row.push(v);
        }
        let mut flags = Vec::with_capacity(flag_cells.len());
        for (w, c) in flag_cells.iter().enumerate() {
            flags.push(parse_flag(c).ok_or_else(|| {
                Error::format(flags_path, format!("item {key} week {w}: bad flag {c:?}"))
            })?);
        }
        items.push(key);
        sales.push(row);
        in_stock.push(flags);
    }
    let panel = SalesPanel::new(items, axis, sales, in_stock)
        .map_err(|e| Error::format(sales_path, e.to_string()))?;
    let report = panel.validate();
    Ok((panel, report))
}

fn wide_header(panel: &SalesPanel) -> Vec<String> {
    KEY_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(
            panel
                .axis
                .dates()
                .iter()
                .map(|d| d.format("%Y-%m-%d").to_string()),
        )
        .collect()
}

pub fn write_sales_wide(panel: &SalesPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_writer(path)?;
    w.write_record(wide_header(panel)).map_err(csv_err(path))?;
    for (i, key) in panel.items.iter().enumerate() {
        let mut rec = vec![key.store.clone(), key.product.clone()];
        rec.extend(panel.sales[i].iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_flags_wide(panel: &SalesPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_writer(path)?;
    w.write_record(wide_header(panel)).map_err(csv_err(path))?;
    for (i, key) in panel.items.iter().enumerate() {
        let mut rec = vec![key.store.clone(), key.product.clone()];
        rec.extend(panel.in_stock[i].iter().map(|f| f.to_string()));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

const INVENTORY_HEADER: [&str; 5] = ["Store", "Product", "on_hand", "arrive_w1", "arrive_w2"];

/// Loads an inventory snapshot and aligns it to the panel's item order.
pub fn load_inventory(path: impl AsRef<Path>, panel: &SalesPanel) -> Result<InventorySnapshot> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != INVENTORY_HEADER {
        return Err(Error::format(
            path,
            format!("expected header {}", INVENTORY_HEADER.join(",")),
        ));
    }
    let mut snapshot = InventorySnapshot::empty(panel.n_items(), 2);
    let mut seen = vec![false; panel.n_items()];
    for record in reader.records() {
        let record = record.map_err(csv_err(path))?;
        if record.len() != INVENTORY_HEADER.len() {
            return Err(Error::format(
                path,
                "inventory row has the wrong number of cells",
            ));
        }
        let key = ItemKey::new(record[0].trim(), record[1].trim());
        let i = panel
            .item_index(&key)
            .ok_or_else(|| Error::format(path, format!("item {key} is not in the panel")))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::format(path, format!("duplicate item {key}")));
        }
        let mut qty = [0i64; 3];
        for (k, q) in qty.iter_mut().enumerate() {
            let cell = record[k + 2].trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::format(path, format!("item {key}: bad quantity {cell:?}")))?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::format(
                    path,
                    format!("item {key}: quantity {cell} must be a nonnegative integer"),
                ));
            }
            *q = v as i64;
        }
        snapshot.on_hand[i] = qty[0];
        snapshot.in_transit[i] = vec![qty[1], qty[2]];
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::format(
            path,
            format!("item {} missing from inventory snapshot", panel.items[i]),
        ));
    }
    Ok(snapshot)
}

pub fn write_inventory(
    panel: &SalesPanel,
    snapshot: &InventorySnapshot,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = open_writer(path)?;
    w.write_record(INVENTORY_HEADER).map_err(csv_err(path))?;
    for (i, key) in panel.items.iter().enumerate() {
        let transit = &snapshot.in_transit[i];
        let at = |k: usize| transit.get(k).copied().unwrap_or(0).to_string();
        w.write_record([
            key.store.clone(),
            key.product.clone(),
            snapshot.on_hand[i].to_string(),
            at(0),
            at(1),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
