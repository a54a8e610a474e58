use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use invplan::features::build_features;
use invplan::forecast::{postprocess, predict_horizons, write_forecasts};
use invplan::gbdt::Ensemble;
use invplan::manifest::Manifest;
use invplan::panel::{load_inventory, load_sales_wide, panel_diagnostics, SalesPanel};
use invplan::pipeline::{self, CostSummary};
use invplan::policy::{self, Calibration, PolicyParams, ReplayWindow};
use invplan::simulator::{read_episode_totals, run_episode, write_episode_report, SimState};
use invplan::synth;
use invplan::Error;
use serde::Serialize;

use crate::config::RunConfig;

/// Output directory plus the manifest that records everything written there.
struct Outputs {
    dir: PathBuf,
    manifest: Manifest,
}

impl Outputs {
    fn new(cfg: &RunConfig, command: &str) -> Result<Self> {
        fs::create_dir_all(&cfg.out).map_err(|source| Error::Io {
            path: cfg.out.clone(),
            source,
        })?;
        Ok(Self {
            dir: cfg.out.clone(),
            manifest: Manifest::new(command, cfg.seed, cfg)?,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        Ok(self.manifest.add_input(path)?)
    }

    fn record(&mut self, path: &Path) -> Result<()> {
        Ok(self.manifest.add_output(&self.dir, path)?)
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        self.record(&path)?;
        Ok(path)
    }

    fn finish(self) -> Result<()> {
        let path = self
            .dir
            .join(format!("manifest_{}.json", self.manifest.command));
        self.manifest.write(&path)?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }
}

fn load_panel(cfg: &RunConfig, out: &mut Outputs) -> Result<SalesPanel> {
    let (sales, flags) = cfg.sales_paths()?;
    let (panel, report) = load_sales_wide(sales, flags).context("loading sales panel")?;
    if !report.is_clean() {
        eprintln!(
            "warning: {} item-weeks flagged out of stock record positive sales",
            report.violations.len()
        );
    }
    out.input(sales)?;
    out.input(flags)?;
    Ok(panel)
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::new(cfg, "ingest")?;
    let (sales, flags) = cfg.sales_paths()?;
    let (panel, report) = load_sales_wide(sales, flags).context("loading sales panel")?;
    out.input(sales)?;
    out.input(flags)?;
    let diag = panel_diagnostics(&panel);
    out.json("diagnostics.json", &diag)?;
    out.json("validation.json", &report)?;
    println!(
        "items {} weeks {} ({} .. {}) zero-rate {:.4} stockout-rate {:.4} item means {:.3} .. {:.3} violations {}",
        diag.n_items,
        diag.n_weeks,
        diag.first_week,
        diag.last_week,
        diag.zero_rate,
        diag.stockout_rate,
        diag.min_item_mean,
        diag.max_item_mean,
        report.violations.len()
    );
    out.finish()
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::new(cfg, "synth")?;
    let spec = cfg.synth_spec();
    let generated = synth::generate(&spec)?;
    synth::write_synthetic(&generated, &out.dir, cfg.costs.lead_time_weeks)?;
    for name in ["sales.csv", "in_stock.csv", "inventory.csv"] {
        let p = out.path(name);
        out.record(&p)?;
    }
    out.json("synth_regimes.json", &generated.regimes)?;
    println!(
        "generated {} items x {} weeks into {}",
        spec.n_items,
        spec.n_weeks,
        out.dir.display()
    );
    out.finish()
}

pub fn features(cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::new(cfg, "features")?;
    let panel = load_panel(cfg, &mut out)?;
    let matrix = build_features(&panel, &cfg.features)?;
    let path = out.path("features.csv");
    matrix.write_csv(&path)?;
    out.record(&path)?;
    println!(
        "{} rows x {} numeric features",
        matrix.n_rows(),
        matrix.columns.len()
    );
    out.finish()
}

fn model_path(dir: &Path, h: usize) -> PathBuf {
    dir.join(format!("model_h{h}.json"))
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::new(cfg, "train")?;
    let panel = load_panel(cfg, &mut out)?;
    let pc = cfg.pipeline();
    let prepared = pipeline::prepare(&panel, &pc)?;
    let hpo = invplan::forecast::hpo_search(&prepared.data, &pc.hpo_seeded(), &pc.train_seeded())?;
    for s in &hpo.searches {
        let b = s.best();
        println!(
            "h{}: trial {} valid MAE {:.4} best_iteration {}",
            s.horizon, b.trial, b.valid_mae, b.best_iteration
        );
    }
    out.json("hpo.json", &hpo.searches)?;
    let (models, _) = pipeline::fit_live(&panel, &pc, &hpo.searches)?;
    for (i, m) in models.iter().enumerate() {
        let path = model_path(&out.dir, i + 1);
        fs::write(&path, m.to_json()?).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        out.record(&path)?;
    }
    out.finish()
}

fn load_models(dir: &Path) -> Result<Vec<Ensemble>> {
    (1..=invplan::features::HORIZONS)
        .map(|h| {
            let path = model_path(dir, h);
            let text = fs::read_to_string(&path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            Ensemble::from_json(&text).with_context(|| format!("reading {}", path.display()))
        })
        .collect()
}

pub fn forecast(cfg: &RunConfig, models_dir: Option<&Path>) -> Result<()> {
    let mut out = Outputs::new(cfg, "forecast")?;
    let panel = load_panel(cfg, &mut out)?;
    let dir = models_dir.unwrap_or(&cfg.out).to_path_buf();
    let models = load_models(&dir)?;
    for h in 1..=models.len() {
        out.input(&model_path(&dir, h))?;
    }
    let matrix = pipeline::live_matrix(&panel, &cfg.features)?;
    let week = panel.n_weeks() - 1;
    let forecasts = postprocess(&predict_horizons(&models, &matrix, week)?);
    let path = out.path("forecasts.csv");
    write_forecasts(std::slice::from_ref(&forecasts), &path)?;
    out.record(&path)?;
    if let Some(inv) = cfg.inventory.as_deref() {
        let snapshot = load_inventory(inv, &panel)?;
        out.input(inv)?;
        let phi = match cfg.phi {
            Some(phi) => phi,
            None => {
                let cal = dir.join("calibration.json");
                let text = fs::read_to_string(&cal).map_err(|_| {
                    Error::Config(format!(
                        "no phi in the config and no {} (run `calibrate` first)",
                        cal.display()
                    ))
                })?;
                out.input(&cal)?;
                serde_json::from_str::<Calibration>(&text)?.phi
            }
        };
        let params = PolicyParams::new(cfg.costs, phi)?;
        let state = SimState::from_snapshot(&snapshot, cfg.costs.lead_time_weeks)?;
        let orders = policy::decide_orders(&state, &forecasts, &params)?;
        let path = out.path("orders.csv");
        policy::write_orders(panel.items(), week, &orders, &path)?;
        out.record(&path)?;
        let bench = pipeline::live_benchmark_orders(&panel, &snapshot, &cfg.costs)?;
        let path = out.path("benchmark_orders.csv");
        policy::write_orders(panel.items(), week, &bench, &path)?;
        out.record(&path)?;
        println!(
            "phi {phi}: {} units ordered ({} benchmark)",
            orders.iter().sum::<i64>(),
            bench.iter().sum::<i64>()
        );
    }
    out.finish()
}

pub fn calibrate(cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::new(cfg, "calibrate")?;
    let panel = load_panel(cfg, &mut out)?;
    let pc = cfg.pipeline();
    let prepared = pipeline::prepare(&panel, &pc)?;
    let tuned = pipeline::tune(&panel, &pc, &prepared)?;
    out.json("hpo.json", &tuned.hpo.searches)?;
    out.json("calibration.json", &tuned.calibration)?;
    println!(
        "phi {} (validation replay cost {:.3})",
        tuned.calibration.phi,
        tuned
            .calibration
            .cost_curve
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    );
    out.finish()
}

pub fn backtest(cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::new(cfg, "backtest")?;
    let panel = load_panel(cfg, &mut out)?;
    let result = pipeline::run_backtest(&panel, &cfg.pipeline())?;
    let r = &result.report;
    out.json("backtest_report.json", r)?;
    let path = out.path("holdout_forecasts.csv");
    write_forecasts(&result.policy_forecasts, &path)?;
    out.record(&path)?;
    for (name, ledger) in [
        ("policy_episode.csv", &result.policy_ledger),
        ("benchmark_episode.csv", &result.benchmark_ledger),
    ] {
        let path = out.path(name);
        write_episode_report(ledger, panel.items(), &cfg.costs, &path)?;
        out.record(&path)?;
    }
    println!(
        "holdout MAE {:.4} bias {:+.4}",
        r.holdout.mae, r.holdout.bias
    );
    for m in &r.holdout.per_horizon {
        println!(
            "  h{}: MAE {:.4} bias {:+.4} ({} rows)",
            m.horizon, m.mae, m.bias, m.rows
        );
    }
    println!("phi {}", r.calibration.phi);
    println!(
        "cost policy {:.3} benchmark {:.3} reduction {:.2}%",
        r.policy_cost.total, r.benchmark_cost.total, r.cost_reduction_pct
    );
    out.finish()
}

#[derive(Serialize)]
struct SimulateSummary {
    first_costed_week: usize,
    rounds: usize,
    costed_weeks: usize,
    cost: CostSummary,
    weekly_cost: Vec<f64>,
}

pub fn simulate(cfg: &RunConfig, orders: &[PathBuf], first_week: Option<usize>) -> Result<()> {
    let mut out = Outputs::new(cfg, "simulate")?;
    let panel = load_panel(cfg, &mut out)?;
    let inv = cfg.inventory_path()?;
    let snapshot = load_inventory(inv, &panel)?;
    out.input(inv)?;
    if orders.len() != cfg.rounds {
        return Err(Error::Config(format!(
            "{} order files given for {} rounds",
            orders.len(),
            cfg.rounds
        ))
        .into());
    }
    let mut sheets = Vec::with_capacity(orders.len());
    for p in orders {
        sheets.push(
            policy::read_orders(p, panel.items())
                .with_context(|| format!("reading {}", p.display()))?,
        );
        out.input(p)?;
    }
    let lead = cfg.costs.lead_time_weeks;
    let weeks = cfg.rounds + lead;
    // Costed weeks run from the week after the first decision.
    let first_costed = match first_week {
        Some(k) => k + 1,
        None => panel
            .n_weeks()
            .checked_sub(weeks)
            .filter(|&s| s >= 1)
            .ok_or(Error::TraceTooShort {
                needed: weeks + 1,
                got: panel.n_weeks(),
            })?,
    };
    if first_costed + weeks > panel.n_weeks() {
        return Err(Error::TraceTooShort {
            needed: first_costed + weeks,
            got: panel.n_weeks(),
        }
        .into());
    }
    let window = ReplayWindow::covering(first_costed, first_costed + weeks, lead)?;
    let demand = policy::replay_demand(&panel, &window, lead)?;
    let mut replay = |_: &SimState, r: usize| Ok(sheets[r].clone());
    let ledger = run_episode(&demand, &snapshot, &mut replay, &cfg.costs, cfg.rounds)?;
    let path = out.path("episode.csv");
    write_episode_report(&ledger, panel.items(), &cfg.costs, &path)?;
    out.record(&path)?;
    let summary = SimulateSummary {
        first_costed_week: window.first_decision_week + 1,
        rounds: cfg.rounds,
        costed_weeks: ledger.len(),
        cost: CostSummary::from(&ledger),
        weekly_cost: ledger.weeks.iter().map(|w| w.week_cost).collect(),
    };
    out.json("simulate_summary.json", &summary)?;
    println!(
        "{} costed weeks: shortage {:.3} holding {:.3} total {:.3}",
        summary.costed_weeks, summary.cost.shortage, summary.cost.holding, summary.cost.total
    );
    out.finish()
}

#[derive(Serialize)]
struct CompareRow {
    report: String,
    cost: CostSummary,
    /// Cost reduction relative to the first report, in percent.
    reduction_vs_first_pct: f64,
}

pub fn compare(cfg: &RunConfig, reports: &[PathBuf]) -> Result<()> {
    if reports.len() < 2 {
        return Err(Error::Config("compare needs at least two episode reports".into()).into());
    }
    let mut out = Outputs::new(cfg, "compare")?;
    let mut rows = Vec::with_capacity(reports.len());
    for p in reports {
        let (shortage, holding, total) = read_episode_totals(p)?;
        out.input(p)?;
        rows.push(CompareRow {
            report: p.display().to_string(),
            cost: CostSummary {
                shortage,
                holding,
                total,
            },
            reduction_vs_first_pct: 0.0,
        });
    }
    let base = rows[0].cost.total;
    for r in &mut rows {
        r.reduction_vs_first_pct = if base > 0.0 {
            100.0 * (base - r.cost.total) / base
        } else {
            0.0
        };
        println!(
            "{}: total {:.3} (shortage {:.3}, holding {:.3}) {:+.2}% vs first",
            r.report, r.cost.total, r.cost.shortage, r.cost.holding, r.reduction_vs_first_pct
        );
    }
    out.json("compare.json", &rows)?;
    out.finish()
}
