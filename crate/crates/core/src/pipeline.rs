//! End-to-end runs: features, search, refit, calibration and policy replays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_features, impute, FeatureMatrix, FeatureSpec, Imputer, HORIZONS};
use crate::forecast::{
    self, assemble_dataset, fit_final, hpo_search, postprocess, predict_horizons, round_half_up,
    FitMode, ForecastSet, HoldoutReport, HorizonData, HorizonSearch, HpoConfig, HpoOutcome,
    SplitSpec, SplitWeeks,
};
use crate::gbdt::{Ensemble, TrainConfig};
use crate::panel::{CostParams, InventorySnapshot, SalesPanel};
use crate::policy::{
    self, baseline_forecasts, default_phi_grid, model_forecasts, Calibration, CostAwarePolicy,
    CoveragePolicy, PolicyParams, ReplayWindow,
};
use crate::seed;
use crate::simulator::{run_episode, CostLedger, SimState};

/// Everything a backtest needs besides the panel. `seed` is the root of every
/// random stream; the seeds inside `hpo` and `train` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub costs: CostParams,
    pub split: SplitSpec,
    pub features: FeatureSpec,
    pub hpo: HpoConfig,
    pub train: TrainConfig,
    pub phi_grid: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            costs: CostParams::default(),
            split: SplitSpec::default(),
            features: FeatureSpec::default(),
            hpo: HpoConfig::default(),
            train: TrainConfig::default(),
            phi_grid: default_phi_grid(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.costs.validate()?;
        self.split.validate()?;
        self.features.validate()?;
        self.hpo.validate()?;
        self.train.validate()?;
        PolicyParams::new(self.costs, 0.0)?;
        if self.phi_grid.is_empty() {
            return Err(Error::Config("phi grid is empty".into()));
        }
        Ok(())
    }

    pub fn hpo_seeded(&self) -> HpoConfig {
        HpoConfig {
            seed: seed::derive(self.seed, "hpo"),
            ..self.hpo.clone()
        }
    }

    pub fn train_seeded(&self) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.seed, "gbdt"),
            ..self.train.clone()
        }
    }
}

/// Starting stock at the end of `week`: the rounded trailing 13-week in-stock
/// mean on the shelf and the same amount due in each lead-time week.
pub fn warm_start_snapshot(panel: &SalesPanel, week: usize, lead_time: usize) -> InventorySnapshot {
    let start = (week + 1).saturating_sub(13);
    let mut snap = InventorySnapshot::empty(panel.n_items(), lead_time);
    for i in 0..panel.n_items() {
        let eff = panel.effective(i);
        let vals: Vec<f64> = eff.values[start..=week].iter().flatten().copied().collect();
        let m = if vals.is_empty() {
            0
        } else {
            round_half_up(vals.iter().sum::<f64>() / vals.len() as f64).max(0)
        };
        snap.on_hand[i] = m;
        snap.in_transit[i] = vec![m; lead_time];
    }
    snap
}

/// Features imputed against the last training week and split per horizon.
pub struct Prepared {
    pub matrix: FeatureMatrix,
    pub imputer: Imputer,
    pub weeks: SplitWeeks,
    pub data: Vec<HorizonData>,
}

pub fn prepare(panel: &SalesPanel, cfg: &PipelineConfig) -> Result<Prepared> {
    let weeks = cfg.split.weeks(panel.n_weeks())?;
    let raw = build_features(panel, &cfg.features)?;
    let (matrix, imputer) = impute(&raw, weeks.train_end - 1)?;
    let data = (1..=HORIZONS)
        .map(|h| assemble_dataset(&matrix, h, &cfg.split))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        matrix,
        imputer,
        weeks,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub shortage: f64,
    pub holding: f64,
    pub total: f64,
}

impl From<&CostLedger> for CostSummary {
    fn from(l: &CostLedger) -> Self {
        Self {
            shortage: l.shortage_total,
            holding: l.holding_total,
            total: l.total_cost(),
        }
    }
}

/// Search plus `φ` calibration on the validation weeks.
pub struct Tuned {
    pub hpo: HpoOutcome,
    pub window: ReplayWindow,
    pub calibration: Calibration,
}

pub fn tune(panel: &SalesPanel, cfg: &PipelineConfig, prepared: &Prepared) -> Result<Tuned> {
    let hpo = hpo_search(&prepared.data, &cfg.hpo_seeded(), &cfg.train_seeded())?;
    let lead = cfg.costs.lead_time_weeks;
    let window = ReplayWindow::covering(prepared.weeks.train_end, prepared.weeks.valid_end, lead)?;
    let init = warm_start_snapshot(panel, window.first_decision_week, lead);
    let calibration = policy::calibrate_phi(
        panel,
        &prepared.matrix,
        &hpo.models,
        &init,
        &cfg.costs,
        &window,
        &cfg.phi_grid,
    )?;
    Ok(Tuned {
        hpo,
        window,
        calibration,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub n_items: usize,
    pub n_weeks: usize,
    pub split: SplitWeeks,
    pub hpo: Vec<HorizonSearch>,
    pub holdout: HoldoutReport,
    pub calibration_window: ReplayWindow,
    pub calibration: Calibration,
    pub replay_window: ReplayWindow,
    pub policy_cost: CostSummary,
    pub benchmark_cost: CostSummary,
    /// `(benchmark - policy) / benchmark`, in percent.
    pub cost_reduction_pct: f64,
    pub benchmark: String,
}

pub struct BacktestOutcome {
    pub report: BacktestReport,
    pub models: Vec<Ensemble>,
    pub policy_forecasts: Vec<ForecastSet<i64>>,
    pub policy_ledger: CostLedger,
    pub benchmark_ledger: CostLedger,
}

/// Replays both policies over the weeks `[start, end)` from a shared warm
/// start.
pub fn replay_policies(
    panel: &SalesPanel,
    matrix: &FeatureMatrix,
    models: &[Ensemble],
    params: &PolicyParams,
    start: usize,
    end: usize,
) -> Result<(ReplayWindow, Vec<ForecastSet<i64>>, CostLedger, CostLedger)> {
    let lead = params.costs.lead_time_weeks;
    let window = ReplayWindow::covering(start, end, lead)?;
    let init = warm_start_snapshot(panel, window.first_decision_week, lead);
    let demand = policy::replay_demand(panel, &window, lead)?;
    let forecasts = model_forecasts(models, matrix, &window)?;
    let baseline = baseline_forecasts(panel, &window)?;
    let mut ours = CostAwarePolicy {
        params: params.clone(),
        forecasts: &forecasts,
    };
    let policy_ledger = run_episode(&demand, &init, &mut ours, &params.costs, window.decisions)?;
    let mut bench = CoveragePolicy {
        baseline: &baseline,
    };
    let benchmark_ledger =
        run_episode(&demand, &init, &mut bench, &params.costs, window.decisions)?;
    Ok((window, forecasts, policy_ledger, benchmark_ledger))
}

/// Full holdout backtest: search, calibration on the validation weeks, refit
/// on train + valid, and replay of both policies over the test weeks.
pub fn run_backtest(panel: &SalesPanel, cfg: &PipelineConfig) -> Result<BacktestOutcome> {
    cfg.validate()?;
    let prepared = prepare(panel, cfg)?;
    let tuned = tune(panel, cfg, &prepared)?;
    let configs: Vec<TrainConfig> = tuned
        .hpo
        .searches
        .iter()
        .map(HorizonSearch::refit_config)
        .collect();
    let fit = fit_final(&prepared.matrix, &cfg.split, &configs, FitMode::Backtest)?;
    let params = PolicyParams::new(cfg.costs, tuned.calibration.phi)?;
    let (replay_window, policy_forecasts, policy_ledger, benchmark_ledger) = replay_policies(
        panel,
        &prepared.matrix,
        &fit.models,
        &params,
        prepared.weeks.valid_end,
        prepared.weeks.n_weeks,
    )?;
    let policy_cost = CostSummary::from(&policy_ledger);
    let benchmark_cost = CostSummary::from(&benchmark_ledger);
    let cost_reduction_pct = if benchmark_cost.total > 0.0 {
        100.0 * (benchmark_cost.total - policy_cost.total) / benchmark_cost.total
    } else {
        0.0
    };
    let report = BacktestReport {
        n_items: panel.n_items(),
        n_weeks: panel.n_weeks(),
        split: prepared.weeks,
        hpo: tuned.hpo.searches,
        holdout: fit.holdout.ok_or_else(|| Error::invalid("backtest fit produced no holdout report"))?,
        calibration_window: tuned.window,
        calibration: tuned.calibration,
        replay_window,
        policy_cost,
        benchmark_cost,
        cost_reduction_pct,
        benchmark: "reconstructed: seasonal 13-week moving average, 4-week coverage of on-hand plus in-transit"
            .into(),
    };
    Ok(BacktestOutcome {
        report,
        models: fit.models,
        policy_forecasts,
        policy_ledger,
        benchmark_ledger,
    })
}

/// Models refitted on all history with the searched configurations, plus the
/// matrix imputed against the last week.
pub fn fit_live(
    panel: &SalesPanel,
    cfg: &PipelineConfig,
    searches: &[HorizonSearch],
) -> Result<(Vec<Ensemble>, FeatureMatrix)> {
    let configs: Vec<TrainConfig> = searches.iter().map(HorizonSearch::refit_config).collect();
    let matrix = live_matrix(panel, &cfg.features)?;
    let fit = fit_final(&matrix, &cfg.split, &configs, FitMode::Live)?;
    Ok((fit.models, matrix))
}

pub fn live_matrix(panel: &SalesPanel, spec: &FeatureSpec) -> Result<FeatureMatrix> {
    let raw = build_features(panel, spec)?;
    Ok(impute(&raw, panel.n_weeks() - 1)?.0)
}

/// Forecasts and orders at the last history week for the given stock.
pub fn live_orders(
    models: &[Ensemble],
    matrix: &FeatureMatrix,
    snapshot: &InventorySnapshot,
    params: &PolicyParams,
) -> Result<(ForecastSet<i64>, Vec<i64>)> {
    let week = matrix
        .n_weeks
        .checked_sub(1)
        .ok_or_else(|| Error::invalid("empty feature matrix"))?;
    let forecasts = postprocess(&predict_horizons(models, matrix, week)?);
    let state = SimState::from_snapshot(snapshot, params.costs.lead_time_weeks)?;
    let orders = policy::decide_orders(&state, &forecasts, params)?;
    Ok((forecasts, orders))
}

/// Benchmark orders at the last history week for the given stock.
pub fn live_benchmark_orders(
    panel: &SalesPanel,
    snapshot: &InventorySnapshot,
    costs: &CostParams,
) -> Result<Vec<i64>> {
    let state = SimState::from_snapshot(snapshot, costs.lead_time_weeks)?;
    policy::benchmark_coverage_policy(panel, panel.n_weeks() - 1, &state)
}

pub use forecast::write_forecasts;
