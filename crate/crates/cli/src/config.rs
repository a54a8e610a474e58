use std::path::{Path, PathBuf};

use invplan::features::FeatureSpec;
use invplan::forecast::{HpoConfig, SplitSpec};
use invplan::gbdt::TrainConfig;
use invplan::panel::CostParams;
use invplan::pipeline::PipelineConfig;
use invplan::policy::default_phi_grid;
use invplan::synth::SyntheticSpec;
use invplan::Error;
use serde::{Deserialize, Serialize};

/// JSON run configuration. Relative paths are resolved against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sales: Option<PathBuf>,
    pub flags: Option<PathBuf>,
    pub inventory: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub costs: CostParams,
    pub split: SplitSpec,
    pub features: FeatureSpec,
    pub hpo: HpoConfig,
    pub train: TrainConfig,
    pub phi_grid: Vec<f64>,
    /// Fixed buffer multiplier for `forecast`; calibrated when absent.
    pub phi: Option<f64>,
    /// Ordering rounds replayed by `simulate`.
    pub rounds: usize,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sales: None,
            flags: None,
            inventory: None,
            out: PathBuf::from("out"),
            seed: 0,
            costs: CostParams::default(),
            split: SplitSpec::default(),
            features: FeatureSpec::default(),
            hpo: HpoConfig::default(),
            train: TrainConfig::default(),
            phi_grid: default_phi_grid(),
            phi: None,
            rounds: 6,
            synth: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.sales, &mut cfg.flags, &mut cfg.inventory]
            .into_iter()
            .flatten()
        {
            *p = base.join(&*p);
        }
        cfg.out = base.join(&cfg.out);
        Ok(cfg)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            costs: self.costs,
            split: self.split.clone(),
            features: self.features.clone(),
            hpo: self.hpo.clone(),
            train: self.train.clone(),
            phi_grid: self.phi_grid.clone(),
        }
    }

    pub fn synth_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.pipeline().validate()?;
        self.synth_spec().validate()?;
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if let Some(phi) = self.phi {
            if !(phi >= 0.0 && phi.is_finite()) {
                return Err(Error::Config(format!(
                    "phi {phi} must be a finite value >= 0"
                )));
            }
        }
        Ok(())
    }

    pub fn sales_paths(&self) -> Result<(&Path, &Path), Error> {
        match (&self.sales, &self.flags) {
            (Some(s), Some(f)) => Ok((s, f)),
            _ => Err(Error::Config(
                "sales and flags files are required (config or --sales/--flags)".into(),
            )),
        }
    }

    pub fn inventory_path(&self) -> Result<&Path, Error> {
        self.inventory.as_deref().ok_or_else(|| {
            Error::Config("an inventory file is required (config or --inventory)".into())
        })
    }
}
