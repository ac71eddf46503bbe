//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::inference::SamplerConfig;
use crate::latent::PriorConfig;
use crate::model::{GarCoordinates, LatentKind, LikelihoodKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentChoice {
    Gar,
    Ggp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent: LatentChoice,
    pub likelihood: LikelihoodKind,
    /// GAR window.
    pub window: usize,
    /// Prior mean of the GP time-scale.
    pub mu_ell: f64,
    /// Fit all sites jointly with shared GAR dynamics.
    pub multi_site: bool,
    /// Sampler coordinates for GAR latents.
    pub gar_coordinates: GarCoordinates,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent: LatentChoice::Gar,
            likelihood: LikelihoodKind::GenPoisson,
            window: 1,
            mu_ell: 10.0,
            multi_site: false,
            gar_coordinates: GarCoordinates::default(),
        }
    }
}

impl ModelConfig {
    pub fn latent_kind(&self) -> LatentKind {
        match self.latent {
            LatentChoice::Gar => LatentKind::Gar {
                window: self.window,
            },
            LatentChoice::Ggp => LatentKind::Ggp,
        }
    }

    pub fn spec(&self, sites: usize, train_len: usize) -> Result<ModelSpec> {
        Ok(ModelSpec::new(
            self.latent_kind(),
            self.likelihood,
            sites,
            train_len,
            PriorConfig::with_mu_ell(self.mu_ell)?,
        )?
        .with_gar_coordinates(self.gar_coordinates))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Site counts, `date,count` or `date,site,count`.
    pub sites: PathBuf,
    /// State-level counts for the rescaled baselines.
    pub state: Option<PathBuf>,
    /// External state forecast, `date,mean,lower95,upper95`.
    pub external_forecast: Option<PathBuf>,
    /// Report zero counts and jumps larger than `anomaly_threshold`.
    pub screen_anomalies: bool,
    pub anomaly_threshold: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            sites: PathBuf::from("sites.csv"),
            state: None,
            external_forecast: None,
            screen_anomalies: false,
            anomaly_threshold: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub windows: Vec<usize>,
    pub mu_ell: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            windows: vec![1, 2, 5, 7, 10, 14],
            mu_ell: (0..=10).map(|i| 5.0 * i as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub group_size: usize,
    /// A fit is flagged when more than `max_flagged_fraction` of its
    /// parameters have R-hat above `rhat_threshold`.
    pub rhat_threshold: f64,
    pub max_flagged_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            group_size: 500,
            rhat_threshold: 1.1,
            max_flagged_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetroModel {
    Ggp,
    Gar,
    MultiGar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrospectiveConfig {
    pub models: Vec<RetroModel>,
    /// Grid-search the window (GAR) and time-scale prior (GGP); otherwise use
    /// the values in `[model]`.
    pub tune: bool,
}

impl Default for RetrospectiveConfig {
    fn default() -> Self {
        Self {
            models: vec![RetroModel::Ggp, RetroModel::Gar, RetroModel::MultiGar],
            tune: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProspectiveConfig {
    /// Trailing days withheld as realized outcomes for MAE.
    pub holdout_days: usize,
    /// Days of history for the fraction and state regressions.
    pub baseline_window: usize,
    /// Trailing days used to fit the GAR models; 0 uses all available days.
    pub train_days: usize,
    pub baselines: bool,
}

impl Default for ProspectiveConfig {
    fn default() -> Self {
        Self {
            holdout_days: 0,
            baseline_window: 28,
            train_days: 0,
            baselines: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub split: SplitSpec,
    pub grid: GridConfig,
    pub evaluation: EvalConfig,
    pub retrospective: RetrospectiveConfig,
    pub prospective: ProspectiveConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            sampler: SamplerConfig::default(),
            split: SplitSpec::default(),
            grid: GridConfig::default(),
            evaluation: EvalConfig::default(),
            retrospective: RetrospectiveConfig::default(),
            prospective: ProspectiveConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.output_dir);
        resolve(base, &mut cfg.data.sites);
        if let Some(p) = cfg.data.state.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = cfg.data.external_forecast.as_mut() {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.grid.windows.is_empty() || self.grid.mu_ell.is_empty() {
            return Err(Error::Config("grids must not be empty".into()));
        }
        if self.grid.windows.contains(&0) || self.model.window == 0 {
            return Err(Error::Config("GAR windows must be at least 1".into()));
        }
        if self
            .grid
            .mu_ell
            .iter()
            .chain([&self.model.mu_ell])
            .any(|m| !(*m >= 0.0))
        {
            return Err(Error::Config(
                "time-scale prior means must be nonnegative".into(),
            ));
        }
        if self.model.multi_site && self.model.latent == LatentChoice::Ggp {
            return Err(Error::Config("multi-site models use GAR latents".into()));
        }
        if self.split.horizon == 0 || self.evaluation.group_size == 0 {
            return Err(Error::Config(
                "horizon and group size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Sampler settings with the experiment seed applied.
    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            seed: self.seed,
            ..self.sampler.clone()
        }
    }

    /// Checks that every configured input file exists.
    pub fn check_paths(&self) -> Result<()> {
        let mut paths = vec![&self.data.sites];
        paths.extend(self.data.state.iter());
        paths.extend(self.data.external_forecast.iter());
        for p in paths {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "input file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}
