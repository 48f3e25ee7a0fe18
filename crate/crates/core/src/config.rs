//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WindowConfig;
use crate::model::{GbdtParams, ModelParams, SearchConfig};
use crate::pipeline::{FeatureToggles, FeaturizeConfig, GwdConfig, ProfileConfig, SplitConfig, DEFAULT_THRESHOLD_GRID};
use crate::rng;
use crate::synth::SynthConfig;
use crate::walker::WalkConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub delays: Vec<u32>,
    pub n_seeds: u32,
    pub twl_days: u32,
    pub tws_days: u32,
    pub threshold: f64,
    /// Delay at which the threshold grid is compared; omit to skip.
    pub threshold_delay: Option<u32>,
    pub twl_grid: Vec<u32>,
    pub tws_grid: Vec<u32>,
    /// Label delay applied to edges in the window sweep.
    pub window_label_delay_days: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            delays: vec![0, 1, 7, 30],
            n_seeds: 5,
            twl_days: 60,
            tws_days: 60,
            threshold: 0.25,
            threshold_delay: Some(7),
            twl_grid: vec![0, 1, 7, 30, 60, 90],
            tws_grid: vec![0, 1, 7, 30, 60, 90],
            window_label_delay_days: 0,
        }
    }
}

/// Fixed boosting setup for the pseudo-label scorer and the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub learning_rate: f64,
    pub n_rounds: usize,
}

pub const DEFAULT_EXPERIMENT_ROUNDS: usize = 100;

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            num_leaves: 200,
            min_data_in_leaf: 100,
            learning_rate: 0.09,
            n_rounds: DEFAULT_EXPERIMENT_ROUNDS,
        }
    }
}

impl From<ExperimentConfig> for GbdtParams {
    fn from(e: ExperimentConfig) -> Self {
        GbdtParams {
            num_leaves: e.num_leaves,
            min_data_in_leaf: e.min_data_in_leaf,
            learning_rate: e.learning_rate,
            n_rounds: e.n_rounds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every component derives its own stream from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Transactions CSV; defaults to `<out_dir>/transactions.csv`.
    pub input: Option<PathBuf>,
    pub fpr_target: f64,
    pub synth: SynthConfig,
    pub features: FeatureToggles,
    pub profiles: ProfileConfig,
    pub split: SplitConfig,
    pub window: WindowConfig,
    pub walk: WalkConfig,
    pub gwd: GwdConfig,
    pub search: SearchConfig,
    pub experiment: ExperimentConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            input: None,
            fpr_target: 0.2,
            synth: SynthConfig::default(),
            features: FeatureToggles::default(),
            profiles: ProfileConfig::default(),
            split: SplitConfig::default(),
            window: WindowConfig::default(),
            walk: WalkConfig::default(),
            gwd: GwdConfig {
                threshold: 0.25,
                threshold_grid: DEFAULT_THRESHOLD_GRID.to_vec(),
            },
            search: SearchConfig::default(),
            experiment: ExperimentConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Stable fingerprint of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        Ok(format!("{:016x}", rng::stable_hash(&self.to_toml()?)))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fpr_target) {
            return Err(Error::Config(format!("fpr_target {} outside [0, 1]", self.fpr_target)));
        }
        self.synth.validate()?;
        self.features.validate()?;
        self.window.validate()?;
        self.walk.validate()?;
        self.experiment_params().validate()?;
        if self.search.n_trials == 0 {
            return Err(Error::Config("search.n_trials must be at least 1".into()));
        }
        for t in std::iter::once(&self.gwd.threshold).chain(&self.gwd.threshold_grid) {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::Config(format!("pseudo-label threshold {t} outside [0, 1]")));
            }
        }
        if self.sweep.n_seeds == 0 {
            return Err(Error::Config("sweep.n_seeds must be at least 1".into()));
        }
        Ok(())
    }

    pub fn input_path(&self) -> PathBuf {
        self.input.clone().unwrap_or_else(|| self.out_dir.join("transactions.csv"))
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: rng::sub_seed(self.seed, "synth"),
            ..self.synth.clone()
        }
    }

    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            seed: rng::sub_seed(self.seed, "walk"),
            ..self.walk
        }
    }

    pub fn experiment_params(&self) -> ModelParams {
        ModelParams::Gbdt(self.experiment.into())
    }

    pub fn featurize_config(&self) -> FeaturizeConfig {
        FeaturizeConfig {
            toggles: self.features,
            profiles: self.profiles.clone(),
            split: self.split,
            window: self.window,
            walk: self.walk_config(),
            gwd: self.gwd.clone(),
            fpr_target: self.fpr_target,
            model: self.experiment_params(),
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("[window]\ntwl_dayz = 3\n").unwrap_err();
        assert!(err.to_string().contains("twl_dayz"), "{err}");
        let err = RunConfig::from_toml("sed = 3\n").unwrap_err();
        assert!(err.to_string().contains("sed"), "{err}");
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n[window]\ntwl_days = 1\ntws_days = 30\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.window.twl_days, 1);
        assert_eq!(cfg.window.label_delay_days, 0);
        assert_eq!(cfg.walk.num_walks, 50);
    }

    #[test]
    fn gw_and_gwd_exclusive() {
        let cfg = RunConfig::from_toml("[features]\ngw = true\ngwd = true\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
