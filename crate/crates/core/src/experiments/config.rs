//! Experiment configuration, read from TOML.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::ExperimentError;
use crate::dataset::Preset;
use crate::neural::TrainConfig;
use crate::render::BRIGHT_ILLUMINATION;
use crate::servo::GainSchedule;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Integrated,
    Modular,
}

impl std::str::FromStr for Pipeline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "integrated" => Ok(Pipeline::Integrated),
            "modular" => Ok(Pipeline::Modular),
            other => Err(format!("unknown pipeline {other:?} (expected integrated or modular)")),
        }
    }
}

/// What produces actuation estimates during servo runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Trained checkpoints for the scenario's pipeline.
    Trained,
    /// The commanded actuation itself.
    Oracle,
}

/// Optimizer settings shared by every training run. Seeds are derived from
/// the root seed, not configured here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub l1: f64,
    pub l2: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            initial_lr: t.initial_lr,
            l1: t.l1,
            l2: t.l2,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            initial_lr: self.initial_lr,
            l1: self.l1,
            l2: self.l2,
            seed,
            ..TrainConfig::default()
        }
    }
}

/// Head-only retraining on a small second-background set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneSection {
    pub enabled: bool,
    pub images: usize,
    pub epochs: usize,
    pub initial_lr: f64,
}

impl Default for FineTuneSection {
    fn default() -> Self {
        FineTuneSection {
            enabled: true,
            images: 500,
            epochs: 30,
            initial_lr: 0.001,
        }
    }
}

/// Gain values tried for both `lambda_r` and `lambda_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainSweepSection {
    pub lambdas: Vec<f64>,
}

impl Default for GainSweepSection {
    fn default() -> Self {
        GainSweepSection {
            lambdas: (3..=12).map(|k| k as f64 / 10.0).collect(),
        }
    }
}

/// Output locations, relative to the `--out` directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: String,
    pub background_dataset: String,
    pub models: String,
    pub experiments: String,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "dataset".into(),
            background_dataset: "dataset_background2".into(),
            models: "models".into(),
            experiments: "experiments".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    /// Root of every derived random stream.
    pub seed: u64,
    pub preset: Preset,
    /// Sample count override, reduced preset only.
    pub samples: Option<usize>,
    pub image_size: usize,
    /// Output channels of each convolution block.
    pub channels: Vec<usize>,
    pub gains: GainSchedule,
    pub train: TrainSection,
    pub fine_tune: FineTuneSection,
    pub predictor: PredictorKind,
    /// Illumination multiplier of the lighting scenario.
    pub lighting_factor: f64,
    /// Constrained arc fraction of the diminution scenario.
    pub diminution_fraction: f64,
    pub gain_sweep: GainSweepSection,
    /// Per-scenario run counts, reduced preset only.
    pub runs: BTreeMap<Scenario, usize>,
    pub scenarios: Vec<Scenario>,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            config_version: CONFIG_VERSION,
            seed: 2019,
            preset: Preset::Reduced,
            samples: None,
            image_size: 64,
            channels: vec![8, 16, 16],
            gains: GainSchedule::default(),
            train: TrainSection::default(),
            fine_tune: FineTuneSection::default(),
            predictor: PredictorKind::Trained,
            lighting_factor: BRIGHT_ILLUMINATION,
            diminution_fraction: 0.5,
            gain_sweep: GainSweepSection::default(),
            runs: BTreeMap::new(),
            scenarios: Scenario::ALL.to_vec(),
            paths: Paths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(ExperimentError::io(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            ExperimentError::Config(m) => ExperimentError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.config_version != CONFIG_VERSION {
            return bad(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            ));
        }
        if self.preset == Preset::Paper && (self.samples.is_some() || !self.runs.is_empty()) {
            return bad("samples and runs overrides are only allowed with the reduced preset".into());
        }
        if self.samples == Some(0) {
            return bad("samples must be positive".into());
        }
        let levels = self.channels.len() as u32;
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channels must be a non-empty list of positive counts".into());
        }
        if self.image_size == 0 || self.image_size % (1 << levels) != 0 {
            return bad(format!(
                "image_size {} must be a positive multiple of {}",
                self.image_size,
                1 << levels
            ));
        }
        self.gains
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.train
            .to_train_config(0)
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if self.fine_tune.enabled && (self.fine_tune.images < 2 || self.fine_tune.epochs == 0 || !(self.fine_tune.initial_lr > 0.0)) {
            return bad("fine_tune needs at least 2 images, 1 epoch and a positive rate".into());
        }
        if !(self.lighting_factor > 0.0 && self.lighting_factor.is_finite()) {
            return bad("lighting_factor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.diminution_fraction) {
            return bad("diminution_fraction must lie in [0, 1)".into());
        }
        if self.gain_sweep.lambdas.is_empty() {
            return bad("gain_sweep needs at least one lambda".into());
        }
        for l in &self.gain_sweep.lambdas {
            GainSchedule::uniform(*l).map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        if self.runs.values().any(|n| *n == 0) {
            return bad("run counts must be positive".into());
        }
        Ok(())
    }

    /// Episodes for `scenario`: the fixed count at paper scale, else the
    /// override if any.
    pub fn run_count(&self, scenario: Scenario) -> usize {
        match self.preset {
            Preset::Paper => scenario.paper_runs(),
            Preset::Reduced => self.runs.get(&scenario).copied().unwrap_or(scenario.paper_runs()),
        }
    }

    /// Training config for the named network, with its derived seed.
    pub fn train_config(&self, net: &str) -> TrainConfig {
        self.train
            .to_train_config(crate::seed::derive(self.seed, &format!("train.{net}")))
    }

    pub fn init_seed(&self, net: &str) -> u64 {
        crate::seed::derive(self.seed, &format!("init.{net}"))
    }
}
