use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::dataset::SynthParams;
use super::HarnessError;
use crate::channel::ChannelConfig;
use crate::fading::{ChannelState, Environment, EnvironmentTables};
use crate::jscc::{ArchitectureConfig, AttentionConfig, ModelKind};
use crate::linkbudget::LinkParams;

/// Where images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DataSource {
    Synthetic(SynthParams),
    /// A directory written by `dataset synth|import`.
    Directory { path: PathBuf },
    /// A band-file manifest.
    Manifest { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        Self::Synthetic(SynthParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The learning rate drops once this fraction of the epochs has run.
    pub lr_drop_fraction: f64,
    pub learning_rate_after: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_drop_fraction: 0.8,
            learning_rate_after: 1e-4,
            patience: 50,
        }
    }
}

impl TrainOptions {
    /// First epoch (0-based) trained at the reduced rate.
    pub fn drop_epoch(&self) -> usize {
        (self.epochs as f64 * self.lr_drop_fraction).round() as usize
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        if epoch >= self.drop_epoch() {
            self.learning_rate_after
        } else {
            self.learning_rate
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(HarnessError::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate_after > 0.0) || !(0.0..=1.0).contains(&self.lr_drop_fraction) {
            return Err(HarnessError::Config("learning rates must be positive and the drop fraction in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub min_realizations: usize,
    pub max_realizations: usize,
    /// Realizations grow until the standard error of the PSNR falls below this.
    pub psnr_se_db: f64,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { min_realizations: 10, max_realizations: 200, psnr_se_db: 0.1, batch_size: 64 }
    }
}

/// Cross-product of conditions to train and evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub environments: Vec<Environment>,
    pub states: Vec<ChannelState>,
    pub elevations: Vec<f64>,
    /// Target `k/n`; each maps to the nearest even channel filter count.
    pub ratios: Vec<f64>,
    pub kinds: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    /// Added to the link-budget SNR; 0 reproduces the link budget.
    pub snr_offset_db: f64,
    pub train: TrainOptions,
    pub eval: EvalOptions,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            environments: vec![Environment::Open],
            states: ChannelState::ALL.to_vec(),
            elevations: vec![40.0],
            ratios: vec![0.04, 0.17, 0.33],
            kinds: vec![ModelKind::Baseline, ModelKind::Adaptive],
            seeds: vec![1, 2, 3],
            snr_offset_db: 0.0,
            train: TrainOptions::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.environments.is_empty() || self.states.is_empty() || self.elevations.is_empty() {
            return Err(HarnessError::Config("plan needs environments, states and elevations".into()));
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(HarnessError::Config(format!("ratios must lie in (0, 1), got {:?}", self.ratios)));
        }
        if self.kinds.is_empty() || self.seeds.is_empty() {
            return Err(HarnessError::Config("plan needs model kinds and seeds".into()));
        }
        if self.eval.min_realizations == 0 || self.eval.max_realizations < self.eval.min_realizations || self.eval.batch_size == 0 {
            return Err(HarnessError::Config("bad evaluation realization bounds".into()));
        }
        self.train.validate()
    }
}

/// The single configuration document shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub environment_table: PathBuf,
    pub link: LinkParams,
    pub channel: ChannelConfig,
    pub architecture: ArchitectureConfig,
    pub attention: AttentionConfig,
    pub data: DataSource,
    pub plan: ExperimentPlan,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            environment_table: PathBuf::from("configs/environments.synthetic.toml"),
            link: LinkParams::default(),
            channel: ChannelConfig::default(),
            architecture: ArchitectureConfig::default(),
            attention: AttentionConfig::default(),
            data: DataSource::default(),
            plan: ExperimentPlan::default(),
        }
    }
}

impl ExperimentConfig {
    /// Relative paths inside the file resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mut cfg: Self = toml::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.environment_table);
        match &mut cfg.data {
            DataSource::Directory { path } | DataSource::Manifest { path } => resolve(path),
            DataSource::Synthetic(_) => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.link.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.architecture.validate()?;
        self.attention.validate()?;
        self.plan.validate()
    }

    pub fn tables(&self) -> Result<EnvironmentTables, HarnessError> {
        Ok(EnvironmentTables::load_file(&self.environment_table)?)
    }

    /// Architecture with the channel filter count closest to `ratio`.
    pub fn architecture_for_ratio(&self, ratio: f64) -> Result<ArchitectureConfig, HarnessError> {
        let base = &self.architecture;
        let s = base.downsampling();
        let latent_plane = (base.input_shape[1] / s) * (base.input_shape[2] / s);
        let exact = 2.0 * ratio * base.source_dim() as f64 / latent_plane as f64;
        let c = (((exact / 2.0).round() as usize).max(1)) * 2;
        let arch = ArchitectureConfig { channel_filters: c, ..base.clone() };
        arch.validate()?;
        Ok(arch)
    }
}
