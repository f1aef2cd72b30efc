//! Run configuration file (TOML).
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use gcgrnn::data::{SplitRatios, SynthParams};
use gcgrnn::graph::DdgfInit;
use gcgrnn::training::TrainConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSection,
    pub synth: Option<SynthSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV dataset; when absent the `[synth]` section is generated in memory.
    pub csv: Option<PathBuf>,
    pub input_steps: usize,
    pub forecast_steps: usize,
    pub train_ratio: f64,
    pub validation_ratio: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            csv: None,
            input_steps: 12,
            forecast_steps: 12,
            train_ratio: 0.7,
            validation_ratio: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingKind {
    /// Gaussian kernel over random positions on a line.
    Line,
    /// Sensors evolve independently.
    None,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub sensors: usize,
    pub steps: usize,
    pub period: usize,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_noise_ar")]
    pub noise_ar: f64,
    #[serde(default = "default_base_range")]
    pub base_range: (f64, f64),
    #[serde(default = "default_coupling")]
    pub coupling: CouplingKind,
    #[serde(default = "default_start")]
    pub start_timestamp: i64,
    #[serde(default = "default_interval")]
    pub interval_seconds: i64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise_std() -> f64 {
    20.0
}
fn default_noise_ar() -> f64 {
    0.95
}
fn default_base_range() -> (f64, f64) {
    (100.0, 500.0)
}
fn default_coupling() -> CouplingKind {
    CouplingKind::Line
}
fn default_start() -> i64 {
    1_514_764_800
}
fn default_interval() -> i64 {
    3600
}

impl SynthSection {
    pub fn params(&self) -> SynthParams {
        SynthParams {
            n_sensors: self.sensors,
            n_steps: self.steps,
            period: self.period,
            noise_std: self.noise_std,
            noise_ar: self.noise_ar,
            base_range: self.base_range,
            start_timestamp: self.start_timestamp,
            interval_seconds: self.interval_seconds,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum Kind {
    #[serde(rename = "gcgrnn")]
    Gcgrnn,
    #[serde(rename = "seq2seq-rnn")]
    Seq2SeqRnn,
    #[serde(rename = "ha")]
    Ha,
    #[serde(rename = "lr")]
    Lr,
    #[serde(rename = "var")]
    Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DdgfInitName {
    Uniform,
    IdentityNoise,
}

impl From<DdgfInitName> for DdgfInit {
    fn from(v: DdgfInitName) -> Self {
        match v {
            DdgfInitName::Uniform => DdgfInit::Uniform,
            DdgfInitName::IdentityNoise => DdgfInit::IdentityNoise,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Kind,
    pub hidden: usize,
    pub depth: usize,
    pub share_encoder_decoder: bool,
    pub ddgf_init: DdgfInitName,
    pub var_lag: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: Kind::Gcgrnn,
            hidden: 64,
            depth: 1,
            share_encoder_decoder: false,
            ddgf_init: DdgfInitName::Uniform,
            var_lag: 3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub initial_lr: f64,
    pub decayed_lr: f64,
    pub decay_after_epochs: usize,
    /// Defaults to 300 for the graph model and 100 for the plain one.
    pub max_epochs: Option<usize>,
    pub batch_size: usize,
    pub patience: usize,
    /// Set to 0 to disable clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            initial_lr: d.initial_lr,
            decayed_lr: d.decayed_lr,
            decay_after_epochs: d.decay_after_epochs,
            max_epochs: None,
            batch_size: d.batch_size,
            patience: d.patience,
            clip_norm: d.clip_norm.unwrap_or(0.0),
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    /// Reads, parses and validates `path`, resolving relative paths and
    /// applying the `GCGRNN_SEED` override to the training seed.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if let Ok(seed) = std::env::var("GCGRNN_SEED") {
            cfg.train.seed = seed
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("GCGRNN_SEED={seed:?} is not an unsigned integer")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(csv) = &self.data.csv {
            self.data.csv = Some(base.join(csv));
        }
        self.output.dir = base.join(&self.output.dir);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        if d.input_steps == 0 || d.forecast_steps == 0 {
            return Err(CliError::Config("input_steps and forecast_steps must be positive".into()));
        }
        if d.csv.is_none() && self.synth.is_none() {
            return Err(CliError::Config("set [data] csv or provide a [synth] section".into()));
        }
        if let Some(s) = &self.synth {
            s.params().validate()?;
        }
        if self.model.var_lag == 0 || self.model.var_lag > d.input_steps {
            return Err(CliError::Config(format!(
                "var_lag must lie in 1..={} (the input window), got {}",
                d.input_steps, self.model.var_lag
            )));
        }
        self.train_config().validate()?;
        Ok(())
    }

    /// Fails with a config error if the dataset CSV is configured but missing.
    pub fn check_inputs(&self) -> Result<(), CliError> {
        if let Some(csv) = &self.data.csv {
            if !csv.is_file() {
                return Err(CliError::Config(format!("data file {} does not exist", csv.display())));
            }
        }
        Ok(())
    }

    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.data.train_ratio,
            validation: self.data.validation_ratio,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let default_epochs = match self.model.kind {
            Kind::Seq2SeqRnn => 100,
            _ => 300,
        };
        TrainConfig {
            initial_lr: t.initial_lr,
            decayed_lr: t.decayed_lr,
            decay_after_epochs: t.decay_after_epochs,
            max_epochs: t.max_epochs.unwrap_or(default_epochs),
            batch_size: t.batch_size,
            patience: t.patience,
            clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
            seed: t.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg: RunConfig = toml::from_str("[data]\ncsv = \"x.csv\"\n").unwrap();
        assert_eq!(cfg.model.hidden, 64);
        assert_eq!(cfg.train_config().max_epochs, 300);
        assert_eq!(cfg.train_config().clip_norm, Some(5.0));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nkind = \"gcgrnn\"\nhiden = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[extra]\n").is_err());
    }
}
