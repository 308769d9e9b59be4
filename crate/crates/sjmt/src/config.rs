//! Experiment configuration: one TOML file drives generation, training,
//! evaluation and reporting. Unknown keys are errors, not warnings, so
//! typos in sweep scripts surface immediately.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::data::synthetic::SyntheticConfig;
use crate::error::{Error, Result};
use crate::losses::NormalizerMode;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub width: usize,
    pub blocks: usize,
    pub normalize: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            width: 64,
            blocks: 3,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_every_steps: usize,
    pub decay_factor: f64,
    pub total_steps: usize,
    pub augment_sigma: f64,
    pub normalizer: NormalizerMode,
    pub eval_every: usize,
    /// Datasets for the multi-task strategies, in union registration order.
    pub datasets: Vec<String>,
    /// The dataset the single-task baseline trains on.
    pub single_task_dataset: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            batch_size: d.batch_size,
            lr0: d.lr0,
            decay_every_steps: d.decay_every_steps,
            decay_factor: d.decay_factor,
            total_steps: d.total_steps,
            augment_sigma: d.augment_sigma,
            normalizer: d.normalizer,
            eval_every: 500,
            datasets: vec!["emotion".into(), "aus".into()],
            single_task_dataset: "emotion".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroupByConfig {
    #[default]
    Predicted,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// How the AU score matrix groups test samples.
    pub group_by: GroupByConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            group_by: GroupByConfig::Predicted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Global seed; the generator, initialization and training streams all
    /// derive from it. No wall-clock seeding anywhere.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub synthetic: SyntheticConfig,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/experiment"),
            synthetic: SyntheticConfig::default(),
            network: NetworkSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

const KNOWN_DATASETS: &[&str] = &["emotion", "aus", "compound"];

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // The global seed is the only seed; the generator stream derives
        // from it directly.
        cfg.synthetic.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        if self.network.width == 0 || self.network.blocks == 0 {
            return Err(Error::Config(
                "network.width and network.blocks must be positive".into(),
            ));
        }
        if self.train.datasets.len() < 2 {
            return Err(Error::Config(
                "train.datasets needs at least two datasets for the multi-task strategies".into(),
            ));
        }
        for name in self
            .train
            .datasets
            .iter()
            .chain(std::iter::once(&self.train.single_task_dataset))
        {
            if !KNOWN_DATASETS.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "unknown dataset '{name}' (generated datasets are: {})",
                    KNOWN_DATASETS.join(", ")
                )));
            }
            if name == "compound" && self.synthetic.compound.is_none() {
                return Err(Error::Config(
                    "train references 'compound' but [synthetic.compound] is not configured".into(),
                ));
            }
        }
        // Reuse the per-run validation for the shared hyper-parameters.
        self.train_config(crate::train::Strategy::Sjmt, self.seed)
            .validate()?;
        Ok(())
    }

    /// Per-run training configuration for one strategy.
    pub fn train_config(&self, strategy: crate::train::Strategy, seed: u64) -> TrainConfig {
        TrainConfig {
            strategy,
            batch_size: self.train.batch_size,
            lr0: self.train.lr0,
            decay_every_steps: self.train.decay_every_steps,
            decay_factor: self.train.decay_factor,
            total_steps: self.train.total_steps,
            seed,
            augment_sigma: self.train.augment_sigma,
            normalizer: self.train.normalizer,
            use_full_bce: false,
            eval_every: self.train.eval_every,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.out_dir.join("runs")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("report")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_field_name() {
        let text = "seed = 1\n[train]\nbatch_sze = 32\n";
        let err = toml::from_str::<ExperimentConfig>(text).unwrap_err();
        assert!(err.to_string().contains("batch_sze"), "{err}");
    }

    #[test]
    fn invalid_flip_noise_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "[synthetic]\nflip_noise = 0.6\n").unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("flip_noise"), "{err}");
    }

    #[test]
    fn global_seed_drives_the_generator() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "seed = 99\n").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.synthetic.seed, 99);
    }

    #[test]
    fn compound_reference_requires_the_section() {
        let mut cfg = ExperimentConfig::default();
        cfg.synthetic.compound = None;
        cfg.train.single_task_dataset = "compound".into();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("compound"), "{err}");
    }
}
