use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use enf_core::demo::DemoSpec;
use enf_core::engine::{LossWeights, TrainConfig};
use enf_core::prune::{PruneCriterion, PruneSchedule};
use enf_core::quant::MixedTargets;
use enf_core::socsim::HardwareConfig;
use enf_core::taskbench::DatasetSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenData,
    Train,
    Prune,
    Quantize,
    Schedule,
    Simulate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::GenData, Stage::Train, Stage::Prune, Stage::Quantize, Stage::Schedule, Stage::Simulate, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Train => "train",
            Stage::Prune => "prune",
            Stage::Quantize => "quantize",
            Stage::Schedule => "schedule",
            Stage::Simulate => "simulate",
            Stage::Report => "report",
        }
    }

    /// Artifact directory under the output root.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::GenData => "data",
            s => s.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Shape of the bundled network; image size and class counts also
    /// define the synthetic dataset.
    #[serde(default)]
    pub spec: DemoSpec,
    /// Graph definition file to train instead of the bundled network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Calibration samples, taken from the head of the training split.
    pub calib: usize,
    /// Export this many samples per split as PGM + label files.
    #[serde(default)]
    pub export_pgm: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    /// Target FLOPs as a fraction of the trained network's.
    pub flops_fraction: f64,
    pub step_fraction: f64,
    pub finetune_epochs: usize,
    pub final_finetune_epochs: usize,
    pub criterion: PruneCriterion,
}

impl PruneConfig {
    pub fn schedule(&self, flops: u64) -> PruneSchedule {
        PruneSchedule {
            target_flops: (flops as f64 * self.flops_fraction) as u64,
            step_fraction: self.step_fraction,
            finetune_epochs: self.finetune_epochs,
            final_finetune_epochs: self.final_finetune_epochs,
            criterion: self.criterion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeployConfig {
    /// Side of the Y plane the SoC processes.
    pub image: usize,
    /// HardwareConfig JSON; the built-in default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardware: Option<PathBuf>,
    pub targets: MixedTargets,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss_weights: LossWeights,
    pub prune: PruneConfig,
    pub deploy: DeployConfig,
    /// Stages `pipeline` runs; disabled stages reuse artifacts on disk.
    #[serde(default = "all_stages")]
    pub stages: BTreeSet<Stage>,
}

fn all_stages() -> BTreeSet<Stage> {
    Stage::ALL.into_iter().collect()
}

/// The four splits, each a deterministic function of its spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub train: DatasetSpec,
    pub val: DatasetSpec,
    pub test: DatasetSpec,
    pub calib: usize,
}

impl PipelineConfig {
    /// Parse a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.model.graph, &mut cfg.deploy.hardware, &mut cfg.out_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if !(self.prune.flops_fraction > 0.0 && self.prune.flops_fraction <= 1.0) {
            return bad("prune.flops_fraction must be in (0, 1]");
        }
        if self.data.train == 0 || self.data.val == 0 || self.data.test == 0 {
            return bad("every data split needs at least one sample");
        }
        if self.data.calib == 0 || self.data.calib > self.data.train {
            return bad("data.calib must be in 1..=data.train");
        }
        if self.deploy.image == 0 {
            return bad("deploy.image must be positive");
        }
        for p in [&self.model.graph, &self.deploy.hardware].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of every setting that affects results
    /// (the output directory does not).
    pub fn hash(&self) -> String {
        let canonical = PipelineConfig { out_dir: None, ..self.clone() };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        format!("{:x}", Sha256::digest(&json))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    pub fn manifest(&self) -> DataManifest {
        let s = &self.model.spec;
        let split = |offset: u64, n: usize| DatasetSpec {
            soil_classes: s.soil_classes,
            ..DatasetSpec::new(self.seed.wrapping_mul(3).wrapping_add(offset), n, s.image, s.seg_classes)
        };
        DataManifest {
            train: split(0, self.data.train),
            val: split(1, self.data.val),
            test: split(2, self.data.test),
            calib: self.data.calib,
        }
    }

    pub fn hardware(&self) -> Result<HardwareConfig, CliError> {
        match &self.deploy.hardware {
            Some(p) => crate::read_json(p).map_err(|e| CliError::Config(e.to_string())),
            None => Ok(HardwareConfig::default()),
        }
    }
}
