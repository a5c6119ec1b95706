use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::autodiff::Padding;
use crate::error::{Error, Result};
use crate::fedsim::FedConfig;
use crate::netzoo::ModelSpec;

/// Environment variable naming the default dataset directory.
pub const DATA_ENV: &str = "GRADLEAK_DATA";
/// File looked up inside the dataset directory when no path is configured.
pub const DEFAULT_CIFAR_FILE: &str = "test_batch.bin";

/// Architecture preset; input shape and class count come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Mlp {
        hidden: Vec<usize>,
    },
    LenetZhu {
        #[serde(default = "default_lenet_width")]
        width: usize,
    },
    Convnet {
        #[serde(default = "default_convnet_width")]
        width: usize,
        #[serde(default)]
        extra_blocks: usize,
    },
    TranslationInvariant {
        #[serde(default = "default_ti_width")]
        width: usize,
        #[serde(default = "circular")]
        padding: Padding,
    },
    Custom {
        spec: ModelSpec,
    },
}

fn default_lenet_width() -> usize {
    12
}

fn default_convnet_width() -> usize {
    16
}

fn default_ti_width() -> usize {
    8
}

fn circular() -> Padding {
    Padding::Circular
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Convnet { width: default_convnet_width(), extra_blocks: 0 }
    }
}

impl ModelConfig {
    pub fn build_spec(&self, input_shape: &[usize], num_classes: usize) -> ModelSpec {
        match self {
            ModelConfig::Mlp { hidden } => ModelSpec::mlp_classifier(input_shape, hidden, num_classes),
            ModelConfig::LenetZhu { width } => ModelSpec::lenet_zhu(input_shape, num_classes, *width),
            ModelConfig::Convnet { width, extra_blocks } => {
                ModelSpec::convnet_deep(input_shape, num_classes, *width, *extra_blocks)
            }
            ModelConfig::TranslationInvariant { width, padding } => {
                ModelSpec::translation_invariant(input_shape, num_classes, *width, *padding)
            }
            ModelConfig::Custom { spec } => spec.clone(),
        }
    }

    fn problems(&self) -> Vec<String> {
        match self {
            ModelConfig::Mlp { hidden } if hidden.contains(&0) => vec!["model.hidden: widths must be positive".into()],
            ModelConfig::LenetZhu { width }
            | ModelConfig::Convnet { width, .. }
            | ModelConfig::TranslationInvariant { width, .. }
                if *width == 0 =>
            {
                vec!["model.width: must be positive".into()]
            }
            _ => Vec::new(),
        }
    }
}

/// Where the images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// CIFAR-10 binary batch; defaults to `$GRADLEAK_DATA/test_batch.bin`.
    Cifar10 {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    Synthetic {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_synthetic_count")]
        count: usize,
        #[serde(default = "default_shape")]
        shape: Vec<usize>,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default)]
        distinct_labels: bool,
    },
}

fn default_synthetic_count() -> usize {
    32
}

fn default_shape() -> Vec<usize> {
    vec![3, 16, 16]
}

fn default_classes() -> usize {
    10
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            seed: 0,
            count: default_synthetic_count(),
            shape: default_shape(),
            classes: default_classes(),
            distinct_labels: false,
        }
    }
}

impl DatasetConfig {
    /// File a CIFAR-10 source reads from, if any.
    pub fn resolved_path(&self) -> Option<PathBuf> {
        match self {
            DatasetConfig::Cifar10 { path: Some(p) } => Some(p.clone()),
            DatasetConfig::Cifar10 { path: None } => {
                std::env::var_os(DATA_ENV).map(|root| Path::new(&root).join(DEFAULT_CIFAR_FILE))
            }
            DatasetConfig::Synthetic { .. } => None,
        }
    }
}

/// Which images are attacked: `count` experiments, each taking the next
/// `fed.n` images from position `start` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSelection {
    pub start: usize,
    pub count: usize,
    /// Skip images whose label already occurs in the current group.
    pub distinct_labels: bool,
}

impl Default for ImageSelection {
    fn default() -> Self {
        Self { start: 0, count: 1, distinct_labels: false }
    }
}

/// Optional SGD pre-training that produces the "trained" condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub trained: bool,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { trained: false, steps: 200, lr: 0.05, batch_size: 8 }
    }
}

/// User-side protocol of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub n: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share the raw mean gradient when the protocol is a single full-batch
    /// step; otherwise the parameter delta is shared.
    pub raw_gradient: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { n: 1, epochs: 1, batch_size: 1, lr: 1e-4, raw_gradient: true }
    }
}

impl ProtocolConfig {
    pub fn fed_config(&self, seed: u64) -> FedConfig {
        FedConfig { n: self.n, epochs: self.epochs, batch_size: self.batch_size, lr: self.lr, seed }
    }
}

/// Complete description of an experiment; the JSON echo written next to the
/// results is enough to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub images: ImageSelection,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    /// Extra protocols run by the `fedsim` sweep, one output subdirectory each.
    #[serde(default)]
    pub sweep: Vec<ProtocolConfig>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
}

fn default_name() -> String {
    "experiment".into()
}

impl Default for ExperimentConfig {
    /// The desk preset: untrained ConvNet (D = 16) on 16x16 synthetic images.
    fn default() -> Self {
        Self {
            name: default_name(),
            model: ModelConfig::default(),
            dataset: DatasetConfig::default(),
            images: ImageSelection::default(),
            attack: AttackConfig::default(),
            protocol: ProtocolConfig::default(),
            sweep: Vec::new(),
            training: TrainingConfig::default(),
            output_dir: None,
            seeds: vec![0],
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("json: {e}")]))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("config {}: {e}", path.display())]))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every violated constraint, prefixed with the offending field.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.is_empty() || self.name.contains(['/', '\\', ',']) {
            out.push("name: must be nonempty and free of '/', '\\' and ','".into());
        }
        if self.seeds.is_empty() {
            out.push("seeds: at least one seed is required".into());
        }
        out.extend(self.model.problems());
        match &self.dataset {
            DatasetConfig::Cifar10 { .. } => match self.dataset.resolved_path() {
                Some(p) if p.is_file() => {}
                Some(p) => out.push(format!("dataset.path: {} does not exist", p.display())),
                None => out.push(format!("dataset.path: not set and {DATA_ENV} is undefined")),
            },
            DatasetConfig::Synthetic { count, shape, classes, distinct_labels, .. } => {
                if shape.len() != 3 || shape.contains(&0) {
                    out.push(format!("dataset.shape: expected [C, H, W], got {shape:?}"));
                }
                if *classes < 2 {
                    out.push("dataset.classes: need at least 2 classes".into());
                }
                if *count == 0 {
                    out.push("dataset.count: must be positive".into());
                }
                if *distinct_labels && count > classes {
                    out.push("dataset.count: exceeds classes while distinct_labels is set".into());
                }
            }
        }
        if self.images.count == 0 {
            out.push("images.count: must be positive".into());
        }
        out.extend(self.attack.problems().into_iter().map(|p| format!("attack: {p}")));
        for (name, proto) in std::iter::once(("protocol".to_string(), &self.protocol))
            .chain(self.sweep.iter().enumerate().map(|(i, p)| (format!("sweep[{i}]"), p)))
        {
            if let Err(Error::FedConfig(msg)) = proto.fed_config(0).validate() {
                out.push(format!("{name}: {msg}"));
            }
        }
        if self.training.trained {
            if !(self.training.lr > 0.0) {
                out.push("training.lr: must be positive".into());
            }
            if self.training.batch_size == 0 {
                out.push("training.batch_size: must be positive".into());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_json() {
        let cfg = ExperimentConfig::from_json(r#"{"seeds": [1, 2], "model": {"arch": "lenet_zhu"}}"#).unwrap();
        assert_eq!(cfg.model, ModelConfig::LenetZhu { width: 12 });
        assert_eq!(cfg.seeds, vec![1, 2]);
    }

    #[test]
    fn every_violation_is_reported() {
        let cfg = ExperimentConfig {
            seeds: vec![],
            dataset: DatasetConfig::Cifar10 { path: Some("/definitely/missing.bin".into()) },
            protocol: ProtocolConfig { n: 4, batch_size: 3, ..ProtocolConfig::default() },
            attack: AttackConfig { restarts: 0, ..AttackConfig::default() },
            ..ExperimentConfig::default()
        };
        let problems = cfg.problems();
        assert_eq!(problems.len(), 4, "{problems:?}");
        assert!(problems.iter().any(|p| p.starts_with("dataset.path")));
        assert!(problems.iter().any(|p| p.starts_with("seeds")));
        assert!(problems.iter().any(|p| p.starts_with("protocol")));
        assert!(problems.iter().any(|p| p.starts_with("attack")));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"seeds": [1], "colour": 3}"#).is_err());
    }
}
