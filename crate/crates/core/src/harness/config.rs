use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{CompletionConfig, GradientHook, MiaFeature, MiaKind};
use crate::privacy::PrivacyConfig;
use crate::protocol::TrainConfig;
use crate::unlearn::{MixConfig, RepairConfig, UnlearnConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Mnist,
    Blobs,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    SingleClass,
    TwoClass,
    MultiClass,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Ours,
    Retrain,
    Finetune,
    Amnesiac,
    Ga,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Retrain => "retrain",
            Method::Finetune => "finetune",
            Method::Amnesiac => "amnesiac",
            Method::Ga => "ga",
        }
    }
}

/// Where samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory with the four MNIST IDX files.
    pub path: PathBuf,
    /// Keep only the first rows of the training split.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub blob_classes: usize,
    pub blob_train_per_class: usize,
    pub blob_test_per_class: usize,
    pub blob_dim: usize,
    pub blob_separation: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data/mnist"),
            train_limit: None,
            test_limit: None,
            blob_classes: 4,
            blob_train_per_class: 200,
            blob_test_per_class: 50,
            blob_dim: 8,
            blob_separation: 6.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Passive party count `K`.
    pub parties: usize,
    pub bottom_hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub top_hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            parties: 2,
            bottom_hidden: Vec::new(),
            embedding_dim: 64,
            top_hidden: vec![64],
        }
    }
}

/// Unlearning hyperparameters; the unlearn classes live at the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub probe_size: usize,
    pub probe_cap: usize,
    pub mix: MixConfig,
    pub max_learning_rate: f64,
    pub stop_when_forgotten: bool,
    pub reset_optimizer: bool,
    /// Samples for `method = "ga"`; every unlearn-class training row when
    /// absent.
    pub ga_samples: Option<usize>,
}

impl Default for UnlearnSection {
    fn default() -> Self {
        let u = UnlearnConfig::default();
        Self {
            learning_rate: u.learning_rate,
            epochs: u.epochs,
            batch_size: u.batch_size,
            momentum: u.momentum,
            weight_decay: u.weight_decay,
            probe_size: u.probe_size,
            probe_cap: u.probe_cap,
            mix: u.mix,
            max_learning_rate: u.max_learning_rate,
            stop_when_forgotten: u.stop_when_forgotten,
            reset_optimizer: u.reset_optimizer,
            ga_samples: None,
        }
    }
}

impl UnlearnSection {
    pub fn to_config(&self, classes: &BTreeSet<usize>) -> UnlearnConfig {
        UnlearnConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            unlearn_classes: classes.clone(),
            probe_size: self.probe_size,
            probe_cap: self.probe_cap,
            mix: self.mix.clone(),
            max_learning_rate: self.max_learning_rate,
            stop_when_forgotten: self.stop_when_forgotten,
            reset_optimizer: self.reset_optimizer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub mia: bool,
    pub mia_kind: MiaKind,
    pub mia_feature: MiaFeature,
    /// Shadow members and non-members drawn per trial (each).
    pub shadow_size: usize,
    pub leakage: bool,
    /// Procedure whose gradients the passive party clusters.
    pub leakage_hook: GradientHook,
    pub leakage_party: usize,
    pub leakage_restarts: usize,
    pub completion: bool,
    pub completion_party: usize,
    pub completion_config: CompletionConfig,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            mia: true,
            mia_kind: MiaKind::Threshold,
            mia_feature: MiaFeature::MaxSoftmax,
            shadow_size: 500,
            leakage: true,
            leakage_hook: GradientHook::GradientAscent { learning_rate: 2e-7 },
            leakage_party: 1,
            leakage_restarts: 50,
            completion: false,
            completion_party: 1,
            completion_config: CompletionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub checkpoints: bool,
    pub traces: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            checkpoints: false,
            traces: false,
        }
    }
}

/// A fully validated experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetKind,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub scenario: Scenario,
    pub unlearn_classes: BTreeSet<usize>,
    pub method: Method,
    pub unlearn: UnlearnSection,
    pub repair: RepairConfig,
    pub privacy: PrivacyConfig,
    pub attacks: AttackSection,
    pub seed: u64,
    pub trials: usize,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            dataset: DatasetKind::Mnist,
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            scenario: Scenario::SingleClass,
            unlearn_classes: BTreeSet::from([0]),
            method: Method::Ours,
            unlearn: UnlearnSection::default(),
            repair: RepairConfig::default(),
            privacy: PrivacyConfig::None,
            attacks: AttackSection::default(),
            seed: 0,
            trials: 5,
            output: OutputSection::default(),
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses TOML text. Errors name the offending key path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses `path`; relative data and output paths are resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data.path.is_relative() {
            cfg.data.path = base.join(&cfg.data.path);
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.unlearn_classes.len();
        let ok = match self.scenario {
            Scenario::SingleClass => n == 1,
            Scenario::TwoClass => n == 2,
            Scenario::MultiClass => n >= 3,
        };
        if !ok {
            return Err(invalid(
                "unlearn_classes",
                format!("scenario {:?} does not allow {} unlearn classes", self.scenario, n),
            ));
        }
        let classes = self.num_classes();
        if let Some(&c) = self.unlearn_classes.iter().find(|&&c| c >= classes) {
            return Err(invalid("unlearn_classes", format!("class {c} outside [0, {classes})")));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "need at least one trial"));
        }
        if self.model.parties == 0 {
            return Err(invalid("model.parties", "need at least one passive party"));
        }
        if self.model.embedding_dim == 0 {
            return Err(invalid("model.embedding_dim", "must be positive"));
        }
        self.train.validate().map_err(|e| invalid("train", e.to_string()))?;
        self.unlearn
            .to_config(&self.unlearn_classes)
            .validate()
            .map_err(|e| invalid("unlearn", e.to_string()))?;
        self.privacy.validate().map_err(|e| invalid("privacy", e.to_string()))?;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match self.dataset {
            DatasetKind::Mnist => 10,
            DatasetKind::Blobs => self.data.blob_classes,
        }
    }

    pub fn unlearn_config(&self) -> UnlearnConfig {
        self.unlearn.to_config(&self.unlearn_classes)
    }

    /// Canonical JSON of the config.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`ExperimentConfig::canonical_json`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_paper_defaults() {
        let cfg = ExperimentConfig::from_toml("dataset = \"mnist\"\nmethod = \"ours\"\n").unwrap();
        assert_eq!(cfg.unlearn.learning_rate, 2e-7);
        assert_eq!(cfg.unlearn.epochs, 10);
        assert_eq!(cfg.unlearn.probe_size, 40);
        assert_eq!(cfg.unlearn.batch_size, 32);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.trials, 5);
    }

    #[test]
    fn scenario_must_match_class_count() {
        let err = ExperimentConfig::from_toml("scenario = \"single_class\"\nunlearn_classes = [0, 1]\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "unlearn_classes"), "{err}");
        assert!(ExperimentConfig::from_toml("scenario = \"multi_class\"\nunlearn_classes = [0, 1, 2, 3]\n").is_ok());
    }

    #[test]
    fn duplicate_and_unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("seed = 1\nseed = 2\n").is_err());
        let err = ExperimentConfig::from_toml("[unlearn]\nlearning_rat = 1e-7\n").unwrap_err();
        match err {
            Error::Config { path, message } => {
                assert_eq!(path, "unlearn.learning_rat");
                assert!(message.contains("learning_rat"), "{message}");
            }
            other => panic!("{other}"),
        }
        let err = ExperimentConfig::from_toml("method = \"magic\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "method"), "{err}");
    }

    #[test]
    fn nested_enums_parse() {
        let cfg = ExperimentConfig::from_toml(
            "[privacy]\nmechanism = \"top_k_compression\"\nratio = 0.1\n[unlearn.mix]\nlambda = { kind = \"fixed\", value = 0.3 }\n",
        )
        .unwrap();
        assert_eq!(cfg.privacy, PrivacyConfig::TopKCompression { ratio: 0.1 });
        assert_eq!(cfg.unlearn.mix.lambda, crate::unlearn::LambdaSampler::Fixed { value: 0.3 });
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
