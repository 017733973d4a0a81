use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ablation::F1Mode;
use crate::corpus::GeneratorSpec;
use crate::encoder::{ModelConfig, PretrainConfig, StopMetric, TrainConfig};
use crate::error::{Error, Result};
use crate::hierarchy::MsConfig;

/// Environment variables that override paths and the global seed.
pub const ENV_CORPUS: &str = "HIERNOTE_CORPUS";
pub const ENV_VOCAB: &str = "HIERNOTE_VOCAB";
pub const ENV_OUT: &str = "HIERNOTE_OUT";
pub const ENV_SEED: &str = "HIERNOTE_SEED";

/// A trained model family: the single-note encoder or the `n`-note hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKey {
    Single,
    Ms(usize),
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKey::Single => f.write_str("single"),
            ModelKey::Ms(n) => write!(f, "MS-{n}"),
        }
    }
}

impl FromStr for ModelKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("single") {
            return Ok(ModelKey::Single);
        }
        s.strip_prefix("MS-")
            .or_else(|| s.strip_prefix("ms-"))
            .and_then(|n| n.parse().ok())
            .filter(|&n| n >= 1)
            .map(ModelKey::Ms)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}` (single or MS-n)")))
    }
}

impl TryFrom<String> for ModelKey {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelKey> for String {
    fn from(k: ModelKey) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Existing corpus file; when unset the corpus is generated.
    pub corpus: Option<PathBuf>,
    /// Existing vocabulary file; when unset it is built from training notes.
    pub vocab: Option<PathBuf>,
    /// Topic lexicon; the shipped lexicon when unset.
    pub lexicon: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            vocab: None,
            lexicon: None,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { ratios: [0.8, 0.1, 0.1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub min_count: usize,
    pub max_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            min_count: 2,
            max_size: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    /// One MS-n model family per entry.
    pub ns: Vec<usize>,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub dropout: f64,
    /// Also write the train/valid concatenated representations of every
    /// MS run to `reps.jsonl` next to the model.
    pub cache_representations: bool,
    /// Step-2 optimization; its `seeds` are ignored in favor of `[train]`.
    pub train: TrainConfig,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            ns: vec![3, 5, 8, 10],
            mlp_hidden: 128,
            mlp_layers: 2,
            dropout: 0.1,
            cache_representations: false,
            train: TrainConfig {
                learning_rate: 1e-3,
                max_epochs: 30,
                early_stop_patience: 5,
                ..TrainConfig::default()
            },
        }
    }
}

impl HierarchyConfig {
    pub fn ms_config(&self, n: usize, seed: u64) -> MsConfig {
        MsConfig {
            n,
            mlp_hidden: self.mlp_hidden,
            mlp_layers: self.mlp_layers,
            dropout: self.dropout,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub enabled: bool,
    pub model: ModelKey,
    pub f1_mode: F1Mode,
    /// Topic keys left out of the ablation.
    pub exclude_topics: Vec<String>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            enabled: true,
            model: ModelKey::Ms(5),
            f1_mode: F1Mode::TargetClass,
            exclude_topics: Vec::new(),
        }
    }
}

/// One end-to-end experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed for the split, pretraining and model initialization.
    pub seed: u64,
    pub paths: Paths,
    pub generator: Option<GeneratorSpec>,
    pub split: SplitConfig,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    /// Encoder fine-tuning; `seeds` lists the replicate runs.
    pub train: TrainConfig,
    pub hierarchy: HierarchyConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            paths: Paths::default(),
            generator: Some(GeneratorSpec::new(2496, 0.7, 0)),
            split: SplitConfig::default(),
            vocab: VocabConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            hierarchy: HierarchyConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            config.paths.rebase(base);
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Applies `HIERNOTE_*` overrides from `lookup` (normally the process
    /// environment).
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = lookup(ENV_CORPUS) {
            self.paths.corpus = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup(ENV_VOCAB) {
            self.paths.vocab = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup(ENV_OUT) {
            self.paths.out = PathBuf::from(v);
        }
        if let Some(v) = lookup(ENV_SEED) {
            self.seed = v
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_SEED}={v} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_overrides(|k| std::env::var(k).ok())
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.corpus.is_none() && self.generator.is_none() {
            return Err(Error::Config("either paths.corpus or [generator] is required".into()));
        }
        let mut model = self.model.clone();
        if model.vocab_size == 0 {
            model.vocab_size = 1; // filled in from the vocabulary at run time
        }
        model.validate()?;
        self.train.validate()?;
        self.hierarchy.train.validate()?;
        for &n in &self.hierarchy.ns {
            self.hierarchy.ms_config(n, 0).validate()?;
        }
        let mut ns = self.hierarchy.ns.clone();
        ns.sort_unstable();
        ns.dedup();
        if ns.len() != self.hierarchy.ns.len() {
            return Err(Error::Config("hierarchy.ns lists a value twice".into()));
        }
        if self.ablation.enabled {
            if let ModelKey::Ms(n) = self.ablation.model {
                if !self.hierarchy.ns.contains(&n) {
                    return Err(Error::Config(format!(
                        "ablation model MS-{n} is not among hierarchy.ns {:?}",
                        self.hierarchy.ns
                    )));
                }
            }
        }
        if self.pretrain.epochs > 0 && !(self.pretrain.mask_rate > 0.0 && self.pretrain.mask_rate < 1.0) {
            return Err(Error::Config("pretrain.mask_rate must be in (0, 1)".into()));
        }
        if self.train.early_stop_metric == StopMetric::Auroc {
            log::info!("encoder early stopping monitors validation AUROC");
        }
        Ok(())
    }

    /// Model families trained by this experiment, single first.
    pub fn model_keys(&self) -> Vec<ModelKey> {
        std::iter::once(ModelKey::Single)
            .chain(self.hierarchy.ns.iter().map(|&n| ModelKey::Ms(n)))
            .collect()
    }

    /// SHA-256 of the canonical JSON form, ignoring where files live.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths = Paths::default();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.corpus, &mut self.vocab, &mut self.lexicon].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.out);
    }
}
