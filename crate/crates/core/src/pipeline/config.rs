//! Run configuration.
//!
//! Layers are merged as TOML values: built-in defaults, then the config file,
//! then `KEY=VALUE` overrides. The merged table is decoded with unknown keys
//! rejected, so a misspelt key is an error rather than a silent no-op.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active_learning::Strategy;
use crate::augment::AugmentConfig;
use crate::classifier::ClassifierSpec;
use crate::corpus::SplitSizes;
use crate::error::{Error, Result};
use crate::error_analysis::DEFAULT_MIN_CLUSTER_SIZE;
use crate::http::RetryPolicy;
use crate::llm::{LlmConfig, Role, DEFAULT_LLM_PARALLELISM};
use crate::refine::RefineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub sizes: SplitSizes,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data/dataset.jsonl"),
            name: None,
            labels: None,
            sizes: SplitSizes::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingKind,
    pub dim: usize,
    pub url: String,
    pub model: String,
    pub api_key_env: String,
    pub batch_size: usize,
    pub parallelism: usize,
    /// Keep an on-disk cache of remote embeddings in the run directory.
    pub cache: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingKind::Hash,
            dim: 256,
            url: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-3-small".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            batch_size: 128,
            parallelism: 4,
            cache: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub distance_threshold: f64,
    pub min_cluster_size: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            distance_threshold: 2.0,
            min_cluster_size: DEFAULT_MIN_CLUSTER_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    None,
    Random,
    Confidence,
    DescriptionMatch,
    SimilarityRank,
}

impl SelectionMode {
    pub fn strategy(self) -> Option<Strategy> {
        match self {
            SelectionMode::None => None,
            SelectionMode::Random => Some(Strategy::Random),
            SelectionMode::Confidence => Some(Strategy::Confidence),
            SelectionMode::DescriptionMatch => Some(Strategy::DescriptionMatch),
            SelectionMode::SimilarityRank => Some(Strategy::SimilarityRank),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveLearningConfig {
    pub strategy: SelectionMode,
    /// Examples to annotate per round (random, confidence, similarity_rank).
    pub k: usize,
    /// Upper bound for description_match; 0 means no bound.
    pub description_cap: usize,
    /// Prefix lengths of the similarity curve.
    pub curve_ks: Vec<usize>,
}

impl Default for ActiveLearningConfig {
    fn default() -> Self {
        Self {
            strategy: SelectionMode::None,
            k: 100,
            description_cap: 0,
            curve_ks: vec![5, 10, 20, 50, 100, 200],
        }
    }
}

/// Per-role chat settings. `base_url` and `mock` fall back to the shared
/// `[llm]` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleConfig {
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<bool>,
}

impl RoleConfig {
    fn defaults(role: Role) -> Self {
        let c = LlmConfig::defaults(role);
        Self {
            model_id: c.model_id,
            temperature: c.temperature,
            top_p: c.top_p,
            max_tokens: c.max_tokens,
            seed: c.seed,
            base_url: None,
            mock: None,
        }
    }

    pub fn llm_config(&self, role: Role) -> LlmConfig {
        LlmConfig {
            role,
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSettings {
    pub mock: bool,
    pub base_url: String,
    pub api_key_env: String,
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub explainer: RoleConfig,
    pub evaluator: RoleConfig,
    pub generator: RoleConfig,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            mock: false,
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            parallelism: DEFAULT_LLM_PARALLELISM,
            retry: RetryPolicy::default(),
            explainer: RoleConfig::defaults(Role::Explainer),
            evaluator: RoleConfig::defaults(Role::Evaluator),
            generator: RoleConfig::defaults(Role::Generator),
        }
    }
}

impl LlmSettings {
    pub fn role(&self, role: Role) -> &RoleConfig {
        match role {
            Role::Explainer => &self.explainer,
            Role::Evaluator => &self.evaluator,
            Role::Generator => &self.generator,
        }
    }

    pub fn is_mock(&self, role: Role) -> bool {
        self.role(role).mock.unwrap_or(self.mock)
    }

    pub fn base_url(&self, role: Role) -> &str {
        self.role(role).base_url.as_deref().unwrap_or(&self.base_url)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub rounds: usize,
    /// Output directory; a timestamped directory under `runs/` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub embedding: EmbeddingConfig,
    pub classifier: ClassifierSpec,
    pub clustering: ClusteringConfig,
    pub refine: RefineConfig,
    pub augment: AugmentConfig,
    pub active_learning: ActiveLearningConfig,
    pub llm: LlmSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 1,
            run_dir: None,
            dataset: DatasetConfig::default(),
            embedding: EmbeddingConfig::default(),
            classifier: ClassifierSpec::default(),
            clustering: ClusteringConfig::default(),
            refine: RefineConfig::default(),
            augment: AugmentConfig::default(),
            active_learning: ActiveLearningConfig::default(),
            llm: LlmSettings::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Parses the right-hand side of `KEY=VALUE` as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    toml::from_str::<Wrap>(&format!("v = {raw}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p:?} is not a table")))?;
        node = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("override {key:?} does not name a table entry")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Config layers in increasing precedence.
#[derive(Debug, Clone, Default)]
pub struct ConfigLayers {
    pub file: Option<PathBuf>,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub mock_backends: bool,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::resolve_str(Some(text), &[])
    }

    fn resolve_str(file: Option<&str>, sets: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(RunConfig::default())
            .map_err(|e| Error::Config(format!("default config does not serialize: {e}")))?;
        if let Some(text) = file {
            let parsed: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            merge(&mut value, parsed);
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {s:?} is not KEY=VALUE")))?;
            set_path(&mut value, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults, then the file, then `--set` overrides, then dedicated flags.
    pub fn resolve(layers: &ConfigLayers) -> Result<Self> {
        let text = match &layers.file {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        let mut cfg = Self::resolve_str(text.as_deref(), &layers.sets)?;
        if let Some(seed) = layers.seed {
            cfg.seed = seed;
        }
        if layers.mock_backends {
            cfg.llm.mock = true;
            for role in [&mut cfg.llm.explainer, &mut cfg.llm.evaluator, &mut cfg.llm.generator] {
                role.mock = None;
            }
        }
        if let Some(file) = &layers.file {
            cfg.anchor_paths(file.parent().unwrap_or(Path::new(".")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves a relative dataset path against the config file's directory.
    fn anchor_paths(&mut self, dir: &Path) {
        if self.dataset.path.is_relative() && !dir.as_os_str().is_empty() {
            self.dataset.path = dir.join(&self.dataset.path);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        let t = self.clustering.distance_threshold;
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Config(format!(
                "clustering.distance_threshold must be positive, got {t}"
            )));
        }
        if self.clustering.min_cluster_size == 0 {
            return Err(Error::Config("clustering.min_cluster_size must be >= 1".into()));
        }
        if self.embedding.dim == 0 || self.embedding.batch_size == 0 || self.embedding.parallelism == 0 {
            return Err(Error::Config(
                "embedding dim, batch_size and parallelism must be >= 1".into(),
            ));
        }
        if self.llm.parallelism == 0 {
            return Err(Error::Config("llm.parallelism must be >= 1".into()));
        }
        if self.llm.retry.attempts == 0 {
            return Err(Error::Config("llm.retry.attempts must be >= 1".into()));
        }
        self.refine.validate()?;
        self.augment.validate()?;
        for role in crate::llm::Role::ALL {
            self.llm.role(role).llm_config(role).validate()?;
        }
        Ok(())
    }
}
