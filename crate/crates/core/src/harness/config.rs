use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::task::TaskSpec;
use crate::error::{Error, Result};
use crate::fuser::FuseMode;
use crate::lm::ModelConfig;
use crate::netsim::{CostModel, Medium, NetworkState};
use crate::nncore::DEFAULT_LR;
use crate::protocol::{QosSpec, RephraseKind};

pub const SCHEMA_VERSION: u32 = 1;

/// Medium requested for a link; `auto` defers to medium selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediumChoice {
    #[default]
    Cache,
    Token,
    Auto,
}

impl MediumChoice {
    pub fn fixed(self) -> Option<Medium> {
        match self {
            MediumChoice::Cache => Some(Medium::Cache),
            MediumChoice::Token => Some(Medium::Token),
            MediumChoice::Auto => None,
        }
    }
}

/// Architecture of one party; the vocab comes from the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub max_seq: usize,
    #[serde(default)]
    pub d_ff: Option<usize>,
}

impl ModelSpec {
    pub fn config(&self, vocab_size: usize) -> ModelConfig {
        let mut c = ModelConfig::new(&self.id, self.n_layers, self.n_heads, self.n_kv_heads, self.head_dim, vocab_size, self.max_seq);
        if let Some(d) = self.d_ff {
            c.d_ff = d;
        }
        c
    }

    fn same_architecture(&self, other: &ModelSpec) -> bool {
        (self.n_layers, self.n_heads, self.n_kv_heads, self.head_dim, self.max_seq, self.d_ff)
            == (other.n_layers, other.n_heads, other.n_kv_heads, other.head_dim, other.max_seq, other.d_ff)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub lm_steps: usize,
    pub lm_batch: usize,
    pub fuser_steps: usize,
    pub fuser_batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Upper bound on peer contributions prepended to receiver training
    /// examples; 0 disables the augmentation.
    #[serde(default = "default_prefix_contributions")]
    pub prefix_contributions: usize,
}

fn default_lr() -> f64 {
    DEFAULT_LR
}

fn default_prefix_contributions() -> usize {
    4
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            lm_steps: 1000,
            lm_batch: 32,
            fuser_steps: 1500,
            fuser_batch: 16,
            lr: DEFAULT_LR,
            prefix_contributions: default_prefix_contributions(),
        }
    }
}

/// Homogeneity and medium axes of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub homogeneous: bool,
    pub medium: MediumChoice,
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub receiver: String,
    /// Ordered; sender-count prefixes take the first `k`.
    pub senders: Vec<String>,
    #[serde(default)]
    pub fuse_mode: FuseMode,
    #[serde(default)]
    pub rephrase: RephraseKind,
    /// Default medium of every link.
    #[serde(default)]
    pub medium: MediumChoice,
    /// Per-sender overrides of `medium`.
    #[serde(default)]
    pub media: BTreeMap<String, MediumChoice>,
    /// Greedy decode budget of the receiver.
    #[serde(default = "default_max_new")]
    pub max_new: usize,
    pub task: TaskSpec,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub training: TrainingSpec,
    pub network: NetworkState,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub qos: QosSpec,
}

fn default_max_new() -> usize {
    3
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::MissingArtifact { path: path.to_path_buf(), hint: "scenario config not found".into() }
            }
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model(&self, id: &str) -> Result<&ModelSpec> {
        self.models
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| Error::Config(format!("unknown model id {id:?}")))
    }

    /// Medium of the link from `sender`.
    pub fn medium_of(&self, sender: &str) -> MediumChoice {
        self.media.get(sender).copied().unwrap_or(self.medium)
    }

    /// Models in party order: receiver first, then senders.
    pub fn parties(&self) -> Vec<&ModelSpec> {
        std::iter::once(&self.receiver).chain(&self.senders).map(|id| self.model(id).expect("validated")).collect()
    }

    pub fn variant(&self) -> Variant {
        let parties = self.parties();
        let homogeneous = parties.windows(2).all(|w| w[0].same_architecture(w[1]));
        let media: BTreeSet<MediumChoice> = self.senders.iter().map(|s| self.medium_of(s)).collect();
        let medium = if media.len() == 1 { *media.iter().next().unwrap() } else { MediumChoice::Auto };
        Variant { homogeneous, medium }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return bad(format!("scenario name {:?} must be non-empty [A-Za-z0-9_-]", self.name));
        }
        self.task.validate()?;
        if self.task.n_senders != self.senders.len() {
            return bad(format!("task.n_senders = {} but {} senders listed", self.task.n_senders, self.senders.len()));
        }
        let mut ids = BTreeSet::new();
        for m in &self.models {
            if !ids.insert(m.id.as_str()) {
                return bad(format!("duplicate model id {:?}", m.id));
            }
            m.config(1).validate()?;
        }
        self.model(&self.receiver)?;
        let mut seen = BTreeSet::new();
        for s in &self.senders {
            self.model(s)?;
            if s == &self.receiver {
                return bad(format!("model {s:?} is both receiver and sender"));
            }
            if !seen.insert(s) {
                return bad(format!("sender {s:?} listed twice"));
            }
        }
        for k in self.media.keys() {
            if !self.senders.contains(k) {
                return bad(format!("media override for {k:?}, which is not a sender"));
            }
        }
        if self.max_new == 0 {
            return bad("max_new must be positive".into());
        }
        let t = &self.training;
        if t.lm_batch == 0 || t.fuser_batch == 0 || !(t.lr > 0.0) || !t.lr.is_finite() {
            return bad("training batches must be positive and lr finite > 0".into());
        }
        self.network.validate()?;
        self.cost.validate()?;
        if let Some(d) = self.qos.deadline {
            if !(d > 0.0) {
                return bad(format!("qos.deadline must be > 0, got {d}"));
            }
        }
        Ok(())
    }
}
