//! Run configuration, loaded from TOML. Every field has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierKind, ModelParams};
use crate::committee::Normalization;
use crate::corpus::{Task, Taxonomy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub entities: Vec<String>,
    pub taxonomy: Taxonomy,
    pub model: ModelParams,
    pub committee: CommitteeConfig,
    pub harmonize: HarmonizeConfig,
    pub propagate: PropagateConfig,
    pub service: ServiceConfig,
    pub paths: PathsConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            entities: vec!["FH".to_string(), "NS".to_string()],
            taxonomy: Taxonomy::default(),
            model: ModelParams::default(),
            committee: CommitteeConfig::default(),
            harmonize: HarmonizeConfig::default(),
            propagate: PropagateConfig::default(),
            service: ServiceConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.entities.is_empty() {
            return bad("at least one entity is required".into());
        }
        if self.committee.classifiers.is_empty() {
            return bad("the committee needs at least one classifier".into());
        }
        if !(self.committee.grid_step > 0.0 && self.committee.grid_step <= 1.0) {
            return bad(format!(
                "grid_step must lie in (0, 1], got {}",
                self.committee.grid_step
            ));
        }
        if self.committee.folds < 2 {
            return bad("committee folds must be at least 2".into());
        }
        if self.model.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if self.propagate.tasks.is_empty() {
            return bad("propagation needs at least one task".into());
        }
        if self.service.max_annotators == 0 {
            return bad("max_annotators must be at least 1".into());
        }
        if let ModePolicy::Split { suggested_share } = self.service.mode_policy {
            if !(0.0..=1.0).contains(&suggested_share) {
                return bad(format!("suggested_share must lie in [0, 1], got {suggested_share}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommitteeConfig {
    pub classifiers: Vec<ClassifierKind>,
    pub normalization: Normalization,
    /// Count the human label as an extra voter when computing agreement.
    pub human_votes: bool,
    pub kappa: f64,
    pub grid_step: f64,
    /// Folds used to keep each document out of the models that judge it.
    pub folds: usize,
    /// Let unlabeled documents contribute document frequencies.
    pub background_df: bool,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        Self {
            classifiers: ClassifierKind::ALL.to_vec(),
            normalization: Normalization::MinMax,
            human_votes: false,
            kappa: 0.1,
            grid_step: 0.1,
            folds: 5,
            background_df: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarmonizeConfig {
    pub content_theta: f64,
    pub content_top_m: usize,
    /// Minimum number of other documents carrying a term before the content
    /// rule trusts its class distribution.
    pub content_min_support: f64,
    pub profile_min_count: usize,
    pub profile_dominance: f64,
    pub committee_passes: usize,
    pub rules: bool,
    pub committee: bool,
}

impl Default for HarmonizeConfig {
    fn default() -> Self {
        Self {
            content_theta: 0.8,
            content_top_m: 3,
            content_min_support: 3.0,
            profile_min_count: 100,
            profile_dominance: 0.95,
            committee_passes: 2,
            rules: true,
            committee: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    #[default]
    Random,
    LowMargin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMode {
    Tag,
    Prob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagateConfig {
    pub target_count: Option<usize>,
    pub perf_threshold: f64,
    pub max_iter: usize,
    /// Review sample size per calendar month and iteration.
    pub monthly_quota: usize,
    pub strategy: SamplingStrategy,
    pub smoothing: Option<SmoothingMode>,
    pub gamma: f64,
    /// Add unanimous pool documents to the labeled set without waiting for
    /// confirmation.
    pub auto_add_reliable: bool,
    /// Run the committee correction stage on the labeled set each iteration.
    pub committee_stage: bool,
    /// Tasks whose committees must all be unanimous for a pool document to
    /// count as reliable, and whose dev macro-F must reach the threshold.
    pub tasks: Vec<Task>,
}

impl Default for PropagateConfig {
    fn default() -> Self {
        Self {
            target_count: None,
            perf_threshold: 0.55,
            max_iter: 5,
            monthly_quota: 3000,
            strategy: SamplingStrategy::Random,
            smoothing: None,
            gamma: 0.5,
            auto_add_reliable: true,
            committee_stage: false,
            tasks: vec![Task::Polarity, Task::Aspect],
        }
    }
}

/// How the service decides whether a task is shown with a suggestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModePolicy {
    Blind,
    Suggested,
    /// A fixed share of documents (chosen by content hash) is suggested.
    Split {
        suggested_share: f64,
    },
    /// Honor the mode requested by the annotator.
    Annotator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub lease_ttl_secs: i64,
    pub max_annotators: usize,
    pub mode_policy: ModePolicy,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".to_string(),
            lease_ttl_secs: 30 * 60,
            max_annotators: 3,
            mode_policy: ModePolicy::Split { suggested_share: 0.5 },
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub hashtags: Option<PathBuf>,
    pub nicknames: Option<PathBuf>,
    pub fusion: Option<PathBuf>,
}
