//! Score normalization, weighted fusion and committee agreement.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierKind, DocFeatures, ModelSet, ScoreVector};
use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;

/// Identifier of fused score vectors.
pub const FUSED_ID: &str = "fused";
/// Actor recorded on committee corrections.
pub const COMMITTEE_ACTOR: &str = "committee";

/// Ordered from strongest to weakest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Agreement {
    Unanimous,
    Majority,
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    MinMax,
    Softmax,
}

/// Per-vector min-max scaling to `[0, 1]`. A vector whose finite scores are
/// all equal becomes all 0.5 (or 1 next to missing classes); `-inf` maps to 0.
pub fn normalize(v: &ScoreVector) -> ScoreVector {
    let finite = v.scores.values().copied().filter(|s| s.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    let has_missing = v.scores.values().any(|s| !s.is_finite());
    let scores = v
        .scores
        .iter()
        .map(|(c, &s)| {
            let n = if !s.is_finite() {
                0.0
            } else if hi > lo {
                (s - lo) / (hi - lo)
            } else if has_missing {
                1.0
            } else {
                0.5
            };
            (c.clone(), n)
        })
        .collect();
    ScoreVector::new(v.classifier.clone(), scores)
}

/// Softmax over finite scores; `-inf` maps to 0.
pub fn softmax(v: &ScoreVector) -> ScoreVector {
    let hi = v
        .scores
        .values()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: BTreeMap<String, f64> = v
        .scores
        .iter()
        .map(|(c, &s)| (c.clone(), if s.is_finite() { (s - hi).exp() } else { 0.0 }))
        .collect();
    let z: f64 = exps.values().sum();
    let scores = exps
        .into_iter()
        .map(|(c, e)| (c, if z > 0.0 { e / z } else { 0.0 }))
        .collect();
    ScoreVector::new(v.classifier.clone(), scores)
}

pub fn normalize_with(v: &ScoreVector, method: Normalization) -> ScoreVector {
    match method {
        Normalization::MinMax => normalize(v),
        Normalization::Softmax => softmax(v),
    }
}

/// Agreement of classifier votes. `None` is an abstention: it counts toward
/// the number of voters but supports no label.
pub fn agreement<S: AsRef<str>>(votes: &[Option<S>]) -> Agreement {
    let n = votes.len();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in votes.iter().flatten() {
        *counts.entry(v.as_ref()).or_insert(0) += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    if n > 0 && top == n {
        Agreement::Unanimous
    } else if 2 * top > n {
        Agreement::Majority
    } else {
        Agreement::Split
    }
}

/// Most voted label when it holds a strict majority of the voters.
pub fn majority_vote<S: AsRef<str>>(votes: &[Option<S>]) -> Option<String> {
    let n = votes.len();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in votes.iter().flatten() {
        *counts.entry(v.as_ref()).or_insert(0) += 1;
    }
    counts.into_iter().find(|(_, c)| 2 * c > n).map(|(l, _)| l.to_string())
}

/// Fusion weights of one (entity, task), with the training prior and the
/// distribution penalty used when they were tuned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub weights: BTreeMap<ClassifierKind, f64>,
    #[serde(default)]
    pub prior: BTreeMap<String, f64>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
}

fn default_kappa() -> f64 {
    0.1
}

fn default_grid_step() -> f64 {
    0.1
}

impl FusionConfig {
    pub fn uniform(kinds: &[ClassifierKind]) -> Self {
        let w = 1.0 / kinds.len().max(1) as f64;
        Self {
            weights: kinds.iter().map(|&k| (k, w)).collect(),
            prior: BTreeMap::new(),
            kappa: default_kappa(),
            grid_step: default_grid_step(),
        }
    }

    pub fn with_weights(kinds: &[ClassifierKind], weights: &[f64]) -> Self {
        Self {
            weights: kinds.iter().copied().zip(weights.iter().copied()).collect(),
            ..Self::uniform(kinds)
        }
    }

    pub fn is_on_simplex(&self) -> bool {
        let sum: f64 = self.weights.values().sum();
        self.weights.values().all(|&w| w >= 0.0) && (sum - 1.0).abs() < 1e-9
    }
}

/// `Σ w_i · s_i(c)` over the configured classifiers.
pub fn fuse(normalized: &[ScoreVector], config: &FusionConfig) -> Result<ScoreVector> {
    let mut fused: Option<BTreeMap<String, f64>> = None;
    for (kind, &w) in &config.weights {
        let v = normalized
            .iter()
            .find(|v| v.classifier == kind.as_str())
            .ok_or_else(|| Error::MissingClassifier(kind.to_string()))?;
        let acc = fused.get_or_insert_with(|| v.scores.keys().map(|c| (c.clone(), 0.0)).collect());
        for (c, s) in &v.scores {
            *acc.entry(c.clone()).or_insert(0.0) += w * s;
        }
    }
    Ok(ScoreVector::new(FUSED_ID, fused.unwrap_or_default()))
}

/// Points of the weight simplex with coordinates on a `step` lattice, first
/// coordinate descending, then the rest recursively.
pub fn simplex_grid(n: usize, step: f64) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, m: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if n == 1 {
            prefix.push(left);
            out.push(prefix.iter().map(|&k| k as f64 / m as f64).collect());
            prefix.pop();
            return;
        }
        for k in (0..=left).rev() {
            prefix.push(k);
            rec(n - 1, left - k, m, prefix, out);
            prefix.pop();
        }
    }
    if n == 0 {
        return Vec::new();
    }
    let m = (1.0 / step).round().max(1.0) as usize;
    let mut out = Vec::new();
    rec(n, m, m, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Jensen-Shannon divergence (natural log) between two distributions over
/// the same keys; missing keys count as 0.
pub fn jsd(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let kl = |a: &BTreeMap<String, f64>, m: &BTreeMap<String, f64>| -> f64 {
        a.iter()
            .filter(|(_, &x)| x > 0.0)
            .map(|(k, &x)| x * (x / m[k]).ln())
            .sum()
    };
    let keys: std::collections::BTreeSet<&String> = p.keys().chain(q.keys()).collect();
    let get = |d: &BTreeMap<String, f64>, k: &str| d.get(k).copied().unwrap_or(0.0);
    let m: BTreeMap<String, f64> = keys
        .iter()
        .map(|k| ((*k).clone(), 0.5 * (get(p, k) + get(q, k))))
        .collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

/// Class shares of a label list over `classes`.
pub fn distribution<'a>(classes: &[String], labels: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, f64> = classes.iter().map(|c| (c.clone(), 0.0)).collect();
    let mut n = 0.0;
    for l in labels {
        *counts.entry(l.to_string()).or_insert(0.0) += 1.0;
        n += 1.0;
    }
    if n > 0.0 {
        for v in counts.values_mut() {
            *v /= n;
        }
    }
    counts
}

/// One dev document: normalized vectors of every committee member (in the
/// committee's classifier order) and its gold class.
#[derive(Debug, Clone, PartialEq)]
pub struct DevPoint {
    pub normalized: Vec<ScoreVector>,
    pub gold: String,
}

/// Dev scores as dense `[doc][member][class]` arrays in `classes` order.
struct DevMatrix<'a> {
    scores: Vec<Vec<Vec<f64>>>,
    gold: Vec<&'a str>,
}

impl<'a> DevMatrix<'a> {
    fn new(dev: &'a [DevPoint], classes: &[String]) -> Self {
        let scores = dev
            .iter()
            .map(|d| {
                d.normalized
                    .iter()
                    .map(|v| classes.iter().map(|c| v.get(c).unwrap_or(0.0)).collect())
                    .collect()
            })
            .collect();
        Self {
            scores,
            gold: dev.iter().map(|d| d.gold.as_str()).collect(),
        }
    }

    fn objective(&self, classes: &[String], weights: &[f64], prior: &BTreeMap<String, f64>, kappa: f64) -> Result<f64> {
        let predicted: Vec<&str> = self
            .scores
            .iter()
            .map(|members| {
                let mut best = (0, f64::NEG_INFINITY);
                for ci in 0..classes.len() {
                    let s: f64 = members.iter().zip(weights).map(|(m, w)| w * m[ci]).sum();
                    if s > best.1 {
                        best = (ci, s);
                    }
                }
                classes[best.0].as_str()
            })
            .collect();
        let cm = ConfusionMatrix::from_pairs(
            classes.to_vec(),
            self.gold.iter().copied().zip(predicted.iter().copied()),
        )?;
        let penalty = if kappa > 0.0 && !prior.is_empty() {
            kappa * jsd(&distribution(classes, predicted.iter().copied()), prior)
        } else {
            0.0
        };
        Ok(cm.macro_f()? - penalty)
    }
}

/// Objective of a weight vector: dev macro-F minus κ times the divergence
/// between the predicted class distribution and the prior.
pub fn fusion_objective(
    dev: &[DevPoint],
    classes: &[String],
    weights: &[f64],
    prior: &BTreeMap<String, f64>,
    kappa: f64,
) -> Result<f64> {
    DevMatrix::new(dev, classes).objective(classes, weights, prior, kappa)
}

/// Grid search over the weight simplex. Ties keep the earliest grid point;
/// uniform weights are tried last so the result is never worse than them.
pub fn tune_weights(
    dev: &[DevPoint],
    classes: &[String],
    kinds: &[ClassifierKind],
    prior: BTreeMap<String, f64>,
    kappa: f64,
    step: f64,
) -> Result<(FusionConfig, f64)> {
    if dev.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if kinds.len() < 2 {
        return Err(Error::Config("weight tuning needs at least two classifiers".into()));
    }
    let matrix = DevMatrix::new(dev, classes);
    let mut grid = simplex_grid(kinds.len(), step);
    grid.push(vec![1.0 / kinds.len() as f64; kinds.len()]);
    let objectives: Vec<f64> = grid
        .par_iter()
        .map(|w| matrix.objective(classes, w, &prior, kappa))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &o) in objectives.iter().enumerate() {
        if o > objectives[best] {
            best = i;
        }
    }
    let mut config = FusionConfig::with_weights(kinds, &grid[best]);
    config.prior = prior;
    config.kappa = kappa;
    config.grid_step = step;
    Ok((config, objectives[best]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeVerdict {
    pub doc_id: String,
    pub normalized: Vec<ScoreVector>,
    pub fused: ScoreVector,
    pub predicted: String,
    pub agreement: Agreement,
    pub margin: f64,
    /// Argmax of each member; `None` for a member without preference.
    pub votes: Vec<Option<String>>,
}

impl CommitteeVerdict {
    /// The label held by a strict majority of the voters, if any.
    pub fn majority(&self) -> Option<String> {
        majority_vote(&self.votes)
    }
}

/// Builds a verdict from raw member scores.
pub fn verdict_from_scores(
    doc_id: &str,
    raw: &[ScoreVector],
    fusion: &FusionConfig,
    method: Normalization,
    human: Option<&str>,
) -> Result<CommitteeVerdict> {
    let normalized: Vec<ScoreVector> = raw.iter().map(|v| normalize_with(v, method)).collect();
    let fused = fuse(&normalized, fusion)?;
    let predicted = fused.argmax().unwrap_or_default().to_string();
    let mut votes: Vec<Option<String>> = raw
        .iter()
        .map(|v| (!v.is_flat()).then(|| v.argmax().map(str::to_string)).flatten())
        .collect();
    if let Some(h) = human {
        votes.push(Some(h.to_string()));
    }
    Ok(CommitteeVerdict {
        doc_id: doc_id.to_string(),
        agreement: agreement(&votes),
        margin: fused.margin(),
        predicted,
        fused,
        normalized,
        votes,
    })
}

/// Trained members plus fusion weights for one (entity, task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Committee {
    pub kinds: Vec<ClassifierKind>,
    pub models: ModelSet,
    pub fusion: FusionConfig,
    pub normalization: Normalization,
    /// Count the human label as one more voter.
    pub human_votes: bool,
}

impl Committee {
    pub fn new(models: ModelSet, kinds: Vec<ClassifierKind>, fusion: FusionConfig) -> Self {
        Self {
            kinds,
            models,
            fusion,
            normalization: Normalization::MinMax,
            human_votes: false,
        }
    }

    pub fn task(&self) -> Task {
        self.models.task
    }

    pub fn classes(&self) -> &[String] {
        &self.models.classes
    }

    pub fn raw_scores(&self, features: &DocFeatures, extra: &[(String, f64)]) -> Vec<ScoreVector> {
        self.models.score_all(&self.kinds, features, extra)
    }

    pub fn verdict(
        &self,
        features: &DocFeatures,
        extra: &[(String, f64)],
        human: Option<&str>,
    ) -> Result<CommitteeVerdict> {
        let raw = self.raw_scores(features, extra);
        let human = if self.human_votes { human } else { None };
        verdict_from_scores(&features.doc_id, &raw, &self.fusion, self.normalization, human)
    }

    /// Re-tunes the fusion weights on labeled dev documents.
    pub fn tune(
        &mut self,
        dev: &[(&DocFeatures, &str)],
        prior: BTreeMap<String, f64>,
        kappa: f64,
        step: f64,
    ) -> Result<f64> {
        let points: Vec<DevPoint> = dev
            .par_iter()
            .map(|(f, gold)| DevPoint {
                normalized: self
                    .raw_scores(f, &[])
                    .iter()
                    .map(|v| normalize_with(v, self.normalization))
                    .collect(),
                gold: gold.to_string(),
            })
            .collect();
        let (config, objective) = tune_weights(&points, self.classes(), &self.kinds, prior, kappa, step)?;
        self.fusion = config;
        Ok(objective)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionEntry {
    pub weights: BTreeMap<ClassifierKind, f64>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
}

/// Fusion configurations keyed by entity, then task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FusionFile {
    pub entries: BTreeMap<String, BTreeMap<Task, FusionEntry>>,
}

impl FusionFile {
    pub fn get(&self, entity: &str, task: Task) -> Option<FusionConfig> {
        self.entries.get(entity)?.get(&task).map(|e| FusionConfig {
            weights: e.weights.clone(),
            prior: BTreeMap::new(),
            kappa: e.kappa,
            grid_step: e.grid_step,
        })
    }

    pub fn set(&mut self, entity: &str, task: Task, config: &FusionConfig) {
        self.entries.entry(entity.to_string()).or_default().insert(
            task,
            FusionEntry {
                weights: config.weights.clone(),
                kappa: config.kappa,
                grid_step: config.grid_step,
            },
        );
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (entity, tasks) in &file.entries {
            for (task, e) in tasks {
                let sum: f64 = e.weights.values().sum();
                if e.weights.values().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::Config(format!(
                        "fusion weights for {entity}/{task} must be non-negative and sum to 1 (sum = {sum})"
                    )));
                }
            }
        }
        Ok(file)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}
