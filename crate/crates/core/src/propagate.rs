//! Active-learning loop: train committees on the labeled set, classify the
//! unlabeled pool, keep the documents every classifier agrees on, send a
//! monthly sample to annotators and absorb their answers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{DocFeatures, Example, ModelSet, Scope};
use crate::committee::{Agreement, Committee, CommitteeVerdict, FusionConfig, FusionFile};
use crate::config::{Config, SamplingStrategy, SmoothingMode};
use crate::corpus::{
    AspectLabel, CorpusStore, CorrectionEvent, DocId, GoldStore, LabelPair, Polarity, Provenance, Task,
};
use crate::error::{Error, Result};
use crate::harmonize::{
    committee_correction, loo_verdicts, AuthorProfile, AuthorProfiles, CommitteeDecision, ReviewItem, ReviewReason,
};
use crate::metrics::{month_key, ConfusionMatrix};
use crate::textproc::BowVector;

pub const CHECKPOINT_FORMAT: &str = "annoprop-loop";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Prefix of the synthetic terms carrying an author's polarity profile.
pub const USER_TERM_PREFIX: &str = "__user_class_";
/// Actor recorded on labels coming from the loop itself.
pub const LOOP_ACTOR: &str = "propagate";

/// Answer of an annotator to a review item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "label", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReviewOutcome {
    Confirm,
    Relabel(LabelPair),
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LoopStatus {
    Running,
    TargetCount,
    PerfThreshold,
    MaxIter,
    /// An iteration changed nothing.
    Stalled,
}

/// Document sets of the loop. `labeled`, `unlabeled` and `excluded` are
/// disjoint and together cover every document the loop knows about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub iteration: usize,
    pub labeled: BTreeSet<DocId>,
    pub unlabeled: BTreeSet<DocId>,
    /// Reliable documents confirmed by an annotator; never sampled again.
    pub pinned: BTreeSet<DocId>,
    pub excluded: BTreeSet<DocId>,
    /// Documents rejected by annotators (a subset of `excluded`).
    pub rejected: BTreeSet<DocId>,
    /// Unanimous pool documents of the current iteration.
    pub reliable: BTreeSet<DocId>,
    /// Sampled documents awaiting an answer, with the suggested label.
    pub pending: BTreeMap<DocId, LabelPair>,
    pub status: LoopStatus,
}

impl LoopState {
    pub fn new(labeled: impl IntoIterator<Item = DocId>, unlabeled: impl IntoIterator<Item = DocId>) -> Self {
        let labeled: BTreeSet<DocId> = labeled.into_iter().collect();
        let unlabeled = unlabeled.into_iter().filter(|d| !labeled.contains(d)).collect();
        Self {
            iteration: 0,
            labeled,
            unlabeled,
            pinned: BTreeSet::new(),
            excluded: BTreeSet::new(),
            rejected: BTreeSet::new(),
            reliable: BTreeSet::new(),
            pending: BTreeMap::new(),
            status: LoopStatus::Running,
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::LoopState(m.to_string()));
        if !self.labeled.is_disjoint(&self.unlabeled) {
            return fail("labeled and unlabeled overlap");
        }
        if !self.labeled.is_disjoint(&self.excluded) {
            return fail("labeled and excluded overlap");
        }
        if !self.unlabeled.is_disjoint(&self.excluded) {
            return fail("unlabeled and excluded overlap");
        }
        if !self.pinned.is_subset(&self.labeled) {
            return fail("pinned documents must be labeled");
        }
        if !self.rejected.is_subset(&self.excluded) {
            return fail("rejected documents must be excluded");
        }
        Ok(())
    }

    fn move_to_labeled(&mut self, id: &str) {
        self.unlabeled.remove(id);
        self.excluded.remove(id);
        self.rejected.remove(id);
        self.labeled.insert(id.to_string());
    }

    fn move_to_excluded(&mut self, id: &str) {
        self.unlabeled.remove(id);
        self.labeled.remove(id);
        self.pinned.remove(id);
        self.excluded.insert(id.to_string());
    }
}

/// Synthetic terms carrying an author's polarity profile toward `entity`.
/// TAG gives the dominant class weight 1; PROB gives every class its
/// probability times `gamma`.
pub fn user_features(
    profile: Option<&AuthorProfile>,
    entity: &str,
    mode: SmoothingMode,
    gamma: f64,
) -> Vec<(String, f64)> {
    let Some(profile) = profile else {
        return Vec::new();
    };
    match mode {
        SmoothingMode::Tag => profile
            .dominant(entity)
            .map(|(p, _)| vec![(format!("{USER_TERM_PREFIX}{p}"), 1.0)])
            .unwrap_or_default(),
        SmoothingMode::Prob => profile
            .probabilities(entity)
            .map(|probs| {
                probs
                    .into_iter()
                    .filter(|(_, p)| *p > 0.0)
                    .map(|(c, p)| (format!("{USER_TERM_PREFIX}{c}"), p * gamma))
                    .collect()
            })
            .unwrap_or_default(),
    }
}

/// Adds the author's synthetic terms to a document vector.
pub fn user_smoothing(
    bow: &BowVector,
    profile: Option<&AuthorProfile>,
    entity: &str,
    mode: SmoothingMode,
    gamma: f64,
) -> BowVector {
    bow.clone().with_added(user_features(profile, entity, mode, gamma))
}

/// Trained committees for every (task, scope) with labeled data.
#[derive(Debug, Clone)]
pub struct CommitteeBank {
    committees: BTreeMap<(Task, String), Committee>,
    profiles: AuthorProfiles,
    smoothing: Option<(SmoothingMode, f64)>,
}

fn task_classes(task: Task, store: &CorpusStore) -> Vec<String> {
    match task {
        Task::Polarity => Polarity::class_names(),
        Task::Aspect => store.taxonomy().classes(),
    }
}

fn scope_of(task: Task, entity: &str) -> Scope {
    match task {
        Task::Polarity => Scope::Entity(entity.to_string()),
        Task::Aspect => Scope::Pooled,
    }
}

fn fusion_for(fusion: &FusionFile, config: &Config, scope: &Scope, task: Task) -> FusionConfig {
    fusion
        .get(&scope.to_string(), task)
        .unwrap_or_else(|| FusionConfig::uniform(&config.committee.classifiers))
}

impl CommitteeBank {
    /// Trains one committee per task and scope on `labeled`.
    pub fn train(
        store: &CorpusStore,
        labeled: &[(&DocFeatures, &LabelPair)],
        background: &[&DocFeatures],
        profiles: AuthorProfiles,
        config: &Config,
        fusion: &FusionFile,
    ) -> Result<Self> {
        let smoothing = config.propagate.smoothing.map(|m| (m, config.propagate.gamma));
        let mut bank = Self {
            committees: BTreeMap::new(),
            profiles,
            smoothing,
        };
        let mut jobs: Vec<(Task, Scope)> = store
            .entities()
            .into_iter()
            .map(|e| (Task::Polarity, Scope::Entity(e)))
            .collect();
        jobs.push((Task::Aspect, Scope::Pooled));
        let extras: Vec<Vec<(String, f64)>> = labeled.iter().map(|(f, _)| bank.extras(Task::Polarity, f)).collect();
        let trained: Vec<Option<((Task, String), Committee)>> = jobs
            .into_par_iter()
            .map(|(task, scope)| -> Result<_> {
                let examples: Vec<Example> = labeled
                    .iter()
                    .zip(&extras)
                    .filter(|((f, _), _)| scope.admits(&f.entity))
                    .map(|((f, l), x)| Example {
                        features: f,
                        class: l.class(task).to_string(),
                        extra: if task == Task::Polarity { x.clone() } else { Vec::new() },
                    })
                    .collect();
                if examples.is_empty() {
                    warn!("propagate: no labeled documents for {task}/{scope}");
                    return Ok(None);
                }
                let bg: Vec<&DocFeatures> = background.iter().copied().filter(|f| scope.admits(&f.entity)).collect();
                let models = ModelSet::train(
                    task,
                    scope.clone(),
                    &task_classes(task, store),
                    &examples,
                    &bg,
                    config.model,
                )?;
                let mut c = Committee::new(
                    models,
                    config.committee.classifiers.clone(),
                    fusion_for(fusion, config, &scope, task),
                );
                c.normalization = config.committee.normalization;
                Ok(Some(((task, scope.to_string()), c)))
            })
            .collect::<Result<_>>()?;
        bank.committees = trained.into_iter().flatten().collect();
        Ok(bank)
    }

    pub fn committee(&self, task: Task, entity: &str) -> Option<&Committee> {
        self.committees.get(&(task, scope_of(task, entity).to_string()))
    }

    /// Smoothing terms of a document for `task` (polarity only).
    pub fn extras(&self, task: Task, f: &DocFeatures) -> Vec<(String, f64)> {
        match (task, self.smoothing) {
            (Task::Polarity, Some((mode, gamma))) => {
                user_features(self.profiles.get(&f.author_id), &f.entity, mode, gamma)
            }
            _ => Vec::new(),
        }
    }

    pub fn verdict(&self, task: Task, f: &DocFeatures) -> Result<Option<CommitteeVerdict>> {
        match self.committee(task, &f.entity) {
            None => Ok(None),
            Some(c) => c.verdict(f, &self.extras(task, f), None).map(Some),
        }
    }

    /// Whether the document shares a term with the labeled data.
    pub fn knows(&self, f: &DocFeatures) -> bool {
        [Task::Polarity, Task::Aspect]
            .iter()
            .filter_map(|t| self.committee(*t, &f.entity))
            .any(|c| c.models.has_known_terms(f))
    }
}

/// A pool document waiting for classification.
#[derive(Debug, Clone)]
pub struct PoolDoc<'a> {
    pub features: &'a DocFeatures,
    /// Gold label of a labeled document with the same content.
    pub duplicate_label: Option<LabelPair>,
}

/// Provisional classification of one pool document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolResult {
    pub doc_id: DocId,
    pub created_at: DateTime<Utc>,
    /// Fused prediction of each task; `None` when some task had no committee.
    pub label: Option<LabelPair>,
    /// Smallest fused margin over the reliability tasks.
    pub margin: f64,
    /// Weakest agreement over the reliability tasks.
    pub agreement: Agreement,
    pub known_terms: bool,
    pub duplicate: bool,
}

/// Scores every pool document. Copies of labeled documents take the label of
/// their original.
pub fn classify_pool(pool: &[PoolDoc<'_>], bank: &CommitteeBank, tasks: &[Task]) -> Result<Vec<PoolResult>> {
    pool.par_iter()
        .map(|doc| {
            let f = doc.features;
            if let Some(label) = &doc.duplicate_label {
                return Ok(PoolResult {
                    doc_id: f.doc_id.clone(),
                    created_at: f.created_at,
                    label: Some(label.clone()),
                    margin: 1.0,
                    agreement: Agreement::Unanimous,
                    known_terms: true,
                    duplicate: true,
                });
            }
            let pol = bank.verdict(Task::Polarity, f)?;
            let asp = bank.verdict(Task::Aspect, f)?;
            let mut margin = f64::INFINITY;
            let mut agreement = Agreement::Unanimous;
            for (task, v) in [(Task::Polarity, &pol), (Task::Aspect, &asp)] {
                if !tasks.contains(&task) {
                    continue;
                }
                match v {
                    Some(v) => {
                        margin = margin.min(v.margin);
                        agreement = agreement.max(v.agreement);
                    }
                    None => agreement = Agreement::Split,
                }
            }
            let label = match (&pol, &asp) {
                (Some(p), Some(a)) => Some(LabelPair::new(
                    p.predicted.parse()?,
                    AspectLabel::new(a.predicted.clone()),
                )),
                _ => None,
            };
            Ok(PoolResult {
                doc_id: f.doc_id.clone(),
                created_at: f.created_at,
                label,
                margin: if margin.is_finite() { margin } else { 0.0 },
                agreement,
                known_terms: bank.knows(f),
                duplicate: false,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outliers {
    /// Every classifier chose the same label.
    pub reliable: BTreeSet<DocId>,
    /// Split committees and documents sharing no term with the labeled set.
    pub excluded: BTreeSet<DocId>,
}

pub fn detect_outliers(results: &[PoolResult]) -> Outliers {
    let mut out = Outliers::default();
    for r in results {
        if r.label.is_none() || !r.known_terms || r.agreement == Agreement::Split {
            out.excluded.insert(r.doc_id.clone());
        } else if r.agreement == Agreement::Unanimous {
            out.reliable.insert(r.doc_id.clone());
        }
    }
    out
}

/// Picks up to `quota` documents per calendar month for confirmation.
/// Pinned, excluded and outlier documents are never picked.
pub fn sample_for_review(
    results: &[PoolResult],
    state: &LoopState,
    outliers: &Outliers,
    quota: usize,
    strategy: SamplingStrategy,
    seed: u64,
) -> Vec<ReviewItem> {
    if quota == 0 {
        return Vec::new();
    }
    let mut by_month: BTreeMap<String, Vec<&PoolResult>> = BTreeMap::new();
    for r in results {
        if r.label.is_none()
            || state.pinned.contains(&r.doc_id)
            || state.excluded.contains(&r.doc_id)
            || outliers.excluded.contains(&r.doc_id)
        {
            continue;
        }
        by_month.entry(month_key(r.created_at)).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    let mut short = Vec::new();
    for (month, mut docs) in by_month {
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        match strategy {
            SamplingStrategy::Random => docs.shuffle(&mut rng),
            SamplingStrategy::LowMargin => {
                docs.sort_by(|a, b| a.margin.total_cmp(&b.margin).then_with(|| a.doc_id.cmp(&b.doc_id)))
            }
        }
        if docs.len() < quota {
            short.push(format!("{month} ({})", docs.len()));
        }
        for r in docs.into_iter().take(quota) {
            let reason = if outliers.reliable.contains(&r.doc_id) {
                ReviewReason::ReliableOutlierConfirm
            } else {
                ReviewReason::PoolSample
            };
            items.push(
                ReviewItem::new(&r.doc_id, reason, Task::Polarity)
                    .with_candidates(vec![("margin".to_string(), r.margin)])
                    .with_suggestion(r.label.clone()),
            );
        }
    }
    if !short.is_empty() {
        warn!(
            "sample: {} months fall short of the quota of {quota}: {}",
            short.len(),
            short.join(", ")
        );
    }
    items
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsorbCounts {
    pub confirmed: usize,
    pub pinned: usize,
    pub relabeled: usize,
    pub rejected: usize,
}

impl AbsorbCounts {
    pub fn total(&self) -> usize {
        self.confirmed + self.relabeled + self.rejected
    }
}

/// Applies annotator answers on pending documents. Confirmed reliable
/// documents are pinned; other confirmations and relabels become expert
/// labels; rejected documents leave the loop for good.
pub fn absorb_confirmations(
    state: &mut LoopState,
    gold: &mut GoldStore,
    outcomes: &[(DocId, ReviewOutcome)],
    actor: &str,
    now: DateTime<Utc>,
) -> Result<AbsorbCounts> {
    if let Some((id, _)) = outcomes.iter().find(|(id, _)| !state.pending.contains_key(id)) {
        return Err(Error::UnknownDocument(id.clone()));
    }
    let mut counts = AbsorbCounts::default();
    for (id, outcome) in outcomes {
        let Some(suggested) = state.pending.remove(id) else {
            // answered twice in the same batch
            continue;
        };
        let current = gold.get(id).filter(|g| !g.is_rejected()).map(|g| g.pair());
        match outcome {
            ReviewOutcome::Confirm => {
                counts.confirmed += 1;
                if current.is_none() {
                    restore(gold, id, suggested, actor, now);
                }
                state.move_to_labeled(id);
                if state.reliable.contains(id) {
                    state.pinned.insert(id.clone());
                    counts.pinned += 1;
                }
            }
            ReviewOutcome::Relabel(label) => {
                counts.relabeled += 1;
                match current {
                    Some(old) if &old != label => {
                        gold.apply(CorrectionEvent {
                            doc_id: id.clone(),
                            old,
                            new: label.clone(),
                            rule: Provenance::Expert,
                            actor: actor.to_string(),
                            at: now,
                        });
                    }
                    Some(_) => {}
                    None => restore(gold, id, label.clone(), actor, now),
                }
                state.move_to_labeled(id);
            }
            ReviewOutcome::Reject => {
                counts.rejected += 1;
                if let Some(old) = current {
                    gold.apply(CorrectionEvent {
                        doc_id: id.clone(),
                        old: old.clone(),
                        new: old,
                        rule: Provenance::Rejected,
                        actor: actor.to_string(),
                        at: now,
                    });
                }
                state.move_to_excluded(id);
                state.rejected.insert(id.clone());
            }
        }
    }
    info!(
        "absorbed {} confirmations ({} pinned), {} relabels, {} rejections",
        counts.confirmed, counts.pinned, counts.relabeled, counts.rejected
    );
    Ok(counts)
}

/// Gives `id` an expert label, bringing a previously rejected document back.
fn restore(gold: &mut GoldStore, id: &str, label: LabelPair, actor: &str, now: DateTime<Utc>) {
    if gold.assign(id, label.clone(), Provenance::Expert, now) {
        return;
    }
    let old = gold.get(id).map(|g| g.pair()).unwrap_or_else(|| label.clone());
    gold.apply(CorrectionEvent {
        doc_id: id.to_string(),
        old,
        new: label,
        rule: Provenance::Expert,
        actor: actor.to_string(),
        at: now,
    });
}

/// Source of answers for sampled documents. Returning fewer answers than
/// items is allowed; unanswered items are dropped at the end of the
/// iteration.
pub trait ReviewOracle {
    fn review(&mut self, items: &[ReviewItem]) -> Vec<(DocId, ReviewOutcome)>;
}

/// Oracle that never answers.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoReview;

impl ReviewOracle for NoReview {
    fn review(&mut self, _items: &[ReviewItem]) -> Vec<(DocId, ReviewOutcome)> {
        Vec::new()
    }
}

/// Counts of one loop iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub pinned: usize,
    pub excluded: usize,
    pub reliable: usize,
    pub auto_added: usize,
    pub sampled: usize,
    pub confirmed: usize,
    pub relabeled: usize,
    pub rejected: usize,
    pub corrected: usize,
    pub dev_macro_f: BTreeMap<Task, f64>,
    /// Current label of every pool document: gold when labeled, otherwise
    /// the provisional prediction.
    #[serde(skip)]
    pub pool_labels: BTreeMap<DocId, LabelPair>,
}

/// Versioned snapshot written after each phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub state: LoopState,
    pub gold: GoldStore,
    pub reports: Vec<IterationReport>,
}

impl Checkpoint {
    pub fn new(state: LoopState, gold: GoldStore, reports: Vec<IterationReport>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            state,
            gold,
            reports,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("{} v{}", c.format, c.version)));
        }
        c.state.check_invariants()?;
        Ok(c)
    }
}

/// Inputs of a loop run.
pub struct LoopInput<'a> {
    pub store: &'a CorpusStore,
    pub config: &'a Config,
    pub fusion: &'a FusionFile,
    /// Starting labels; every non-rejected entry outside `dev` seeds the
    /// labeled set.
    pub seed: GoldStore,
    pub pool: Vec<DocId>,
    /// Held-out labeled documents for the performance stop.
    pub dev: Vec<(DocId, LabelPair)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub state: LoopState,
    pub gold: GoldStore,
    pub reports: Vec<IterationReport>,
}

struct Runner<'a> {
    input: LoopInput<'a>,
    features: BTreeMap<DocId, DocFeatures>,
    checkpoint: Option<&'a Path>,
    now: DateTime<Utc>,
}

impl Runner<'_> {
    fn save(&self, state: &LoopState, gold: &GoldStore, reports: &[IterationReport]) -> Result<()> {
        if let Some(path) = self.checkpoint {
            Checkpoint::new(state.clone(), gold.clone(), reports.to_vec()).save(path)?;
        }
        Ok(())
    }

    fn train(&self, state: &LoopState, gold: &GoldStore) -> Result<CommitteeBank> {
        let store = self.input.store;
        let labeled: Vec<(&DocFeatures, LabelPair)> = state
            .labeled
            .iter()
            .filter_map(|id| Some((self.features.get(id)?, gold.get(id)?.pair())))
            .collect();
        let pairs: Vec<(&DocFeatures, &LabelPair)> = labeled.iter().map(|(f, l)| (*f, l)).collect();
        let background: Vec<&DocFeatures> = if self.input.config.committee.background_df {
            state.unlabeled.iter().filter_map(|id| self.features.get(id)).collect()
        } else {
            Vec::new()
        };
        let docs = state.labeled.iter().filter_map(|id| store.document(id));
        let profiles = AuthorProfiles::build(docs, gold);
        CommitteeBank::train(
            store,
            &pairs,
            &background,
            profiles,
            self.input.config,
            self.input.fusion,
        )
    }

    fn evaluate(&self, bank: &CommitteeBank) -> Result<BTreeMap<Task, f64>> {
        let mut out = BTreeMap::new();
        if self.input.dev.is_empty() {
            return Ok(out);
        }
        for &task in &self.input.config.propagate.tasks {
            let mut cm = ConfusionMatrix::new(task_classes(task, self.input.store));
            for (id, gold) in &self.input.dev {
                let Some(f) = self.features.get(id) else {
                    continue;
                };
                let predicted = match bank.verdict(task, f)? {
                    Some(v) => v.predicted,
                    None => continue,
                };
                cm.add(gold.class(task), &predicted)?;
            }
            if let Ok(f) = cm.macro_f() {
                out.insert(task, f);
            }
        }
        Ok(out)
    }

    fn pool_docs(&self, state: &LoopState, gold: &GoldStore) -> Vec<PoolDoc<'_>> {
        let store = self.input.store;
        let mut by_hash: BTreeMap<&str, LabelPair> = BTreeMap::new();
        for id in &state.labeled {
            if let (Some(d), Some(g)) = (store.document(id), gold.get(id)) {
                by_hash.entry(d.content_hash.as_str()).or_insert_with(|| g.pair());
            }
        }
        state
            .unlabeled
            .iter()
            .filter_map(|id| {
                let f = self.features.get(id)?;
                let duplicate_label = store
                    .document(id)
                    .and_then(|d| by_hash.get(d.content_hash.as_str()).cloned());
                Some(PoolDoc {
                    features: f,
                    duplicate_label,
                })
            })
            .collect()
    }

    /// Committee correction of non-expert labels, one fold-out pass.
    fn committee_stage(&self, state: &LoopState, gold: &mut GoldStore, bank: &CommitteeBank) -> Result<usize> {
        let config = self.input.config;
        let store = self.input.store;
        let mut corrected = 0;
        let mut jobs: Vec<(Task, Scope)> = store
            .entities()
            .into_iter()
            .map(|e| (Task::Polarity, Scope::Entity(e)))
            .collect();
        jobs.push((Task::Aspect, Scope::Pooled));
        for (task, scope) in jobs {
            let ids: Vec<&DocId> = state
                .labeled
                .iter()
                .filter(|id| self.features.get(*id).is_some_and(|f| scope.admits(&f.entity)))
                .collect();
            let labels: Vec<LabelPair> = ids.iter().filter_map(|id| gold.get(id).map(|g| g.pair())).collect();
            if labels.len() != ids.len() || ids.len() < config.committee.folds {
                continue;
            }
            let docs: Vec<(&DocFeatures, &str)> = ids
                .iter()
                .zip(&labels)
                .map(|(id, l)| (&self.features[*id], l.class(task)))
                .collect();
            if docs.iter().map(|(_, c)| *c).collect::<BTreeSet<_>>().len() < 2 {
                continue;
            }
            let extras: Vec<Vec<(String, f64)>> = docs.iter().map(|(f, _)| bank.extras(task, f)).collect();
            let verdicts = loo_verdicts(
                &docs,
                &extras,
                &[],
                task,
                &scope,
                &task_classes(task, store),
                config,
                &fusion_for(self.input.fusion, config, &scope, task),
            )?;
            for ((id, label), verdict) in ids.iter().zip(&labels).zip(&verdicts) {
                let locked =
                    state.pinned.contains(*id) || gold.get(id).is_some_and(|g| g.provenance == Provenance::Expert);
                if locked {
                    continue;
                }
                if let CommitteeDecision::Correct(e) = committee_correction(label, task, verdict, self.now)? {
                    if gold.apply(e) {
                        corrected += 1;
                    }
                }
            }
        }
        Ok(corrected)
    }

    fn pool_labels(&self, state: &LoopState, gold: &GoldStore, results: &[PoolResult]) -> BTreeMap<DocId, LabelPair> {
        let mut out: BTreeMap<DocId, LabelPair> = results
            .iter()
            .filter_map(|r| Some((r.doc_id.clone(), r.label.clone()?)))
            .collect();
        for id in &self.input.pool {
            if state.labeled.contains(id) {
                if let Some(g) = gold.get(id) {
                    out.insert(id.clone(), g.pair());
                }
            }
        }
        out
    }

    fn run(
        &self,
        mut state: LoopState,
        mut gold: GoldStore,
        mut reports: Vec<IterationReport>,
        oracle: &mut dyn ReviewOracle,
    ) -> Result<LoopOutcome> {
        let cfg = &self.input.config.propagate;
        let tasks = &cfg.tasks;
        if !state.pending.is_empty() {
            let items: Vec<ReviewItem> = state
                .pending
                .iter()
                .map(|(id, l)| {
                    ReviewItem::new(id, ReviewReason::PoolSample, Task::Polarity).with_suggestion(Some(l.clone()))
                })
                .collect();
            let outcomes = oracle.review(&items);
            absorb_confirmations(&mut state, &mut gold, &outcomes, LOOP_ACTOR, self.now)?;
            state.pending.clear();
        }
        while state.status == LoopStatus::Running {
            state.iteration += 1;
            let mut report = IterationReport {
                iteration: state.iteration,
                ..Default::default()
            };
            // outliers of the previous iteration get another chance
            let returning: Vec<DocId> = state.excluded.difference(&state.rejected).cloned().collect();
            for id in returning {
                state.excluded.remove(&id);
                state.unlabeled.insert(id);
            }
            state.reliable.clear();
            let labeled_before = state.labeled.len();
            let journal_before = gold.journal().len();

            let bank = self.train(&state, &gold)?;
            report.dev_macro_f = self.evaluate(&bank)?;
            let perf = tasks
                .iter()
                .map(|t| report.dev_macro_f.get(t).copied())
                .collect::<Option<Vec<f64>>>()
                .and_then(|v| v.into_iter().reduce(f64::min));
            let sufficient = match perf {
                Some(p) => p >= cfg.perf_threshold,
                None => cfg.perf_threshold <= 0.0,
            };
            let pool = self.pool_docs(&state, &gold);
            let results = classify_pool(&pool, &bank, tasks)?;
            drop(pool);

            if sufficient {
                // the model is good enough: label the whole pool
                for r in &results {
                    match &r.label {
                        Some(label) if r.known_terms || r.duplicate => {
                            if gold.assign(&r.doc_id, label.clone(), Provenance::Propagated, self.now) {
                                report.auto_added += 1;
                            }
                            state.move_to_labeled(&r.doc_id);
                        }
                        _ => state.move_to_excluded(&r.doc_id),
                    }
                }
                state.status = LoopStatus::PerfThreshold;
                info!(
                    "iteration {}: performance {:?} reached, pool labeled",
                    state.iteration, perf
                );
            } else {
                let outliers = detect_outliers(&results);
                report.reliable = outliers.reliable.len();
                for r in &results {
                    if !outliers.reliable.contains(&r.doc_id) {
                        continue;
                    }
                    state.reliable.insert(r.doc_id.clone());
                    if cfg.auto_add_reliable {
                        if let Some(label) = &r.label {
                            if gold.assign(&r.doc_id, label.clone(), Provenance::Propagated, self.now) {
                                report.auto_added += 1;
                            }
                            state.move_to_labeled(&r.doc_id);
                        }
                    }
                }
                for id in &outliers.excluded {
                    state.move_to_excluded(id);
                }
                self.save(&state, &gold, &reports)?;

                let seed = self.input.config.seed ^ (state.iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let items = sample_for_review(&results, &state, &outliers, cfg.monthly_quota, cfg.strategy, seed);
                report.sampled = items.len();
                state.pending = items
                    .iter()
                    .filter_map(|i| Some((i.doc_id.clone(), i.suggestion.clone()?)))
                    .collect();
                self.save(&state, &gold, &reports)?;

                let outcomes = oracle.review(&items);
                let counts = absorb_confirmations(&mut state, &mut gold, &outcomes, LOOP_ACTOR, self.now)?;
                state.pending.clear();
                report.confirmed = counts.confirmed;
                report.relabeled = counts.relabeled;
                report.rejected = counts.rejected;

                if self.input.config.propagate.committee_stage {
                    report.corrected = self.committee_stage(&state, &mut gold, &bank)?;
                }
            }

            report.labeled = state.labeled.len();
            report.unlabeled = state.unlabeled.len();
            report.pinned = state.pinned.len();
            report.excluded = state.excluded.len();
            report.pool_labels = self.pool_labels(&state, &gold, &results);
            info!(
                "iteration {}: labeled {} (+{}), excluded {}, sampled {}, dev {:?}",
                state.iteration,
                report.labeled,
                report.labeled.saturating_sub(labeled_before),
                report.excluded,
                report.sampled,
                report.dev_macro_f
            );
            reports.push(report);
            state.check_invariants()?;

            if state.status == LoopStatus::Running {
                let changed = state.labeled.len() != labeled_before || gold.journal().len() != journal_before;
                if !changed {
                    state.status = LoopStatus::Stalled;
                } else if cfg.target_count.is_some_and(|t| state.labeled.len() >= t) {
                    state.status = LoopStatus::TargetCount;
                } else if state.iteration >= cfg.max_iter {
                    state.status = LoopStatus::MaxIter;
                }
            }
            self.save(&state, &gold, &reports)?;
        }
        Ok(LoopOutcome { state, gold, reports })
    }
}

fn prepare<'a>(input: &LoopInput<'a>) -> BTreeMap<DocId, DocFeatures> {
    let n_max = input.config.model.n_max;
    let ids: BTreeSet<&str> = input
        .seed
        .iter()
        .map(|g| g.doc_id.as_str())
        .chain(input.pool.iter().map(String::as_str))
        .chain(input.dev.iter().map(|(id, _)| id.as_str()))
        .collect();
    ids.into_par_iter()
        .filter_map(|id| {
            let d = input.store.document(id)?;
            Some((id.to_string(), DocFeatures::from_document(d, n_max)))
        })
        .collect()
}

/// Runs the loop from the seed labels until a stopping rule fires.
pub fn run_loop(
    input: LoopInput<'_>,
    oracle: &mut dyn ReviewOracle,
    checkpoint: Option<&Path>,
    now: DateTime<Utc>,
) -> Result<LoopOutcome> {
    let dev: BTreeSet<&str> = input.dev.iter().map(|(id, _)| id.as_str()).collect();
    let labeled: Vec<DocId> = input
        .seed
        .iter()
        .filter(|g| !g.is_rejected() && !dev.contains(g.doc_id.as_str()))
        .filter(|g| input.store.document(&g.doc_id).is_some())
        .map(|g| g.doc_id.clone())
        .collect();
    if labeled.is_empty() {
        return Err(Error::EmptySeed);
    }
    let pool: Vec<DocId> = input
        .pool
        .iter()
        .filter(|id| !dev.contains(id.as_str()) && input.seed.get(id).is_none())
        .cloned()
        .collect();
    let state = LoopState::new(labeled, pool);
    let gold = input.seed.clone();
    let runner = Runner {
        features: prepare(&input),
        input,
        checkpoint,
        now,
    };
    runner.run(state, gold, Vec::new(), oracle)
}

/// Continues a run from a checkpoint.
pub fn resume_loop(
    input: LoopInput<'_>,
    from: Checkpoint,
    oracle: &mut dyn ReviewOracle,
    checkpoint: Option<&Path>,
    now: DateTime<Utc>,
) -> Result<LoopOutcome> {
    from.state.check_invariants()?;
    let runner = Runner {
        features: prepare(&input),
        input,
        checkpoint,
        now,
    };
    runner.run(from.state, from.gold, from.reports, oracle)
}
