use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rules::{
    content_rule, hashtag_rule, nickname_rule, profile_rule, AuthorProfiles, ContentParams, RuleAction,
};
use super::{is_decisive, majority_label, ReviewItem, ReviewReason};
use crate::classifiers::{DocFeatures, Example, ModelSet, Scope};
use crate::committee::{Agreement, Committee, CommitteeVerdict, FusionConfig, FusionFile, COMMITTEE_ACTOR};
use crate::config::Config;
use crate::corpus::{
    reduce_annotation, AspectLabel, CorpusStore, CorrectionEvent, DocId, Document, GoldStore, LabelPair, Polarity,
    Provenance, Task,
};
use crate::error::{Error, Result};
use crate::textproc::{Lexicons, TermStats};

/// Result of the committee on one labeled document.
#[derive(Debug, Clone, PartialEq)]
pub enum CommitteeDecision {
    NoOp,
    Correct(CorrectionEvent),
    Review(ReviewItem),
}

/// Applies the committee's verdict to a human label: an agreed label other
/// than the human one (and equal to the fused prediction) replaces it; a
/// split committee sends the document back to annotators.
pub fn committee_correction(
    human: &LabelPair,
    task: Task,
    verdict: &CommitteeVerdict,
    at: DateTime<Utc>,
) -> Result<CommitteeDecision> {
    if verdict.votes.is_empty() || verdict.fused.scores.is_empty() {
        return Err(Error::UntrainedCommittee);
    }
    let human_class = human.class(task);
    let mut candidates: Vec<(String, f64)> = verdict.fused.scores.iter().map(|(c, s)| (c.clone(), *s)).collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
    let review = || -> Result<CommitteeDecision> {
        Ok(CommitteeDecision::Review(
            ReviewItem::new(&verdict.doc_id, ReviewReason::CommitteeSplit, task)
                .with_candidates(candidates.clone())
                .with_suggestion(Some(human.with_class(task, &verdict.predicted)?)),
        ))
    };
    match verdict.agreement {
        Agreement::Split => review(),
        Agreement::Unanimous | Agreement::Majority => {
            let agreed = verdict.majority().ok_or(Error::UntrainedCommittee)?;
            if agreed == human_class {
                Ok(CommitteeDecision::NoOp)
            } else if verdict.predicted == agreed {
                Ok(CommitteeDecision::Correct(CorrectionEvent {
                    doc_id: verdict.doc_id.clone(),
                    old: human.clone(),
                    new: human.with_class(task, &agreed)?,
                    rule: Provenance::Committee,
                    actor: COMMITTEE_ACTOR.to_string(),
                    at,
                }))
            } else {
                review()
            }
        }
    }
}

/// Verdicts on labeled documents from committees that never saw them: the
/// documents are split into `folds` folds and each fold is judged by models
/// trained on the others. Output order follows `docs`.
#[allow(clippy::too_many_arguments)]
pub fn loo_verdicts(
    docs: &[(&DocFeatures, &str)],
    extras: &[Vec<(String, f64)>],
    background: &[&DocFeatures],
    task: Task,
    scope: &Scope,
    classes: &[String],
    config: &Config,
    fusion: &FusionConfig,
) -> Result<Vec<CommitteeVerdict>> {
    let k = config.committee.folds.max(2).min(docs.len().max(2));
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&a, &b| docs[a].0.doc_id.cmp(&docs[b].0.doc_id));
    let mut fold_of = vec![0usize; docs.len()];
    for (rank, &i) in order.iter().enumerate() {
        fold_of[i] = rank % k;
    }
    let extra_of = |i: usize| extras.get(i).cloned().unwrap_or_default();
    let per_fold: Vec<Vec<(usize, CommitteeVerdict)>> = (0..k)
        .into_par_iter()
        .map(|fold| -> Result<Vec<(usize, CommitteeVerdict)>> {
            let examples: Vec<Example> = (0..docs.len())
                .filter(|&i| fold_of[i] != fold)
                .map(|i| Example {
                    features: docs[i].0,
                    class: docs[i].1.to_string(),
                    extra: extra_of(i),
                })
                .collect();
            let held: Vec<usize> = (0..docs.len()).filter(|&i| fold_of[i] == fold).collect();
            if examples.is_empty() || held.is_empty() {
                return Ok(Vec::new());
            }
            let models = ModelSet::train(task, scope.clone(), classes, &examples, background, config.model)?;
            let mut committee = Committee::new(models, config.committee.classifiers.clone(), fusion.clone());
            committee.normalization = config.committee.normalization;
            committee.human_votes = config.committee.human_votes;
            held.into_iter()
                .map(|i| {
                    committee
                        .verdict(docs[i].0, &extra_of(i), Some(docs[i].1))
                        .map(|v| (i, v))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Option<CommitteeVerdict>> = vec![None; docs.len()];
    for (i, v) in per_fold.into_iter().flatten() {
        out[i] = Some(v);
    }
    out.into_iter().map(|v| v.ok_or(Error::UntrainedCommittee)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub entity: String,
    pub task: Task,
    pub rule: Provenance,
    pub count: u64,
}

/// Correction counts by rule for each entity and task, plus queue sizes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    pub rows: Vec<ReportRow>,
    pub queued: BTreeMap<ReviewReason, u64>,
    pub assigned: u64,
    pub committee_passes: usize,
}

impl CascadeReport {
    fn add(&mut self, entity: &str, task: Task, rule: Provenance) {
        match self
            .rows
            .iter_mut()
            .find(|r| r.entity == entity && r.task == task && r.rule == rule)
        {
            Some(r) => r.count += 1,
            None => self.rows.push(ReportRow {
                entity: entity.to_string(),
                task,
                rule,
                count: 1,
            }),
        }
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.count).sum()
    }

    pub fn count(&self, entity: &str, task: Task, rule: Provenance) -> u64 {
        self.rows
            .iter()
            .filter(|r| r.entity == entity && r.task == task && r.rule == rule)
            .map(|r| r.count)
            .sum()
    }

    /// Plain-text table: one row per rule, one column per (entity, task).
    pub fn to_table(&self) -> String {
        let mut columns: Vec<(String, Task)> = self
            .rows
            .iter()
            .map(|r| (r.entity.clone(), r.task))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if columns.is_empty() {
            columns.push(("-".to_string(), Task::Polarity));
        }
        let mut out = format!("{:<16}", "rule");
        for (e, t) in &columns {
            let _ = write!(out, " {:>14}", format!("{e}/{t}"));
        }
        out.push('\n');
        for rule in Provenance::ALL {
            if !self.rows.iter().any(|r| r.rule == rule) {
                continue;
            }
            let _ = write!(out, "{:<16}", rule.as_str());
            for (e, t) in &columns {
                let _ = write!(out, " {:>14}", self.count(e, *t, rule));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<16}", "total");
        for (e, t) in &columns {
            let n: u64 = self
                .rows
                .iter()
                .filter(|r| &r.entity == e && r.task == *t)
                .map(|r| r.count)
                .sum();
            let _ = write!(out, " {n:>14}");
        }
        out.push('\n');
        for (reason, n) in &self.queued {
            let _ = writeln!(out, "queued {reason}: {n}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome {
    pub gold: GoldStore,
    /// Corrections made by this run, in application order.
    pub events: Vec<CorrectionEvent>,
    pub reviews: Vec<ReviewItem>,
    pub report: CascadeReport,
}

struct Cascade<'a> {
    store: &'a CorpusStore,
    config: &'a Config,
    fusion: &'a FusionFile,
    now: DateTime<Utc>,
    canonical: Vec<&'a Document>,
    features: BTreeMap<&'a str, DocFeatures>,
    gold: GoldStore,
    events: Vec<CorrectionEvent>,
    reviews: BTreeMap<(DocId, Task, ReviewReason), ReviewItem>,
    report: CascadeReport,
    /// Documents whose polarity is backed by hard lexicon evidence.
    protected: BTreeSet<DocId>,
    /// (doc, task) pairs on which human annotators disagreed.
    disputed: BTreeSet<(DocId, Task)>,
}

impl<'a> Cascade<'a> {
    fn apply(&mut self, doc: &Document, new: LabelPair, rule: Provenance, actor: &str, task: Task) -> bool {
        let Some(old) = self.gold.get(&doc.doc_id).map(|g| g.pair()) else {
            return false;
        };
        let event = CorrectionEvent {
            doc_id: doc.doc_id.clone(),
            old,
            new,
            rule,
            actor: actor.to_string(),
            at: self.now,
        };
        if !self.gold.apply(event.clone()) {
            return false;
        }
        self.events.push(event);
        self.report.add(&doc.entity, task, rule);
        true
    }

    fn review(&mut self, item: ReviewItem) {
        self.reviews.insert((item.doc_id.clone(), item.task, item.reason), item);
    }

    fn live_label(&self, doc_id: &str) -> Option<LabelPair> {
        self.gold.get(doc_id).filter(|g| !g.is_rejected()).map(|g| g.pair())
    }

    fn majority_stage(&mut self) {
        for doc in self.canonical.clone() {
            let labels: Vec<LabelPair> = self
                .store
                .annotations_for_content(&doc.content_hash)
                .into_iter()
                .filter_map(|r| reduce_annotation(r).ok())
                .filter(|l| is_decisive(l.polarity))
                .collect();
            if labels.is_empty() {
                continue;
            }
            let polarities: Vec<Polarity> = labels.iter().map(|l| l.polarity).collect();
            let aspects: Vec<&str> = labels.iter().map(|l| l.aspect.aspect.as_str()).collect();
            for (task, distinct) in [
                (Task::Polarity, polarities.iter().collect::<BTreeSet<_>>().len()),
                (Task::Aspect, aspects.iter().collect::<BTreeSet<_>>().len()),
            ] {
                if distinct > 1 {
                    self.disputed.insert((doc.doc_id.clone(), task));
                }
            }
            let (Some(polarity), Some(aspect)) = (majority_label(&polarities), majority_label(&aspects)) else {
                if !self.gold.contains(&doc.doc_id) {
                    let task = if majority_label(&polarities).is_none() {
                        Task::Polarity
                    } else {
                        Task::Aspect
                    };
                    self.review(ReviewItem::new(&doc.doc_id, ReviewReason::NoMajority, task));
                }
                continue;
            };
            let subs: Vec<&String> = labels
                .iter()
                .filter(|l| l.aspect.aspect == aspect)
                .filter_map(|l| l.aspect.sub_aspect.as_ref())
                .collect();
            // sub-aspects are never corrected automatically
            if !subs.is_empty() && majority_label(&subs).is_none() {
                self.review(ReviewItem::new(&doc.doc_id, ReviewReason::NoMajority, Task::Aspect));
            }
            let label = LabelPair::new(
                polarity,
                AspectLabel {
                    aspect: aspect.to_string(),
                    sub_aspect: majority_label(&subs).cloned(),
                },
            );
            match self.gold.get(&doc.doc_id) {
                None => {
                    self.gold
                        .assign(&doc.doc_id, label, Provenance::HumanMajority, self.now);
                    self.report.assigned += 1;
                }
                Some(g) if g.provenance == Provenance::HumanMajority && g.pair() != label => {
                    let task = if g.polarity != label.polarity {
                        Task::Polarity
                    } else {
                        Task::Aspect
                    };
                    self.apply(doc, label, Provenance::HumanMajority, "majority", task);
                }
                Some(_) => {}
            }
        }
    }

    fn lexicon_stage(&mut self, lexicons: &Lexicons) {
        for doc in self.canonical.clone() {
            if self
                .gold
                .get(&doc.doc_id)
                .is_some_and(|g| g.provenance == Provenance::Expert)
            {
                continue;
            }
            let Some(label) = self.live_label(&doc.doc_id) else {
                continue;
            };
            let (mentions, hashtags) = {
                let f = &self.features[doc.doc_id.as_str()];
                (f.mentions.clone(), f.hashtags.clone())
            };
            let mut current = label;
            let stages: [(Provenance, RuleAction); 2] = [
                (
                    Provenance::RuleNickname,
                    nickname_rule(doc, &mentions, lexicons, current.polarity),
                ),
                (Provenance::RuleHashtag, RuleAction::None),
            ];
            for (rule, action) in stages {
                let action = if rule == Provenance::RuleHashtag {
                    hashtag_rule(&doc.entity, &hashtags, lexicons, current.polarity)
                } else {
                    action
                };
                match action {
                    RuleAction::None => {}
                    RuleAction::Agree => {
                        self.protected.insert(doc.doc_id.clone());
                    }
                    RuleAction::Correct(p) => {
                        let mut new = current.clone();
                        new.polarity = p;
                        let actor = rule.as_str().to_ascii_lowercase();
                        if self.apply(doc, new.clone(), rule, &actor, Task::Polarity) {
                            current = new;
                        }
                        self.protected.insert(doc.doc_id.clone());
                    }
                    RuleAction::Review(reason) => {
                        self.review(ReviewItem::new(&doc.doc_id, reason, Task::Polarity));
                    }
                }
            }
        }
    }

    fn scopes(&self, task: Task) -> Vec<Scope> {
        match task {
            Task::Polarity => self.store.entities().into_iter().map(Scope::Entity).collect(),
            Task::Aspect => vec![Scope::Pooled],
        }
    }

    fn classes(&self, task: Task) -> Vec<String> {
        match task {
            Task::Polarity => Polarity::class_names(),
            Task::Aspect => self.store.taxonomy().classes(),
        }
    }

    /// Labeled and unlabeled canonical documents of a scope.
    fn split_scope(&self, scope: &Scope) -> (Vec<(&'a Document, LabelPair)>, Vec<&'a Document>) {
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for doc in &self.canonical {
            if !scope.admits(&doc.entity) {
                continue;
            }
            match self.gold.get(&doc.doc_id) {
                Some(g) if g.is_rejected() => {}
                Some(g) => labeled.push((*doc, g.pair())),
                None => unlabeled.push(*doc),
            }
        }
        (labeled, unlabeled)
    }

    fn content_and_profile_stage(&mut self) {
        let params = ContentParams {
            theta: self.config.harmonize.content_theta,
            top_m: self.config.harmonize.content_top_m,
            min_support: self.config.harmonize.content_min_support,
            form: self.config.model.gini_form,
        };
        for task in [Task::Polarity, Task::Aspect] {
            for scope in self.scopes(task) {
                let (labeled, _) = self.split_scope(&scope);
                let mut stats = TermStats::new(self.classes(task));
                for (doc, label) in &labeled {
                    stats.add_document(&self.features[doc.doc_id.as_str()].counts, Some(label.class(task)));
                }
                for (doc, label) in &labeled {
                    let f = &self.features[doc.doc_id.as_str()];
                    if let Some(item) = content_rule(f, &stats, label.class(task), true, task, params) {
                        self.review(item);
                    }
                }
            }
        }
        let profiles = AuthorProfiles::build(self.canonical.iter().copied(), &self.gold);
        for doc in self.canonical.clone() {
            let Some(label) = self.live_label(&doc.doc_id) else {
                continue;
            };
            let Some(profile) = profiles.get(&doc.author_id) else {
                continue;
            };
            if let Some(item) = profile_rule(
                &doc.doc_id,
                profile,
                &doc.entity,
                label.polarity,
                Some(label.polarity),
                self.config.harmonize.profile_min_count,
                self.config.harmonize.profile_dominance,
            ) {
                self.review(item);
            }
        }
    }

    fn fusion_for(&self, scope: &Scope, task: Task) -> FusionConfig {
        self.fusion
            .get(&scope.to_string(), task)
            .unwrap_or_else(|| FusionConfig::uniform(&self.config.committee.classifiers))
    }

    /// One committee pass over every (task, scope). Returns the number of
    /// corrections and the final agreement per (doc, task).
    fn committee_pass(&mut self, agreements: &mut BTreeMap<(DocId, Task), Agreement>) -> Result<usize> {
        let mut corrected = 0;
        self.reviews
            .retain(|_, item| item.reason != ReviewReason::CommitteeSplit);
        for task in [Task::Polarity, Task::Aspect] {
            for scope in self.scopes(task) {
                let (labeled, unlabeled) = self.split_scope(&scope);
                let distinct: BTreeSet<&str> = labeled.iter().map(|(_, l)| l.class(task)).collect();
                if labeled.len() < self.config.committee.folds || distinct.len() < 2 {
                    warn!(
                        "committee: skipping {task}/{scope}: {} labeled documents over {} classes",
                        labeled.len(),
                        distinct.len()
                    );
                    continue;
                }
                let docs: Vec<(&DocFeatures, &str)> = labeled
                    .iter()
                    .map(|(d, l)| (&self.features[d.doc_id.as_str()], l.class(task)))
                    .collect();
                let background: Vec<&DocFeatures> = if self.config.committee.background_df {
                    unlabeled.iter().map(|d| &self.features[d.doc_id.as_str()]).collect()
                } else {
                    Vec::new()
                };
                let verdicts = loo_verdicts(
                    &docs,
                    &[],
                    &background,
                    task,
                    &scope,
                    &self.classes(task),
                    self.config,
                    &self.fusion_for(&scope, task),
                )?;
                for ((doc, label), verdict) in labeled.iter().zip(&verdicts) {
                    agreements.insert((doc.doc_id.clone(), task), verdict.agreement);
                    let locked = self
                        .gold
                        .get(&doc.doc_id)
                        .is_some_and(|g| g.provenance == Provenance::Expert)
                        || (task == Task::Polarity && self.protected.contains(&doc.doc_id));
                    if locked {
                        continue;
                    }
                    match committee_correction(label, task, verdict, self.now)? {
                        CommitteeDecision::NoOp => {}
                        CommitteeDecision::Correct(e) => {
                            if self.apply(doc, e.new, Provenance::Committee, COMMITTEE_ACTOR, task) {
                                corrected += 1;
                            }
                        }
                        CommitteeDecision::Review(item) => self.review(item),
                    }
                }
            }
        }
        Ok(corrected)
    }

    fn reject_stage(&mut self, agreements: &BTreeMap<(DocId, Task), Agreement>) {
        for doc in self.canonical.clone() {
            let Some(label) = self.live_label(&doc.doc_id) else {
                continue;
            };
            for task in [Task::Polarity, Task::Aspect] {
                let key = (doc.doc_id.clone(), task);
                if self.disputed.contains(&key) && agreements.get(&key) == Some(&Agreement::Split) {
                    self.apply(doc, label.clone(), Provenance::Rejected, COMMITTEE_ACTOR, task);
                    self.reviews.retain(|(id, _, _), _| id != &doc.doc_id);
                    break;
                }
            }
        }
    }

    /// Duplicates take the label of their canonical document.
    fn dedup_stage(&mut self) {
        for doc in self.store.documents() {
            let Some(canon) = &doc.duplicate_of else {
                continue;
            };
            let Some(g) = self.gold.get(canon).cloned() else {
                continue;
            };
            match self.gold.get(&doc.doc_id).cloned() {
                None => {
                    self.gold.assign(&doc.doc_id, g.pair(), g.provenance, self.now);
                    self.report.assigned += 1;
                }
                Some(d) => {
                    let rejected_mismatch = g.is_rejected() != d.is_rejected();
                    if d.pair() != g.pair() || rejected_mismatch {
                        let task = if d.polarity != g.polarity {
                            Task::Polarity
                        } else {
                            Task::Aspect
                        };
                        let rule = if g.is_rejected() {
                            Provenance::Rejected
                        } else {
                            g.provenance
                        };
                        self.apply(doc, g.pair(), rule, "dedup", task);
                    }
                }
            }
        }
    }
}

/// Runs the whole cascade on the annotations of `store`, starting from its
/// current gold labels: majority → nickname → hashtag → content → profile →
/// committee, then duplicate propagation. Nothing is written to the store.
pub fn run_cascade(
    store: &CorpusStore,
    lexicons: &Lexicons,
    config: &Config,
    fusion: &FusionFile,
    now: DateTime<Utc>,
) -> Result<CascadeOutcome> {
    let canonical: Vec<&Document> = store.documents().filter(|d| d.duplicate_of.is_none()).collect();
    let features: BTreeMap<&str, DocFeatures> = canonical
        .par_iter()
        .map(|d| (d.doc_id.as_str(), DocFeatures::from_document(d, config.model.n_max)))
        .collect();
    let mut c = Cascade {
        store,
        config,
        fusion,
        now,
        canonical,
        features,
        gold: store.gold().clone(),
        events: Vec::new(),
        reviews: BTreeMap::new(),
        report: CascadeReport::default(),
        protected: BTreeSet::new(),
        disputed: BTreeSet::new(),
    };
    c.majority_stage();
    if config.harmonize.rules {
        c.lexicon_stage(lexicons);
        c.content_and_profile_stage();
    }
    let mut agreements = BTreeMap::new();
    if config.harmonize.committee {
        for pass in 0..config.harmonize.committee_passes.max(1) {
            let corrected = c.committee_pass(&mut agreements)?;
            c.report.committee_passes = pass + 1;
            info!("committee pass {}: {corrected} corrections", pass + 1);
            if corrected == 0 {
                break;
            }
        }
        c.reject_stage(&agreements);
    }
    c.dedup_stage();
    let mut reviews: Vec<ReviewItem> = c.reviews.into_values().collect();
    reviews.sort_by(|a, b| {
        a.reason
            .priority()
            .cmp(&b.reason.priority())
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    for r in &reviews {
        *c.report.queued.entry(r.reason).or_insert(0) += 1;
    }
    Ok(CascadeOutcome {
        gold: c.gold,
        events: c.events,
        reviews,
        report: c.report,
    })
}
