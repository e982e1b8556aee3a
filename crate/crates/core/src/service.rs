//! In-process annotation task server: review queues, leases, submissions,
//! progress and reports. The HTTP layer wraps one instance behind a lock.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Duration, Utc};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ModePolicy, ServiceConfig};
use crate::corpus::{
    reduce_annotation, AnnotationRecord, CorpusStore, DocId, Document, GoldLabel, LabelPair, Mode, Polarity,
    Provenance, Task,
};
use crate::error::Error;
use crate::harmonize::{CascadeReport, ReviewItem, ReviewQueue, ReviewReason};
use crate::metrics::{
    suggestion_influence, temporal_distribution, InfluenceItem, InfluenceReport, TemporalDistribution,
};
use crate::propagate::{absorb_confirmations, LoopState, ReviewOutcome};

/// Error codes returned to clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    #[serde(rename = "E_LEASE")]
    Lease,
    #[serde(rename = "E_SPAN")]
    Span,
    #[serde(rename = "E_LABEL")]
    Label,
    #[serde(rename = "E_NOT_FOUND")]
    NotFound,
    #[serde(rename = "E_BAD_REQUEST")]
    BadRequest,
    #[serde(rename = "E_INTERNAL")]
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Lease => "E_LEASE",
            ErrorCode::Span => "E_SPAN",
            ErrorCode::Label => "E_LABEL",
            ErrorCode::NotFound => "E_NOT_FOUND",
            ErrorCode::BadRequest => "E_BAD_REQUEST",
            ErrorCode::Internal => "E_INTERNAL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceError {
    pub code: ErrorCode,
    pub message: String,
}

impl ServiceError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for ServiceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.message)
    }
}

impl std::error::Error for ServiceError {}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::SpanOutOfRange { .. } => ErrorCode::Span,
            Error::InvalidLabel(_) | Error::EmptyAnnotation => ErrorCode::Label,
            Error::UnknownDocument(_) => ErrorCode::NotFound,
            Error::Lease(_) => ErrorCode::Lease,
            Error::MalformedRecord { .. } | Error::Json(_) => ErrorCode::BadRequest,
            _ => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

/// A document handed to one annotator for a limited time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLease {
    pub task_id: String,
    pub doc_id: DocId,
    pub annotator_id: String,
    pub mode: Mode,
    /// Present only in suggested mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<LabelPair>,
    pub issued_at: DateTime<Utc>,
    pub ttl_secs: i64,
}

impl TaskLease {
    pub fn expires_at(&self) -> DateTime<Utc> {
        self.issued_at + Duration::seconds(self.ttl_secs)
    }

    pub fn is_expired(&self, now: DateTime<Utc>) -> bool {
        now >= self.expires_at()
    }
}

/// What an annotator needs to work on a lease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    #[serde(flatten)]
    pub lease: TaskLease,
    pub text: String,
    pub entity: String,
    pub created_at: DateTime<Utc>,
    pub reason: ReviewReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub annotation_id: String,
    pub doc_id: DocId,
    /// Outcome passed to the loop when the document was a confirmation item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<ReviewOutcome>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub documents: usize,
    pub labeled: usize,
    pub queued: usize,
    pub pinned: usize,
    pub excluded: usize,
    pub active_leases: usize,
    pub annotations: usize,
    pub per_annotator: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocView {
    pub document: Document,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldLabel>,
    pub annotations: usize,
    pub queued: Vec<ReviewReason>,
}

#[derive(Debug, Clone)]
struct Queued {
    seq: u64,
    item: ReviewItem,
    /// Annotators who answered this item through the service.
    answered_by: BTreeSet<String>,
}

/// Position of `key` in `[0, 1)` from its SHA-256 digest.
pub fn unit_hash(key: &str) -> f64 {
    let digest = Sha256::digest(key.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

/// Mode in which a document is shown under `policy`.
pub fn assign_mode(policy: ModePolicy, doc: &Document, requested: Option<Mode>) -> Mode {
    match policy {
        ModePolicy::Blind => Mode::Blind,
        ModePolicy::Suggested => Mode::Suggested,
        ModePolicy::Split { suggested_share } => {
            if unit_hash(&doc.content_hash) < suggested_share {
                Mode::Suggested
            } else {
                Mode::Blind
            }
        }
        ModePolicy::Annotator => requested.unwrap_or(Mode::Blind),
    }
}

pub struct AnnotationService {
    store: CorpusStore,
    config: ServiceConfig,
    queue: Vec<Queued>,
    next_seq: u64,
    leases: BTreeMap<String, TaskLease>,
    next_task: u64,
    loop_state: Option<LoopState>,
    /// Label the system held for each served annotation, blind ones included.
    system_labels: BTreeMap<String, LabelPair>,
}

impl fmt::Debug for AnnotationService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnnotationService")
            .field("store", &self.store)
            .field("queued", &self.queue.len())
            .field("leases", &self.leases.len())
            .finish()
    }
}

impl AnnotationService {
    pub fn new(store: CorpusStore, config: ServiceConfig) -> Self {
        Self {
            store,
            config,
            queue: Vec::new(),
            next_seq: 0,
            leases: BTreeMap::new(),
            next_task: 0,
            loop_state: None,
            system_labels: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &CorpusStore {
        &self.store
    }

    pub fn into_store(self) -> CorpusStore {
        self.store
    }

    pub fn loop_state(&self) -> Option<&LoopState> {
        self.loop_state.as_ref()
    }

    /// Attaches the loop whose pending confirmations this service collects.
    pub fn attach_loop(&mut self, state: LoopState) {
        self.loop_state = Some(state);
    }

    pub fn take_loop(&mut self) -> Option<LoopState> {
        self.loop_state.take()
    }

    /// Adds review items; unknown documents are skipped with a warning.
    pub fn enqueue(&mut self, items: impl IntoIterator<Item = ReviewItem>) -> usize {
        let mut added = 0;
        for item in items {
            if self.store.document(&item.doc_id).is_none() {
                warn!("service: review item for unknown document {}", item.doc_id);
                continue;
            }
            if self
                .queue
                .iter()
                .any(|q| q.item.doc_id == item.doc_id && q.item.reason == item.reason && q.item.task == item.task)
            {
                continue;
            }
            self.queue.push(Queued {
                seq: self.next_seq,
                item,
                answered_by: BTreeSet::new(),
            });
            self.next_seq += 1;
            added += 1;
        }
        self.queue.sort_by_key(|q| (q.item.reason.priority(), q.seq));
        added
    }

    pub fn queued(&self) -> impl Iterator<Item = &ReviewItem> + '_ {
        self.queue.iter().map(|q| &q.item)
    }

    fn expire(&mut self, now: DateTime<Utc>) {
        self.leases.retain(|_, l| !l.is_expired(now));
    }

    /// Annotators who answered or hold a lease on each queued document.
    fn busy_by_doc(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut busy: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for q in &self.queue {
            busy.entry(q.item.doc_id.as_str())
                .or_default()
                .extend(q.answered_by.iter().map(String::as_str));
        }
        for l in self.leases.values() {
            busy.entry(l.doc_id.as_str())
                .or_default()
                .insert(l.annotator_id.as_str());
        }
        busy
    }

    fn has_annotated(&self, doc_id: &str, annotator: &str) -> bool {
        self.store.annotations_for(doc_id).any(|r| r.annotator_id == annotator)
    }

    /// Returns the annotator's open lease, or leases the first eligible
    /// queued document. `None` when nothing is available.
    pub fn next_task(&mut self, annotator: &str, requested: Option<Mode>, now: DateTime<Utc>) -> Option<TaskView> {
        self.expire(now);
        if let Some(lease) = self.leases.values().find(|l| l.annotator_id == annotator).cloned() {
            return self.view(lease);
        }
        let cap = self.config.max_annotators;
        let busy = self.busy_by_doc();
        let pick = self.queue.iter().position(|q| {
            let doc = q.item.doc_id.as_str();
            !self.has_annotated(doc, annotator) && busy.get(doc).map_or(0, BTreeSet::len) < cap
        })?;
        let item = self.queue[pick].item.clone();
        let doc = self.store.document(&item.doc_id)?;
        let mut mode = assign_mode(self.config.mode_policy, doc, requested);
        if mode == Mode::Suggested && item.suggestion.is_none() {
            mode = Mode::Blind;
        }
        self.next_task += 1;
        let lease = TaskLease {
            task_id: format!("t{:08}", self.next_task),
            doc_id: item.doc_id.clone(),
            annotator_id: annotator.to_string(),
            mode,
            suggestion: if mode == Mode::Suggested {
                item.suggestion.clone()
            } else {
                None
            },
            issued_at: now,
            ttl_secs: self.config.lease_ttl_secs,
        };
        self.leases.insert(lease.task_id.clone(), lease.clone());
        self.view(lease)
    }

    fn view(&self, lease: TaskLease) -> Option<TaskView> {
        let doc = self.store.document(&lease.doc_id)?;
        let reason = self
            .queue
            .iter()
            .find(|q| q.item.doc_id == lease.doc_id)
            .map_or(ReviewReason::NoMajority, |q| q.item.reason);
        Some(TaskView {
            text: doc.text.clone(),
            entity: doc.entity.clone(),
            created_at: doc.created_at,
            reason,
            lease,
        })
    }

    /// Records an annotation made under a lease and closes the lease. The
    /// record is durable before this returns.
    pub fn submit(
        &mut self,
        task_id: &str,
        mut record: AnnotationRecord,
        now: DateTime<Utc>,
    ) -> ServiceResult<SubmitAck> {
        let lease = self
            .leases
            .get(task_id)
            .cloned()
            .ok_or_else(|| ServiceError::new(ErrorCode::Lease, format!("no open lease `{task_id}`")))?;
        if lease.is_expired(now) {
            self.leases.remove(task_id);
            return Err(ServiceError::new(
                ErrorCode::Lease,
                format!("lease `{task_id}` expired"),
            ));
        }
        if record.doc_id != lease.doc_id || record.annotator_id != lease.annotator_id {
            return Err(ServiceError::new(
                ErrorCode::Lease,
                format!("lease `{task_id}` is for {} / {}", lease.doc_id, lease.annotator_id),
            ));
        }
        record.mode = lease.mode;
        record.suggestion_shown = lease.suggestion.clone();
        if record.annotation_id.is_empty() {
            record.annotation_id = format!("{}-{}", lease.task_id, lease.annotator_id);
        }
        record.submitted_at = now;
        let annotation_id = record.annotation_id.clone();
        let label = reduce_annotation(&record).ok();
        self.store.add_annotation(record)?;
        self.leases.remove(task_id);

        let mut outcome = None;
        let mut finished = Vec::new();
        for (i, q) in self.queue.iter_mut().enumerate() {
            if q.item.doc_id != lease.doc_id {
                continue;
            }
            q.answered_by.insert(lease.annotator_id.clone());
            if let Some(s) = &q.item.suggestion {
                self.system_labels.insert(annotation_id.clone(), s.clone());
            }
            let done = match q.item.reason.queue() {
                ReviewQueue::Confirmation => true,
                ReviewQueue::Reannotation => q.answered_by.len() >= self.config.max_annotators,
            };
            if q.item.reason.queue() == ReviewQueue::Confirmation && outcome.is_none() {
                outcome = Some(match (&label, &q.item.suggestion) {
                    (None, _) => ReviewOutcome::Reject,
                    (Some(l), Some(s)) if l == s => ReviewOutcome::Confirm,
                    (Some(l), _) => ReviewOutcome::Relabel(l.clone()),
                });
            }
            if done {
                finished.push(i);
            }
        }
        for i in finished.into_iter().rev() {
            self.queue.remove(i);
        }
        if let (Some(o), Some(state)) = (&outcome, self.loop_state.as_mut()) {
            if state.pending.contains_key(&lease.doc_id) {
                let mut gold = self.store.gold().clone();
                absorb_confirmations(
                    state,
                    &mut gold,
                    &[(lease.doc_id.clone(), o.clone())],
                    &lease.annotator_id,
                    now,
                )?;
                self.store.commit_gold(gold)?;
            }
        }
        info!(
            "service: {} annotated {} ({:?})",
            lease.annotator_id, lease.doc_id, lease.mode
        );
        Ok(SubmitAck {
            annotation_id,
            doc_id: lease.doc_id,
            outcome,
        })
    }

    pub fn progress(&mut self, now: DateTime<Utc>) -> Progress {
        self.expire(now);
        let mut per_annotator: BTreeMap<String, u64> = BTreeMap::new();
        for r in self.store.annotations() {
            *per_annotator.entry(r.annotator_id.clone()).or_insert(0) += 1;
        }
        let gold = self.store.gold();
        Progress {
            documents: self.store.len(),
            labeled: gold.iter().filter(|g| !g.is_rejected()).count(),
            queued: self.queue.len(),
            pinned: self.loop_state.as_ref().map_or(0, |s| s.pinned.len()),
            excluded: gold.iter().filter(|g| g.is_rejected()).count()
                + self
                    .loop_state
                    .as_ref()
                    .map_or(0, |s| s.excluded.iter().filter(|id| !gold.contains(id)).count()),
            active_leases: self.leases.len(),
            annotations: self.store.annotations().len(),
            per_annotator,
        }
    }

    pub fn doc(&self, doc_id: &str) -> ServiceResult<DocView> {
        let document = self
            .store
            .document(doc_id)
            .cloned()
            .ok_or_else(|| ServiceError::new(ErrorCode::NotFound, format!("unknown document `{doc_id}`")))?;
        Ok(DocView {
            gold: self.store.gold().get(doc_id).cloned(),
            annotations: self.store.annotations_for(doc_id).count(),
            queued: self
                .queue
                .iter()
                .filter(|q| q.item.doc_id == doc_id)
                .map(|q| q.item.reason)
                .collect(),
            document,
        })
    }

    pub fn corrections_report(&self) -> CascadeReport {
        corrections_report(&self.store)
    }

    pub fn distribution_report(&self, task: Task) -> TemporalDistribution {
        let classes = match task {
            Task::Polarity => Polarity::class_names(),
            Task::Aspect => self.store.taxonomy().classes(),
        };
        temporal_distribution(&self.store, task, classes)
    }

    /// Agreement between served annotations and the system label, per mode.
    pub fn influence_report(&self, task: Task) -> ServiceResult<InfluenceReport> {
        let items: Vec<InfluenceItem> = self
            .store
            .annotations()
            .iter()
            .filter_map(|r| {
                let system = self
                    .system_labels
                    .get(&r.annotation_id)
                    .or(r.suggestion_shown.as_ref())?;
                let human = reduce_annotation(r).ok()?;
                Some(InfluenceItem {
                    mode: r.mode,
                    system: system.class(task).to_string(),
                    human: human.class(task).to_string(),
                })
            })
            .collect();
        let classes = match task {
            Task::Polarity => Polarity::class_names(),
            Task::Aspect => self.store.taxonomy().classes(),
        };
        Ok(suggestion_influence(&items, &classes)?)
    }
}

/// Correction counts by (entity, task, rule) read from the gold ledger. An
/// event changing both labels counts once for each task; rejections count
/// under polarity.
pub fn corrections_report(store: &CorpusStore) -> CascadeReport {
    let mut rows: BTreeMap<(String, Task, Provenance), u64> = BTreeMap::new();
    for e in store.gold().ledger() {
        let entity = store.document(&e.doc_id).map_or("?", |d| d.entity.as_str()).to_string();
        let mut tasks = Vec::new();
        if e.old.polarity != e.new.polarity {
            tasks.push(Task::Polarity);
        }
        if e.old.aspect != e.new.aspect {
            tasks.push(Task::Aspect);
        }
        if tasks.is_empty() {
            tasks.push(Task::Polarity);
        }
        for t in tasks {
            *rows.entry((entity.clone(), t, e.rule)).or_insert(0) += 1;
        }
    }
    CascadeReport {
        rows: rows
            .into_iter()
            .map(|((entity, task, rule), count)| crate::harmonize::ReportRow {
                entity,
                task,
                rule,
                count,
            })
            .collect(),
        assigned: store.gold().assignments().count() as u64,
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AspectLabel, InputRecord, Passage, RawPolarity, Taxonomy};

    fn t0() -> DateTime<Utc> {
        DateTime::from_timestamp(1_335_000_000, 0).unwrap()
    }

    fn store(n: usize) -> CorpusStore {
        let mut s = CorpusStore::new(["FH".to_string()], Taxonomy::default());
        for i in 0..n {
            s.add_document(InputRecord {
                id: format!("d{i}"),
                author: "a".into(),
                timestamp: t0(),
                entity: "FH".into(),
                text: format!("texte numero {i} sur le candidat"),
            })
            .unwrap();
        }
        s
    }

    fn record(doc: &str, annotator: &str, polarity: RawPolarity, span: [usize; 2]) -> AnnotationRecord {
        AnnotationRecord {
            annotation_id: String::new(),
            doc_id: doc.into(),
            annotator_id: annotator.into(),
            passages: vec![Passage {
                span,
                polarity,
                aspect: AspectLabel::new("ENTITY"),
                target_text: String::new(),
            }],
            low_confidence: false,
            mode: Mode::Blind,
            suggestion_shown: None,
            submitted_at: t0(),
        }
    }

    fn item(doc: &str, reason: ReviewReason) -> ReviewItem {
        ReviewItem::new(doc, reason, Task::Polarity)
            .with_suggestion(Some(LabelPair::new(Polarity::Pos, AspectLabel::new("ENTITY"))))
    }

    fn cfg(policy: ModePolicy) -> ServiceConfig {
        ServiceConfig {
            mode_policy: policy,
            ..Default::default()
        }
    }

    #[test]
    fn empty_queue_has_no_task() {
        let mut s = AnnotationService::new(store(2), cfg(ModePolicy::Blind));
        assert!(s.next_task("ann", None, t0()).is_none());
        assert_eq!(
            s.progress(t0()),
            Progress {
                documents: 2,
                ..Default::default()
            }
        );
    }

    #[test]
    fn lease_is_idempotent_and_priority_ordered() {
        let mut s = AnnotationService::new(store(3), cfg(ModePolicy::Blind));
        s.enqueue([
            item("d0", ReviewReason::PoolSample),
            item("d1", ReviewReason::CommitteeSplit),
        ]);
        let a = s.next_task("ann", None, t0()).unwrap();
        assert_eq!(a.lease.doc_id, "d1");
        let b = s.next_task("ann", None, t0() + Duration::seconds(10)).unwrap();
        assert_eq!(a, b);
        // after expiry a new lease is issued
        let c = s.next_task("ann", None, t0() + Duration::seconds(1801)).unwrap();
        assert_ne!(a.lease.task_id, c.lease.task_id);
    }

    #[test]
    fn blind_lease_serializes_without_suggestion() {
        let mut s = AnnotationService::new(store(1), cfg(ModePolicy::Blind));
        s.enqueue([item("d0", ReviewReason::PoolSample)]);
        let v = s.next_task("ann", None, t0()).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert!(!json.contains("suggestion"), "{json}");
        let mut s = AnnotationService::new(store(1), cfg(ModePolicy::Suggested));
        s.enqueue([item("d0", ReviewReason::PoolSample)]);
        let v = s.next_task("ann", None, t0()).unwrap();
        assert!(serde_json::to_string(&v).unwrap().contains("\"suggestion\""));
    }

    #[test]
    fn submission_errors() {
        let mut s = AnnotationService::new(store(1), cfg(ModePolicy::Blind));
        s.enqueue([item("d0", ReviewReason::NoMajority)]);
        let v = s.next_task("ann", None, t0()).unwrap();
        let bad_span = record("d0", "ann", RawPolarity::Neg, [0, 999]);
        let e = s.submit(&v.lease.task_id, bad_span, t0()).unwrap_err();
        assert_eq!(e.code, ErrorCode::Span);
        let mut bad_aspect = record("d0", "ann", RawPolarity::Neg, [0, 4]);
        bad_aspect.passages[0].aspect = AspectLabel::new("weather");
        assert_eq!(
            s.submit(&v.lease.task_id, bad_aspect, t0()).unwrap_err().code,
            ErrorCode::Label
        );
        let late = s
            .submit(
                &v.lease.task_id,
                record("d0", "ann", RawPolarity::Neg, [0, 4]),
                t0() + Duration::hours(1),
            )
            .unwrap_err();
        assert_eq!(late.code, ErrorCode::Lease);
        assert!(s.store().annotations().is_empty());
    }

    #[test]
    fn cap_and_no_repeat() {
        let mut s = AnnotationService::new(store(1), cfg(ModePolicy::Blind));
        s.enqueue([item("d0", ReviewReason::NoMajority)]);
        for (i, ann) in ["a", "b", "c"].iter().enumerate() {
            let v = s.next_task(ann, None, t0()).unwrap();
            s.submit(
                &v.lease.task_id,
                record("d0", ann, RawPolarity::Neg, [0, 4]),
                t0() + Duration::seconds(i as i64),
            )
            .unwrap();
            assert!(s.next_task(ann, None, t0()).is_none());
        }
        assert!(s.next_task("d", None, t0()).is_none());
        let p = s.progress(t0());
        assert_eq!(p.per_annotator.values().sum::<u64>(), 3);
        assert_eq!(p.queued, 0);
    }

    #[test]
    fn concurrent_leases_respect_cap() {
        let mut s = AnnotationService::new(
            store(1),
            ServiceConfig {
                max_annotators: 2,
                ..cfg(ModePolicy::Blind)
            },
        );
        s.enqueue([item("d0", ReviewReason::NoMajority)]);
        assert!(s.next_task("a", None, t0()).is_some());
        assert!(s.next_task("b", None, t0()).is_some());
        assert!(s.next_task("c", None, t0()).is_none());
    }

    #[test]
    fn confirmation_pins_reliable_doc() {
        let mut st = store(1);
        let mut gold = st.gold().clone();
        let label = LabelPair::new(Polarity::Pos, AspectLabel::new("ENTITY"));
        gold.assign("d0", label.clone(), Provenance::Propagated, t0());
        st.commit_gold(gold).unwrap();
        let mut s = AnnotationService::new(st, cfg(ModePolicy::Suggested));
        let mut state = LoopState::new(vec!["d0".to_string()], Vec::<DocId>::new());
        state.reliable.insert("d0".into());
        state.pending.insert("d0".into(), label);
        s.attach_loop(state);
        s.enqueue([item("d0", ReviewReason::ReliableOutlierConfirm)]);
        let v = s.next_task("ann", None, t0()).unwrap();
        let ack = s
            .submit(&v.lease.task_id, record("d0", "ann", RawPolarity::Pos, [0, 4]), t0())
            .unwrap();
        assert_eq!(ack.outcome, Some(ReviewOutcome::Confirm));
        assert!(s.loop_state().unwrap().pinned.contains("d0"));
        assert_eq!(s.progress(t0()).pinned, 1);
    }

    #[test]
    fn split_policy_is_stable_and_balanced() {
        let st = store(400);
        let suggested = st
            .documents()
            .filter(|d| assign_mode(ModePolicy::Split { suggested_share: 0.5 }, d, None) == Mode::Suggested)
            .count();
        assert!((150..=250).contains(&suggested), "{suggested}");
        let d = st.document("d7").unwrap();
        let m = assign_mode(ModePolicy::Split { suggested_share: 0.5 }, d, None);
        assert_eq!(
            m,
            assign_mode(ModePolicy::Split { suggested_share: 0.5 }, d, Some(Mode::Blind))
        );
    }
}
