use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, TimeZone, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, DocId, Document, GoldOp, GoldStore, Taxonomy, MAX_TEXT_CHARS};
use crate::error::{Error, Result};
use crate::textproc::content_hash;

/// One line of the document input format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub id: String,
    pub author: String,
    pub timestamp: DateTime<Utc>,
    pub entity: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogEntry {
    Document(Document),
    Annotation(AnnotationRecord),
    Gold(GoldOp),
}

struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogWriter {
    fn append(&mut self, entry: &LogEntry) -> Result<()> {
        serde_json::to_writer(&mut self.out, entry)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn sync(&mut self) -> Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(())
    }
}

/// Chronological split boundaries: `train < dev_start <= dev < test_start <= test`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dev_start: Option<DateTime<Utc>>,
    pub test_start: Option<DateTime<Utc>>,
}

impl SplitSpec {
    pub fn train_test(test_start: DateTime<Utc>) -> Self {
        Self {
            dev_start: None,
            test_start: Some(test_start),
        }
    }

    /// Dev set made of the last `months` calendar months up to `latest`.
    pub fn dev_last_months(latest: DateTime<Utc>, months: u32) -> Self {
        Self {
            dev_start: Some(month_start_back(latest, months.saturating_sub(1))),
            test_start: None,
        }
    }
}

/// First instant of the month `back` months before the month of `ts`.
pub fn month_start_back(ts: DateTime<Utc>, back: u32) -> DateTime<Utc> {
    let total = ts.year() * 12 + ts.month0() as i32 - back as i32;
    Utc.with_ymd_and_hms(total.div_euclid(12), total.rem_euclid(12) as u32 + 1, 1, 0, 0, 0)
        .single()
        .expect("valid month start")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub train: BTreeSet<DocId>,
    pub dev: BTreeSet<DocId>,
    pub test: BTreeSet<DocId>,
    pub warnings: Vec<String>,
}

/// Single-writer document, annotation and gold store backed by an optional
/// append-only log. Readers borrow it immutably; writers need `&mut`.
pub struct CorpusStore {
    entities: BTreeSet<String>,
    taxonomy: Taxonomy,
    docs: BTreeMap<DocId, Document>,
    by_hash: HashMap<String, Vec<DocId>>,
    annotations: Vec<AnnotationRecord>,
    annotation_ids: BTreeSet<String>,
    by_doc: HashMap<DocId, Vec<usize>>,
    gold: GoldStore,
    log: Option<LogWriter>,
}

impl std::fmt::Debug for CorpusStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorpusStore")
            .field("documents", &self.docs.len())
            .field("annotations", &self.annotations.len())
            .field("gold", &self.gold.len())
            .field("log", &self.log.as_ref().map(|l| &l.path))
            .finish()
    }
}

impl CorpusStore {
    /// In-memory store. An empty entity list accepts any entity.
    pub fn new(entities: impl IntoIterator<Item = String>, taxonomy: Taxonomy) -> Self {
        Self {
            entities: entities.into_iter().collect(),
            taxonomy,
            docs: BTreeMap::new(),
            by_hash: HashMap::new(),
            annotations: Vec::new(),
            annotation_ids: BTreeSet::new(),
            by_doc: HashMap::new(),
            gold: GoldStore::new(),
            log: None,
        }
    }

    /// Opens (or creates) a log-backed store and rebuilds the index from the
    /// log.
    pub fn open(path: &Path, entities: impl IntoIterator<Item = String>, taxonomy: Taxonomy) -> Result<Self> {
        let mut store = Self::new(entities, taxonomy);
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let mut gold_ops = Vec::new();
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: LogEntry = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                match entry {
                    LogEntry::Document(doc) => store.insert_document(doc),
                    LogEntry::Annotation(rec) => store.insert_annotation(rec),
                    LogEntry::Gold(op) => gold_ops.push(op),
                }
            }
            store.gold = GoldStore::from_journal(gold_ops);
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        store.log = Some(LogWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        });
        Ok(store)
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn entities(&self) -> Vec<String> {
        if self.entities.is_empty() {
            let seen: BTreeSet<String> = self.docs.values().map(|d| d.entity.clone()).collect();
            seen.into_iter().collect()
        } else {
            self.entities.iter().cloned().collect()
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.docs.get(doc_id)
    }

    /// Documents in id order.
    pub fn documents(&self) -> impl Iterator<Item = &Document> + '_ {
        self.docs.values()
    }

    /// Documents sharing a content hash, canonical document first.
    pub fn content_group(&self, hash: &str) -> Vec<&Document> {
        self.by_hash
            .get(hash)
            .map(|ids| ids.iter().filter_map(|id| self.docs.get(id)).collect())
            .unwrap_or_default()
    }

    /// Content hashes with their documents, in hash order.
    pub fn content_groups(&self) -> BTreeMap<&str, Vec<&Document>> {
        self.by_hash
            .iter()
            .map(|(h, ids)| (h.as_str(), ids.iter().filter_map(|id| self.docs.get(id)).collect()))
            .collect()
    }

    pub fn annotations(&self) -> &[AnnotationRecord] {
        &self.annotations
    }

    pub fn annotations_for(&self, doc_id: &str) -> impl Iterator<Item = &AnnotationRecord> + '_ {
        self.by_doc
            .get(doc_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.annotations[i])
    }

    /// All annotations of every document with this content hash.
    pub fn annotations_for_content(&self, hash: &str) -> Vec<&AnnotationRecord> {
        let mut out: Vec<&AnnotationRecord> = self
            .by_hash
            .get(hash)
            .into_iter()
            .flatten()
            .flat_map(|id| self.annotations_for(id))
            .collect();
        out.sort_by(|a, b| {
            a.submitted_at
                .cmp(&b.submitted_at)
                .then_with(|| a.annotation_id.cmp(&b.annotation_id))
        });
        out
    }

    pub fn gold(&self) -> &GoldStore {
        &self.gold
    }

    fn insert_document(&mut self, mut doc: Document) {
        doc.duplicate_of = None;
        let hash = doc.content_hash.clone();
        self.docs.insert(doc.doc_id.clone(), doc.clone());
        self.by_hash.entry(hash.clone()).or_default().push(doc.doc_id);
        self.relink(&hash);
    }

    /// Re-derives `duplicate_of` for one content group: the earliest document
    /// (by timestamp, then id) is canonical.
    fn relink(&mut self, hash: &str) {
        let Some(ids) = self.by_hash.get_mut(hash) else {
            return;
        };
        let docs = &self.docs;
        ids.sort_by(|a, b| {
            let (da, db) = (&docs[a], &docs[b]);
            da.created_at.cmp(&db.created_at).then_with(|| a.cmp(b))
        });
        let canonical = ids[0].clone();
        for id in ids.iter() {
            let d = self.docs.get_mut(id).expect("indexed doc");
            d.duplicate_of = if *id == canonical {
                None
            } else {
                Some(canonical.clone())
            };
        }
    }

    fn insert_annotation(&mut self, rec: AnnotationRecord) {
        let idx = self.annotations.len();
        self.annotation_ids.insert(rec.annotation_id.clone());
        self.by_doc.entry(rec.doc_id.clone()).or_default().push(idx);
        self.annotations.push(rec);
    }

    fn document_from_record(&self, rec: InputRecord) -> std::result::Result<Document, String> {
        if rec.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.docs.contains_key(&rec.id) {
            return Err(format!("duplicate document id `{}`", rec.id));
        }
        if !self.entities.is_empty() && !self.entities.contains(&rec.entity) {
            return Err(format!("unknown entity `{}`", rec.entity));
        }
        if rec.text.chars().count() > MAX_TEXT_CHARS {
            return Err(format!("text longer than {MAX_TEXT_CHARS} characters"));
        }
        Ok(Document {
            content_hash: content_hash(&rec.text),
            doc_id: rec.id,
            author_id: rec.author,
            created_at: rec.timestamp,
            entity: rec.entity,
            text: rec.text,
            duplicate_of: None,
        })
    }

    /// Adds one document record.
    pub fn add_document(&mut self, rec: InputRecord) -> Result<&Document> {
        let id = rec.id.clone();
        let doc = self.document_from_record(rec).map_err(|reason| {
            if self.docs.contains_key(&id) {
                Error::DuplicateDocument(id.clone())
            } else {
                Error::MalformedRecord {
                    line: 0,
                    message: reason,
                }
            }
        })?;
        if let Some(log) = &mut self.log {
            log.append(&LogEntry::Document(doc.clone()))?;
            log.sync()?;
        }
        self.insert_document(doc);
        Ok(&self.docs[&id])
    }

    /// Reads newline-delimited document records. Bad lines are rejected
    /// individually; the rest are accepted.
    pub fn ingest<R: BufRead>(&mut self, reader: R) -> Result<IngestReport> {
        let mut report = IngestReport::default();
        let mut pending = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<InputRecord>(&line)
                .map_err(|e| e.to_string())
                .and_then(|rec| self.document_from_record(rec));
            match parsed {
                Ok(doc) if pending.iter().any(|d: &Document| d.doc_id == doc.doc_id) => {
                    report.rejected.push(Rejection {
                        line: i + 1,
                        reason: format!("duplicate document id `{}`", doc.doc_id),
                    });
                }
                Ok(doc) => pending.push(doc),
                Err(reason) => report.rejected.push(Rejection { line: i + 1, reason }),
            }
        }
        if let Some(log) = &mut self.log {
            for doc in &pending {
                log.append(&LogEntry::Document(doc.clone()))?;
            }
            log.sync()?;
        }
        report.accepted = pending.len();
        for doc in pending {
            self.insert_document(doc);
        }
        for r in &report.rejected {
            warn!("ingest: line {} rejected: {}", r.line, r.reason);
        }
        Ok(report)
    }

    /// Validates and durably stores an annotation record.
    pub fn add_annotation(&mut self, rec: AnnotationRecord) -> Result<()> {
        let doc = self
            .docs
            .get(&rec.doc_id)
            .ok_or_else(|| Error::UnknownDocument(rec.doc_id.clone()))?;
        rec.validate(doc, &self.taxonomy)?;
        if self.annotation_ids.contains(&rec.annotation_id) {
            return Err(Error::InvalidLabel(format!(
                "duplicate annotation id `{}`",
                rec.annotation_id
            )));
        }
        if let Some(log) = &mut self.log {
            log.append(&LogEntry::Annotation(rec.clone()))?;
            log.sync()?;
        }
        self.insert_annotation(rec);
        Ok(())
    }

    /// Reads newline-delimited annotation records.
    pub fn ingest_annotations<R: BufRead>(&mut self, reader: R) -> Result<IngestReport> {
        let mut report = IngestReport::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let outcome = serde_json::from_str::<AnnotationRecord>(&line)
                .map_err(Error::from)
                .and_then(|rec| self.add_annotation(rec));
            match outcome {
                Ok(()) => report.accepted += 1,
                Err(e) => report.rejected.push(Rejection {
                    line: i + 1,
                    reason: e.to_string(),
                }),
            }
        }
        Ok(report)
    }

    /// Replaces the gold store with a successor whose journal extends the
    /// current one, logging the new operations.
    pub fn commit_gold(&mut self, next: GoldStore) -> Result<()> {
        let old = self.gold.journal();
        let new = next.journal();
        if new.len() < old.len() || new[..old.len()] != *old {
            return Err(Error::Config("gold journal does not extend the stored journal".into()));
        }
        if let Some(log) = &mut self.log {
            for op in &new[old.len()..] {
                log.append(&LogEntry::Gold(op.clone()))?;
            }
            log.sync()?;
        }
        self.gold = next;
        Ok(())
    }

    /// Assigns every non-rejected document to one chronological split.
    pub fn partition(&self, spec: &SplitSpec) -> Partition {
        let mut part = Partition::default();
        if let (Some(d), Some(t)) = (spec.dev_start, spec.test_start) {
            if d > t {
                part.warnings
                    .push("dev boundary after test boundary; dev split is empty".into());
            }
        }
        let (min, max) = match (
            self.docs.values().map(|d| d.created_at).min(),
            self.docs.values().map(|d| d.created_at).max(),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => return part,
        };
        for b in [spec.dev_start, spec.test_start].into_iter().flatten() {
            if b < min || b > max {
                part.warnings
                    .push(format!("boundary {b} outside corpus range [{min}, {max}]"));
            }
        }
        for w in &part.warnings {
            warn!("partition: {w}");
        }
        for doc in self.docs.values() {
            if self.gold.get(&doc.doc_id).is_some_and(|g| g.is_rejected()) {
                continue;
            }
            let ts = doc.created_at;
            let in_test = spec.test_start.is_some_and(|t| ts >= t);
            let in_dev = !in_test && spec.dev_start.is_some_and(|d| ts >= d);
            let set = if in_test {
                &mut part.test
            } else if in_dev {
                &mut part.dev
            } else {
                &mut part.train
            };
            set.insert(doc.doc_id.clone());
        }
        part
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AspectLabel, LabelPair, Mode, Passage, Polarity, Provenance, RawPolarity};
    use chrono::Duration;

    fn ts(month: u32, day: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2012, month, day, 12, 0, 0).unwrap()
    }

    fn line(id: &str, text: &str, at: DateTime<Utc>) -> String {
        serde_json::to_string(&InputRecord {
            id: id.into(),
            author: "@u".into(),
            timestamp: at,
            entity: "FH".into(),
            text: text.into(),
        })
        .unwrap()
    }

    fn store() -> CorpusStore {
        CorpusStore::new(["FH".to_string(), "NS".to_string()], Taxonomy::default())
    }

    #[test]
    fn duplicates_link_to_earliest() {
        let mut s = store();
        let input = [
            line("b", "RT @x: Bravo FH", ts(3, 2)),
            line("a", "bravo   fh", ts(3, 1)),
            line("c", "autre chose", ts(3, 3)),
        ]
        .join("\n");
        let report = s.ingest(input.as_bytes()).unwrap();
        assert_eq!(report.accepted, 3);
        assert_eq!(s.document("a").unwrap().duplicate_of, None);
        assert_eq!(s.document("b").unwrap().duplicate_of.as_deref(), Some("a"));
        assert_eq!(s.document("c").unwrap().duplicate_of, None);
    }

    #[test]
    fn empty_input_accepts_nothing() {
        let mut s = store();
        let report = s.ingest("".as_bytes()).unwrap();
        assert_eq!(report, IngestReport::default());
        assert!(s.is_empty());
    }

    #[test]
    fn malformed_and_duplicate_lines_rejected_with_line_numbers() {
        let mut s = store();
        let input = [
            line("a", "x", ts(3, 1)),
            "{not json".to_string(),
            line("a", "y", ts(3, 1)),
            line("z", "w", ts(3, 1)).replace("FH", "XX"),
        ]
        .join("\n");
        let report = s.ingest(input.as_bytes()).unwrap();
        assert_eq!(report.accepted, 1);
        let lines: Vec<usize> = report.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![2, 3, 4]);
        assert_eq!(s.document("a").unwrap().text, "x");
    }

    #[test]
    fn ingest_is_idempotent() {
        let mut s = store();
        let input = (0..20)
            .map(|i| line(&format!("d{i}"), &format!("text {}", i % 7), ts(4, 1 + i)))
            .collect::<Vec<_>>()
            .join("\n");
        s.ingest(input.as_bytes()).unwrap();
        let before: Vec<Document> = s.documents().cloned().collect();
        let again = s.ingest(input.as_bytes()).unwrap();
        assert_eq!(again.accepted, 0);
        assert_eq!(again.rejected.len(), 20);
        let after: Vec<Document> = s.documents().cloned().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn one_canonical_per_hash() {
        let mut s = store();
        let input = (0..50)
            .map(|i| {
                line(
                    &format!("d{i:02}"),
                    &format!("t{}", i % 9),
                    ts(5, 1) + Duration::hours(50 - i),
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        s.ingest(input.as_bytes()).unwrap();
        for (_, docs) in s.content_groups() {
            assert_eq!(docs.iter().filter(|d| d.duplicate_of.is_none()).count(), 1);
            let canonical = docs[0];
            assert!(docs.iter().all(|d| d.created_at >= canonical.created_at));
        }
    }

    #[test]
    fn partition_boundaries() {
        let mut s = store();
        let input = (0..10)
            .map(|i| line(&format!("d{i}"), &format!("t{i}"), ts(3, 1 + i)))
            .collect::<Vec<_>>()
            .join("\n");
        s.ingest(input.as_bytes()).unwrap();
        let p = s.partition(&SplitSpec::train_test(ts(3, 8)));
        assert_eq!((p.train.len(), p.dev.len(), p.test.len()), (7, 0, 3));
        let all = s.partition(&SplitSpec::train_test(ts(12, 1)));
        assert_eq!(all.train.len(), 10);
        assert!(!all.warnings.is_empty());
    }

    #[test]
    fn dev_is_last_three_months() {
        let mut s = store();
        let input = (1..=12)
            .flat_map(|m| (0..3).map(move |k| (m, k)))
            .map(|(m, k)| line(&format!("m{m:02}k{k}"), &format!("t{m} {k}"), ts(m, 5 + k)))
            .collect::<Vec<_>>()
            .join("\n");
        s.ingest(input.as_bytes()).unwrap();
        let latest = s.documents().map(|d| d.created_at).max().unwrap();
        let p = s.partition(&SplitSpec::dev_last_months(latest, 3));
        assert_eq!(p.dev.len(), 9);
        assert!(p
            .dev
            .iter()
            .all(|id| id.starts_with("m10") || id.starts_with("m11") || id.starts_with("m12")));
        assert_eq!(p.train.len(), 27);
    }

    #[test]
    fn partition_skips_rejected() {
        let mut s = store();
        s.ingest(
            [line("a", "x", ts(3, 1)), line("b", "y", ts(3, 2))]
                .join("\n")
                .as_bytes(),
        )
        .unwrap();
        let mut g = s.gold().clone();
        let pair = LabelPair::new(Polarity::Neg, AspectLabel::none());
        g.assign("a", pair.clone(), Provenance::HumanMajority, ts(6, 1));
        g.apply(crate::corpus::CorrectionEvent {
            doc_id: "a".into(),
            old: pair.clone(),
            new: pair,
            rule: Provenance::Rejected,
            actor: "committee".into(),
            at: ts(6, 1),
        });
        s.commit_gold(g).unwrap();
        let p = s.partition(&SplitSpec::default());
        assert_eq!(p.train.into_iter().collect::<Vec<_>>(), vec!["b".to_string()]);
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.log");
        {
            let mut s = CorpusStore::open(&path, ["FH".to_string()], Taxonomy::default()).unwrap();
            s.ingest(
                [line("a", "RT @z: hello", ts(3, 2)), line("b", "hello", ts(3, 1))]
                    .join("\n")
                    .as_bytes(),
            )
            .unwrap();
            s.add_annotation(AnnotationRecord {
                annotation_id: "n1".into(),
                doc_id: "a".into(),
                annotator_id: "u1".into(),
                passages: vec![Passage {
                    span: [0, 3],
                    polarity: RawPolarity::Pos,
                    aspect: AspectLabel::new("ethic"),
                    target_text: "FH".into(),
                }],
                low_confidence: false,
                mode: Mode::Blind,
                suggestion_shown: None,
                submitted_at: ts(6, 1),
            })
            .unwrap();
            let mut g = s.gold().clone();
            g.assign(
                "a",
                LabelPair::new(Polarity::Pos, AspectLabel::new("ethic")),
                Provenance::HumanMajority,
                ts(6, 2),
            );
            s.commit_gold(g).unwrap();
        }
        let s = CorpusStore::open(&path, ["FH".to_string()], Taxonomy::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.document("a").unwrap().duplicate_of.as_deref(), Some("b"));
        assert_eq!(s.annotations().len(), 1);
        assert_eq!(s.gold().get("a").unwrap().polarity, Polarity::Pos);
    }

    #[test]
    fn annotation_span_checked() {
        let mut s = store();
        s.ingest(line("a", "abc", ts(3, 1)).as_bytes()).unwrap();
        let rec = AnnotationRecord {
            annotation_id: "n1".into(),
            doc_id: "a".into(),
            annotator_id: "u1".into(),
            passages: vec![Passage {
                span: [1, 9],
                polarity: RawPolarity::Pos,
                aspect: AspectLabel::new("ethic"),
                target_text: String::new(),
            }],
            low_confidence: false,
            mode: Mode::Blind,
            suggestion_shown: None,
            submitted_at: ts(6, 1),
        };
        assert!(matches!(s.add_annotation(rec), Err(Error::SpanOutOfRange { .. })));
    }

    #[test]
    fn month_arithmetic() {
        assert_eq!(
            month_start_back(ts(3, 15), 2),
            Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).unwrap()
        );
        assert_eq!(
            month_start_back(ts(2, 15), 3),
            Utc.with_ymd_and_hms(2011, 11, 1, 0, 0, 0).unwrap()
        );
    }
}
