use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{CorrectionEvent, DocId, GoldLabel, LabelPair, Provenance, Task};

/// First label given to a document that had none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub doc_id: DocId,
    pub label: LabelPair,
    pub provenance: Provenance,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum GoldOp {
    Assign(Assignment),
    Correct(CorrectionEvent),
}

/// Current gold label per document plus the journal that produced it.
///
/// Every mutation goes through [`GoldStore::assign`] or [`GoldStore::apply`]
/// and is journaled, so the store can always be rebuilt from its
/// assignments and its correction ledger.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldStore {
    labels: BTreeMap<DocId, GoldLabel>,
    journal: Vec<GoldOp>,
}

impl GoldStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&GoldLabel> {
        self.labels.get(doc_id)
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.labels.contains_key(doc_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &GoldLabel> + '_ {
        self.labels.values()
    }

    /// Labels usable for training: everything except rejected documents.
    pub fn training_view(&self) -> impl Iterator<Item = &GoldLabel> + '_ {
        self.labels.values().filter(|g| !g.is_rejected())
    }

    pub fn class_of(&self, doc_id: &str, task: Task) -> Option<&str> {
        self.labels
            .get(doc_id)
            .filter(|g| !g.is_rejected())
            .map(|g| g.class(task))
    }

    pub fn journal(&self) -> &[GoldOp] {
        &self.journal
    }

    pub fn assignments(&self) -> impl Iterator<Item = &Assignment> + '_ {
        self.journal.iter().filter_map(|op| match op {
            GoldOp::Assign(a) => Some(a),
            GoldOp::Correct(_) => None,
        })
    }

    /// Correction ledger in application order.
    pub fn ledger(&self) -> impl Iterator<Item = &CorrectionEvent> + '_ {
        self.journal.iter().filter_map(|op| match op {
            GoldOp::Correct(e) => Some(e),
            GoldOp::Assign(_) => None,
        })
    }

    pub fn ledger_len(&self) -> usize {
        self.ledger().count()
    }

    /// Gives a label to a document that has none. Returns `false` (and
    /// changes nothing) when the document is already labeled.
    pub fn assign(&mut self, doc_id: &str, label: LabelPair, provenance: Provenance, at: DateTime<Utc>) -> bool {
        if self.labels.contains_key(doc_id) {
            return false;
        }
        let a = Assignment {
            doc_id: doc_id.to_string(),
            label,
            provenance,
            at,
        };
        self.insert_assignment(&a);
        self.journal.push(GoldOp::Assign(a));
        true
    }

    fn insert_assignment(&mut self, a: &Assignment) {
        self.labels.insert(
            a.doc_id.clone(),
            GoldLabel {
                doc_id: a.doc_id.clone(),
                polarity: a.label.polarity,
                aspect: a.label.aspect.clone(),
                provenance: a.provenance,
                history: Vec::new(),
            },
        );
    }

    fn insert_correction(&mut self, event: &CorrectionEvent) {
        let entry = self.labels.entry(event.doc_id.clone()).or_insert_with(|| GoldLabel {
            doc_id: event.doc_id.clone(),
            polarity: event.old.polarity,
            aspect: event.old.aspect.clone(),
            provenance: Provenance::HumanMajority,
            history: Vec::new(),
        });
        entry.polarity = event.new.polarity;
        entry.aspect = event.new.aspect.clone();
        entry.provenance = event.rule;
        entry.history.push(event.clone());
    }

    /// Applies a correction. Events whose `old` equals `new` are ignored
    /// unless they reject the document or reinstate a rejected one.
    pub fn apply(&mut self, event: CorrectionEvent) -> bool {
        let reinstates = self.get(&event.doc_id).is_some_and(GoldLabel::is_rejected);
        if !event.is_well_formed() && !reinstates {
            return false;
        }
        self.insert_correction(&event);
        self.journal.push(GoldOp::Correct(event));
        true
    }

    /// Replays a journal from scratch.
    pub fn from_journal(ops: impl IntoIterator<Item = GoldOp>) -> Self {
        let mut store = Self::new();
        for op in ops {
            store.push_op(op);
        }
        store
    }

    pub(crate) fn push_op(&mut self, op: GoldOp) {
        match &op {
            GoldOp::Assign(a) => {
                if self.labels.contains_key(&a.doc_id) {
                    return;
                }
                self.insert_assignment(a);
            }
            GoldOp::Correct(e) => self.insert_correction(e),
        }
        self.journal.push(op);
    }

    /// Rebuilds a store from initial assignments followed by a correction
    /// ledger. Assignments always precede corrections of the same document,
    /// so the two sequences can be replayed one after the other.
    pub fn replay<'a>(
        assignments: impl IntoIterator<Item = &'a Assignment>,
        ledger: impl IntoIterator<Item = &'a CorrectionEvent>,
    ) -> Self {
        let mut store = Self::new();
        for a in assignments {
            store.assign(&a.doc_id, a.label.clone(), a.provenance, a.at);
        }
        for e in ledger {
            store.apply(e.clone());
        }
        store
    }

    /// Labels only (no journal), for equality checks between stores built
    /// along different routes.
    pub fn labels(&self) -> &BTreeMap<DocId, GoldLabel> {
        &self.labels
    }
}
