use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use super::{DocFeatures, ScoreVector};
use crate::textproc::BowVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    Jaccard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedDoc {
    pub doc_id: String,
    pub created_at: DateTime<Utc>,
    pub label: String,
    pub bow: BowVector,
    /// Sorted, deduplicated raw terms.
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub doc_id: String,
    pub label: String,
    pub similarity: f64,
}

/// Training documents for nearest-neighbor voting, kept in
/// (timestamp, id) order with an inverted index over raw and weighted terms.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KnnIndex {
    docs: Vec<IndexedDoc>,
    #[serde(skip)]
    postings: HashMap<String, Vec<u32>>,
}

impl PartialEq for KnnIndex {
    fn eq(&self, other: &Self) -> bool {
        self.docs == other.docs
    }
}

/// |A ∩ B| / |A ∪ B| over sorted term slices; 0 when both are empty.
pub fn jaccard_sorted(a: &[String], b: &[String]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

impl KnnIndex {
    pub fn new(mut docs: Vec<IndexedDoc>) -> Self {
        docs.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.doc_id.cmp(&b.doc_id)));
        let mut index = Self {
            docs,
            postings: HashMap::new(),
        };
        index.rebuild_postings();
        index
    }

    pub(crate) fn rebuild_postings(&mut self) {
        self.postings.clear();
        for (i, d) in self.docs.iter().enumerate() {
            let mut keys: Vec<&str> = d.terms.iter().map(String::as_str).chain(d.bow.terms()).collect();
            keys.sort_unstable();
            keys.dedup();
            for t in keys {
                self.postings.entry(t.to_string()).or_default().push(i as u32);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[IndexedDoc] {
        &self.docs
    }

    fn similarity(&self, i: usize, query_bow: &BowVector, query_terms: &[String], metric: Metric) -> f64 {
        let d = &self.docs[i];
        match metric {
            Metric::Cosine => query_bow.cosine(&d.bow),
            Metric::Jaccard => jaccard_sorted(query_terms, &d.terms),
        }
    }

    /// The `k` most similar documents, by similarity descending, then
    /// earlier timestamp, then id. Documents sharing no term have similarity
    /// zero and only fill the list when fewer than `k` documents overlap.
    pub fn neighbors(&self, query_bow: &BowVector, query_terms: &[String], k: usize, metric: Metric) -> Vec<Neighbor> {
        let k = k.max(1);
        if k > self.docs.len() {
            warn!(
                "knn: K={k} exceeds index size {}; using the whole index",
                self.docs.len()
            );
        }
        let mut candidates: Vec<usize> = query_terms
            .iter()
            .map(String::as_str)
            .chain(query_bow.terms())
            .filter_map(|t| self.postings.get(t))
            .flatten()
            .map(|&i| i as usize)
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        let mut scored: Vec<(usize, f64)> = candidates
            .into_iter()
            .map(|i| (i, self.similarity(i, query_bow, query_terms, metric)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        // index order already encodes (timestamp, id)
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        if scored.len() < k {
            let taken: std::collections::HashSet<usize> = scored.iter().map(|(i, _)| *i).collect();
            let fill = (0..self.docs.len())
                .filter(|i| !taken.contains(i))
                .take(k - scored.len())
                .map(|i| (i, 0.0))
                .collect::<Vec<_>>();
            scored.extend(fill);
        }
        scored
            .into_iter()
            .map(|(i, s)| Neighbor {
                doc_id: self.docs[i].doc_id.clone(),
                label: self.docs[i].label.clone(),
                similarity: s,
            })
            .collect()
    }

    /// Similarity-weighted votes of the `k` nearest neighbors.
    pub fn vote(
        &self,
        classes: &[String],
        features: &DocFeatures,
        bow: &BowVector,
        k: usize,
        metric: Metric,
        id: &str,
    ) -> ScoreVector {
        let terms = features.term_list();
        let mut scores: BTreeMap<String, f64> = classes.iter().map(|c| (c.clone(), 0.0)).collect();
        for n in self.neighbors(bow, terms, k, metric) {
            if let Some(s) = scores.get_mut(&n.label) {
                *s += n.similarity;
            }
        }
        ScoreVector::new(id, scores)
    }
}
