//! Correction cascade: majority voting, lexicon and profile rules, and the
//! classifier committee.

mod cascade;
mod rules;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{DocId, LabelPair, Polarity, Task};

pub use cascade::{
    committee_correction, loo_verdicts, run_cascade, CascadeOutcome, CascadeReport, CommitteeDecision, ReportRow,
};
pub use rules::{
    content_rule, hashtag_rule, nickname_rule, profile_rule, AuthorProfile, AuthorProfiles, ContentParams, RuleAction,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReviewReason {
    NoMajority,
    CommitteeSplit,
    ProfileConflict,
    ContentConflict,
    ReliableOutlierConfirm,
    /// Routine sample of automatic labels sent for confirmation.
    PoolSample,
}

/// Where a review item is routed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewQueue {
    Reannotation,
    Confirmation,
}

impl ReviewReason {
    pub fn queue(self) -> ReviewQueue {
        match self {
            ReviewReason::ReliableOutlierConfirm | ReviewReason::PoolSample => ReviewQueue::Confirmation,
            _ => ReviewQueue::Reannotation,
        }
    }

    /// Serving priority, lower first.
    pub fn priority(self) -> u8 {
        match self {
            ReviewReason::CommitteeSplit => 0,
            ReviewReason::NoMajority => 1,
            ReviewReason::ProfileConflict | ReviewReason::ContentConflict => 2,
            ReviewReason::ReliableOutlierConfirm => 3,
            ReviewReason::PoolSample => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReviewReason::NoMajority => "NO_MAJORITY",
            ReviewReason::CommitteeSplit => "COMMITTEE_SPLIT",
            ReviewReason::ProfileConflict => "PROFILE_CONFLICT",
            ReviewReason::ContentConflict => "CONTENT_CONFLICT",
            ReviewReason::ReliableOutlierConfirm => "RELIABLE_OUTLIER_CONFIRM",
            ReviewReason::PoolSample => "POOL_SAMPLE",
        }
    }
}

impl fmt::Display for ReviewReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub doc_id: DocId,
    pub reason: ReviewReason,
    pub task: Task,
    /// Candidate labels with their scores, best first.
    pub candidates: Vec<(String, f64)>,
    /// Label proposed to annotators working in suggested mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<LabelPair>,
}

impl ReviewItem {
    pub fn new(doc_id: &str, reason: ReviewReason, task: Task) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            reason,
            task,
            candidates: Vec::new(),
            suggestion: None,
        }
    }

    pub fn with_candidates(mut self, candidates: Vec<(String, f64)>) -> Self {
        self.candidates = candidates;
        self
    }

    pub fn with_suggestion(mut self, suggestion: Option<LabelPair>) -> Self {
        self.suggestion = suggestion;
        self
    }
}

/// Majority rule over the labels given to one content: a label wins when its
/// frequency is above 1 / (number of distinct labels). A content with a
/// single distinct label takes it. When several labels pass the threshold the
/// most frequent wins, and a tie between them is no majority.
pub fn majority_label<T: Ord + Clone>(labels: &[T]) -> Option<T> {
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let distinct = counts.len();
    match distinct {
        0 => None,
        1 => counts.keys().next().map(|l| (*l).clone()),
        _ => {
            let n = labels.len();
            // count / n > 1 / distinct
            let passing: Vec<(&T, usize)> = counts.into_iter().filter(|(_, c)| c * distinct > n).collect();
            let top = passing.iter().map(|(_, c)| *c).max()?;
            let mut winners = passing.iter().filter(|(_, c)| *c == top);
            let first = winners.next()?;
            if winners.next().is_some() {
                None
            } else {
                Some(first.0.clone())
            }
        }
    }
}

/// Polarities that take part in the cascade (AMBIGUOUS is dropped).
pub fn is_decisive(p: Polarity) -> bool {
    p != Polarity::Ambiguous
}
