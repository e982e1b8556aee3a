//! Documents, annotation records and the gold store.

mod gold;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gold::{Assignment, GoldOp, GoldStore};
pub use store::{month_start_back, CorpusStore, IngestReport, InputRecord, Partition, Rejection, SplitSpec};

pub type DocId = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: DocId,
    pub author_id: String,
    pub created_at: DateTime<Utc>,
    pub entity: String,
    pub text: String,
    pub content_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<DocId>,
}

/// Maximum accepted text length, in characters.
pub const MAX_TEXT_CHARS: usize = 1000;

/// Five-level polarity as annotated, plus the ambiguous bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RawPolarity {
    VeryNeg,
    Neg,
    Neu,
    Pos,
    VeryPos,
    Ambiguous,
}

impl RawPolarity {
    pub fn collapse(self) -> Polarity {
        match self {
            RawPolarity::VeryNeg | RawPolarity::Neg => Polarity::Neg,
            RawPolarity::Neu => Polarity::Neu,
            RawPolarity::Pos | RawPolarity::VeryPos => Polarity::Pos,
            RawPolarity::Ambiguous => Polarity::Ambiguous,
        }
    }
}

impl From<Polarity> for RawPolarity {
    fn from(p: Polarity) -> Self {
        match p {
            Polarity::Neg => RawPolarity::Neg,
            Polarity::Neu => RawPolarity::Neu,
            Polarity::Pos => RawPolarity::Pos,
            Polarity::Ambiguous => RawPolarity::Ambiguous,
        }
    }
}

/// Collapsed three-level polarity. The derived order is the fixed class
/// order used for tie-breaking (NEG < NEU < POS).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Polarity {
    Neg,
    Neu,
    Pos,
    Ambiguous,
}

impl Polarity {
    /// The classes of the polarity task.
    pub const CLASSES: [Polarity; 3] = [Polarity::Neg, Polarity::Neu, Polarity::Pos];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Neg => "NEG",
            Polarity::Neu => "NEU",
            Polarity::Pos => "POS",
            Polarity::Ambiguous => "AMBIGUOUS",
        }
    }

    /// NEG and POS are opposite; NEU and AMBIGUOUS oppose nothing.
    pub fn is_opposite(self, other: Polarity) -> bool {
        matches!(
            (self, other),
            (Polarity::Neg, Polarity::Pos) | (Polarity::Pos, Polarity::Neg)
        )
    }

    pub fn class_names() -> Vec<String> {
        Self::CLASSES.iter().map(|p| p.as_str().to_string()).collect()
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NEG" | "NEGATIVE" | "VERY_NEG" => Ok(Polarity::Neg),
            "NEU" | "NEUTRAL" => Ok(Polarity::Neu),
            "POS" | "POSITIVE" | "VERY_POS" => Ok(Polarity::Pos),
            "AMBIGUOUS" | "AMB" => Ok(Polarity::Ambiguous),
            other => Err(Error::InvalidLabel(format!("unknown polarity `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Polarity,
    Aspect,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Polarity => "polarity",
            Task::Aspect => "aspect",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "polarity" | "opinion" => Ok(Task::Polarity),
            "aspect" | "topic" => Ok(Task::Aspect),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

pub const ASPECT_ENTITY: &str = "ENTITY";
pub const ASPECT_NONE: &str = "NONE";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AspectLabel {
    pub aspect: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_aspect: Option<String>,
}

impl AspectLabel {
    pub fn new(aspect: impl Into<String>) -> Self {
        Self {
            aspect: aspect.into(),
            sub_aspect: None,
        }
    }

    pub fn with_sub(aspect: impl Into<String>, sub: impl Into<String>) -> Self {
        Self {
            aspect: aspect.into(),
            sub_aspect: Some(sub.into()),
        }
    }

    pub fn none() -> Self {
        Self::new(ASPECT_NONE)
    }
}

/// Aspect → sub-aspect lists. `ENTITY` and `NONE` are always accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub aspects: BTreeMap<String, Vec<String>>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        let entries: [(&str, &[&str]); 9] = [
            ("attribute", &["polls", "support"]),
            ("assessment", &["balance_sheet", "record"]),
            ("skills", &["competence", "leadership"]),
            ("ethic", &["honesty", "case"]),
            ("injunction", &["vote", "abstention"]),
            ("communication", &["speech", "media"]),
            ("person", &["private_life", "appearance"]),
            ("political_line", &["left", "right", "alliances"]),
            ("project", &["economy", "society", "europe"]),
        ];
        Self {
            aspects: entries
                .iter()
                .map(|(a, subs)| (a.to_string(), subs.iter().map(|s| s.to_string()).collect()))
                .collect(),
        }
    }
}

impl Taxonomy {
    /// Aspect classes in the fixed (byte-wise alphabetical) order.
    pub fn classes(&self) -> Vec<String> {
        let mut classes: Vec<String> = self.aspects.keys().cloned().collect();
        classes.push(ASPECT_ENTITY.to_string());
        classes.push(ASPECT_NONE.to_string());
        classes.sort();
        classes
    }

    pub fn validate(&self, label: &AspectLabel) -> Result<()> {
        if label.aspect == ASPECT_ENTITY || label.aspect == ASPECT_NONE {
            return match &label.sub_aspect {
                None => Ok(()),
                Some(s) => Err(Error::InvalidLabel(format!(
                    "`{}` takes no sub-aspect (got `{s}`)",
                    label.aspect
                ))),
            };
        }
        let subs = self
            .aspects
            .get(&label.aspect)
            .ok_or_else(|| Error::InvalidLabel(format!("unknown aspect `{}`", label.aspect)))?;
        match &label.sub_aspect {
            Some(s) if !subs.contains(s) => Err(Error::InvalidLabel(format!(
                "sub-aspect `{s}` does not belong to `{}`",
                label.aspect
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Blind,
    Suggested,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    /// Character offsets `[start, end)` into the document text.
    pub span: [usize; 2],
    pub polarity: RawPolarity,
    pub aspect: AspectLabel,
    #[serde(default)]
    pub target_text: String,
}

impl Passage {
    pub fn len(&self) -> usize {
        self.span[1].saturating_sub(self.span[0])
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A document-level (polarity, aspect) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelPair {
    pub polarity: Polarity,
    pub aspect: AspectLabel,
}

impl LabelPair {
    pub fn new(polarity: Polarity, aspect: AspectLabel) -> Self {
        Self { polarity, aspect }
    }

    /// Class name of this label for a task.
    pub fn class(&self, task: Task) -> &str {
        match task {
            Task::Polarity => self.polarity.as_str(),
            Task::Aspect => &self.aspect.aspect,
        }
    }

    /// Copy with the class for `task` replaced. A changed aspect drops its
    /// sub-aspect.
    pub fn with_class(&self, task: Task, class: &str) -> Result<Self> {
        let mut out = self.clone();
        match task {
            Task::Polarity => out.polarity = class.parse()?,
            Task::Aspect => {
                if out.aspect.aspect != class {
                    out.aspect = AspectLabel::new(class);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotation_id: String,
    pub doc_id: DocId,
    pub annotator_id: String,
    pub passages: Vec<Passage>,
    #[serde(default)]
    pub low_confidence: bool,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion_shown: Option<LabelPair>,
    pub submitted_at: DateTime<Utc>,
}

impl AnnotationRecord {
    /// Checks spans against the text, the blind-mode invariant and aspects.
    pub fn validate(&self, doc: &Document, taxonomy: &Taxonomy) -> Result<()> {
        if self.doc_id != doc.doc_id {
            return Err(Error::InvalidLabel(format!(
                "record for `{}` checked against `{}`",
                self.doc_id, doc.doc_id
            )));
        }
        let len = doc.text.chars().count();
        for p in &self.passages {
            let [start, end] = p.span;
            if end <= start || end > len {
                return Err(Error::SpanOutOfRange { start, end, len });
            }
            taxonomy.validate(&p.aspect)?;
        }
        if self.mode == Mode::Blind && self.suggestion_shown.is_some() {
            return Err(Error::InvalidLabel("blind annotation cannot carry a suggestion".into()));
        }
        Ok(())
    }
}

/// Where the current gold label of a document comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    HumanMajority,
    RuleNickname,
    RuleHashtag,
    RuleContent,
    RuleProfile,
    Committee,
    Propagated,
    Expert,
    Rejected,
}

impl Provenance {
    pub const ALL: [Provenance; 9] = [
        Provenance::HumanMajority,
        Provenance::RuleNickname,
        Provenance::RuleHashtag,
        Provenance::RuleContent,
        Provenance::RuleProfile,
        Provenance::Committee,
        Provenance::Propagated,
        Provenance::Expert,
        Provenance::Rejected,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::HumanMajority => "HUMAN_MAJORITY",
            Provenance::RuleNickname => "RULE_NICKNAME",
            Provenance::RuleHashtag => "RULE_HASHTAG",
            Provenance::RuleContent => "RULE_CONTENT",
            Provenance::RuleProfile => "RULE_PROFILE",
            Provenance::Committee => "COMMITTEE",
            Provenance::Propagated => "PROPAGATED",
            Provenance::Expert => "EXPERT",
            Provenance::Rejected => "REJECTED",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    pub doc_id: DocId,
    pub old: LabelPair,
    pub new: LabelPair,
    pub rule: Provenance,
    pub actor: String,
    pub at: DateTime<Utc>,
}

impl CorrectionEvent {
    /// `old` may only equal `new` for rejections.
    pub fn is_well_formed(&self) -> bool {
        self.old != self.new || self.rule == Provenance::Rejected
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub doc_id: DocId,
    pub polarity: Polarity,
    pub aspect: AspectLabel,
    pub provenance: Provenance,
    #[serde(default)]
    pub history: Vec<CorrectionEvent>,
}

impl GoldLabel {
    pub fn pair(&self) -> LabelPair {
        LabelPair::new(self.polarity, self.aspect.clone())
    }

    pub fn class(&self, task: Task) -> &str {
        match task {
            Task::Polarity => self.polarity.as_str(),
            Task::Aspect => &self.aspect.aspect,
        }
    }

    pub fn is_rejected(&self) -> bool {
        self.provenance == Provenance::Rejected
    }
}

/// Collapses one annotation record to a single document label.
///
/// Polarity is the plurality over passages. Ties go to the tied polarity
/// owning the longest passage, then to class order. The aspect comes from
/// the longest passage of the winning polarity; equal lengths resolve to the
/// smallest aspect so the result does not depend on passage order.
pub fn reduce_annotation(record: &AnnotationRecord) -> Result<LabelPair> {
    if record.passages.is_empty() {
        return Err(Error::EmptyAnnotation);
    }
    let mut tally: BTreeMap<Polarity, (usize, usize)> = BTreeMap::new();
    for p in &record.passages {
        let e = tally.entry(p.polarity.collapse()).or_insert((0, 0));
        e.0 += 1;
        e.1 = e.1.max(p.len());
    }
    // max by (count, longest), ties to the earliest class in order
    let mut winner = None::<(Polarity, (usize, usize))>;
    for (pol, stats) in &tally {
        match winner {
            Some((_, best)) if *stats <= best => {}
            _ => winner = Some((*pol, *stats)),
        }
    }
    let (polarity, _) = winner.expect("non-empty tally");
    let aspect = record
        .passages
        .iter()
        .filter(|p| p.polarity.collapse() == polarity)
        .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| b.aspect.cmp(&a.aspect)))
        .map(|p| p.aspect.clone())
        .expect("winning polarity has a passage");
    Ok(LabelPair { polarity, aspect })
}
