use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ReviewItem, ReviewReason};
use crate::classifiers::DocFeatures;
use crate::corpus::{Document, GoldStore, Polarity, Task};
use crate::textproc::{gini_of_counts, Confidence, GiniForm, Lexicons, TermStats};

/// Outcome of a lexicon rule on one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleAction {
    /// Nothing applies.
    None,
    /// Hard evidence agrees with the current label.
    Agree,
    Correct(Polarity),
    Review(ReviewReason),
}

/// Shared decision for lexicon matches: `(polarity, confidence)` of every
/// entry that applies to the document.
fn decide(matches: &[(Polarity, Confidence)], current: Polarity, reason: ReviewReason) -> RuleAction {
    if matches.is_empty() {
        return RuleAction::None;
    }
    let opposing: Vec<&(Polarity, Confidence)> = matches.iter().filter(|(p, _)| p.is_opposite(current)).collect();
    if opposing.is_empty() {
        let hard_agree = matches.iter().any(|(p, c)| *p == current && *c == Confidence::Hard);
        return if hard_agree {
            RuleAction::Agree
        } else {
            RuleAction::None
        };
    }
    let conflicting =
        matches.iter().any(|(p, _)| *p == current) || matches.iter().any(|(p, _)| p.is_opposite(opposing[0].0));
    if conflicting {
        return RuleAction::Review(reason);
    }
    if opposing.iter().any(|(_, c)| *c == Confidence::Hard) {
        RuleAction::Correct(opposing[0].0)
    } else {
        RuleAction::Review(reason)
    }
}

/// Nickname patterns matching the author or a mentioned account, for the
/// document's entity.
pub fn nickname_rule(doc: &Document, mentions: &[String], lexicons: &Lexicons, current: Polarity) -> RuleAction {
    let handles: Vec<&str> = std::iter::once(doc.author_id.as_str())
        .chain(mentions.iter().map(String::as_str))
        .collect();
    let matches: Vec<(Polarity, Confidence)> = lexicons
        .nicknames()
        .iter()
        .filter(|n| n.entity == doc.entity && handles.iter().any(|h| n.matches(h)))
        .map(|n| (n.polarity, n.confidence))
        .collect();
    decide(&matches, current, ReviewReason::ProfileConflict)
}

/// Sentiment and sentiment-topic hashtags that apply to the document's entity.
pub fn hashtag_rule(entity: &str, hashtags: &[String], lexicons: &Lexicons, current: Polarity) -> RuleAction {
    let matches: Vec<(Polarity, Confidence)> = hashtags
        .iter()
        .filter_map(|t| lexicons.sentiment_of(t))
        .filter(|e| e.entity.as_deref().is_none_or(|x| x == entity))
        .map(|e| (e.polarity, e.confidence))
        .collect();
    decide(&matches, current, ReviewReason::ContentConflict)
}

/// Content-rule thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContentParams {
    pub theta: f64,
    pub top_m: usize,
    pub min_support: f64,
    pub form: GiniForm,
}

/// Flags a document whose most discriminant terms all point to another
/// class. `counted` says whether `stats` includes this document under
/// `label`; its own occurrences are then removed before judging.
pub fn content_rule(
    features: &DocFeatures,
    stats: &TermStats,
    label: &str,
    counted: bool,
    task: Task,
    params: ContentParams,
) -> Option<ReviewItem> {
    let classes = stats.classes();
    let own = stats.class_index(label)?;
    let mut scored: Vec<(&str, f64, usize)> = Vec::new();
    for (term, &x) in &features.counts {
        let Some(counts) = stats.class_counts(term) else {
            continue;
        };
        let mut counts = counts.to_vec();
        if counted {
            counts[own] = (counts[own] - x).max(0.0);
        }
        if counts.iter().sum::<f64>() < params.min_support {
            continue;
        }
        let Some(g) = gini_of_counts(&counts, params.form) else {
            continue;
        };
        let mut arg = 0;
        for (i, &c) in counts.iter().enumerate() {
            if c > counts[arg] {
                arg = i;
            }
        }
        scored.push((term, g, arg));
    }
    if scored.is_empty() {
        return None;
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.truncate(params.top_m.max(1));
    let conflicting = scored.iter().all(|(_, g, arg)| *arg != own && *g >= params.theta);
    if !conflicting {
        return None;
    }
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for (_, g, arg) in &scored {
        let e = best.entry(classes[*arg].as_str()).or_insert(0.0);
        *e = e.max(*g);
    }
    let mut candidates: Vec<(String, f64)> = best.into_iter().map(|(c, g)| (c.to_string(), g)).collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
    Some(ReviewItem::new(&features.doc_id, ReviewReason::ContentConflict, task).with_candidates(candidates))
}

/// Per-entity polarity histogram of one author's gold-labeled documents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuthorProfile {
    pub author_id: String,
    pub histograms: BTreeMap<String, BTreeMap<Polarity, u64>>,
}

impl AuthorProfile {
    pub fn count(&self, entity: &str) -> u64 {
        self.histograms.get(entity).map_or(0, |h| h.values().sum())
    }

    /// Dominant polarity and its share, ties to class order.
    pub fn dominant(&self, entity: &str) -> Option<(Polarity, f64)> {
        let h = self.histograms.get(entity)?;
        let total: u64 = h.values().sum();
        if total == 0 {
            return None;
        }
        let mut best: Option<(Polarity, u64)> = None;
        for (&p, &n) in h {
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((p, n));
            }
        }
        best.map(|(p, n)| (p, n as f64 / total as f64))
    }

    /// Class probabilities toward an entity over the polarity classes.
    pub fn probabilities(&self, entity: &str) -> Option<BTreeMap<String, f64>> {
        let h = self.histograms.get(entity)?;
        let total: u64 = h.values().sum();
        if total == 0 {
            return None;
        }
        Some(
            Polarity::CLASSES
                .iter()
                .map(|p| {
                    (
                        p.as_str().to_string(),
                        h.get(p).copied().unwrap_or(0) as f64 / total as f64,
                    )
                })
                .collect(),
        )
    }

    fn without(&self, entity: &str, polarity: Polarity) -> AuthorProfile {
        let mut p = self.clone();
        if let Some(n) = p.histograms.get_mut(entity).and_then(|h| h.get_mut(&polarity)) {
            *n = n.saturating_sub(1);
        }
        p
    }
}

/// Profiles of every author with gold-labeled documents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuthorProfiles {
    pub by_author: BTreeMap<String, AuthorProfile>,
}

impl AuthorProfiles {
    /// Counts the non-rejected gold labels of the given documents.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>, gold: &GoldStore) -> Self {
        let mut by_author: BTreeMap<String, AuthorProfile> = BTreeMap::new();
        for doc in docs {
            let Some(g) = gold.get(&doc.doc_id).filter(|g| !g.is_rejected()) else {
                continue;
            };
            let p = by_author.entry(doc.author_id.clone()).or_insert_with(|| AuthorProfile {
                author_id: doc.author_id.clone(),
                histograms: BTreeMap::new(),
            });
            *p.histograms
                .entry(doc.entity.clone())
                .or_default()
                .entry(g.polarity)
                .or_insert(0) += 1;
        }
        Self { by_author }
    }

    pub fn get(&self, author: &str) -> Option<&AuthorProfile> {
        self.by_author.get(author)
    }
}

/// Flags a label opposite to the dominant polarity of a prolific author.
/// `own` is the document's current label when the profile counts it.
pub fn profile_rule(
    doc_id: &str,
    profile: &AuthorProfile,
    entity: &str,
    label: Polarity,
    own: Option<Polarity>,
    min_count: usize,
    min_dominance: f64,
) -> Option<ReviewItem> {
    let profile = match own {
        Some(p) => profile.without(entity, p),
        None => profile.clone(),
    };
    if profile.count(entity) < min_count as u64 {
        return None;
    }
    let (dominant, share) = profile.dominant(entity)?;
    if share < min_dominance || !dominant.is_opposite(label) {
        return None;
    }
    Some(
        ReviewItem::new(doc_id, ReviewReason::ProfileConflict, Task::Polarity)
            .with_candidates(vec![(dominant.as_str().to_string(), share)]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn doc(author: &str, entity: &str) -> Document {
        Document {
            doc_id: "d".into(),
            author_id: author.into(),
            created_at: Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).unwrap(),
            entity: entity.into(),
            text: "x".into(),
            content_hash: "h".into(),
            duplicate_of: None,
        }
    }

    #[test]
    fn nickname_hard_corrects_soft_reviews() {
        let lex = Lexicons::seed();
        let d = doc("nainportekoi_2012", "NS");
        assert_eq!(
            nickname_rule(&d, &[], &lex, Polarity::Pos),
            RuleAction::Correct(Polarity::Neg)
        );
        assert_eq!(nickname_rule(&d, &[], &lex, Polarity::Neg), RuleAction::Agree);
        assert_eq!(nickname_rule(&d, &[], &lex, Polarity::Neu), RuleAction::None);
        assert_eq!(
            nickname_rule(&doc("someone", "NS"), &[], &lex, Polarity::Pos),
            RuleAction::None
        );
        // pattern belongs to NS only
        assert_eq!(
            nickname_rule(&doc("nainportekoi", "FH"), &[], &lex, Polarity::Pos),
            RuleAction::None
        );
        let mut soft = Lexicons::new();
        soft.load_nicknames_str("basher*\tFH\tNEG\tsoft\n").unwrap();
        assert_eq!(
            nickname_rule(&doc("x", "FH"), &["@basher99".into()], &soft, Polarity::Pos),
            RuleAction::Review(ReviewReason::ProfileConflict)
        );
    }

    #[test]
    fn hashtag_rule_cases() {
        let lex = Lexicons::seed();
        let tags = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(
            hashtag_rule("FH", &tags(&["#vivehollande"]), &lex, Polarity::Neg),
            RuleAction::Correct(Polarity::Pos)
        );
        assert_eq!(
            hashtag_rule("NS", &tags(&["#vivehollande"]), &lex, Polarity::Neg),
            RuleAction::None
        );
        assert_eq!(
            hashtag_rule("FH", &tags(&["#ledebat"]), &lex, Polarity::Neg),
            RuleAction::None
        );
        assert_eq!(
            hashtag_rule("FH", &tags(&["#lessocialos"]), &lex, Polarity::Pos),
            RuleAction::Review(ReviewReason::ContentConflict)
        );
        let mut mixed = Lexicons::new();
        mixed.add_sentiment("#bravo", Polarity::Pos, Confidence::Soft).unwrap();
        mixed.add_sentiment("#honte", Polarity::Neg, Confidence::Soft).unwrap();
        assert_eq!(
            hashtag_rule("FH", &tags(&["#bravo", "#honte"]), &mixed, Polarity::Pos),
            RuleAction::Review(ReviewReason::ContentConflict)
        );
    }

    fn profile(neg: u64, pos: u64, neu: u64) -> AuthorProfile {
        let mut h = BTreeMap::new();
        h.insert(Polarity::Neg, neg);
        h.insert(Polarity::Pos, pos);
        h.insert(Polarity::Neu, neu);
        AuthorProfile {
            author_id: "a".into(),
            histograms: [("NS".to_string(), h)].into(),
        }
    }

    #[test]
    fn profile_thresholds() {
        let p = profile(120, 0, 0);
        assert!(profile_rule("d", &p, "NS", Polarity::Pos, None, 100, 0.95).is_some());
        assert!(profile_rule("d", &p, "NS", Polarity::Neu, None, 100, 0.95).is_none());
        assert!(profile_rule("d", &profile(50, 0, 0), "NS", Polarity::Pos, None, 100, 0.95).is_none());
        // the document's own label is removed before judging
        assert!(profile_rule(
            "d",
            &profile(100, 0, 0),
            "NS",
            Polarity::Pos,
            Some(Polarity::Neg),
            100,
            0.95
        )
        .is_none());
        let probs = profile(9, 0, 1).probabilities("NS").unwrap();
        assert!((probs["NEG"] / probs["NEU"] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn content_rule_flags_pure_foreign_terms() {
        let classes = vec!["NEG".to_string(), "NEU".to_string(), "POS".to_string()];
        let mut stats = TermStats::new(classes);
        stats.set_term("sarkocasuffit", 5.0, vec![5.0, 0.0, 0.0]);
        stats.set_term("meeting", 5.0, vec![2.0, 1.0, 2.0]);
        let f = DocFeatures::from_text(
            "d",
            Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).unwrap(),
            "u",
            "NS",
            "sarkocasuffit",
            1,
        );
        let params = ContentParams {
            theta: 0.8,
            top_m: 3,
            min_support: 1.0,
            form: GiniForm::Purity,
        };
        let item = content_rule(&f, &stats, "POS", false, Task::Polarity, params).unwrap();
        assert_eq!(item.candidates[0].0, "NEG");
        assert!(content_rule(&f, &stats, "NEG", false, Task::Polarity, params).is_none());
        let weak = DocFeatures::from_text(
            "d",
            Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).unwrap(),
            "u",
            "NS",
            "meeting",
            1,
        );
        assert!(content_rule(&weak, &stats, "NEU", false, Task::Polarity, params).is_none());
        let oov = DocFeatures::from_text(
            "d",
            Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).unwrap(),
            "u",
            "NS",
            "unknown",
            1,
        );
        assert!(content_rule(&oov, &stats, "POS", false, Task::Polarity, params).is_none());
    }
}
