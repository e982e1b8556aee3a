use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TermCounts;

/// Sparse non-negative term weights with a cached Euclidean norm.
///
/// Entries are kept in term order, so dot products always sum in the same
/// order and are reproducible bit for bit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct BowVector {
    weights: BTreeMap<String, f64>,
    norm: f64,
}

impl From<BTreeMap<String, f64>> for BowVector {
    fn from(mut weights: BTreeMap<String, f64>) -> Self {
        weights.retain(|_, w| w.is_finite() && *w > 0.0);
        let norm = weights.values().map(|w| w * w).sum::<f64>().sqrt();
        Self { weights, norm }
    }
}

impl From<BowVector> for BTreeMap<String, f64> {
    fn from(v: BowVector) -> Self {
        v.weights
    }
}

impl FromIterator<(String, f64)> for BowVector {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        let mut weights = BTreeMap::new();
        for (t, w) in iter {
            *weights.entry(t).or_insert(0.0) += w;
        }
        Self::from(weights)
    }
}

impl BowVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn get(&self, term: &str) -> Option<f64> {
        self.weights.get(term).copied()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.weights.contains_key(term)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.weights.iter().map(|(t, w)| (t.as_str(), *w))
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> + '_ {
        self.weights.keys().map(String::as_str)
    }

    /// Returns a copy with `extra` weights added (entries summed).
    pub fn with_added(&self, extra: impl IntoIterator<Item = (String, f64)>) -> BowVector {
        let mut weights = self.weights.clone();
        for (t, w) in extra {
            *weights.entry(t).or_insert(0.0) += w;
        }
        BowVector::from(weights)
    }

    /// Dot product, summed over shared terms in term order.
    pub fn dot(&self, other: &BowVector) -> f64 {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        let mut sum = 0.0;
        for (t, w) in &small.weights {
            if let Some(v) = large.weights.get(t) {
                sum += w * v;
            }
        }
        sum
    }

    /// Cosine similarity in `[0, 1]`; zero when either vector is empty.
    pub fn cosine(&self, other: &BowVector) -> f64 {
        if self.norm == 0.0 || other.norm == 0.0 {
            return 0.0;
        }
        (self.dot(other) / (self.norm * other.norm)).clamp(0.0, 1.0)
    }
}

/// How term frequency is computed from raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TfMode {
    /// count / total count of the document
    #[default]
    Normalized,
    Raw,
}

/// Which Gini form is used as the discriminance factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GiniForm {
    /// Σ p(c|t)², in `[1/C, 1]`, high for class-pure terms.
    #[default]
    Purity,
    /// 1 − Σ p(c|t)².
    Impurity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingScheme {
    Tf,
    TfIdf,
    Gini,
    #[default]
    TfIdfGini,
}

impl WeightingScheme {
    fn uses_idf(self) -> bool {
        matches!(self, WeightingScheme::TfIdf | WeightingScheme::TfIdfGini)
    }

    fn uses_gini(self) -> bool {
        matches!(self, WeightingScheme::Gini | WeightingScheme::TfIdfGini)
    }
}

/// Document frequencies and per-class occurrence counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermStats {
    classes: Vec<String>,
    n_docs: f64,
    df: BTreeMap<String, f64>,
    class_counts: BTreeMap<String, Vec<f64>>,
}

impl TermStats {
    pub fn new(classes: Vec<String>) -> Self {
        Self {
            classes,
            n_docs: 0.0,
            df: BTreeMap::new(),
            class_counts: BTreeMap::new(),
        }
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn n_docs(&self) -> f64 {
        self.n_docs
    }

    pub fn df(&self, term: &str) -> f64 {
        self.df.get(term).copied().unwrap_or(0.0)
    }

    pub fn class_counts(&self, term: &str) -> Option<&[f64]> {
        self.class_counts.get(term).map(Vec::as_slice)
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> + '_ {
        self.df.keys().map(String::as_str)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.df.contains_key(term)
    }

    /// Adds one document. Documents without a class only contribute to
    /// document frequencies.
    pub fn add_document(&mut self, counts: &TermCounts, class: Option<&str>) {
        self.n_docs += 1.0;
        let class_idx = class.and_then(|c| self.class_index(c));
        let n_classes = self.classes.len();
        for (term, &count) in counts {
            if count <= 0.0 {
                continue;
            }
            *self.df.entry(term.clone()).or_insert(0.0) += 1.0;
            if let Some(ci) = class_idx {
                self.class_counts
                    .entry(term.clone())
                    .or_insert_with(|| vec![0.0; n_classes])[ci] += count;
            }
        }
    }

    /// Sets raw statistics for one term (used by fixtures and loaders).
    pub fn set_term(&mut self, term: &str, df: f64, class_counts: Vec<f64>) {
        assert_eq!(class_counts.len(), self.classes.len(), "class count arity");
        self.df.insert(term.to_string(), df);
        self.class_counts.insert(term.to_string(), class_counts);
    }

    pub fn set_n_docs(&mut self, n_docs: f64) {
        self.n_docs = n_docs;
    }
}

/// Inverse document frequency; unseen terms count as `df = 1`.
pub fn idf(n_docs: f64, df: f64) -> f64 {
    let df = if df <= 0.0 { 1.0 } else { df };
    if n_docs <= 0.0 {
        return 0.0;
    }
    (n_docs / df).ln()
}

pub fn tfidf_weight(tf: f64, n_docs: f64, df: f64) -> f64 {
    tf * idf(n_docs, df)
}

/// Length-normalized tf times idf.
pub fn weight_tfidf(counts: &TermCounts, stats: &TermStats) -> BowVector {
    let total: f64 = counts.values().sum();
    if total <= 0.0 {
        return BowVector::new();
    }
    counts
        .iter()
        .map(|(t, &c)| (t.clone(), tfidf_weight(c / total, stats.n_docs(), stats.df(t))))
        .collect()
}

/// Gini score of a class-count vector, `None` when the counts sum to zero.
pub fn gini_of_counts(counts: &[f64], form: GiniForm) -> Option<f64> {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let purity: f64 = counts.iter().map(|&n| (n / total) * (n / total)).sum();
    // rounding can push the sum a hair outside its exact range
    let purity = purity.clamp(1.0 / counts.len() as f64, 1.0);
    Some(match form {
        GiniForm::Purity => purity,
        GiniForm::Impurity => 1.0 - purity,
    })
}

/// Gini score of every term with a non-zero class count.
pub fn weight_gini(stats: &TermStats, form: GiniForm) -> BTreeMap<String, f64> {
    stats
        .class_counts
        .iter()
        .filter_map(|(t, counts)| gini_of_counts(counts, form).map(|g| (t.clone(), g)))
        .collect()
}

/// Frozen weighting function derived from training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermWeighter {
    pub scheme: WeightingScheme,
    pub tf_mode: TfMode,
    pub gini_form: GiniForm,
    n_docs: f64,
    n_classes: usize,
    df: BTreeMap<String, f64>,
    gini: BTreeMap<String, f64>,
}

impl TermWeighter {
    pub fn from_stats(stats: &TermStats, scheme: WeightingScheme, tf_mode: TfMode, gini_form: GiniForm) -> Self {
        Self {
            scheme,
            tf_mode,
            gini_form,
            n_docs: stats.n_docs,
            n_classes: stats.classes.len().max(1),
            df: stats.df.clone(),
            gini: weight_gini(stats, gini_form),
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        idf(self.n_docs, self.df.get(term).copied().unwrap_or(0.0))
    }

    /// Gini score, falling back to the least informative value for terms
    /// without class counts.
    pub fn gini(&self, term: &str) -> f64 {
        match self.gini.get(term) {
            Some(g) => *g,
            None => {
                let uniform = 1.0 / self.n_classes as f64;
                match self.gini_form {
                    GiniForm::Purity => uniform,
                    GiniForm::Impurity => 1.0 - uniform,
                }
            }
        }
    }

    pub fn known_gini(&self, term: &str) -> Option<f64> {
        self.gini.get(term).copied()
    }

    pub fn knows(&self, term: &str) -> bool {
        self.df.contains_key(term)
    }

    pub fn term_factor(&self, term: &str) -> f64 {
        let mut f = 1.0;
        if self.scheme.uses_idf() {
            f *= self.idf(term);
        }
        if self.scheme.uses_gini() {
            f *= self.gini(term);
        }
        f
    }

    pub fn weigh(&self, counts: &TermCounts) -> BowVector {
        let total: f64 = counts.values().sum();
        if total <= 0.0 {
            return BowVector::new();
        }
        counts
            .iter()
            .map(|(t, &c)| {
                let tf = match self.tf_mode {
                    TfMode::Normalized => c / total,
                    TfMode::Raw => c,
                };
                (t.clone(), tf * self.term_factor(t))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(items: &[(&str, f64)]) -> TermCounts {
        items.iter().map(|(t, c)| (t.to_string(), *c)).collect()
    }

    #[test]
    fn bow_drops_zero_and_caches_norm() {
        let v = BowVector::from_iter([("a".to_string(), 3.0), ("b".into(), 0.0), ("c".into(), 4.0)]);
        assert_eq!(v.len(), 2);
        assert!(!v.contains("b"));
        assert_eq!(v.norm(), 5.0);
    }

    #[test]
    fn tfidf_of_ubiquitous_term_is_zero() {
        let mut stats = TermStats::new(vec!["NEG".into(), "POS".into()]);
        stats.add_document(&counts(&[("le", 1.0), ("x", 1.0)]), Some("NEG"));
        stats.add_document(&counts(&[("le", 1.0), ("y", 1.0)]), Some("POS"));
        let v = weight_tfidf(&counts(&[("le", 2.0), ("x", 1.0)]), &stats);
        assert_eq!(v.get("le"), None);
        assert!((v.get("x").unwrap() - (1.0 / 3.0) * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tfidf_single_term_at_n_equal_e() {
        assert!((tfidf_weight(1.0, std::f64::consts::E, 1.0) - 1.0).abs() < 1e-15);
        let mut stats = TermStats::new(vec!["A".into(), "B".into()]);
        stats.set_term("t", 1.0, vec![1.0, 0.0]);
        stats.set_n_docs(std::f64::consts::E);
        let v = weight_tfidf(&counts(&[("t", 1.0)]), &stats);
        assert!((v.get("t").unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tfidf_empty_doc_is_empty() {
        let stats = TermStats::new(vec!["A".into(), "B".into()]);
        assert!(weight_tfidf(&TermCounts::new(), &stats).is_empty());
    }

    #[test]
    fn tfidf_unseen_term_uses_df_one() {
        let mut stats = TermStats::new(vec!["A".into(), "B".into()]);
        for _ in 0..4 {
            stats.add_document(&counts(&[("a", 1.0)]), Some("A"));
        }
        let v = weight_tfidf(&counts(&[("new", 1.0)]), &stats);
        assert!((v.get("new").unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tfidf_changes_only_through_df_and_n() {
        // three-document fixture; duplicating another document only moves N and df
        let docs = [
            counts(&[("a", 1.0), ("b", 1.0)]),
            counts(&[("b", 2.0), ("c", 1.0)]),
            counts(&[("c", 1.0), ("d", 1.0)]),
        ];
        let build = |extra: Option<&TermCounts>| {
            let mut s = TermStats::new(vec!["X".into(), "Y".into()]);
            for d in &docs {
                s.add_document(d, None);
            }
            if let Some(e) = extra {
                s.add_document(e, None);
            }
            s
        };
        let base = build(None);
        let dup = build(Some(&docs[1]));
        let query = &docs[0];
        let v0 = weight_tfidf(query, &base);
        let v1 = weight_tfidf(query, &dup);
        // a: df 1, N 3 -> 4 ; b: df 2 -> 3
        assert!((v0.get("a").unwrap() - 0.5 * (3.0f64).ln()).abs() < 1e-15);
        assert!((v1.get("a").unwrap() - 0.5 * (4.0f64).ln()).abs() < 1e-15);
        assert!((v0.get("b").unwrap() - 0.5 * (1.5f64).ln()).abs() < 1e-15);
        assert!((v1.get("b").unwrap() - 0.5 * (4.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini_of_counts(&[0.0, 5.0, 0.0], GiniForm::Purity), Some(1.0));
        let uniform = gini_of_counts(&[2.0, 2.0, 2.0], GiniForm::Purity).unwrap();
        assert!((uniform - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(gini_of_counts(&[2.0, 1.0, 1.0], GiniForm::Purity), Some(0.375));
        assert_eq!(gini_of_counts(&[2.0, 1.0, 1.0], GiniForm::Impurity), Some(0.625));
        assert_eq!(gini_of_counts(&[0.0, 0.0, 0.0], GiniForm::Purity), None);
    }

    #[test]
    fn weight_gini_excludes_unlabeled_terms() {
        let mut stats = TermStats::new(vec!["A".into(), "B".into()]);
        stats.add_document(&counts(&[("x", 1.0)]), Some("A"));
        stats.add_document(&counts(&[("bg", 1.0)]), None);
        let g = weight_gini(&stats, GiniForm::Purity);
        assert_eq!(g.get("x"), Some(&1.0));
        assert!(!g.contains_key("bg"));
        assert_eq!(stats.df("bg"), 1.0);
    }

    #[test]
    fn weighter_schemes() {
        let mut stats = TermStats::new(vec!["A".into(), "B".into()]);
        stats.add_document(&counts(&[("x", 1.0), ("z", 1.0)]), Some("A"));
        stats.add_document(&counts(&[("y", 1.0), ("z", 1.0)]), Some("B"));
        let doc = counts(&[("x", 1.0), ("z", 1.0)]);
        let tf = TermWeighter::from_stats(&stats, WeightingScheme::Tf, TfMode::Normalized, GiniForm::Purity);
        assert_eq!(tf.weigh(&doc).get("z"), Some(0.5));
        let gini = TermWeighter::from_stats(&stats, WeightingScheme::Gini, TfMode::Raw, GiniForm::Purity);
        assert_eq!(gini.weigh(&doc).get("z"), Some(0.5));
        assert_eq!(gini.weigh(&doc).get("x"), Some(1.0));
        let both = TermWeighter::from_stats(&stats, WeightingScheme::TfIdfGini, TfMode::Normalized, GiniForm::Purity);
        let w = both.weigh(&doc);
        assert!((w.get("x").unwrap() - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(w.get("z"), None);
    }
}
