//! Per-class models and the raw scorers of the committee.

mod knn;
mod markov;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use log::debug;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Task};
use crate::error::{Error, Result};
use crate::textproc::{
    normalize, tokenize, BowVector, GiniForm, TermCounts, TermStats, TermWeighter, TfMode, WeightingScheme,
    DEFAULT_N_MAX,
};

pub use knn::{jaccard_sorted, IndexedDoc, KnnIndex, Metric, Neighbor};
pub use markov::BigramModel;

/// Version tag written into serialized model sets.
pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT_NAME: &str = "annoprop-model";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Cosine,
    Jaccard,
    KnnCosine,
    KnnJaccard,
    Poisson,
    Markov,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 6] = [
        ClassifierKind::Cosine,
        ClassifierKind::Jaccard,
        ClassifierKind::KnnCosine,
        ClassifierKind::KnnJaccard,
        ClassifierKind::Poisson,
        ClassifierKind::Markov,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Cosine => "cosine",
            ClassifierKind::Jaccard => "jaccard",
            ClassifierKind::KnnCosine => "knn_cosine",
            ClassifierKind::KnnJaccard => "knn_jaccard",
            ClassifierKind::Poisson => "poisson",
            ClassifierKind::Markov => "markov",
        }
    }

    /// Whether the scorer reads the weighted bag of words (and therefore
    /// reacts to user smoothing terms).
    pub fn uses_bow(self) -> bool {
        matches!(self, ClassifierKind::Cosine | ClassifierKind::KnnCosine)
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown classifier `{s}`")))
    }
}

/// Raw (or normalized) per-class scores from one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub classifier: String,
    pub scores: BTreeMap<String, f64>,
}

impl ScoreVector {
    pub fn new(classifier: impl Into<String>, scores: BTreeMap<String, f64>) -> Self {
        Self {
            classifier: classifier.into(),
            scores,
        }
    }

    pub fn get(&self, class: &str) -> Option<f64> {
        self.scores.get(class).copied()
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> + '_ {
        self.scores.keys().map(String::as_str)
    }

    /// Highest-scoring class. Ties go to the earliest class in the fixed
    /// order, which is the map order.
    pub fn argmax(&self) -> Option<&str> {
        let mut best: Option<(&str, f64)> = None;
        for (c, &s) in &self.scores {
            match best {
                Some((_, b)) if s <= b => {}
                _ => best = Some((c, s)),
            }
        }
        best.map(|(c, _)| c)
    }

    /// Top score minus runner-up score (0 with fewer than two classes).
    pub fn margin(&self) -> f64 {
        let mut values: Vec<f64> = self.scores.values().copied().collect();
        if values.len() < 2 {
            return 0.0;
        }
        values.sort_by(|a, b| b.total_cmp(a));
        values[0] - values[1]
    }

    /// All scores identical: the classifier expresses no preference.
    pub fn is_flat(&self) -> bool {
        let mut it = self.scores.values();
        match it.next() {
            None => true,
            Some(first) => it.all(|v| v == first),
        }
    }
}

/// Pre-tokenized view of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocFeatures {
    pub doc_id: String,
    pub created_at: DateTime<Utc>,
    pub author_id: String,
    pub entity: String,
    pub counts: TermCounts,
    pub words: Vec<String>,
    pub hashtags: Vec<String>,
    pub mentions: Vec<String>,
    terms: Vec<String>,
}

impl DocFeatures {
    pub fn from_text(
        doc_id: &str,
        created_at: DateTime<Utc>,
        author_id: &str,
        entity: &str,
        text: &str,
        n_max: usize,
    ) -> Self {
        let stream = tokenize(&normalize(text), n_max);
        let counts = stream.counts();
        let terms = counts.keys().cloned().collect();
        Self {
            doc_id: doc_id.to_string(),
            created_at,
            author_id: author_id.to_string(),
            entity: entity.to_string(),
            counts,
            words: stream.words,
            hashtags: stream.hashtags,
            mentions: stream.mentions,
            terms,
        }
    }

    pub fn from_document(doc: &Document, n_max: usize) -> Self {
        Self::from_text(
            &doc.doc_id,
            doc.created_at,
            &doc.author_id,
            &doc.entity,
            &doc.text,
            n_max,
        )
    }

    /// Distinct terms in byte order.
    pub fn term_list(&self) -> &[String] {
        &self.terms
    }
}

/// Which documents a model set covers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Entity(String),
    Pooled,
}

impl Scope {
    /// Polarity models are trained per entity, aspect models pool entities.
    pub fn for_task(task: Task, entity: &str) -> Self {
        match task {
            Task::Polarity => Scope::Entity(entity.to_string()),
            Task::Aspect => Scope::Pooled,
        }
    }

    pub fn admits(&self, entity: &str) -> bool {
        match self {
            Scope::Entity(e) => e == entity,
            Scope::Pooled => true,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Entity(e) => f.write_str(e),
            Scope::Pooled => f.write_str("*"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub scheme: WeightingScheme,
    pub tf_mode: TfMode,
    pub gini_form: GiniForm,
    pub n_max: usize,
    pub poisson_epsilon: f64,
    pub markov_alpha: f64,
    pub knn_k: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            scheme: WeightingScheme::default(),
            tf_mode: TfMode::default(),
            gini_form: GiniForm::default(),
            n_max: DEFAULT_N_MAX,
            poisson_epsilon: 1e-3,
            markov_alpha: 0.5,
            knn_k: 5,
        }
    }
}

/// One labeled training document. `extra` holds synthetic weighted terms
/// appended to its bag of words after weighting.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub features: &'a DocFeatures,
    pub class: String,
    pub extra: Vec<(String, f64)>,
}

impl<'a> Example<'a> {
    pub fn new(features: &'a DocFeatures, class: impl Into<String>) -> Self {
        Self {
            features,
            class: class.into(),
            extra: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub class: String,
    pub doc_count: usize,
    pub class_bow: BowVector,
    /// Total occurrences of each term over the class documents.
    pub term_counts: TermCounts,
    /// Distinct terms of the class, in byte order.
    pub term_set: Vec<String>,
    pub bigram: BigramModel,
}

impl ClassModel {
    /// Expected count of `term` per class document.
    pub fn term_rate(&self, term: &str) -> f64 {
        if self.doc_count == 0 {
            return 0.0;
        }
        self.term_counts.get(term).copied().unwrap_or(0.0) / self.doc_count as f64
    }
}

/// Trained models of one (task, scope): class profiles, kNN index, Poisson
/// rates and bigram language models. Immutable after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub task: Task,
    pub scope: Scope,
    pub classes: Vec<String>,
    pub params: ModelParams,
    weighter: TermWeighter,
    stats: TermStats,
    models: BTreeMap<String, ClassModel>,
    index: KnnIndex,
    markov_vocab: f64,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    model: T,
}

fn poisson_term(x: f64, lambda: f64) -> f64 {
    x * lambda.ln() - lambda - statrs::function::gamma::ln_gamma(x + 1.0)
}

impl ModelSet {
    /// Trains one model per class present in `examples`. `background`
    /// documents only contribute document frequencies.
    pub fn train(
        task: Task,
        scope: Scope,
        classes: &[String],
        examples: &[Example<'_>],
        background: &[&DocFeatures],
        params: ModelParams,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let classes: Vec<String> = classes.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        for ex in examples {
            if !classes.contains(&ex.class) {
                return Err(Error::InvalidLabel(format!(
                    "`{}` is not a class of the {task} task",
                    ex.class
                )));
            }
        }
        let mut stats = TermStats::new(classes.clone());
        for ex in examples {
            stats.add_document(&ex.features.counts, Some(&ex.class));
        }
        for doc in background {
            stats.add_document(&doc.counts, None);
        }
        let weighter = TermWeighter::from_stats(&stats, params.scheme, params.tf_mode, params.gini_form);

        struct Acc {
            docs: usize,
            counts: TermCounts,
            bigram: BigramModel,
            extra: BTreeMap<String, f64>,
            real_norm_sum: f64,
        }
        let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
        let mut indexed = Vec::with_capacity(examples.len());
        let mut words = BTreeSet::new();
        for ex in examples {
            let f = ex.features;
            let real = weighter.weigh(&f.counts);
            let a = acc.entry(ex.class.as_str()).or_insert_with(|| Acc {
                docs: 0,
                counts: TermCounts::new(),
                bigram: BigramModel::default(),
                extra: BTreeMap::new(),
                real_norm_sum: 0.0,
            });
            a.docs += 1;
            for (t, c) in &f.counts {
                *a.counts.entry(t.clone()).or_insert(0.0) += c;
            }
            a.bigram.observe(&f.words);
            a.real_norm_sum += real.norm();
            for (t, w) in &ex.extra {
                *a.extra.entry(t.clone()).or_insert(0.0) += w;
            }
            words.extend(f.words.iter().cloned());
            indexed.push(IndexedDoc {
                doc_id: f.doc_id.clone(),
                created_at: f.created_at,
                label: ex.class.clone(),
                bow: real.with_added(ex.extra.iter().cloned()),
                terms: f.terms.clone(),
            });
        }

        let mut models = BTreeMap::new();
        for class in &classes {
            let Some(a) = acc.remove(class.as_str()) else {
                debug!("train: class {class} has no documents for {task}/{scope}; its model is omitted");
                continue;
            };
            let real = weighter.weigh(&a.counts);
            // synthetic terms keep the same share of the profile that they
            // have in an average document of the class
            let n = a.docs as f64;
            let mean_norm = a.real_norm_sum / n;
            let scale = if mean_norm > 0.0 { real.norm() / mean_norm } else { 1.0 };
            let class_bow = real.with_added(a.extra.into_iter().map(|(t, w)| (t, w / n * scale)));
            models.insert(
                class.clone(),
                ClassModel {
                    class: class.clone(),
                    doc_count: a.docs,
                    class_bow,
                    term_set: a.counts.keys().cloned().collect(),
                    term_counts: a.counts,
                    bigram: a.bigram,
                },
            );
        }

        Ok(Self {
            task,
            scope,
            classes,
            params,
            weighter,
            stats,
            models,
            index: KnnIndex::new(indexed),
            markov_vocab: words.len() as f64 + 1.0,
        })
    }

    pub fn weighter(&self) -> &TermWeighter {
        &self.weighter
    }

    pub fn stats(&self) -> &TermStats {
        &self.stats
    }

    pub fn model(&self, class: &str) -> Option<&ClassModel> {
        self.models.get(class)
    }

    pub fn models(&self) -> impl Iterator<Item = &ClassModel> + '_ {
        self.models.values()
    }

    pub fn index(&self) -> &KnnIndex {
        &self.index
    }

    pub fn n_training_docs(&self) -> usize {
        self.index.len()
    }

    /// Weighted bag of words of a document plus optional synthetic terms.
    pub fn doc_bow(&self, features: &DocFeatures, extra: &[(String, f64)]) -> BowVector {
        let bow = self.weighter.weigh(&features.counts);
        if extra.is_empty() {
            bow
        } else {
            bow.with_added(extra.iter().cloned())
        }
    }

    /// Whether the document shares at least one term with the training data.
    pub fn has_known_terms(&self, features: &DocFeatures) -> bool {
        features.counts.keys().any(|t| self.stats.contains(t))
    }

    fn per_class(&self, id: &str, mut f: impl FnMut(&ClassModel) -> f64) -> ScoreVector {
        let scores = self
            .classes
            .iter()
            .map(|c| {
                let s = self.models.get(c).map_or(f64::NEG_INFINITY, &mut f);
                (c.clone(), s)
            })
            .collect();
        ScoreVector::new(id, scores)
    }

    pub fn score_cosine(&self, bow: &BowVector) -> ScoreVector {
        self.per_class(ClassifierKind::Cosine.as_str(), |m| bow.cosine(&m.class_bow))
    }

    pub fn score_jaccard(&self, features: &DocFeatures) -> ScoreVector {
        self.per_class(ClassifierKind::Jaccard.as_str(), |m| {
            jaccard_sorted(features.term_list(), &m.term_set)
        })
    }

    pub fn score_knn(&self, features: &DocFeatures, bow: &BowVector, k: usize, metric: Metric) -> ScoreVector {
        let id = match metric {
            Metric::Cosine => ClassifierKind::KnnCosine,
            Metric::Jaccard => ClassifierKind::KnnJaccard,
        };
        let mut v = self.index.vote(&self.classes, features, bow, k, metric, id.as_str());
        for (c, s) in v.scores.iter_mut() {
            if !self.models.contains_key(c) {
                *s = f64::NEG_INFINITY;
            }
        }
        v
    }

    pub fn score_poisson(&self, features: &DocFeatures) -> ScoreVector {
        let eps = self.params.poisson_epsilon;
        self.per_class(ClassifierKind::Poisson.as_str(), |m| {
            features
                .counts
                .iter()
                .map(|(t, &x)| poisson_term(x, m.term_rate(t) + eps))
                .sum()
        })
    }

    pub fn score_markov(&self, features: &DocFeatures) -> ScoreVector {
        let alpha = self.params.markov_alpha;
        self.per_class(ClassifierKind::Markov.as_str(), |m| {
            m.bigram.mean_logprob(&features.words, alpha, self.markov_vocab)
        })
    }

    /// Raw scores of one classifier. `bow` must come from [`Self::doc_bow`].
    pub fn score(&self, kind: ClassifierKind, features: &DocFeatures, bow: &BowVector) -> ScoreVector {
        match kind {
            ClassifierKind::Cosine => self.score_cosine(bow),
            ClassifierKind::Jaccard => self.score_jaccard(features),
            ClassifierKind::KnnCosine => self.score_knn(features, bow, self.params.knn_k, Metric::Cosine),
            ClassifierKind::KnnJaccard => self.score_knn(features, bow, self.params.knn_k, Metric::Jaccard),
            ClassifierKind::Poisson => self.score_poisson(features),
            ClassifierKind::Markov => self.score_markov(features),
        }
    }

    pub fn score_all(
        &self,
        kinds: &[ClassifierKind],
        features: &DocFeatures,
        extra: &[(String, f64)],
    ) -> Vec<ScoreVector> {
        let bow = self.doc_bow(features, extra);
        kinds.iter().map(|&k| self.score(k, features, &bow)).collect()
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let env = Envelope {
            format: MODEL_FORMAT_NAME.to_string(),
            version: MODEL_FORMAT_VERSION,
            model: self,
        };
        serde_json::to_writer(writer, &env)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let env: Envelope<ModelSet> = serde_json::from_reader(reader)?;
        if env.format != MODEL_FORMAT_NAME {
            return Err(Error::Format(format!("not a model file (format `{}`)", env.format)));
        }
        if env.version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                env.version
            )));
        }
        let mut model = env.model;
        model.index.rebuild_postings();
        Ok(model)
    }
}
