//! Synthetic corpora with planted class vocabularies, for experiments and
//! tests. Every document draws some of its words from the vocabulary of its
//! true polarity and aspect and the rest from a shared background.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    AnnotationRecord, AspectLabel, CorpusStore, DocId, InputRecord, LabelPair, Mode, Passage, Polarity, RawPolarity,
    Taxonomy, ASPECT_ENTITY,
};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_docs: usize,
    pub entities: Vec<String>,
    pub start: DateTime<Utc>,
    pub months: u32,
    /// Planted words per polarity class.
    pub polarity_vocab: usize,
    pub aspects: Vec<String>,
    pub aspect_vocab: usize,
    pub background_vocab: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that a word comes from the polarity vocabulary.
    pub polarity_signal: f64,
    /// Probability that a word comes from the aspect vocabulary.
    pub aspect_signal: f64,
    /// Zipf exponent of word frequencies inside each vocabulary.
    pub zipf: f64,
    /// Class prior in NEG, NEU, POS order.
    pub prior: [f64; 3],
    /// Share of documents whose observed polarity is replaced by another
    /// class; the aspect is flipped independently with the same rate.
    pub flip_rate: f64,
    pub flip_aspect: bool,
    /// Entities whose NEG and POS vocabularies are swapped.
    pub inverted: Vec<String>,
    pub n_authors: usize,
    /// Probability that an author writes with their own favourite polarity
    /// rather than the prior.
    pub author_loyalty: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            n_docs: 2000,
            entities: vec!["FH".to_string(), "NS".to_string()],
            start: Utc.with_ymd_and_hms(2012, 1, 1, 0, 0, 0).single().expect("valid date"),
            months: 12,
            polarity_vocab: 60,
            aspects: vec![
                ASPECT_ENTITY.to_string(),
                "ethic".to_string(),
                "project".to_string(),
                "communication".to_string(),
            ],
            aspect_vocab: 40,
            background_vocab: 400,
            min_words: 8,
            max_words: 16,
            polarity_signal: 0.3,
            aspect_signal: 0.25,
            zipf: 1.0,
            prior: [0.45, 0.33, 0.22],
            flip_rate: 0.15,
            flip_aspect: false,
            inverted: Vec::new(),
            n_authors: 0,
            author_loyalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDoc {
    pub record: InputRecord,
    pub truth: LabelPair,
    /// Label given by the simulated annotator.
    pub observed: LabelPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub spec: SynthSpec,
    /// Documents in chronological (and id) order.
    pub docs: Vec<SynthDoc>,
    /// Planted polarity words per (entity, class) as used in the texts.
    pub polarity_words: BTreeMap<String, BTreeMap<Polarity, Vec<String>>>,
    pub aspect_words: BTreeMap<String, Vec<String>>,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Pronounceable pseudo-word for an integer, unique per integer.
pub fn pseudo_word(mut k: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut out = String::new();
    for _ in 0..3 {
        let s = k % base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
        k /= base;
    }
    while k > 0 {
        let s = k % base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
        k /= base;
    }
    out
}

fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|k| 1.0 / ((k + 1) as f64).powf(s)).collect()
}

struct Vocab {
    words: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl Vocab {
    fn new(words: Vec<String>, zipf: f64) -> Self {
        let dist = WeightedIndex::new(zipf_weights(words.len().max(1), zipf)).expect("positive weights");
        Self { words, dist }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> &str {
        &self.words[self.dist.sample(rng)]
    }
}

fn other<T: Copy + PartialEq>(options: &[T], not: T, rng: &mut ChaCha8Rng) -> T {
    let rest: Vec<T> = options.iter().copied().filter(|o| *o != not).collect();
    *rest.choose(rng).unwrap_or(&not)
}

impl SynthCorpus {
    pub fn generate(spec: &SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut next = 0usize;
        let mut block = |n: usize| -> Vec<String> {
            let words = (next..next + n).map(pseudo_word).collect();
            next += n;
            words
        };
        let base: BTreeMap<Polarity, Vec<String>> = Polarity::CLASSES
            .iter()
            .map(|p| (*p, block(spec.polarity_vocab)))
            .collect();
        let aspect_words: BTreeMap<String, Vec<String>> = spec
            .aspects
            .iter()
            .map(|a| (a.clone(), block(spec.aspect_vocab)))
            .collect();
        let background = Vocab::new(block(spec.background_vocab), 0.5);

        let mut polarity_words = BTreeMap::new();
        for e in &spec.entities {
            let mut m = base.clone();
            if spec.inverted.contains(e) {
                let neg = m.remove(&Polarity::Neg).unwrap_or_default();
                let pos = m.remove(&Polarity::Pos).unwrap_or_default();
                m.insert(Polarity::Neg, pos);
                m.insert(Polarity::Pos, neg);
            }
            polarity_words.insert(e.clone(), m);
        }
        let pol_vocab: BTreeMap<(&str, Polarity), Vocab> = polarity_words
            .iter()
            .flat_map(|(e, m)| m.iter().map(move |(p, w)| ((e.as_str(), *p), w.clone())))
            .map(|(k, w)| (k, Vocab::new(w, spec.zipf)))
            .collect();
        let asp_vocab: BTreeMap<&str, Vocab> = aspect_words
            .iter()
            .map(|(a, w)| (a.as_str(), Vocab::new(w.clone(), spec.zipf)))
            .collect();
        let prior = WeightedIndex::new(spec.prior).expect("valid prior");
        let favourite: Vec<Polarity> = (0..spec.n_authors)
            .map(|_| Polarity::CLASSES[prior.sample(&mut rng)])
            .collect();

        let span = Duration::days(30 * spec.months.max(1) as i64).num_seconds();
        let mut times: Vec<i64> = (0..spec.n_docs).map(|_| rng.gen_range(0..span)).collect();
        times.sort_unstable();

        let mut docs = Vec::with_capacity(spec.n_docs);
        for (i, t) in times.into_iter().enumerate() {
            let entity = spec.entities[rng.gen_range(0..spec.entities.len())].clone();
            let (author, polarity) = if spec.n_authors > 0 {
                let a = rng.gen_range(0..spec.n_authors);
                let p = if rng.gen_bool(spec.author_loyalty.clamp(0.0, 1.0)) {
                    favourite[a]
                } else {
                    Polarity::CLASSES[prior.sample(&mut rng)]
                };
                (format!("u{a:04}"), p)
            } else {
                (format!("u{i:05}"), Polarity::CLASSES[prior.sample(&mut rng)])
            };
            let aspect = spec.aspects[rng.gen_range(0..spec.aspects.len())].clone();
            let len = rng.gen_range(spec.min_words..=spec.max_words.max(spec.min_words));
            let words: Vec<String> = (0..len)
                .map(|_| {
                    let u: f64 = rng.gen();
                    if u < spec.polarity_signal {
                        pol_vocab[&(entity.as_str(), polarity)].draw(&mut rng).to_string()
                    } else if u < spec.polarity_signal + spec.aspect_signal {
                        asp_vocab[aspect.as_str()].draw(&mut rng).to_string()
                    } else {
                        background.draw(&mut rng).to_string()
                    }
                })
                .collect();
            let truth = LabelPair::new(polarity, AspectLabel::new(aspect.clone()));
            let mut observed = truth.clone();
            if rng.gen_bool(spec.flip_rate.clamp(0.0, 1.0)) {
                observed.polarity = other(&Polarity::CLASSES, polarity, &mut rng);
            }
            if spec.flip_aspect && rng.gen_bool(spec.flip_rate.clamp(0.0, 1.0)) {
                let idx: Vec<usize> = (0..spec.aspects.len()).collect();
                let cur = spec.aspects.iter().position(|a| *a == aspect).unwrap_or(0);
                observed.aspect = AspectLabel::new(spec.aspects[other(&idx, cur, &mut rng)].clone());
            }
            docs.push(SynthDoc {
                record: InputRecord {
                    id: format!("d{i:06}"),
                    author,
                    timestamp: spec.start + Duration::seconds(t),
                    entity,
                    text: words.join(" "),
                },
                truth,
                observed,
            });
        }
        Self {
            spec: spec.clone(),
            docs,
            polarity_words,
            aspect_words,
        }
    }

    pub fn truth(&self) -> BTreeMap<DocId, LabelPair> {
        self.docs
            .iter()
            .map(|d| (d.record.id.clone(), d.truth.clone()))
            .collect()
    }

    pub fn observed(&self) -> BTreeMap<DocId, LabelPair> {
        self.docs
            .iter()
            .map(|d| (d.record.id.clone(), d.observed.clone()))
            .collect()
    }

    /// One annotation record carrying the observed label over the whole text.
    pub fn annotation(doc: &SynthDoc, annotator: &str) -> AnnotationRecord {
        let len = doc.record.text.chars().count();
        AnnotationRecord {
            annotation_id: format!("{}-{annotator}", doc.record.id),
            doc_id: doc.record.id.clone(),
            annotator_id: annotator.to_string(),
            passages: vec![Passage {
                span: [0, len.max(1)],
                polarity: RawPolarity::from(doc.observed.polarity),
                aspect: doc.observed.aspect.clone(),
                target_text: String::new(),
            }],
            low_confidence: false,
            mode: Mode::Blind,
            suggestion_shown: None,
            submitted_at: doc.record.timestamp,
        }
    }

    /// In-memory store with every document; documents for which `annotate`
    /// holds also get their observed label as one annotation.
    pub fn store_with(&self, annotate: impl Fn(&SynthDoc) -> bool) -> Result<CorpusStore> {
        let mut store = CorpusStore::new(self.spec.entities.iter().cloned(), Taxonomy::default());
        for d in &self.docs {
            store.add_document(d.record.clone())?;
        }
        for d in self.docs.iter().filter(|d| annotate(d)) {
            store.add_annotation(Self::annotation(d, "sim"))?;
        }
        Ok(store)
    }

    /// Every planted polarity word.
    pub fn planted_vocabulary(&self) -> BTreeSet<&str> {
        self.polarity_words
            .values()
            .flat_map(|m| m.values().flatten().map(String::as_str))
            .collect()
    }

    /// Share of the planted polarity vocabulary that occurs in `ids`.
    pub fn vocabulary_coverage<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> f64 {
        let planted = self.planted_vocabulary();
        if planted.is_empty() {
            return 0.0;
        }
        let ids: BTreeSet<&str> = ids.into_iter().collect();
        let seen: BTreeSet<&str> = self
            .docs
            .iter()
            .filter(|d| ids.contains(d.record.id.as_str()))
            .flat_map(|d| d.record.text.split(' '))
            .filter(|w| planted.contains(w))
            .collect();
        seen.len() as f64 / planted.len() as f64
    }
}
