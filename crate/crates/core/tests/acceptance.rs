//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `cargo test -p annoprop-core --test acceptance -- <filter>` runs only the
//! criteria whose name contains `<filter>`.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use annoprop::classifiers::{DocFeatures, Example, IndexedDoc, Metric, ModelSet, Scope, ScoreVector};
use annoprop::committee::{agreement, fuse, normalize, FusionConfig, FusionFile};
use annoprop::config::{Config, ModePolicy, ServiceConfig};
use annoprop::corpus::{GoldStore, Mode, Passage, RawPolarity, Taxonomy};
use annoprop::harmonize::{majority_label, run_cascade, AuthorProfiles};
use annoprop::metrics::ConfusionMatrix;
use annoprop::propagate::{run_loop, CommitteeBank, LoopInput, ReviewOracle, ReviewOutcome};
use annoprop::service::AnnotationService;
use annoprop::synth::{SynthCorpus, SynthSpec};
use annoprop::textproc::{gini_of_counts, BowVector, GiniForm};
use annoprop::{
    Agreement, AnnotationRecord, ClassifierKind, CorpusStore, LabelPair, Lexicons, Polarity, Provenance, ReviewItem,
    ReviewReason, Task,
};
use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<Outcome, Box<dyn std::error::Error>>;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

const CRITERIA: &[(&str, Check)] = &[
    ("macro_f_oracle", macro_f_oracle),
    ("majority_exhaustive", majority_exhaustive),
    ("agreement_oracle", agreement_oracle),
    ("knn_oracle", knn_oracle),
    ("self_annotation", self_annotation),
    ("harmonization_gain", harmonization_gain),
    ("propagation_gain", propagation_gain),
    ("ledger_replay", ledger_replay),
    ("gini_bounds", gini_bounds),
    ("fusion_invariance", fusion_invariance),
    ("entity_switch", entity_switch),
    ("suggestion_influence", suggestion_influence),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "{} {name} ({secs:.1}s): {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn now() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2014, 1, 1, 0, 0, 0).unwrap()
}

// ---------------------------------------------------------------- oracles

#[allow(clippy::needless_range_loop)]
fn naive_macro_f(m: &[Vec<u64>]) -> f64 {
    let c = m.len();
    let mut total = 0.0;
    for k in 0..c {
        let tp = m[k][k] as f64;
        let predicted: u64 = (0..c).map(|g| m[g][k]).sum();
        let actual: u64 = m[k].iter().sum();
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
        total += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    total / c as f64
}

fn macro_f_oracle() -> Result<Outcome, Box<dyn std::error::Error>> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for size in [3usize, 11] {
        let classes: Vec<String> = (0..size).map(|i| format!("c{i}")).collect();
        for _ in 0..1000 {
            let sparsity: f64 = rng.gen_range(0.0..0.8);
            let m: Vec<Vec<u64>> = (0..size)
                .map(|_| {
                    (0..size)
                        .map(|_| {
                            if rng.gen_bool(sparsity) {
                                0
                            } else {
                                rng.gen_range(0..60)
                            }
                        })
                        .collect()
                })
                .collect();
            if m.iter().flatten().all(|&x| x == 0) {
                continue;
            }
            let got = ConfusionMatrix::from_counts(classes.clone(), m.clone())?.macro_f()?;
            worst = worst.max((got - naive_macro_f(&m)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome::new(
        worst <= 1e-12 && secs < 5.0,
        format!("max |diff| = {worst:.2e}, {secs:.2}s for 2000 matrices"),
    ))
}

/// Majority as stated in words: a label wins when its share exceeds one over
/// the number of distinct labels and no other such label is as frequent.
fn brute_force_majority(labels: &[u8]) -> Option<u8> {
    if labels.is_empty() {
        return None;
    }
    let mut freq = [0usize; 3];
    for &l in labels {
        freq[l as usize] += 1;
    }
    let distinct = freq.iter().filter(|&&f| f > 0).count();
    let share = |f: usize| f as f64 / labels.len() as f64;
    let mut passing: Vec<(usize, u8)> = (0..3u8)
        .filter(|&l| freq[l as usize] > 0)
        .filter(|&l| distinct == 1 || share(freq[l as usize]) > 1.0 / distinct as f64)
        .map(|l| (freq[l as usize], l))
        .collect();
    passing.sort_by(|a, b| b.cmp(a));
    match passing.as_slice() {
        [] => None,
        [(_, l)] => Some(*l),
        [(f1, l), (f2, _), ..] => (f1 != f2).then_some(*l),
    }
}

fn majority_exhaustive() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut checked = 0;
    let mut mismatches = 0;
    for n in 0..=5u32 {
        for code in 0..3usize.pow(n) {
            let mut c = code;
            let labels: Vec<u8> = (0..n)
                .map(|_| {
                    let l = (c % 3) as u8;
                    c /= 3;
                    l
                })
                .collect();
            checked += 1;
            if majority_label(&labels) != brute_force_majority(&labels) {
                mismatches += 1;
            }
        }
    }
    Ok(Outcome::new(
        mismatches == 0,
        format!("{checked} ordered sequences (all multisets of size <= 5), {mismatches} mismatches"),
    ))
}

fn agreement_oracle() -> Result<Outcome, Box<dyn std::error::Error>> {
    let labels = ["NEG", "NEU", "POS"];
    let mut mismatches = 0;
    for code in 0..81usize {
        let votes: Vec<Option<&str>> = (0..4).map(|i| Some(labels[code / 3usize.pow(i) % 3])).collect();
        let top = labels
            .iter()
            .map(|l| votes.iter().filter(|v| **v == Some(*l)).count())
            .max()
            .unwrap_or(0);
        let expected = match top {
            4 => Agreement::Unanimous,
            3 => Agreement::Majority,
            _ => Agreement::Split,
        };
        if agreement(&votes) != expected {
            mismatches += 1;
        }
    }
    Ok(Outcome::new(
        mismatches == 0,
        format!("81 tuples, {mismatches} mismatches"),
    ))
}

fn oracle_cosine(a: &BowVector, b: &BowVector) -> f64 {
    let bm: BTreeMap<&str, f64> = b.iter().collect();
    let dot: f64 = a.iter().filter_map(|(t, w)| bm.get(t).map(|v| w * v)).sum();
    let na = a.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    let nb = b.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn oracle_jaccard(a: &[String], b: &[String]) -> f64 {
    let a: BTreeSet<&String> = a.iter().collect();
    let b: BTreeSet<&String> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// Neighbors by full sort of the whole index.
fn oracle_knn<'a>(
    docs: &'a [IndexedDoc],
    bow: &BowVector,
    terms: &[String],
    k: usize,
    metric: Metric,
) -> Vec<(&'a IndexedDoc, f64)> {
    let mut all: Vec<(&IndexedDoc, f64)> = docs
        .iter()
        .map(|d| {
            let s = match metric {
                Metric::Cosine => oracle_cosine(bow, &d.bow),
                Metric::Jaccard => oracle_jaccard(terms, &d.terms),
            };
            (d, s)
        })
        .collect();
    all.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.created_at.cmp(&b.0.created_at))
            .then_with(|| a.0.doc_id.cmp(&b.0.doc_id))
    });
    all.truncate(k);
    all
}

fn features_of(store: &CorpusStore, config: &Config) -> BTreeMap<String, DocFeatures> {
    store
        .documents()
        .map(|d| (d.doc_id.clone(), DocFeatures::from_document(d, config.model.n_max)))
        .collect()
}

fn knn_oracle() -> Result<Outcome, Box<dyn std::error::Error>> {
    let config = Config::default();
    let classes = Polarity::class_names();
    let (mut queries, mut order_errors, mut worst) = (0, 0, 0.0f64);
    for seed in 1..=3u64 {
        // a small vocabulary and short texts produce plenty of ties
        let spec = SynthSpec {
            seed,
            n_docs: 260,
            polarity_vocab: 8,
            aspect_vocab: 6,
            background_vocab: 20,
            min_words: 2,
            max_words: 6,
            ..SynthSpec::default()
        };
        let corpus = SynthCorpus::generate(&spec);
        let store = corpus.store_with(|_| false)?;
        let feats = features_of(&store, &config);
        let (train, test) = corpus.docs.split_at(200);
        let examples: Vec<Example> = train
            .iter()
            .map(|d| Example::new(&feats[&d.record.id], d.truth.polarity.as_str()))
            .collect();
        let model = ModelSet::train(Task::Polarity, Scope::Pooled, &classes, &examples, &[], config.model)?;
        for q in test.iter().chain(train.iter().step_by(10)) {
            let f = &feats[&q.record.id];
            let bow = model.doc_bow(f, &[]);
            for k in [1usize, 3, 5] {
                for metric in [Metric::Cosine, Metric::Jaccard] {
                    queries += 1;
                    let expected = oracle_knn(model.index().docs(), &bow, f.term_list(), k, metric);
                    let got = model.index().neighbors(&bow, f.term_list(), k, metric);
                    let same_order = expected.len() == got.len()
                        && expected.iter().zip(&got).all(|((d, _), n)| d.doc_id == n.doc_id);
                    if !same_order {
                        order_errors += 1;
                    }
                    let mut votes: BTreeMap<&str, f64> = classes.iter().map(|c| (c.as_str(), 0.0)).collect();
                    for (d, s) in &expected {
                        *votes.get_mut(d.label.as_str()).unwrap() += s;
                    }
                    let scores = model.score_knn(f, &bow, k, metric);
                    for (c, v) in votes {
                        let present = model.model(c).is_some();
                        let s = scores.get(c).unwrap_or(f64::NAN);
                        let diff = if present {
                            (s - v).abs()
                        } else if s == f64::NEG_INFINITY {
                            0.0
                        } else {
                            1.0
                        };
                        worst = worst.max(diff);
                    }
                }
            }
        }
    }
    Ok(Outcome::new(
        order_errors == 0 && worst <= 1e-9,
        format!("{queries} queries, {order_errors} ordering mismatches, max score diff {worst:.2e}"),
    ))
}

// ---------------------------------------------------------------- experiments

fn classes_for(task: Task, store: &CorpusStore) -> Vec<String> {
    match task {
        Task::Polarity => Polarity::class_names(),
        Task::Aspect => store.taxonomy().classes(),
    }
}

fn train_bank(
    store: &CorpusStore,
    feats: &BTreeMap<String, DocFeatures>,
    labels: &BTreeMap<String, LabelPair>,
    config: &Config,
) -> Result<CommitteeBank, Box<dyn std::error::Error>> {
    let labeled: Vec<(&DocFeatures, &LabelPair)> = labels.iter().map(|(id, l)| (&feats[id], l)).collect();
    Ok(CommitteeBank::train(
        store,
        &labeled,
        &[],
        AuthorProfiles::default(),
        config,
        &FusionFile::default(),
    )?)
}

/// Confusion matrix of the bank's fused predictions against `gold`. Polarity
/// always uses its three classes; aspect uses the classes that occur, so
/// taxonomy entries absent from the corpus do not count as zero-F classes.
fn evaluate(
    store: &CorpusStore,
    bank: &CommitteeBank,
    feats: &BTreeMap<String, DocFeatures>,
    gold: &BTreeMap<String, LabelPair>,
    task: Task,
) -> Result<ConfusionMatrix, Box<dyn std::error::Error>> {
    let mut pairs = Vec::with_capacity(gold.len());
    for (id, label) in gold {
        let v = bank
            .verdict(task, &feats[id])?
            .ok_or_else(|| format!("no {task} committee for {id}"))?;
        pairs.push((label.class(task).to_string(), v.predicted));
    }
    let classes: Vec<String> = match task {
        Task::Polarity => classes_for(task, store),
        Task::Aspect => pairs
            .iter()
            .flat_map(|(g, p)| [g.clone(), p.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let mut cm = ConfusionMatrix::new(classes);
    for (g, p) in &pairs {
        cm.add(g, p)?;
    }
    Ok(cm)
}

fn gold_map(gold: &GoldStore, ids: &BTreeSet<&str>) -> BTreeMap<String, LabelPair> {
    gold.iter()
        .filter(|g| !g.is_rejected() && ids.contains(g.doc_id.as_str()))
        .map(|g| (g.doc_id.clone(), g.pair()))
        .collect()
}

fn self_annotation() -> Result<Outcome, Box<dyn std::error::Error>> {
    let spec = SynthSpec::default();
    let corpus = SynthCorpus::generate(&spec);
    let store = corpus.store_with(|_| true)?;
    let config = Config::default();
    let start = Instant::now();
    let outcome = run_cascade(&store, &Lexicons::seed(), &config, &FusionFile::default(), now())?;
    let secs = start.elapsed().as_secs_f64();

    let ids: BTreeSet<&str> = corpus.docs.iter().map(|d| d.record.id.as_str()).collect();
    let corrected = gold_map(&outcome.gold, &ids);
    let feats = features_of(&store, &config);
    let bank = train_bank(&store, &feats, &corrected, &config)?;
    let cm = evaluate(&store, &bank, &feats, &corrected, Task::Polarity)?;
    let (acc, micro) = (cm.accuracy()?, cm.micro_f()?);

    let truth = corpus.truth();
    let observed_ok = corpus
        .docs
        .iter()
        .filter(|d| d.observed.polarity == d.truth.polarity)
        .count();
    let corrected_ok = corrected
        .iter()
        .filter(|(id, l)| truth[*id].polarity == l.polarity)
        .count();
    Ok(Outcome::new(
        acc >= 0.95 && micro >= 0.95 && secs < 60.0,
        format!(
            "resubstitution accuracy {acc:.3}, micro-F {micro:.3}, cascade {secs:.1}s, {} corrections; \
             labels matching truth {:.3} -> {:.3}",
            outcome.events.len(),
            observed_ok as f64 / corpus.docs.len() as f64,
            corrected_ok as f64 / corrected.len().max(1) as f64,
        ),
    ))
}

/// Harmonized training corpus: every document before the test split carries
/// one noisy annotation.
fn harmonization_run(seed: u64) -> Result<(f64, f64), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        seed,
        ..harmonization_spec()
    };
    let corpus = SynthCorpus::generate(&spec);
    let n_train = corpus.docs.len() * 4 / 5;
    let train_ids: BTreeSet<&str> = corpus.docs[..n_train].iter().map(|d| d.record.id.as_str()).collect();
    let store = corpus.store_with(|d| train_ids.contains(d.record.id.as_str()))?;
    let config = Config::default();
    let feats = features_of(&store, &config);
    let test: BTreeMap<String, LabelPair> = corpus.docs[n_train..]
        .iter()
        .map(|d| (d.record.id.clone(), d.truth.clone()))
        .collect();

    let before: BTreeMap<String, LabelPair> = corpus.docs[..n_train]
        .iter()
        .map(|d| (d.record.id.clone(), d.observed.clone()))
        .collect();
    let bank = train_bank(&store, &feats, &before, &config)?;
    let f_before = evaluate(&store, &bank, &feats, &test, Task::Polarity)?.macro_f()?;

    let outcome = run_cascade(&store, &Lexicons::seed(), &config, &FusionFile::default(), now())?;
    let after = gold_map(&outcome.gold, &train_ids);
    let bank = train_bank(&store, &feats, &after, &config)?;
    let f_after = evaluate(&store, &bank, &feats, &test, Task::Polarity)?.macro_f()?;
    Ok((f_before, f_after))
}

fn harmonization_spec() -> SynthSpec {
    SynthSpec::default()
}

fn harmonization_gain() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut rows = Vec::new();
    for seed in 1..=5 {
        rows.push(harmonization_run(seed)?);
    }
    let gain = rows.iter().map(|(b, a)| a - b).sum::<f64>() / rows.len() as f64;
    let per_seed: Vec<String> = rows.iter().map(|(b, a)| format!("{b:.3}->{a:.3}")).collect();
    Ok(Outcome::new(
        gain >= 0.03,
        format!("mean test macro-F gain {gain:+.3} [{}]", per_seed.join(", ")),
    ))
}

/// Perfect reviewer answering from the true labels.
struct TruthOracle<'a> {
    truth: &'a BTreeMap<String, LabelPair>,
}

impl ReviewOracle for TruthOracle<'_> {
    fn review(&mut self, items: &[ReviewItem]) -> Vec<(String, ReviewOutcome)> {
        items
            .iter()
            .map(|item| {
                let truth = &self.truth[&item.doc_id];
                let outcome = if item.suggestion.as_ref() == Some(truth) {
                    ReviewOutcome::Confirm
                } else {
                    ReviewOutcome::Relabel(truth.clone())
                };
                (item.doc_id.clone(), outcome)
            })
            .collect()
    }
}

fn propagation_spec() -> SynthSpec {
    SynthSpec {
        polarity_vocab: 150,
        zipf: 1.1,
        flip_rate: 0.0,
        ..SynthSpec::default()
    }
}

const PROPAGATION_SEED: usize = 150;
const PROPAGATION_POOL: usize = 5000;
const PROPAGATION_TEST: usize = 1000;

/// Returns (seed coverage, macro-F seed only, macro-F seed plus loop labels).
fn propagation_run(seed: u64) -> Result<(f64, f64, f64), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        seed,
        n_docs: PROPAGATION_SEED + PROPAGATION_POOL + PROPAGATION_TEST,
        ..propagation_spec()
    };
    let corpus = SynthCorpus::generate(&spec);
    let truth = corpus.truth();
    let (train, test) = corpus.docs.split_at(PROPAGATION_SEED + PROPAGATION_POOL);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<&str> = train.iter().map(|d| d.record.id.as_str()).collect();
    order.shuffle(&mut rng);
    let (seed_ids, pool_ids) = order.split_at(PROPAGATION_SEED);
    let coverage = corpus.vocabulary_coverage(seed_ids.iter().copied());

    let store = corpus.store_with(|_| false)?;
    let mut config = Config {
        seed,
        ..Config::default()
    };
    // no human review: every added label comes from propagation
    config.propagate.monthly_quota = 0;
    config.propagate.max_iter = 3;
    config.propagate.perf_threshold = 1.1;
    let feats = features_of(&store, &config);
    let mut seed_gold = GoldStore::new();
    for id in seed_ids {
        seed_gold.assign(id, truth[*id].clone(), Provenance::HumanMajority, now());
    }
    let test_gold: BTreeMap<String, LabelPair> = test.iter().map(|d| (d.record.id.clone(), d.truth.clone())).collect();

    let seed_labels = gold_map(&seed_gold, &seed_ids.iter().copied().collect());
    let bank = train_bank(&store, &feats, &seed_labels, &config)?;
    let f_seed = evaluate(&store, &bank, &feats, &test_gold, Task::Polarity)?.macro_f()?;

    let input = LoopInput {
        store: &store,
        config: &config,
        fusion: &FusionFile::default(),
        seed: seed_gold,
        pool: pool_ids.iter().map(|s| s.to_string()).collect(),
        dev: Vec::new(),
    };
    let outcome = run_loop(input, &mut TruthOracle { truth: &truth }, None, now())?;
    let labeled: BTreeSet<&str> = outcome.state.labeled.iter().map(String::as_str).collect();
    let grown = gold_map(&outcome.gold, &labeled);
    let bank = train_bank(&store, &feats, &grown, &config)?;
    let f_grown = evaluate(&store, &bank, &feats, &test_gold, Task::Polarity)?.macro_f()?;
    Ok((coverage, f_seed, f_grown))
}

fn propagation_gain() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut rows = Vec::new();
    for seed in 1..=5 {
        rows.push(propagation_run(seed)?);
    }
    let no_decrease = rows.iter().all(|(_, b, a)| a >= b);
    let low: Vec<f64> = rows
        .iter()
        .filter(|(c, _, _)| *c < 0.5)
        .map(|(_, b, a)| a - b)
        .collect();
    let low_gain = if low.is_empty() {
        f64::NAN
    } else {
        low.iter().sum::<f64>() / low.len() as f64
    };
    let mean_gain = rows.iter().map(|(_, b, a)| a - b).sum::<f64>() / rows.len() as f64;
    let per_seed: Vec<String> = rows
        .iter()
        .map(|(c, b, a)| format!("cov {c:.2}: {b:.3}->{a:.3}"))
        .collect();
    Ok(Outcome::new(
        no_decrease && !low.is_empty() && low_gain >= 0.02,
        format!(
            "mean gain {mean_gain:+.3}, gain on {} low-coverage seeds {low_gain:+.3} [{}]",
            low.len(),
            per_seed.join(", ")
        ),
    ))
}

type Fixture = (String, CorpusStore, GoldStore);

fn ledger_fixtures() -> Result<Vec<Fixture>, Box<dyn std::error::Error>> {
    let mut fixtures = Vec::new();
    let specs = [
        (
            "default",
            SynthSpec {
                n_docs: 600,
                ..SynthSpec::default()
            },
        ),
        (
            "aspect flips",
            SynthSpec {
                seed: 2,
                n_docs: 600,
                flip_aspect: true,
                ..SynthSpec::default()
            },
        ),
        (
            "loyal authors",
            SynthSpec {
                seed: 3,
                n_docs: 800,
                n_authors: 20,
                author_loyalty: 0.97,
                ..SynthSpec::default()
            },
        ),
    ];
    let mut config = Config::default();
    config.harmonize.profile_min_count = 20;
    for (name, spec) in specs {
        let corpus = SynthCorpus::generate(&spec);
        let mut store = corpus.store_with(|_| true)?;
        // a second, disagreeing annotator on some documents
        for d in corpus.docs.iter().step_by(7) {
            let mut rec = SynthCorpus::annotation(d, "second");
            rec.passages[0].polarity = RawPolarity::from(d.truth.polarity);
            store.add_annotation(rec)?;
        }
        let outcome = run_cascade(&store, &Lexicons::seed(), &config, &FusionFile::default(), now())?;
        fixtures.push((format!("cascade/{name}"), store, outcome.gold));
    }
    let spec = SynthSpec {
        seed: 4,
        n_docs: 900,
        flip_rate: 0.0,
        ..SynthSpec::default()
    };
    let corpus = SynthCorpus::generate(&spec);
    let truth = corpus.truth();
    let store = corpus.store_with(|_| false)?;
    let mut seed = GoldStore::new();
    for d in corpus.docs.iter().take(200) {
        seed.assign(&d.record.id, d.observed.clone(), Provenance::HumanMajority, now());
    }
    let mut config = Config::default();
    config.propagate.monthly_quota = 3;
    config.propagate.max_iter = 2;
    config.propagate.committee_stage = true;
    let input = LoopInput {
        store: &store,
        config: &config,
        fusion: &FusionFile::default(),
        seed,
        pool: corpus.docs[200..].iter().map(|d| d.record.id.clone()).collect(),
        dev: Vec::new(),
    };
    let outcome = run_loop(input, &mut TruthOracle { truth: &truth }, None, now())?;
    fixtures.push(("loop".to_string(), store, outcome.gold));
    Ok(fixtures)
}

fn ledger_replay() -> Result<Outcome, Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut failures = Vec::new();
    let mut events = 0;
    for (i, (name, store, gold)) in ledger_fixtures()?.into_iter().enumerate() {
        events += gold.ledger_len();
        // persist documents, annotations and gold, then rebuild from the log
        let path = dir.path().join(format!("store{i}.jsonl"));
        {
            let mut disk = CorpusStore::open(&path, store.entities(), Taxonomy::default())?;
            for d in store.documents() {
                disk.add_document(annoprop::corpus::InputRecord {
                    id: d.doc_id.clone(),
                    author: d.author_id.clone(),
                    timestamp: d.created_at,
                    entity: d.entity.clone(),
                    text: d.text.clone(),
                })?;
            }
            for a in store.annotations() {
                disk.add_annotation(a.clone())?;
            }
            disk.commit_gold(gold.clone())?;
        }
        let reopened = CorpusStore::open(&path, store.entities(), Taxonomy::default())?;
        let replayed = GoldStore::replay(reopened.gold().assignments(), reopened.gold().ledger());
        let exact = serde_json::to_vec(replayed.labels())? == serde_json::to_vec(gold.labels())?
            && replayed.labels() == gold.labels()
            && reopened.gold().labels() == gold.labels();
        if !exact {
            failures.push(name);
        }
    }
    Ok(Outcome::new(
        failures.is_empty(),
        format!("4 fixtures, {events} ledger events, mismatching: {failures:?}"),
    ))
}

fn gini_bounds() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out_of_bounds = 0;
    let mut purity_errors = 0;
    for i in 0..100_000 {
        let c = rng.gen_range(2..=12usize);
        let mut counts: Vec<f64> = (0..c)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(1..500) as f64
                }
            })
            .collect();
        if i % 10 == 0 {
            // pure term: a single class holds every occurrence
            counts.iter_mut().for_each(|x| *x = 0.0);
            counts[rng.gen_range(0..c)] = rng.gen_range(1..1000) as f64;
            if gini_of_counts(&counts, GiniForm::Purity) != Some(1.0) {
                purity_errors += 1;
            }
            continue;
        }
        if counts.iter().all(|&x| x == 0.0) {
            counts[0] = 1.0;
        }
        let g = gini_of_counts(&counts, GiniForm::Purity).unwrap_or(f64::NAN);
        if !(g >= 1.0 / c as f64 && g <= 1.0) {
            out_of_bounds += 1;
        }
    }
    let mut uniform_errors = 0;
    for c in 2..=12usize {
        for n in [1.0, 3.0, 7.0, 1000.0] {
            let g = gini_of_counts(&vec![n; c], GiniForm::Purity).unwrap_or(f64::NAN);
            if g.is_nan() || (g - 1.0 / c as f64).abs() > 1e-15 {
                uniform_errors += 1;
            }
        }
    }
    Ok(Outcome::new(
        out_of_bounds == 0 && purity_errors == 0 && uniform_errors == 0,
        format!("1e5 vectors: {out_of_bounds} out of bounds, {purity_errors} inexact pure cases, {uniform_errors} uniform cases off 1/C"),
    ))
}

fn fusion_invariance() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let kinds = ClassifierKind::ALL;
    let mut changed = 0;
    for _ in 0..10_000 {
        let c = rng.gen_range(2..=11usize);
        let classes: Vec<String> = (0..c).map(|i| format!("c{i:02}")).collect();
        let raw: Vec<ScoreVector> = kinds
            .iter()
            .map(|k| {
                let scores = classes
                    .iter()
                    .map(|cl| (cl.clone(), rng.gen_range(-50.0..50.0)))
                    .collect();
                ScoreVector::new(k.as_str(), scores)
            })
            .collect();
        let mut w: Vec<f64> = kinds.iter().map(|_| rng.gen::<f64>()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let config = FusionConfig::with_weights(&kinds, &w);
        let rescaled: Vec<ScoreVector> = raw
            .iter()
            .map(|v| {
                let a: f64 = rng.gen_range(0.01..100.0);
                let b: f64 = rng.gen_range(-1000.0..1000.0);
                let scores = v.scores.iter().map(|(cl, s)| (cl.clone(), a * s + b)).collect();
                ScoreVector::new(v.classifier.clone(), scores)
            })
            .collect();
        let fused = |vs: &[ScoreVector]| -> annoprop::Result<Option<String>> {
            let n: Vec<ScoreVector> = vs.iter().map(normalize).collect();
            Ok(fuse(&n, &config)?.argmax().map(str::to_string))
        };
        if fused(&raw)? != fused(&rescaled)? {
            changed += 1;
        }
    }
    Ok(Outcome::new(
        changed == 0,
        format!("1e4 vectors, {changed} argmax changes"),
    ))
}

fn entity_switch() -> Result<Outcome, Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        n_docs: 4000,
        flip_rate: 0.0,
        inverted: vec!["NS".to_string()],
        ..SynthSpec::default()
    };
    let corpus = SynthCorpus::generate(&spec);
    let store = corpus.store_with(|_| false)?;
    let config = Config::default();
    let feats = features_of(&store, &config);
    let n_train = corpus.docs.len() * 7 / 10;
    let pick = |range: &[annoprop::synth::SynthDoc], entity: Option<&str>| -> BTreeMap<String, LabelPair> {
        range
            .iter()
            .filter(|d| entity.is_none_or(|e| d.record.entity == e))
            .map(|d| (d.record.id.clone(), d.truth.clone()))
            .collect()
    };
    let (train, test) = corpus.docs.split_at(n_train);

    // polarity: each entity's test set scored by a model trained on the
    // other entity (relabeled as if it were this entity) and on itself
    let mut matched = Vec::new();
    let mut crossed = Vec::new();
    for (a, b) in [("FH", "NS"), ("NS", "FH")] {
        let test_b = pick(test, Some(b));
        let own = train_bank(&store, &feats, &pick(train, Some(b)), &config)?;
        matched.push(evaluate(&store, &own, &feats, &test_b, Task::Polarity)?.macro_f()?);
        let foreign = cross_entity_bank(&store, &feats, &pick(train, Some(a)), b, &config)?;
        crossed.push(evaluate(&store, &foreign, &feats, &test_b, Task::Polarity)?.macro_f()?);
    }
    let matched_f = matched.iter().sum::<f64>() / 2.0;
    let crossed_f = crossed.iter().sum::<f64>() / 2.0;

    // aspect: pooled model against per-entity models
    let pooled = train_bank(&store, &feats, &pick(train, None), &config)?;
    let mut pooled_f = Vec::new();
    let mut specific_f = Vec::new();
    for e in ["FH", "NS"] {
        let test_e = pick(test, Some(e));
        pooled_f.push(evaluate(&store, &pooled, &feats, &test_e, Task::Aspect)?.macro_f()?);
        let own = train_bank(&store, &feats, &pick(train, Some(e)), &config)?;
        specific_f.push(evaluate(&store, &own, &feats, &test_e, Task::Aspect)?.macro_f()?);
    }
    let pooled_mean = pooled_f.iter().sum::<f64>() / 2.0;
    let specific_mean = specific_f.iter().sum::<f64>() / 2.0;
    let drop = matched_f - crossed_f;
    Ok(Outcome::new(
        drop >= 0.10 && pooled_mean >= specific_mean - 0.02,
        format!(
            "polarity matched {matched_f:.3} vs switched {crossed_f:.3} (drop {drop:.3}); \
             aspect pooled {pooled_mean:.3} vs entity-specific {specific_mean:.3}"
        ),
    ))
}

/// A polarity bank for entity `target` trained on documents of another
/// entity: the training documents are presented as if written about
/// `target`, which is what applying a foreign entity model amounts to.
fn cross_entity_bank(
    store: &CorpusStore,
    feats: &BTreeMap<String, DocFeatures>,
    labels: &BTreeMap<String, LabelPair>,
    target: &str,
    config: &Config,
) -> Result<CommitteeBank, Box<dyn std::error::Error>> {
    let moved: BTreeMap<String, DocFeatures> = labels
        .keys()
        .map(|id| {
            let mut f = feats[id].clone();
            f.entity = target.to_string();
            (id.clone(), f)
        })
        .collect();
    train_bank(store, &moved, labels, config)
}

fn suggestion_influence() -> Result<Outcome, Box<dyn std::error::Error>> {
    const TASKS: usize = 2000;
    const PLANTED: f64 = 0.2;
    let spec = SynthSpec {
        seed: 21,
        n_docs: TASKS,
        ..SynthSpec::default()
    };
    let corpus = SynthCorpus::generate(&spec);
    let store = corpus.store_with(|_| false)?;
    let config = ServiceConfig {
        mode_policy: ModePolicy::Annotator,
        max_annotators: 2,
        ..ServiceConfig::default()
    };
    let mut service = AnnotationService::new(store, config);
    let mut rng = ChaCha8Rng::seed_from_u64(21);

    // system labels: right about 60% of the time
    let system: BTreeMap<String, Polarity> = corpus
        .docs
        .iter()
        .map(|d| {
            let p = if rng.gen_bool(0.6) {
                d.truth.polarity
            } else {
                **Polarity::CLASSES
                    .iter()
                    .filter(|p| **p != d.truth.polarity)
                    .collect::<Vec<_>>()
                    .choose(&mut rng)
                    .unwrap()
            };
            (d.record.id.clone(), p)
        })
        .collect();
    let items: Vec<ReviewItem> = corpus
        .docs
        .iter()
        .map(|d| {
            let suggestion = LabelPair::new(system[&d.record.id], d.truth.aspect.clone());
            ReviewItem::new(&d.record.id, ReviewReason::NoMajority, Task::Polarity).with_suggestion(Some(suggestion))
        })
        .collect();
    if service.enqueue(items) != TASKS {
        return Ok(Outcome::new(false, "queue rejected some tasks"));
    }

    // blind judgments: the truth, except 20% uniform noise
    let blind: BTreeMap<String, Polarity> = corpus
        .docs
        .iter()
        .map(|d| {
            let p = if rng.gen_bool(0.8) {
                d.truth.polarity
            } else {
                *Polarity::CLASSES.choose(&mut rng).unwrap()
            };
            (d.record.id.clone(), p)
        })
        .collect();
    let blind_rate = blind.iter().filter(|(id, p)| system[*id] == **p).count() as f64 / TASKS as f64;
    let switch = PLANTED / (1.0 - blind_rate);

    let mut t = now();
    let doc_text_len: BTreeMap<&str, usize> = corpus
        .docs
        .iter()
        .map(|d| (d.record.id.as_str(), d.record.text.chars().count()))
        .collect();
    for (annotator, mode) in [
        ("blind-annotator", Mode::Blind),
        ("suggested-annotator", Mode::Suggested),
    ] {
        while let Some(task) = service.next_task(annotator, Some(mode), t) {
            let doc = task.lease.doc_id.clone();
            let mut label = blind[&doc];
            if let Some(s) = &task.lease.suggestion {
                if s.polarity != label && rng.gen_bool(switch.min(1.0)) {
                    label = s.polarity;
                }
            }
            let record = AnnotationRecord {
                annotation_id: String::new(),
                doc_id: doc.clone(),
                annotator_id: annotator.to_string(),
                passages: vec![Passage {
                    span: [0, doc_text_len[doc.as_str()].max(1)],
                    polarity: RawPolarity::from(label),
                    aspect: corpus.docs[0].truth.aspect.clone(),
                    target_text: String::new(),
                }],
                low_confidence: false,
                mode,
                suggestion_shown: None,
                submitted_at: t,
            };
            service.submit(&task.lease.task_id, record, t)?;
            t += Duration::seconds(1);
        }
    }
    let report = service.influence_report(Task::Polarity)?;
    let n = |s: Option<annoprop::metrics::ModeStats>| s.map_or(0, |s| s.n);
    let delta = report.delta.unwrap_or(f64::NAN);
    Ok(Outcome::new(
        n(report.blind) == TASKS as u64 && n(report.suggested) == TASKS as u64 && (delta - PLANTED).abs() <= 0.03,
        format!(
            "{} blind and {} suggested tasks, blind agreement {blind_rate:.3}, measured delta {delta:.3} (planted {PLANTED})",
            n(report.blind),
            n(report.suggested)
        ),
    ))
}
