use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use annoprop::classifiers::{Example, Scope};
use annoprop::committee::{distribution, FusionConfig, FusionFile};
use annoprop::corpus::{month_start_back, SplitSpec};
use annoprop::harmonize::{run_cascade, AuthorProfiles};
use annoprop::metrics::{annotator_consistency, mean_pairwise_kappa, temporal_distribution, Scores};
use annoprop::propagate::{resume_loop, run_loop, Checkpoint, CommitteeBank, LoopInput, ReviewOracle, ReviewOutcome};
use annoprop::service::{corrections_report, AnnotationService};
use annoprop::synth::{SynthCorpus, SynthSpec};
use annoprop::{
    Committee, Config, ConfusionMatrix, CorpusStore, DocFeatures, LabelPair, Lexicons, ModelSet, Polarity, ReviewItem,
    Task,
};
use anyhow::{bail, Context, Result};
use chrono::Utc;
use rand::{Rng, SeedableRng};

use crate::{read_jsonl, write_jsonl, Cli, Command, ReportKind};

pub fn run(cli: &Cli, config: &Config) -> Result<()> {
    let g = &cli.global;
    let tasks: Vec<Task> = match g.task {
        Some(t) => vec![t.into()],
        None => vec![Task::Polarity, Task::Aspect],
    };
    let entity = g.entity.as_deref();
    match &cli.command {
        Command::Synth {
            docs,
            annotations,
            n_docs,
            annotated,
        } => synth(config, docs, annotations, *n_docs, *annotated),
        Command::Ingest { docs, annotations } => {
            let mut store = open_store(&g.store, config)?;
            if let Some(path) = docs {
                let report = store.ingest(BufReader::new(File::open(path)?))?;
                println!(
                    "documents: {} accepted, {} rejected",
                    report.accepted,
                    report.rejected.len()
                );
            }
            if let Some(path) = annotations {
                let report = store.ingest_annotations(BufReader::new(File::open(path)?))?;
                println!(
                    "annotations: {} accepted, {} rejected",
                    report.accepted,
                    report.rejected.len()
                );
                for r in report.rejected.iter().take(10) {
                    println!("  line {}: {}", r.line, r.reason);
                }
            }
            Ok(())
        }
        Command::Harmonize { reviews, dry_run } => {
            let mut store = open_store(&g.store, config)?;
            let outcome = run_cascade(&store, &lexicons(config)?, config, &fusion_file(config)?, Utc::now())?;
            print!("{}", outcome.report.to_table());
            println!(
                "{} gold labels, {} corrections, {} review items",
                outcome.gold.len(),
                outcome.events.len(),
                outcome.reviews.len()
            );
            if let Some(path) = reviews {
                write_jsonl(path, &outcome.reviews)?;
            }
            if !dry_run {
                store.commit_gold(outcome.gold)?;
            }
            Ok(())
        }
        Command::Train { out, tune, dev_months } => train(&g.store, config, &tasks, entity, out, *tune, *dev_months),
        Command::Propagate {
            checkpoint,
            resume,
            queue,
            dev_months,
        } => propagate(
            &g.store,
            config,
            checkpoint.as_deref(),
            *resume,
            queue.as_deref(),
            *dev_months,
        ),
        Command::Evaluate { test_months } => evaluate(&g.store, config, &tasks, entity, *test_months),
        Command::Report { kind, json } => report(&g.store, config, &tasks, entity, *kind, *json),
        Command::Serve { bind, ui, queue } => {
            let store = open_store(&g.store, config)?;
            let mut service_config = config.service.clone();
            if let Some(b) = bind {
                service_config.bind = b.clone();
            }
            let ui = ui.clone().or_else(|| service_config.ui_dir.clone());
            let bind = service_config.bind.clone();
            let mut service = AnnotationService::new(store, service_config);
            if let Some(path) = queue {
                let items: Vec<ReviewItem> = read_jsonl(path)?;
                println!(
                    "queued {} of {} review items",
                    service.enqueue(items.clone()),
                    items.len()
                );
            }
            let state = annoprop_service::AppState::new(service);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(annoprop_service::serve(state, &bind, ui.as_deref()))?;
            Ok(())
        }
    }
}

fn open_store(path: &Path, config: &Config) -> Result<CorpusStore> {
    CorpusStore::open(path, config.entities.iter().cloned(), config.taxonomy.clone())
        .with_context(|| format!("opening store {}", path.display()))
}

fn lexicons(config: &Config) -> Result<Lexicons> {
    let mut lex = Lexicons::seed();
    if let Some(p) = &config.paths.hashtags {
        lex.load_hashtags(p)?;
    }
    if let Some(p) = &config.paths.nicknames {
        lex.load_nicknames(p)?;
    }
    Ok(lex)
}

fn fusion_file(config: &Config) -> Result<FusionFile> {
    Ok(match &config.paths.fusion {
        Some(p) if p.exists() => FusionFile::load(p)?,
        _ => FusionFile::default(),
    })
}

fn classes_of(task: Task, config: &Config) -> Vec<String> {
    match task {
        Task::Polarity => Polarity::class_names(),
        Task::Aspect => config.taxonomy.classes(),
    }
}

fn synth(config: &Config, docs: &Path, annotations: &Path, n_docs: usize, annotated: f64) -> Result<()> {
    let spec = SynthSpec {
        seed: config.seed,
        n_docs,
        entities: config.entities.clone(),
        ..SynthSpec::default()
    };
    let corpus = SynthCorpus::generate(&spec);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let records: Vec<_> = corpus.docs.iter().map(|d| d.record.clone()).collect();
    let notes: Vec<_> = corpus
        .docs
        .iter()
        .filter(|_| rng.gen_bool(annotated.clamp(0.0, 1.0)))
        .map(|d| SynthCorpus::annotation(d, "sim"))
        .collect();
    write_jsonl(docs, &records)?;
    write_jsonl(annotations, &notes)?;
    println!("{} documents, {} annotations", records.len(), notes.len());
    Ok(())
}

fn features(store: &CorpusStore, config: &Config) -> BTreeMap<String, DocFeatures> {
    store
        .documents()
        .map(|d| (d.doc_id.clone(), DocFeatures::from_document(d, config.model.n_max)))
        .collect()
}

fn latest(store: &CorpusStore) -> Result<chrono::DateTime<Utc>> {
    store
        .documents()
        .map(|d| d.created_at)
        .max()
        .context("the store has no documents")
}

fn scopes(task: Task, config: &Config, entity: Option<&str>) -> Vec<Scope> {
    match task {
        Task::Polarity => config
            .entities
            .iter()
            .filter(|e| entity.is_none_or(|x| x == e.as_str()))
            .map(|e| Scope::Entity(e.clone()))
            .collect(),
        Task::Aspect => vec![Scope::Pooled],
    }
}

fn file_stem(task: Task, scope: &Scope) -> String {
    match scope {
        Scope::Entity(e) => format!("{task}-{e}"),
        Scope::Pooled => format!("{task}-pooled"),
    }
}

fn train(
    store_path: &Path,
    config: &Config,
    tasks: &[Task],
    entity: Option<&str>,
    out: &Path,
    tune: bool,
    dev_months: u32,
) -> Result<()> {
    let store = open_store(store_path, config)?;
    let feats = features(&store, config);
    let split = if tune && dev_months > 0 {
        SplitSpec::dev_last_months(latest(&store)?, dev_months)
    } else {
        SplitSpec::default()
    };
    let part = store.partition(&split);
    std::fs::create_dir_all(out)?;
    let mut fusion = fusion_file(config)?;
    for &task in tasks {
        let classes = classes_of(task, config);
        for scope in scopes(task, config, entity) {
            let labeled = |ids: &BTreeSet<String>| -> Vec<(&DocFeatures, String)> {
                store
                    .gold()
                    .training_view()
                    .filter(|g| ids.contains(&g.doc_id))
                    .map(|g| (&feats[&g.doc_id], g.class(task).to_string()))
                    .filter(|(f, _)| scope.admits(&f.entity))
                    .collect()
            };
            let train_set = labeled(&part.train);
            if train_set.is_empty() {
                println!("{task}/{scope}: no labeled documents, skipped");
                continue;
            }
            let examples: Vec<Example> = train_set.iter().map(|(f, c)| Example::new(f, c.clone())).collect();
            let background: Vec<&DocFeatures> = if config.committee.background_df {
                feats
                    .values()
                    .filter(|f| scope.admits(&f.entity) && !store.gold().contains(&f.doc_id))
                    .collect()
            } else {
                Vec::new()
            };
            let models = ModelSet::train(task, scope.clone(), &classes, &examples, &background, config.model)?;
            let weights = fusion
                .get(&scope.to_string(), task)
                .unwrap_or_else(|| FusionConfig::uniform(&config.committee.classifiers));
            let mut committee = Committee::new(models, config.committee.classifiers.clone(), weights);
            committee.normalization = config.committee.normalization;
            let dev_set = labeled(&part.dev);
            if tune && !dev_set.is_empty() {
                let prior = distribution(&classes, train_set.iter().map(|(_, c)| c.as_str()));
                let dev: Vec<(&DocFeatures, &str)> = dev_set.iter().map(|(f, c)| (*f, c.as_str())).collect();
                let objective = committee.tune(&dev, prior, config.committee.kappa, config.committee.grid_step)?;
                fusion.set(&scope.to_string(), task, &committee.fusion);
                println!(
                    "{task}/{scope}: tuned on {} dev documents, objective {objective:.3}",
                    dev.len()
                );
            }
            let path = out.join(format!("{}.json", file_stem(task, &scope)));
            committee.models.to_writer(BufWriter::new(File::create(&path)?))?;
            println!(
                "{task}/{scope}: {} training documents -> {}",
                examples.len(),
                path.display()
            );
        }
    }
    let fusion_path = config.paths.fusion.clone().unwrap_or_else(|| out.join("fusion.toml"));
    fusion.save(&fusion_path)?;
    println!("fusion weights -> {}", fusion_path.display());
    Ok(())
}

/// Collects the sampled documents for later human review.
#[derive(Default)]
struct QueueOracle {
    items: Vec<ReviewItem>,
}

impl ReviewOracle for QueueOracle {
    fn review(&mut self, items: &[ReviewItem]) -> Vec<(String, ReviewOutcome)> {
        self.items.extend_from_slice(items);
        Vec::new()
    }
}

fn propagate(
    store_path: &Path,
    config: &Config,
    checkpoint: Option<&Path>,
    resume: bool,
    queue: Option<&Path>,
    dev_months: u32,
) -> Result<()> {
    let mut store = open_store(store_path, config)?;
    let fusion = fusion_file(config)?;
    let dev: Vec<(String, LabelPair)> = if dev_months > 0 {
        let part = store.partition(&SplitSpec::dev_last_months(latest(&store)?, dev_months));
        store
            .gold()
            .training_view()
            .filter(|g| part.dev.contains(&g.doc_id))
            .map(|g| (g.doc_id.clone(), g.pair()))
            .collect()
    } else {
        Vec::new()
    };
    let pool: Vec<String> = store
        .documents()
        .filter(|d| !store.gold().contains(&d.doc_id))
        .map(|d| d.doc_id.clone())
        .collect();
    let mut oracle = QueueOracle::default();
    let outcome = {
        let input = LoopInput {
            store: &store,
            config,
            fusion: &fusion,
            seed: store.gold().clone(),
            pool,
            dev,
        };
        if resume {
            let path = checkpoint.context("--resume needs --checkpoint")?;
            resume_loop(input, Checkpoint::load(path)?, &mut oracle, checkpoint, Utc::now())?
        } else {
            run_loop(input, &mut oracle, checkpoint, Utc::now())?
        }
    };
    println!(
        "{:>4} {:>8} {:>9} {:>7} {:>8} {:>9} {:>8}  dev macro-F",
        "iter", "labeled", "unlabeled", "pinned", "excluded", "auto", "sampled"
    );
    for r in &outcome.reports {
        let dev: Vec<String> = r.dev_macro_f.iter().map(|(t, f)| format!("{t}={f:.3}")).collect();
        println!(
            "{:>4} {:>8} {:>9} {:>7} {:>8} {:>9} {:>8}  {}",
            r.iteration,
            r.labeled,
            r.unlabeled,
            r.pinned,
            r.excluded,
            r.auto_added,
            r.sampled,
            dev.join(" ")
        );
    }
    println!("stopped: {:?}", outcome.state.status);
    if let Some(path) = queue {
        write_jsonl(path, &oracle.items)?;
        println!("{} review items -> {}", oracle.items.len(), path.display());
    }
    store.commit_gold(outcome.gold)?;
    Ok(())
}

fn evaluate(store_path: &Path, config: &Config, tasks: &[Task], entity: Option<&str>, test_months: u32) -> Result<()> {
    if test_months == 0 {
        bail!("--test-months must be at least 1");
    }
    let store = open_store(store_path, config)?;
    let feats = features(&store, config);
    let start = month_start_back(latest(&store)?, test_months - 1);
    let part = store.partition(&SplitSpec::train_test(start));
    let gold_of = |ids: &BTreeSet<String>| -> Vec<(&DocFeatures, LabelPair)> {
        store
            .gold()
            .training_view()
            .filter(|g| ids.contains(&g.doc_id))
            .map(|g| (&feats[&g.doc_id], g.pair()))
            .collect()
    };
    let train_set = gold_of(&part.train);
    let test_set = gold_of(&part.test);
    if train_set.is_empty() || test_set.is_empty() {
        bail!(
            "need gold labels on both sides of {start}: {} train, {} test",
            train_set.len(),
            test_set.len()
        );
    }
    let labeled: Vec<(&DocFeatures, &LabelPair)> = train_set.iter().map(|(f, l)| (*f, l)).collect();
    let bank = CommitteeBank::train(
        &store,
        &labeled,
        &[],
        AuthorProfiles::default(),
        config,
        &fusion_file(config)?,
    )?;
    println!(
        "train {} / test {} documents (test from {start})",
        train_set.len(),
        test_set.len()
    );
    println!(
        "{:<10} {:<8} {:>6} {:>9} {:>8} {:>8}",
        "task", "scope", "n", "accuracy", "macro-F", "micro-F"
    );
    for &task in tasks {
        for scope in scopes(task, config, entity) {
            let mut cm = ConfusionMatrix::new(classes_of(task, config));
            for (f, l) in test_set.iter().filter(|(f, _)| scope.admits(&f.entity)) {
                if let Some(v) = bank.verdict(task, f)? {
                    cm.add(l.class(task), &v.predicted)?;
                }
            }
            if cm.total() == 0 {
                continue;
            }
            let s = Scores::of(&cm)?;
            println!(
                "{:<10} {:<8} {:>6} {:>9.3} {:>8.3} {:>8.3}",
                task.as_str(),
                scope.to_string(),
                s.n,
                s.accuracy,
                s.macro_f,
                s.micro_f
            );
        }
    }
    Ok(())
}

fn report(
    store_path: &Path,
    config: &Config,
    tasks: &[Task],
    entity: Option<&str>,
    kind: ReportKind,
    json: bool,
) -> Result<()> {
    let store = open_store(store_path, config)?;
    let emit = |value: serde_json::Value, table: String| {
        if json {
            println!("{}", serde_json::to_string_pretty(&value).unwrap_or_default());
        } else {
            print!("{table}");
        }
    };
    match kind {
        ReportKind::Corrections => {
            let mut r = corrections_report(&store);
            r.rows
                .retain(|row| entity.is_none_or(|e| row.entity == e) && tasks.contains(&row.task));
            emit(serde_json::to_value(&r)?, r.to_table());
        }
        ReportKind::Distribution => {
            for &task in tasks {
                let mut d = temporal_distribution(&store, task, classes_of(task, config));
                d.rows.retain(|row| entity.is_none_or(|e| row.entity == e));
                emit(serde_json::to_value(&d)?, format!("{task}\n{}", d.to_table()));
            }
        }
        ReportKind::Influence => {
            let service = AnnotationService::new(store, config.service.clone());
            for &task in tasks {
                let r = service
                    .influence_report(task)
                    .map_err(|e| anyhow::anyhow!(e.to_string()))?;
                emit(serde_json::to_value(&r)?, format!("{task}\n{}", r.to_table()));
            }
        }
        ReportKind::Kappa => {
            for &task in tasks {
                let k = mean_pairwise_kappa(&store, task);
                let text = match k {
                    Some(k) => format!("{task}: mean pairwise kappa {k:.3}\n"),
                    None => format!("{task}: no document has two annotators\n"),
                };
                emit(serde_json::json!({ "task": task, "kappa": k }), text);
            }
        }
        ReportKind::Consistency => {
            let c = annotator_consistency(store.annotations(), |id| {
                store.document(id).map(|d| d.content_hash.clone())
            });
            let mut table = format!("{:<16} {:>6} {:>6} {:>6}\n", "annotator", "agree", "pairs", "rate");
            for (a, s) in &c {
                table.push_str(&format!(
                    "{a:<16} {:>6} {:>6} {:>6.3}\n",
                    s.agreeing_pairs, s.pairs, s.rate
                ));
            }
            emit(serde_json::to_value(&c)?, table);
        }
    }
    Ok(())
}
