//! Shared fixtures for the benchmarks.

use std::collections::BTreeMap;

use annoprop::classifiers::{Example, Scope};
use annoprop::synth::{SynthCorpus, SynthSpec};
use annoprop::{ClassifierKind, Committee, CorpusStore, DocFeatures, FusionConfig, ModelSet, Polarity, Task};

pub struct Fixture {
    pub corpus: SynthCorpus,
    pub store: CorpusStore,
    pub features: BTreeMap<String, DocFeatures>,
}

impl Fixture {
    /// A synthetic corpus of `n_docs` documents, all annotated once.
    pub fn new(n_docs: usize) -> Self {
        let corpus = SynthCorpus::generate(&SynthSpec {
            n_docs,
            ..SynthSpec::default()
        });
        let store = corpus.store_with(|_| true).expect("synthetic corpus is valid");
        let features = store
            .documents()
            .map(|d| (d.doc_id.clone(), DocFeatures::from_document(d, 2)))
            .collect();
        Self {
            corpus,
            store,
            features,
        }
    }

    /// Polarity committee over every document, pooled across entities.
    pub fn committee(&self) -> Committee {
        let examples: Vec<Example> = self
            .corpus
            .docs
            .iter()
            .map(|d| Example::new(&self.features[&d.record.id], d.observed.polarity.as_str()))
            .collect();
        let models = ModelSet::train(
            Task::Polarity,
            Scope::Pooled,
            &Polarity::class_names(),
            &examples,
            &[],
            Default::default(),
        )
        .expect("training set is not empty");
        let kinds = ClassifierKind::ALL.to_vec();
        let fusion = FusionConfig::uniform(&kinds);
        Committee::new(models, kinds, fusion)
    }
}
