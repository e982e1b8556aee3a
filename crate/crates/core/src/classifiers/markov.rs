use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::textproc::NGRAM_SEP;

/// Class-conditional bigram counts over the word sequence of each document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BigramModel {
    unigrams: BTreeMap<String, f64>,
    total: f64,
    contexts: BTreeMap<String, f64>,
    bigrams: BTreeMap<String, f64>,
}

fn key(a: &str, b: &str) -> String {
    let mut k = String::with_capacity(a.len() + b.len() + 3);
    k.push_str(a);
    k.push(NGRAM_SEP);
    k.push_str(b);
    k
}

impl BigramModel {
    pub fn observe(&mut self, words: &[String]) {
        for w in words {
            *self.unigrams.entry(w.clone()).or_insert(0.0) += 1.0;
            self.total += 1.0;
        }
        for pair in words.windows(2) {
            *self.contexts.entry(pair[0].clone()).or_insert(0.0) += 1.0;
            *self.bigrams.entry(key(&pair[0], &pair[1])).or_insert(0.0) += 1.0;
        }
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> + '_ {
        self.unigrams.keys().map(String::as_str)
    }

    /// Add-α smoothed unigram log-probability.
    pub fn unigram_logprob(&self, w: &str, alpha: f64, vocab: f64) -> f64 {
        let c = self.unigrams.get(w).copied().unwrap_or(0.0);
        ((c + alpha) / (self.total + alpha * vocab)).ln()
    }

    /// Add-α smoothed transition log-probability.
    pub fn transition_logprob(&self, prev: &str, w: &str, alpha: f64, vocab: f64) -> f64 {
        let c = self.bigrams.get(&key(prev, w)).copied().unwrap_or(0.0);
        let ctx = self.contexts.get(prev).copied().unwrap_or(0.0);
        ((c + alpha) / (ctx + alpha * vocab)).ln()
    }

    /// Mean per-transition log-probability; texts with fewer than two words
    /// fall back to the mean unigram log-probability, empty texts score 0.
    pub fn mean_logprob(&self, words: &[String], alpha: f64, vocab: f64) -> f64 {
        match words.len() {
            0 => 0.0,
            1 => self.unigram_logprob(&words[0], alpha, vocab),
            n => {
                let sum: f64 = words
                    .windows(2)
                    .map(|p| self.transition_logprob(&p[0], &p[1], alpha, vocab))
                    .sum();
                sum / (n - 1) as f64
            }
        }
    }
}
