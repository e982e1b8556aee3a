//! Text normalization, tokenization and term weighting.

mod lexicon;
mod weighting;

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use lexicon::{categorize_hashtag, Confidence, HashtagCategory, LexiconEntry, Lexicons, NicknameEntry};
pub use weighting::{
    gini_of_counts, idf, tfidf_weight, weight_gini, weight_tfidf, BowVector, GiniForm, TermStats, TermWeighter, TfMode,
    WeightingScheme,
};

/// Separator placed between the words of an n-gram token.
pub const NGRAM_SEP: char = '\u{2581}';

/// Default maximum n-gram order.
pub const DEFAULT_N_MAX: usize = 2;

/// Sparse occurrence counts of the tokens of one document.
pub type TermCounts = BTreeMap<String, f64>;

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:https?://|www\.)\S+").expect("url regex"));
static RETWEET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^rt\s+@[\p{L}\p{N}_]+\s*:?\s*").expect("retweet regex"));
static WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[#@]?[\p{L}\p{N}_]+(?:['\u{2019}][\p{L}\p{N}_]+)*").expect("word regex"));

/// Lowercases, drops URLs and leading retweet markers, and collapses
/// whitespace. Diacritics are kept.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let without_urls = URL.replace_all(&lowered, " ");
    let mut collapsed = without_urls.split_whitespace().collect::<Vec<_>>().join(" ");
    // nested retweets: "rt @a: rt @b: ..."
    while let Some(m) = RETWEET.find(&collapsed) {
        collapsed = collapsed[m.end()..].trim_start().to_string();
    }
    collapsed
}

/// Hex SHA-256 of the normalized text; two documents with the same hash are
/// the same content.
pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(normalize(text).as_bytes()))
}

/// Tokens of one normalized text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    /// Word sequence (unigrams in order).
    pub words: Vec<String>,
    /// Unigrams followed by every n-gram up to the requested order.
    pub tokens: Vec<String>,
    pub hashtags: Vec<String>,
    pub mentions: Vec<String>,
}

impl TokenStream {
    pub fn counts(&self) -> TermCounts {
        let mut counts = TermCounts::new();
        for token in &self.tokens {
            *counts.entry(token.clone()).or_insert(0.0) += 1.0;
        }
        counts
    }
}

/// Splits on whitespace and punctuation, keeping hashtags, mentions and
/// apostrophe elisions (`l'état`) whole, then appends n-grams up to `n_max`.
pub fn tokenize(normalized: &str, n_max: usize) -> TokenStream {
    let n_max = n_max.max(1);
    let words: Vec<String> = WORD.find_iter(normalized).map(|m| m.as_str().to_lowercase()).collect();
    let hashtags = words.iter().filter(|w| w.starts_with('#')).cloned().collect();
    let mentions = words.iter().filter(|w| w.starts_with('@')).cloned().collect();
    let mut tokens = words.clone();
    for n in 2..=n_max {
        for window in words.windows(n) {
            let mut gram = String::new();
            for (i, w) in window.iter().enumerate() {
                if i > 0 {
                    gram.push(NGRAM_SEP);
                }
                gram.push_str(w);
            }
            tokens.push(gram);
        }
    }
    TokenStream {
        words,
        tokens,
        hashtags,
        mentions,
    }
}
