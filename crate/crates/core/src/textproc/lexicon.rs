use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Polarity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HashtagCategory {
    Topic,
    Sentiment,
    SentimentTopic,
    Unknown,
}

/// Whether a lexicon conflict may overwrite a label or only raise a review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Hard,
    #[default]
    Soft,
}

impl FromStr for Confidence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hard" => Ok(Confidence::Hard),
            "soft" | "" => Ok(Confidence::Soft),
            other => Err(Error::Config(format!("unknown confidence `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub polarity: Polarity,
    /// Target entity; `None` means the entity of the document.
    pub entity: Option<String>,
    pub confidence: Confidence,
}

#[derive(Debug, Clone)]
pub struct NicknameEntry {
    pub pattern: String,
    pub entity: String,
    pub polarity: Polarity,
    pub confidence: Confidence,
    matcher: Regex,
}

impl NicknameEntry {
    pub fn new(pattern: &str, entity: &str, polarity: Polarity, confidence: Confidence) -> Result<Self> {
        let pattern = pattern.trim().trim_start_matches('@').to_lowercase();
        let body = pattern.split('*').map(regex::escape).collect::<Vec<_>>().join(".*");
        let matcher = Regex::new(&format!("^{body}$"))
            .map_err(|e| Error::Config(format!("bad nickname pattern `{pattern}`: {e}")))?;
        Ok(Self {
            pattern,
            entity: entity.to_string(),
            polarity,
            confidence,
            matcher,
        })
    }

    /// Matches a handle with or without its leading `@`, case-insensitively.
    pub fn matches(&self, handle: &str) -> bool {
        self.matcher
            .is_match(&handle.trim().trim_start_matches('@').to_lowercase())
    }
}

/// Hashtag and nickname lexicons. A tag belongs to at most one hashtag map.
#[derive(Debug, Clone, Default)]
pub struct Lexicons {
    sentiment: BTreeMap<String, LexiconEntry>,
    topic: BTreeSet<String>,
    sentiment_topic: BTreeMap<String, LexiconEntry>,
    nicknames: Vec<NicknameEntry>,
}

const SEED_HASHTAGS: &str = include_str!("../../data/hashtags.tsv");
const SEED_NICKNAMES: &str = include_str!("../../data/nicknames.tsv");

fn normalize_tag(tag: &str) -> String {
    tag.trim().to_lowercase()
}

impl Lexicons {
    pub fn new() -> Self {
        Self::default()
    }

    /// Small seed lexicons shipped with the crate.
    pub fn seed() -> Self {
        let mut lex = Self::new();
        lex.load_hashtags_str(SEED_HASHTAGS)
            .expect("seed hashtag lexicon parses");
        lex.load_nicknames_str(SEED_NICKNAMES)
            .expect("seed nickname lexicon parses");
        lex
    }

    fn check_free(&self, tag: &str) -> Result<()> {
        if self.sentiment.contains_key(tag) || self.topic.contains(tag) || self.sentiment_topic.contains_key(tag) {
            return Err(Error::Config(format!("hashtag `{tag}` listed twice")));
        }
        Ok(())
    }

    pub fn add_topic(&mut self, tag: &str) -> Result<()> {
        let tag = normalize_tag(tag);
        self.check_free(&tag)?;
        self.topic.insert(tag);
        Ok(())
    }

    pub fn add_sentiment(&mut self, tag: &str, polarity: Polarity, confidence: Confidence) -> Result<()> {
        let tag = normalize_tag(tag);
        self.check_free(&tag)?;
        self.sentiment.insert(
            tag,
            LexiconEntry {
                polarity,
                entity: None,
                confidence,
            },
        );
        Ok(())
    }

    pub fn add_sentiment_topic(
        &mut self,
        tag: &str,
        polarity: Polarity,
        entity: &str,
        confidence: Confidence,
    ) -> Result<()> {
        let tag = normalize_tag(tag);
        self.check_free(&tag)?;
        self.sentiment_topic.insert(
            tag,
            LexiconEntry {
                polarity,
                entity: Some(entity.to_string()),
                confidence,
            },
        );
        Ok(())
    }

    pub fn add_nickname(&mut self, entry: NicknameEntry) {
        self.nicknames.push(entry);
    }

    pub fn nicknames(&self) -> &[NicknameEntry] {
        &self.nicknames
    }

    /// Sentiment entry of a tag, from either the sentiment or the
    /// sentiment-topic map.
    pub fn sentiment_of(&self, tag: &str) -> Option<&LexiconEntry> {
        let tag = normalize_tag(tag);
        self.sentiment.get(&tag).or_else(|| self.sentiment_topic.get(&tag))
    }

    pub fn category(&self, tag: &str) -> HashtagCategory {
        let tag = normalize_tag(tag);
        if self.topic.contains(&tag) {
            HashtagCategory::Topic
        } else if self.sentiment.contains_key(&tag) {
            HashtagCategory::Sentiment
        } else if self.sentiment_topic.contains_key(&tag) {
            HashtagCategory::SentimentTopic
        } else {
            HashtagCategory::Unknown
        }
    }

    /// Parses `tag<TAB>category<TAB>polarity[<TAB>entity[<TAB>hard|soft]]`.
    /// Empty entity fields may be written as `-` or `*`.
    pub fn load_hashtags_str(&mut self, text: &str) -> Result<usize> {
        let mut n = 0;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with("//") {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| Error::MalformedRecord {
                line: i + 1,
                message: msg.to_string(),
            };
            if cols.len() < 3 {
                return Err(bad("expected at least 3 tab-separated columns"));
            }
            let tag = cols[0];
            if !tag.starts_with('#') {
                return Err(bad("tag must start with '#'"));
            }
            let entity = cols
                .get(3)
                .map(|e| e.trim())
                .filter(|e| !e.is_empty() && *e != "-" && *e != "*");
            let confidence = match cols.get(4) {
                Some(c) => c.parse()?,
                None => Confidence::default(),
            };
            match cols[1].trim().to_ascii_lowercase().as_str() {
                "topic" => self.add_topic(tag)?,
                "sentiment" => {
                    let pol = cols[2].parse::<Polarity>().map_err(|e| bad(&e.to_string()))?;
                    self.add_sentiment(tag, pol, confidence)?;
                }
                "sentiment_topic" | "sentiment-topic" => {
                    let pol = cols[2].parse::<Polarity>().map_err(|e| bad(&e.to_string()))?;
                    let entity = entity.ok_or_else(|| bad("sentiment_topic needs an entity"))?;
                    self.add_sentiment_topic(tag, pol, entity, confidence)?;
                }
                other => return Err(bad(&format!("unknown category `{other}`"))),
            }
            n += 1;
        }
        Ok(n)
    }

    /// Parses `pattern<TAB>entity<TAB>polarity[<TAB>hard|soft]`.
    pub fn load_nicknames_str(&mut self, text: &str) -> Result<usize> {
        let mut n = 0;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with("//") {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    message: "expected pattern, entity and polarity".into(),
                });
            }
            let polarity = cols[2].parse::<Polarity>()?;
            let confidence = match cols.get(3) {
                Some(c) => c.parse()?,
                None => Confidence::default(),
            };
            self.add_nickname(NicknameEntry::new(cols[0], cols[1].trim(), polarity, confidence)?);
            n += 1;
        }
        Ok(n)
    }

    pub fn load_hashtags(&mut self, path: &Path) -> Result<usize> {
        self.load_hashtags_str(&std::fs::read_to_string(path)?)
    }

    pub fn load_nicknames(&mut self, path: &Path) -> Result<usize> {
        self.load_nicknames_str(&std::fs::read_to_string(path)?)
    }
}

pub fn categorize_hashtag(tag: &str, lexicons: &Lexicons) -> Result<HashtagCategory> {
    if !tag.trim().starts_with('#') {
        return Err(Error::NotAHashtag(tag.to_string()));
    }
    Ok(lexicons.category(tag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_categories() {
        let lex = Lexicons::seed();
        assert_eq!(categorize_hashtag("#LeDebat", &lex).unwrap(), HashtagCategory::Topic);
        assert_eq!(categorize_hashtag("#idiot", &lex).unwrap(), HashtagCategory::Sentiment);
        assert_eq!(
            categorize_hashtag("#vivehollande", &lex).unwrap(),
            HashtagCategory::SentimentTopic
        );
        assert_eq!(categorize_hashtag("#zzz", &lex).unwrap(), HashtagCategory::Unknown);
        assert!(matches!(
            categorize_hashtag("ledebat", &lex),
            Err(Error::NotAHashtag(_))
        ));
    }

    #[test]
    fn tag_in_one_map_only() {
        let mut lex = Lexicons::new();
        lex.add_topic("#x").unwrap();
        assert!(lex.add_sentiment("#X", Polarity::Neg, Confidence::Hard).is_err());
        let err = lex.load_hashtags_str("#y\ttopic\t-\n#y\tsentiment\tNEG\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let mut lex = Lexicons::new();
        match lex.load_hashtags_str("#a\ttopic\t-\nbroken\n") {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nickname_globs() {
        let e = NicknameEntry::new("@nainportekoi*", "NS", Polarity::Neg, Confidence::Hard).unwrap();
        assert!(e.matches("@NainPortekoi"));
        assert!(e.matches("nainportekoi_2012"));
        assert!(!e.matches("@portekoi"));
        let lex = Lexicons::seed();
        assert!(lex.nicknames().iter().any(|n| n.matches("@hollandouillette")));
    }
}
