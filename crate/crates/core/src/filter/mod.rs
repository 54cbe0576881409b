// SPDX-License-Identifier: Apache-2.0

//! Caption filtering: stop-word removal, top-F frequent words, and
//! dropping every caption that mentions none of them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::caption::{corpus_to_bytes, read_records, records_to_bytes, CaptionRecord, TextCorpus};
use crate::error::{Error, Result};
use crate::hashing::content_hash;

pub const FILTERED_FORMAT: &str = "biasamp-filtered";
pub const DROP_NO_TOP_F: &str = "no-top-F-word";

const STOP_WORDS_EN: &str = include_str!("stopwords_en.txt");

/// The bundled English stop-word list (179 words).
pub fn default_stop_words() -> BTreeSet<String> {
    STOP_WORDS_EN.lines().map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect()
}

/// Lowercase, split on runs of non-alphanumeric characters, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Word budget: a fixed count, or twice the number of classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WordBudget {
    #[default]
    Auto,
    Fixed(usize),
}

impl WordBudget {
    pub fn resolve(self, num_classes: usize) -> Result<usize> {
        let f = match self {
            WordBudget::Auto => 2 * num_classes,
            WordBudget::Fixed(f) => f,
        };
        if f < 1 {
            return Err(Error::InvalidParameter("F must be at least 1".into()));
        }
        Ok(f)
    }
}

impl fmt::Display for WordBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WordBudget::Auto => f.write_str("auto"),
            WordBudget::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for WordBudget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(WordBudget::Auto);
        }
        s.parse()
            .map(WordBudget::Fixed)
            .map_err(|_| Error::InvalidParameter(format!("F must be \"auto\" or a positive integer, got {s:?}")))
    }
}

impl Serialize for WordBudget {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            WordBudget::Auto => s.serialize_str("auto"),
            WordBudget::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for WordBudget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(WordBudget::Fixed(n as usize)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterSpec {
    pub stop_words: BTreeSet<String>,
    pub f: WordBudget,
    pub num_classes: usize,
    /// Class-name words, used only to report which of them made the top-F.
    pub class_vocab: Option<BTreeSet<String>>,
}

impl FilterSpec {
    pub fn new(num_classes: usize) -> Self {
        FilterSpec {
            stop_words: default_stop_words(),
            f: WordBudget::Auto,
            num_classes,
            class_vocab: None,
        }
    }

    pub fn resolved_f(&self) -> Result<usize> {
        self.f.resolve(self.num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved_f()?;
        if let Some(w) = self.stop_words.iter().find(|w| w.to_lowercase() != **w) {
            return Err(Error::InvalidParameter(format!("stop word {w:?} is not lowercase")));
        }
        Ok(())
    }
}

/// Word counts, count descending then word ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    pub entries: Vec<(String, usize)>,
}

impl FrequencyTable {
    pub fn words(&self) -> Vec<String> {
        self.entries.iter().map(|(w, _)| w.clone()).collect()
    }

    pub fn truncated(&self, f: usize) -> FrequencyTable {
        FrequencyTable {
            entries: self.entries.iter().take(f).cloned().collect(),
        }
    }

    /// Two-column `word<TAB>count` text.
    pub fn to_report(&self) -> String {
        self.entries.iter().map(|(w, c)| format!("{w}\t{c}\n")).collect()
    }
}

/// Token-level counts over every caption, stop words removed first.
pub fn frequency_table(records: &[CaptionRecord], stop_words: &BTreeSet<String>) -> FrequencyTable {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for r in records {
        for t in tokenize(&r.text) {
            if !stop_words.contains(&t) {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
    }
    let mut entries: Vec<(String, usize)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    FrequencyTable { entries }
}

pub fn top_frequent(corpus: &TextCorpus, spec: &FilterSpec) -> Result<FrequencyTable> {
    spec.validate()?;
    let table = frequency_table(&corpus.records, &spec.stop_words);
    if table.entries.is_empty() {
        return Err(Error::Empty("vocabulary after stop-word removal"));
    }
    Ok(table.truncated(spec.resolved_f()?))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilteredCorpus {
    pub kept: Vec<CaptionRecord>,
    pub dropped: Vec<(CaptionRecord, String)>,
    pub top_f_words: Vec<String>,
    /// Content hash of the serialized input corpus.
    pub source_corpus: String,
    pub captioner_id: String,
    /// Top-F words that are also class-vocabulary words.
    pub class_words_in_top_f: Vec<String>,
    pub enabled: bool,
}

impl FilteredCorpus {
    /// The unfiltered corpus, for ablations.
    pub fn passthrough(corpus: &TextCorpus) -> FilteredCorpus {
        FilteredCorpus {
            kept: corpus.records.clone(),
            dropped: Vec::new(),
            top_f_words: Vec::new(),
            source_corpus: content_hash(&corpus_to_bytes(corpus)),
            captioner_id: corpus.captioner_id.clone(),
            class_words_in_top_f: Vec::new(),
            enabled: false,
        }
    }

    pub fn drop_reasons(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (_, reason) in &self.dropped {
            *out.entry(reason.clone()).or_insert(0) += 1;
        }
        out
    }
}

/// Partition `records` by whether their token set meets `words`.
pub fn filter_with_words(
    records: &[CaptionRecord],
    words: &BTreeSet<String>,
) -> (Vec<CaptionRecord>, Vec<(CaptionRecord, String)>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in records {
        if tokenize(&r.text).iter().any(|t| words.contains(t)) {
            kept.push(r.clone());
        } else {
            dropped.push((r.clone(), DROP_NO_TOP_F.to_string()));
        }
    }
    (kept, dropped)
}

pub fn filter_corpus(corpus: &TextCorpus, spec: &FilterSpec) -> Result<FilteredCorpus> {
    let top = top_frequent(corpus, spec)?;
    let top_f_words = top.words();
    let words: BTreeSet<String> = top_f_words.iter().cloned().collect();
    let (kept, dropped) = filter_with_words(&corpus.records, &words);
    let class_words_in_top_f = match &spec.class_vocab {
        Some(v) => top_f_words.iter().filter(|w| v.contains(*w)).cloned().collect(),
        None => Vec::new(),
    };
    Ok(FilteredCorpus {
        kept,
        dropped,
        top_f_words,
        source_corpus: content_hash(&corpus_to_bytes(corpus)),
        captioner_id: corpus.captioner_id.clone(),
        class_words_in_top_f,
        enabled: true,
    })
}

#[derive(Serialize, Deserialize)]
struct DroppedEntry {
    #[serde(flatten)]
    record: CaptionRecord,
    reason: String,
}

#[derive(Serialize, Deserialize)]
struct FilteredHeader {
    format: String,
    version: u32,
    enabled: bool,
    captioner_id: String,
    source_corpus_hash: String,
    top_f_words: Vec<String>,
    class_words_in_top_f: Vec<String>,
    drop_reasons: BTreeMap<String, usize>,
    dropped: Vec<DroppedEntry>,
}

/// Header (top-F words, drop reasons, dropped records) then one kept
/// record per line.
pub fn filtered_to_bytes(fc: &FilteredCorpus) -> Vec<u8> {
    let header = FilteredHeader {
        format: FILTERED_FORMAT.into(),
        version: 1,
        enabled: fc.enabled,
        captioner_id: fc.captioner_id.clone(),
        source_corpus_hash: fc.source_corpus.clone(),
        top_f_words: fc.top_f_words.clone(),
        class_words_in_top_f: fc.class_words_in_top_f.clone(),
        drop_reasons: fc.drop_reasons(),
        dropped: fc
            .dropped
            .iter()
            .map(|(r, reason)| DroppedEntry {
                record: r.clone(),
                reason: reason.clone(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header).expect("serializable");
    out.push(b'\n');
    out.extend(records_to_bytes(&fc.kept));
    out
}

pub fn write_filtered(fc: &FilteredCorpus, path: &Path) -> Result<()> {
    std::fs::write(path, filtered_to_bytes(fc)).map_err(|e| Error::io(path, e))
}

pub fn read_filtered(path: &Path) -> Result<FilteredCorpus> {
    let (header, kept): (FilteredHeader, _) = read_records(path, FILTERED_FORMAT)?;
    Ok(FilteredCorpus {
        kept,
        dropped: header.dropped.into_iter().map(|d| (d.record, d.reason)).collect(),
        top_f_words: header.top_f_words,
        source_corpus: header.source_corpus_hash,
        captioner_id: header.captioner_id,
        class_words_in_top_f: header.class_words_in_top_f,
        enabled: header.enabled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(texts: &[&str]) -> TextCorpus {
        TextCorpus {
            records: texts
                .iter()
                .enumerate()
                .map(|(i, t)| CaptionRecord {
                    sample_id: format!("s{i:03}"),
                    caption_index: 1,
                    text: t.to_string(),
                })
                .collect(),
            captioner_id: "test".into(),
            seed: 0,
            m: 1,
            created_from: String::new(),
            failures: Vec::new(),
            retries: 0,
        }
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("A red Circle!"), ["a", "red", "circle"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("pole-vault"), ["pole", "vault"]);
    }

    #[test]
    fn stop_words_bundled() {
        let s = default_stop_words();
        assert_eq!(s.len(), 179);
        assert!(s.contains("the") && s.contains("a") && !s.contains("red"));
    }

    #[test]
    fn counting_example() {
        let spec = FilterSpec {
            stop_words: ["a".to_string()].into_iter().collect(),
            f: WordBudget::Fixed(10),
            num_classes: 2,
            class_vocab: None,
        };
        let t = top_frequent(&corpus(&["a red circle", "a red square"]), &spec).unwrap();
        let want: Vec<(String, usize)> = [("red", 2), ("circle", 1), ("square", 1)]
            .iter()
            .map(|(w, c)| (w.to_string(), *c))
            .collect();
        assert_eq!(t.entries, want);
    }

    #[test]
    fn budget_resolution() {
        assert_eq!(WordBudget::Auto.resolve(10).unwrap(), 20);
        assert_eq!(WordBudget::Fixed(3).resolve(10).unwrap(), 3);
        assert!(WordBudget::Fixed(0).resolve(10).is_err());
        assert_eq!("auto".parse::<WordBudget>().unwrap(), WordBudget::Auto);
        assert_eq!("7".parse::<WordBudget>().unwrap(), WordBudget::Fixed(7));
        assert!("seven".parse::<WordBudget>().is_err());
    }

    #[test]
    fn drops_captions_without_top_words() {
        let c = corpus(&[
            "a young man smiling",
            "an old woman",
            "a young woman",
            "a young man",
            "an old man",
            "person in pink sweater and blue pants",
        ]);
        let fc = filter_corpus(&c, &FilterSpec::new(2)).unwrap();
        assert_eq!(fc.top_f_words, ["man", "young", "old", "woman"]);
        assert_eq!(fc.kept.len(), 5);
        assert_eq!(fc.dropped.len(), 1);
        assert_eq!(fc.dropped[0].1, DROP_NO_TOP_F);
        assert!(fc.dropped[0].0.text.starts_with("person"));
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        assert!(top_frequent(&corpus(&["the a an", "of"]), &FilterSpec::new(2)).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(&["a red circle", "the end", "red square"]);
        let fc = filter_corpus(&c, &FilterSpec::new(1)).unwrap();
        let p = dir.path().join("f.jsonl");
        write_filtered(&fc, &p).unwrap();
        assert_eq!(read_filtered(&p).unwrap(), fc);
    }
}
