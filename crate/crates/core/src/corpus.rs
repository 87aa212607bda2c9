//! Question ingestion, text cleaning and the tokenized corpus.
//!
//! Cleaning runs in a fixed order: code-keyword tagging on the raw text,
//! lowercasing, punctuation stripping, whitespace tokenization, stopword
//! removal, dropping empty documents and finally building a sorted vocabulary.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// One question as read from the source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// UTF-8 CSV with a header row.
    Csv,
    /// Plain text, one question per blank-line-separated block.
    TextBlocks,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub id_col: String,
    pub text_col: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            id_col: "id".to_string(),
            text_col: "question".to_string(),
        }
    }
}

/// Read raw records in file order.
pub fn ingest(path: &Path, format: InputFormat, opts: &IngestOptions) -> Result<Vec<RawRecord>> {
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        InputFormat::Csv => ingest_csv(&data, opts),
        InputFormat::TextBlocks => Ok(ingest_blocks(&data)),
    }
}

pub fn ingest_csv(data: &str, opts: &IngestOptions) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(data.as_bytes());
    let headers = reader.headers().map_err(|e| Error::MalformedRow {
        row: 1,
        message: e.to_string(),
    })?;
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_idx = column(&opts.id_col)?;
    let text_idx = column(&opts.text_col)?;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // Header is row 1.
        let row_no = i as u64 + 2;
        let row = row.map_err(|e| Error::MalformedRow {
            row: e.position().map(|p| p.line()).unwrap_or(row_no),
            message: e.to_string(),
        })?;
        let id = row.get(id_idx).unwrap_or_default().trim().to_string();
        if id.is_empty() {
            return Err(Error::InvalidRecord {
                row: row_no,
                message: "empty id".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::InvalidRecord {
                row: row_no,
                message: format!("duplicate id `{id}`"),
            });
        }
        let text = row.get(text_idx).unwrap_or_default().to_string();
        records.push(RawRecord { id, text });
    }
    Ok(records)
}

/// Blocks are separated by one or more blank lines; ids are 1-based block
/// positions.
pub fn ingest_blocks(data: &str) -> Vec<RawRecord> {
    let mut records = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |current: &mut Vec<&str>, records: &mut Vec<RawRecord>| {
        if !current.is_empty() {
            records.push(RawRecord {
                id: (records.len() + 1).to_string(),
                text: current.join("\n"),
            });
            current.clear();
        }
    };
    for line in data.lines() {
        if line.trim().is_empty() {
            flush(&mut current, &mut records);
        } else {
            current.push(line);
        }
    }
    flush(&mut current, &mut records);
    records
}

pub const DEFAULT_CODE_KEYWORDS: &[&str] = &["BigO", "Modulo", "for", "if", "while", "else", "print"];

pub const DEFAULT_PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~\u{201c}\u{201d}\u{2018}\u{2019}\u{2013}\u{2014}\u{2026}";

pub const ENGLISH_STOPWORDS: &[&str] = &[
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "your", "yours",
    "yourself", "yourselves", "he", "him", "his", "himself", "she", "her", "hers", "herself",
    "it", "its", "itself", "they", "them", "their", "theirs", "themselves", "what", "which",
    "who", "whom", "this", "that", "these", "those", "am", "is", "are", "was", "were", "be",
    "been", "being", "have", "has", "had", "having", "do", "does", "did", "doing", "a", "an",
    "the", "and", "but", "if", "or", "because", "as", "until", "while", "of", "at", "by",
    "for", "with", "about", "against", "between", "into", "through", "during", "before",
    "after", "above", "below", "to", "from", "up", "down", "in", "out", "on", "off", "over",
    "under", "again", "further", "then", "once", "here", "there", "when", "where", "why",
    "how", "all", "any", "both", "each", "few", "more", "most", "other", "some", "such", "no",
    "nor", "not", "only", "own", "same", "so", "than", "too", "very", "s", "t", "can", "will",
    "just", "don", "should", "now", "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren",
    "couldn", "didn", "doesn", "hadn", "hasn", "haven", "isn", "ma", "mightn", "mustn",
    "needn", "shan", "shouldn", "wasn", "weren", "won", "wouldn",
];

/// Cleaning configuration. Loaded from JSON; missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub stopwords: Vec<String>,
    pub code_keywords: Vec<String>,
    pub punctuation: String,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            stopwords: ENGLISH_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            code_keywords: DEFAULT_CODE_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            punctuation: DEFAULT_PUNCTUATION.to_string(),
        }
    }
}

impl PreprocessConfig {
    /// No stopwords, no code keywords, default punctuation.
    pub fn minimal() -> Self {
        PreprocessConfig {
            stopwords: Vec::new(),
            code_keywords: Vec::new(),
            punctuation: DEFAULT_PUNCTUATION.to_string(),
        }
    }
}

/// Applies the cleaning steps to text. Built once per `preprocess` call.
pub struct TextCleaner {
    stopwords: HashSet<String>,
    keywords: Vec<(String, String)>,
    punctuation: HashSet<char>,
}

impl TextCleaner {
    pub fn new(config: &PreprocessConfig) -> Self {
        let punctuation: HashSet<char> = config.punctuation.chars().collect();
        let mut keywords = Vec::new();
        let mut tags_seen = HashSet::new();
        for kw in &config.code_keywords {
            let tag: String = kw
                .to_lowercase()
                .chars()
                .filter(|c| !punctuation.contains(c) && !c.is_whitespace())
                .collect();
            if !tag.is_empty() && tags_seen.insert(tag.clone()) {
                keywords.push((kw.clone(), tag));
            }
        }
        // A tag term is never a stopword, otherwise tagged keywords would vanish.
        let stopwords = config
            .stopwords
            .iter()
            .map(|s| s.to_lowercase())
            .filter(|s| !tags_seen.contains(s))
            .collect();
        TextCleaner {
            stopwords,
            keywords,
            punctuation,
        }
    }

    /// Tag tokens for every configured keyword that occurs as a whole token
    /// (case-sensitive) in the raw text, in configuration order.
    pub fn code_tags(&self, raw: &str) -> Vec<String> {
        let words: HashSet<&str> = raw
            .split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .filter(|w| !w.is_empty())
            .collect();
        self.keywords
            .iter()
            .filter(|(kw, _)| words.contains(kw.as_str()))
            .map(|(_, tag)| tag.clone())
            .collect()
    }

    /// Lowercase, strip punctuation, split on whitespace and drop stopwords.
    pub fn clean(&self, text: &str) -> Vec<String> {
        let stripped: String = text
            .to_lowercase()
            .chars()
            .map(|c| if self.punctuation.contains(&c) { ' ' } else { c })
            .collect();
        stripped
            .split_whitespace()
            .filter(|t| !self.stopwords.contains(*t))
            .map(str::to_string)
            .collect()
    }

    pub fn is_stopword(&self, term: &str) -> bool {
        self.stopwords.contains(term)
    }

    /// Full per-document pipeline: tags first, then cleaned body tokens.
    pub fn tokens(&self, raw: &str) -> Vec<String> {
        let mut out = self.code_tags(raw);
        out.extend(self.clean(raw));
        out
    }
}

/// Sorted list of unique terms; ids are positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(terms: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidCorpus(format!("duplicate vocabulary term `{t}`")));
            }
        }
        Ok(Vocabulary { terms, index })
    }

    fn from_sorted_set(set: BTreeSet<String>) -> Self {
        let terms: Vec<String> = set.into_iter().collect();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { terms, index }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: usize) -> Option<&str> {
        self.terms.get(id).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.terms.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let terms = Vec::<String>::deserialize(d)?;
        Vocabulary::new(terms).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    Permute { seed: u64 },
    Prefix { len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default)]
    pub transforms: Vec<Transform>,
}

impl Provenance {
    pub fn new(source: impl Into<String>) -> Self {
        Provenance {
            source: source.into(),
            transforms: Vec::new(),
        }
    }

    /// Seed of the most recent permutation, if any.
    pub fn permutation_seed(&self) -> Option<u64> {
        self.transforms.iter().rev().find_map(|t| match t {
            Transform::Permute { seed } => Some(*seed),
            _ => None,
        })
    }

    pub fn prefix_len(&self) -> Option<usize> {
        self.transforms.iter().rev().find_map(|t| match t {
            Transform::Prefix { len } => Some(*len),
            _ => None,
        })
    }
}

/// An ordered, non-empty collection of documents over one vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub provenance: Provenance,
    vocabulary: Vocabulary,
    documents: Vec<Document>,
}

impl Corpus {
    /// Validating constructor.
    pub fn new(provenance: Provenance, vocabulary: Vocabulary, documents: Vec<Document>) -> Result<Self> {
        let corpus = Corpus {
            provenance,
            vocabulary,
            documents,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Build a corpus from already-tokenized documents. The vocabulary is the
    /// sorted set of all tokens.
    pub fn from_tokenized<S: AsRef<str>>(source: &str, docs: Vec<(String, Vec<S>)>) -> Result<Self> {
        let set: BTreeSet<String> = docs
            .iter()
            .flat_map(|(_, toks)| toks.iter().map(|t| t.as_ref().to_string()))
            .collect();
        let vocabulary = Vocabulary::from_sorted_set(set);
        let documents = docs
            .into_iter()
            .map(|(id, toks)| Document {
                id,
                tokens: toks
                    .iter()
                    .map(|t| vocabulary.id(t.as_ref()).expect("term in vocabulary"))
                    .collect(),
            })
            .collect();
        Corpus::new(Provenance::new(source), vocabulary, documents)
    }

    pub fn validate(&self) -> Result<()> {
        if self.documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let v = self.vocabulary.len();
        let mut ids = HashSet::new();
        for doc in &self.documents {
            if doc.tokens.is_empty() {
                return Err(Error::InvalidCorpus(format!("document `{}` has no tokens", doc.id)));
            }
            if let Some(&bad) = doc.tokens.iter().find(|&&t| t >= v) {
                return Err(Error::InvalidCorpus(format!(
                    "document `{}` has token id {bad} outside vocabulary of size {v}",
                    doc.id
                )));
            }
            if !ids.insert(doc.id.as_str()) {
                return Err(Error::InvalidCorpus(format!("duplicate document id `{}`", doc.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(|d| d.tokens.len()).sum()
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.documents.iter().map(|d| d.id.clone()).collect()
    }

    /// Tokens of one document as strings.
    pub fn document_terms(&self, index: usize) -> Vec<&str> {
        self.documents[index]
            .tokens
            .iter()
            .map(|&t| self.vocabulary.terms[t].as_str())
            .collect()
    }

    /// SHA-256 over vocabulary and documents (provenance excluded).
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for term in &self.vocabulary.terms {
            hasher.update(term.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update([0xffu8]);
        for doc in &self.documents {
            hasher.update(doc.id.as_bytes());
            hasher.update([0u8]);
            for &t in &doc.tokens {
                hasher.update((t as u64).to_le_bytes());
            }
            hasher.update([0xffu8]);
        }
        hex::encode(hasher.finalize())
    }

    /// Deterministic seeded shuffle of document order.
    pub fn permute(&self, seed: u64) -> Corpus {
        let mut documents = self.documents.clone();
        documents.shuffle(&mut rng_from_seed(seed));
        let mut provenance = self.provenance.clone();
        provenance.transforms.push(Transform::Permute { seed });
        Corpus {
            provenance,
            vocabulary: self.vocabulary.clone(),
            documents,
        }
    }

    /// First `k` documents; the vocabulary is rebuilt from the subset.
    pub fn prefix(&self, k: usize) -> Result<Corpus> {
        if k == 0 || k > self.len() {
            return Err(Error::PrefixOutOfRange { k, size: self.len() });
        }
        let docs = &self.documents[..k];
        let used: BTreeSet<usize> = docs.iter().flat_map(|d| d.tokens.iter().copied()).collect();
        // Old ids are sorted by term, so the filtered terms stay sorted.
        let remap: HashMap<usize, usize> = used.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let terms: Vec<String> = used.iter().map(|&old| self.vocabulary.terms[old].clone()).collect();
        let vocabulary = Vocabulary::new(terms)?;
        let documents = docs
            .iter()
            .map(|d| Document {
                id: d.id.clone(),
                tokens: d.tokens.iter().map(|t| remap[t]).collect(),
            })
            .collect();
        let mut provenance = self.provenance.clone();
        provenance.transforms.push(Transform::Prefix { len: k });
        Ok(Corpus {
            provenance,
            vocabulary,
            documents,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Corpus> {
        let corpus: Corpus = serde_json::from_str(s)?;
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Corpus::from_json(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Run the cleaning pipeline over raw records and build the corpus.
pub fn preprocess(records: &[RawRecord], config: &PreprocessConfig, source: &str) -> Result<Corpus> {
    let cleaner = TextCleaner::new(config);
    let docs: Vec<(String, Vec<String>)> = records
        .iter()
        .map(|r| (r.id.clone(), cleaner.tokens(&r.text)))
        .filter(|(_, toks)| !toks.is_empty())
        .collect();
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Corpus::from_tokenized(source, docs)
}
