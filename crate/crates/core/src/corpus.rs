//! Corpus records and BeIR-style file handling.
//!
//! A dataset directory holds `corpus.jsonl` (`_id`, `title`, `text`),
//! `queries.jsonl` (`_id`, `text`) and a headerless three column qrels TSV
//! (`query-id`, `corpus-id`, integer grade).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{GplError, Result};
use crate::seed::rng_for;

/// Token budget applied by encoders after tokenization.
pub const MAX_SEQ_LEN: usize = 350;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub title: String,
    pub body: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Passage {
            id: id.into(),
            title: title.into(),
            body: body.into(),
        }
    }

    /// Title and body joined by a single space; the body alone when untitled.
    pub fn text(&self) -> String {
        passage_text(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    /// Set for generated queries: the passage the query was generated from.
    pub source_passage_id: Option<String>,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            text: text.into(),
            source_passage_id: None,
        }
    }

    pub fn generated(
        id: impl Into<String>,
        text: impl Into<String>,
        source: impl Into<String>,
    ) -> Self {
        Query {
            id: id.into(),
            text: text.into(),
            source_passage_id: Some(source.into()),
        }
    }
}

/// Graded relevance judgments, query id -> passage id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    pub judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: impl Into<String>, passage_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(passage_id.into(), grade);
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

/// Collection statistics used by lexical scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub n_passages: usize,
    pub avg_doc_len: f64,
    pub doc_freq: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn compute(passages: &[Passage]) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut total_len = 0usize;
        for p in passages {
            let tokens = tokenize(&passage_text(p));
            total_len += tokens.len();
            let unique: HashSet<String> = tokens.into_iter().collect();
            for t in unique {
                *doc_freq.entry(t).or_insert(0) += 1;
            }
        }
        let avg_doc_len = if passages.is_empty() {
            0.0
        } else {
            total_len as f64 / passages.len() as f64
        };
        CorpusStats {
            n_passages: passages.len(),
            avg_doc_len,
            doc_freq,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusRecord {
    #[serde(rename = "_id")]
    id: String,
    #[serde(default)]
    title: Option<String>,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct QueryRecord {
    #[serde(rename = "_id")]
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_passage_id: Option<String>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| GplError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| GplError::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| GplError::io(path, e))
}

/// Read non-blank lines with their 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| GplError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Passage>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut passages = Vec::new();
    for (lineno, line) in read_lines(path)? {
        let rec: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| GplError::parse(path, lineno, e.to_string()))?;
        if rec.id.is_empty() {
            return Err(GplError::parse(path, lineno, "empty `_id`"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(GplError::DuplicateKey {
                what: "corpus",
                id: rec.id,
            });
        }
        passages.push(Passage {
            id: rec.id,
            title: rec.title.unwrap_or_default(),
            body: rec.text,
        });
    }
    Ok(passages)
}

pub fn write_corpus(path: impl AsRef<Path>, passages: &[Passage]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for p in passages {
        let rec = CorpusRecord {
            id: p.id.clone(),
            title: Some(p.title.clone()),
            text: p.body.clone(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| GplError::Serde(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| GplError::io(path, e))?;
    }
    w.flush().map_err(|e| GplError::io(path, e))
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for (lineno, line) in read_lines(path)? {
        let rec: QueryRecord = serde_json::from_str(&line)
            .map_err(|e| GplError::parse(path, lineno, e.to_string()))?;
        if rec.id.is_empty() {
            return Err(GplError::parse(path, lineno, "empty `_id`"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(GplError::DuplicateKey {
                what: "queries",
                id: rec.id,
            });
        }
        queries.push(Query {
            id: rec.id,
            text: rec.text,
            source_passage_id: rec.source_passage_id,
        });
    }
    Ok(queries)
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for q in queries {
        let rec = QueryRecord {
            id: q.id.clone(),
            text: q.text.clone(),
            source_passage_id: q.source_passage_id.clone(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| GplError::Serde(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| GplError::io(path, e))?;
    }
    w.flush().map_err(|e| GplError::io(path, e))
}

/// Parse `query-id<TAB>corpus-id<TAB>score` lines. Repeated pairs keep the
/// last grade.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let mut qrels = Qrels::default();
    for (n, (lineno, line)) in read_lines(path)?.into_iter().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        // BeIR releases start with a `query-id corpus-id score` header.
        if n == 0 && cols.len() == 3 && cols[2].trim() == "score" {
            continue;
        }
        if cols.len() != 3 {
            return Err(GplError::parse(
                path,
                lineno,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        let grade: i64 = cols[2].trim().parse().map_err(|_| {
            GplError::parse(path, lineno, format!("non-integer score `{}`", cols[2]))
        })?;
        if grade < 0 {
            return Err(GplError::parse(path, lineno, "negative relevance grade"));
        }
        qrels.insert(cols[0], cols[1], grade as u32);
    }
    Ok(qrels)
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for (qid, docs) in &qrels.judgments {
        for (pid, grade) in docs {
            writeln!(w, "{qid}\t{pid}\t{grade}").map_err(|e| GplError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| GplError::io(path, e))
}

pub fn passage_text(p: &Passage) -> String {
    if p.title.is_empty() {
        p.body.clone()
    } else if p.body.is_empty() {
        p.title.clone()
    } else {
        format!("{} {}", p.title, p.body)
    }
}

/// Trim titles and bodies. With `drop_empty`, passages whose body is empty
/// after trimming are removed.
pub fn normalize_passages(passages: Vec<Passage>, drop_empty: bool) -> Vec<Passage> {
    passages
        .into_iter()
        .map(|p| Passage {
            id: p.id,
            title: p.title.trim().to_string(),
            body: p.body.trim().to_string(),
        })
        .filter(|p| !drop_empty || !p.body.is_empty())
        .collect()
}

/// Uniform sample without replacement of `target_size` passages, in input order.
pub fn downsample_corpus(passages: &[Passage], target_size: usize, seed: u64) -> Result<Vec<Passage>> {
    if target_size == 0 || target_size > passages.len() {
        return Err(GplError::Range(format!(
            "down-sample target {target_size} outside 1..={}",
            passages.len()
        )));
    }
    if target_size == passages.len() {
        return Ok(passages.to_vec());
    }
    let mut rng = rng_for(seed, &["downsample".into()]);
    let mut picked = index::sample(&mut rng, passages.len(), target_size).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| passages[i].clone()).collect())
}

/// Lowercase, split on whitespace, strip surrounding punctuation, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Pluggable tokenization for encoders and lexical scorers.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text)
    }
}

/// Function words ignored by the mock generator and the lexical cross-encoder.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "in", "is", "it",
    "its", "of", "on", "or", "that", "the", "this", "to", "was", "were", "will", "with", "what",
    "which", "who", "how",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}
