use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::corpus::{is_stopword, tokenize};
use crate::error::{GplError, Result};

/// Joint (query, passage) scorer. Scores are raw, unbounded logits and must be
/// deterministic for fixed inputs.
pub trait CrossEncoderScorer: Send + Sync {
    fn id(&self) -> String;
    fn score(&self, query: &str, passage: &str) -> f64;
}

/// Autoregressive query generator over a fixed token vocabulary.
pub trait QueryGenerator: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn eos_token(&self) -> usize;
    fn max_query_len(&self) -> usize;
    fn token_text(&self, id: usize) -> &str;
    /// Next-token logits given the passage and the tokens generated so far.
    /// The returned vector has exactly `vocab_size()` entries.
    fn next_token_logits(&self, passage: &str, prefix: &[usize]) -> Vec<f64>;
}

/// Wrap a closure as a cross-encoder.
pub struct FnScorer<F> {
    name: String,
    f: F,
}

impl<F> FnScorer<F>
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnScorer { name: name.into(), f }
    }
}

impl<F> CrossEncoderScorer for FnScorer<F>
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    fn id(&self) -> String {
        self.name.clone()
    }

    fn score(&self, query: &str, passage: &str) -> f64 {
        (self.f)(query, passage)
    }
}

/// Term-overlap cross-encoder with optional concept expansion.
///
/// `score = exact_weight * exact + concept_weight * concept`, where `exact` is
/// the fraction of the query's content tokens present in the passage and
/// `concept` is the fraction whose lexicon concept occurs among the passage's
/// concepts. Stopwords are ignored on both sides, so the score depends only on
/// which content tokens a passage contains, not on their order or count.
#[derive(Debug, Clone)]
pub struct LexicalCrossEncoder {
    concepts: BTreeMap<String, String>,
    pub exact_weight: f64,
    pub concept_weight: f64,
}

impl Default for LexicalCrossEncoder {
    fn default() -> Self {
        LexicalCrossEncoder {
            concepts: BTreeMap::new(),
            exact_weight: 1.0,
            concept_weight: 0.0,
        }
    }
}

impl LexicalCrossEncoder {
    pub fn with_concepts(concepts: BTreeMap<String, String>, exact_weight: f64, concept_weight: f64) -> Self {
        LexicalCrossEncoder {
            concepts,
            exact_weight,
            concept_weight,
        }
    }

    /// Lexicon file: `token<TAB>concept` per line.
    pub fn load_lexicon(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GplError::io(path, e))?;
        let mut out = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (tok, concept) = line
                .split_once('\t')
                .ok_or_else(|| GplError::parse(path, i + 1, "expected `token<TAB>concept`"))?;
            out.insert(tok.to_string(), concept.to_string());
        }
        Ok(out)
    }

    pub fn concepts(&self) -> &BTreeMap<String, String> {
        &self.concepts
    }
}

impl CrossEncoderScorer for LexicalCrossEncoder {
    fn id(&self) -> String {
        format!(
            "lexical(exact={},concept={},lexicon={})",
            self.exact_weight,
            self.concept_weight,
            self.concepts.len()
        )
    }

    fn score(&self, query: &str, passage: &str) -> f64 {
        let q: Vec<String> = tokenize(query).into_iter().filter(|t| !is_stopword(t)).collect();
        if q.is_empty() {
            return 0.0;
        }
        let p: HashSet<String> = tokenize(passage).into_iter().filter(|t| !is_stopword(t)).collect();
        let p_concepts: HashSet<&str> = p
            .iter()
            .filter_map(|t| self.concepts.get(t).map(String::as_str))
            .collect();
        let exact = q.iter().filter(|t| p.contains(*t)).count() as f64;
        let concept = q
            .iter()
            .filter(|t| {
                self.concepts
                    .get(*t)
                    .is_some_and(|c| p_concepts.contains(c.as_str()))
            })
            .count() as f64;
        let n = q.len() as f64;
        self.exact_weight * exact / n + self.concept_weight * concept / n
    }
}
