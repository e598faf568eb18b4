//! Synthetic query generation.
//!
//! The generation budget fixes the total number of generated queries: small
//! corpora get more queries per passage, large corpora are down-sampled so
//! that every kept passage receives at least [`MIN_QPP`] queries.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{is_stopword, passage_text, tokenize, write_qrels, write_queries, Passage, Qrels, Query};
use crate::error::{GplError, Result};
use crate::model::QueryGenerator;
use crate::seed::rng_for;

pub const DEFAULT_TOTAL_BUDGET: usize = 250_000;
pub const MIN_QPP: usize = 3;
/// Query text used when the generator produces nothing twice in a row.
pub const PLACEHOLDER_QUERY: &str = "emptyquery";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub seed: u64,
    pub max_query_len: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            temperature: 1.0,
            top_k: 25,
            top_p: 0.95,
            seed: 0,
            max_query_len: 64,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GplError::Config(format!("temperature {} must be > 0", self.temperature)));
        }
        if self.top_k == 0 {
            return Err(GplError::Config("top_k must be >= 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GplError::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_query_len == 0 {
            return Err(GplError::Config("max_query_len must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationBudget {
    pub total_budget: usize,
    /// Queries generated for every kept passage.
    pub qpp: usize,
    pub effective_corpus_size: usize,
}

impl GenerationBudget {
    pub fn needs_downsampling(&self, corpus_size: usize) -> bool {
        self.effective_corpus_size < corpus_size
    }

    pub fn total_queries(&self) -> usize {
        self.qpp * self.effective_corpus_size
    }
}

/// If `3 * corpus_size > total_budget` the corpus is down-sampled to
/// `floor(total_budget / 3)` passages with three queries each; otherwise every
/// passage is kept and receives `ceil(total_budget / corpus_size)` queries.
pub fn compute_budget(corpus_size: usize, total_budget: usize) -> Result<GenerationBudget> {
    if corpus_size == 0 {
        return Err(GplError::Range("corpus is empty".into()));
    }
    if total_budget < MIN_QPP {
        return Err(GplError::Range(format!("total budget {total_budget} below {MIN_QPP}")));
    }
    let (effective, qpp) = if MIN_QPP * corpus_size > total_budget {
        (total_budget / MIN_QPP, MIN_QPP)
    } else {
        (corpus_size, total_budget.div_ceil(corpus_size))
    };
    Ok(GenerationBudget {
        total_budget,
        qpp,
        effective_corpus_size: effective,
    })
}

/// Temperature, then top-k, then top-p over the renormalised top-k mass.
///
/// Ties in probability are ordered by ascending token index. The returned
/// vector has the input's length; excluded tokens get probability zero.
pub fn nucleus_filter(logits: &[f64], cfg: &SamplerConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(GplError::NonFinite("logits contain NaN or +inf".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(GplError::Domain("all logits are -inf".into()));
    }
    let exps: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / cfg.temperature).exp())
        .collect();

    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| exps[b].total_cmp(&exps[a]).then(a.cmp(&b)));
    order.truncate(cfg.top_k);
    order.retain(|&i| exps[i] > 0.0);

    let kept_mass: f64 = order.iter().map(|&i| exps[i]).sum();
    let mut cumulative = 0.0;
    let mut cut = order.len();
    for (rank, &i) in order.iter().enumerate() {
        cumulative += exps[i] / kept_mass;
        if cumulative >= cfg.top_p {
            cut = rank + 1;
            break;
        }
    }
    order.truncate(cut);

    let survivor_mass: f64 = order.iter().map(|&i| exps[i]).sum();
    let mut probs = vec![0.0; logits.len()];
    for &i in &order {
        probs[i] = exps[i] / survivor_mass;
    }
    Ok(probs)
}

/// Inverse-CDF draw over `probs` in index order.
pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cumulative += p;
        last = i;
        if u < cumulative {
            return i;
        }
    }
    last
}

fn decode_once(gen: &dyn QueryGenerator, passage: &str, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let max_len = cfg.max_query_len.min(gen.max_query_len());
    let mut prefix = Vec::new();
    while prefix.len() < max_len {
        let logits = gen.next_token_logits(passage, &prefix);
        if logits.len() != gen.vocab_size() {
            return Err(GplError::Shape(format!(
                "generator returned {} logits for a vocabulary of {}",
                logits.len(),
                gen.vocab_size()
            )));
        }
        let probs = nucleus_filter(&logits, cfg)?;
        let tok = sample_index(&probs, rng);
        if tok == gen.eos_token() {
            break;
        }
        prefix.push(tok);
    }
    Ok(prefix)
}

/// Decode `budget.qpp` queries for every passage. Query ids are
/// `genQ-<passage_id>-<n>` for `n` in `1..=qpp`; each decode draws from its
/// own RNG stream keyed by `(seed, passage_id, n)`.
pub fn generate_queries(
    gen: &dyn QueryGenerator,
    passages: &[Passage],
    budget: &GenerationBudget,
    cfg: &SamplerConfig,
) -> Result<Vec<Query>> {
    cfg.validate()?;
    if budget.effective_corpus_size != passages.len() {
        return Err(GplError::Config(format!(
            "budget expects {} passages but {} were supplied; down-sample first",
            budget.effective_corpus_size,
            passages.len()
        )));
    }
    let per_passage: Vec<Result<Vec<Query>>> = passages
        .par_iter()
        .map(|p| {
            let text = passage_text(p);
            (1..=budget.qpp)
                .map(|n| {
                    let mut rng = rng_for(cfg.seed, &["generate".into(), p.id.as_str().into(), n.into()]);
                    let mut tokens = decode_once(gen, &text, cfg, &mut rng)?;
                    if tokens.is_empty() {
                        tokens = decode_once(gen, &text, cfg, &mut rng)?;
                    }
                    let query_text = if tokens.is_empty() {
                        log::warn!("empty generation for passage {} (#{n}); using placeholder", p.id);
                        PLACEHOLDER_QUERY.to_string()
                    } else {
                        tokens
                            .iter()
                            .map(|&t| gen.token_text(t))
                            .collect::<Vec<_>>()
                            .join(" ")
                    };
                    Ok(Query::generated(format!("genQ-{}-{n}", p.id), query_text, p.id.clone()))
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(budget.total_queries());
    for r in per_passage {
        out.extend(r?);
    }
    Ok(out)
}

/// Every generated query judged relevant (grade 1) to its source passage.
pub fn generated_qrels(queries: &[Query]) -> Qrels {
    let mut qrels = Qrels::default();
    for q in queries {
        if let Some(src) = &q.source_passage_id {
            qrels.insert(q.id.clone(), src.clone(), 1);
        }
    }
    qrels
}

/// Write `gen-queries.jsonl` and `gen-qrels.tsv` into `dir`.
pub fn write_generated(dir: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    let dir = dir.as_ref();
    write_queries(dir.join("gen-queries.jsonl"), queries)?;
    write_qrels(dir.join("gen-qrels.tsv"), &generated_qrels(queries))
}

/// Mean fraction of a generated query's tokens that occur in its source passage.
pub fn mean_source_overlap(queries: &[Query], passages: &[Passage]) -> f64 {
    let by_id: HashMap<&str, &Passage> = passages.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut total = 0.0;
    let mut n = 0usize;
    for q in queries {
        let Some(p) = q.source_passage_id.as_deref().and_then(|id| by_id.get(id)) else {
            continue;
        };
        let ptoks: HashSet<String> = tokenize(&passage_text(p)).into_iter().collect();
        let qtoks = tokenize(&q.text);
        if qtoks.is_empty() {
            n += 1;
            continue;
        }
        total += qtoks.iter().filter(|t| ptoks.contains(*t)).count() as f64 / qtoks.len() as f64;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Deterministic stand-in for a seq2seq query generator.
///
/// Content tokens of the passage get logit `content_logit + ln(count)`, every
/// noise token gets `noise_logit` plus a passage-dependent jitter drawn
/// uniformly from `[0, noise_jitter)`, and everything else is `-inf`.
/// Tokens registered as related to a passage token (see
/// [`MockGenerator::set_related`]) get `related_logit` plus the same kind of
/// jitter. The end-of-sequence logit grows linearly with the prefix length.
/// Raising the sampling temperature therefore moves mass from passage terms
/// to related and noise tokens.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    noise: Vec<usize>,
    related: HashMap<usize, Vec<usize>>,
    eos: usize,
    pub content_logit: f64,
    pub noise_logit: f64,
    pub noise_jitter: f64,
    pub related_logit: f64,
    pub eos_bias: f64,
    pub eos_slope: f64,
    /// Subtracted from a content token's logit per earlier occurrence in the prefix.
    pub repeat_penalty: f64,
    pub max_len: usize,
}

pub const EOS_TOKEN: &str = "</s>";

impl MockGenerator {
    pub fn new<I, J, S, T>(vocab: I, noise: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut tokens: Vec<String> = Vec::new();
        let mut index = HashMap::new();
        let mut push = |t: String, tokens: &mut Vec<String>| -> usize {
            *index.entry(t.clone()).or_insert_with(|| {
                tokens.push(t);
                tokens.len() - 1
            })
        };
        let eos = push(EOS_TOKEN.to_string(), &mut tokens);
        for t in vocab {
            push(t.into(), &mut tokens);
        }
        let mut noise_ids: Vec<usize> = noise.into_iter().map(|t| push(t.into(), &mut tokens)).collect();
        noise_ids.sort_unstable();
        noise_ids.dedup();
        MockGenerator {
            tokens,
            index,
            noise: noise_ids,
            related: HashMap::new(),
            eos,
            content_logit: 5.0,
            noise_logit: 0.0,
            noise_jitter: 1.0,
            related_logit: 1.0,
            eos_bias: 0.0,
            eos_slope: 2.5,
            repeat_penalty: 3.0,
            max_len: 8,
        }
    }

    /// Vocabulary = every corpus token plus the given noise words.
    pub fn for_corpus<J, T>(passages: &[Passage], noise: J) -> Self
    where
        J: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut vocab = Vec::new();
        for p in passages {
            for t in tokenize(&passage_text(p)) {
                if seen.insert(t.clone()) {
                    vocab.push(t);
                }
            }
        }
        Self::new(vocab, noise)
    }

    /// Register associations `token -> related tokens`. Unknown tokens are
    /// added to the vocabulary.
    pub fn set_related<'a, I>(&mut self, pairs: I)
    where
        I: IntoIterator<Item = (&'a str, &'a [String])>,
    {
        for (tok, rel) in pairs {
            let t = self.intern(tok);
            let mut ids: Vec<usize> = rel.iter().map(|r| self.intern(r)).filter(|&r| r != t).collect();
            ids.sort_unstable();
            ids.dedup();
            self.related.insert(t, ids);
        }
    }

    fn intern(&mut self, tok: &str) -> usize {
        if let Some(&i) = self.index.get(tok) {
            return i;
        }
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn default_noise_vocab(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("noise{i}")).collect()
    }

    pub fn noise_tokens(&self) -> impl Iterator<Item = &str> {
        self.noise.iter().map(|&i| self.tokens[i].as_str())
    }

    pub fn vocab(&self) -> &[String] {
        &self.tokens
    }
}

impl QueryGenerator for MockGenerator {
    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    fn eos_token(&self) -> usize {
        self.eos
    }

    fn max_query_len(&self) -> usize {
        self.max_len
    }

    fn token_text(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    fn next_token_logits(&self, passage: &str, prefix: &[usize]) -> Vec<f64> {
        let mut logits = vec![f64::NEG_INFINITY; self.tokens.len()];
        let mut jitter = rng_for(0, &["mock-noise".into(), passage.into()]);
        for &i in &self.noise {
            logits[i] = self.noise_logit + self.noise_jitter * jitter.random::<f64>();
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for t in tokenize(passage) {
            if is_stopword(&t) {
                continue;
            }
            if let Some(&i) = self.index.get(&t) {
                *counts.entry(i).or_insert(0) += 1;
            }
        }
        let mut rel_jitter = rng_for(0, &["mock-related".into(), passage.into()]);
        for i in counts.keys() {
            for &r in self.related.get(i).map(Vec::as_slice).unwrap_or(&[]) {
                let v = self.related_logit + self.noise_jitter * rel_jitter.random::<f64>();
                if v > logits[r] {
                    logits[r] = v;
                }
            }
        }
        for (i, c) in counts {
            let repeats = prefix.iter().filter(|&&p| p == i).count() as f64;
            logits[i] = self.content_logit + (c as f64).ln() - self.repeat_penalty * repeats;
        }
        logits[self.eos] = self.eos_bias + self.eos_slope * prefix.len() as f64;
        logits
    }
}
