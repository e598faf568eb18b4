use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, write_corpus, write_qrels, write_queries, Passage, Qrels, Query, STOPWORDS};
use crate::error::{GplError, Result};
use crate::generation::MockGenerator;
use crate::model::Vocab;
use crate::seed::rng_for;

/// Shape of a synthetic topical domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_topics: usize,
    pub passages_per_topic: usize,
    /// Distinct content words per topic.
    pub topic_vocab: usize,
    /// Fraction of each target topic's words borrowed from the aligned
    /// source topic; the rest are target-only.
    pub shared_fraction: f64,
    pub words_per_passage: usize,
    pub stopwords_per_passage: usize,
    /// Fraction of target passages that get a planted near-duplicate.
    pub duplicate_fraction: f64,
    pub test_queries_per_topic: usize,
    pub query_len: usize,
    pub noise_vocab: usize,
    /// Generator noise includes the domain's content lexicon.
    pub lexicon_noise: bool,
    /// Generator relates each topic's words to its partner topic.
    pub topic_drift: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            n_topics: 10,
            passages_per_topic: 20,
            topic_vocab: 40,
            shared_fraction: 0.5,
            words_per_passage: 6,
            stopwords_per_passage: 4,
            duplicate_fraction: 0.25,
            test_queries_per_topic: 5,
            query_len: 2,
            noise_vocab: 100,
            lexicon_noise: true,
            topic_drift: true,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_topics < 2 || self.passages_per_topic == 0 || self.test_queries_per_topic == 0 {
            return Err(GplError::Config("need >= 2 topics with passages and test queries".into()));
        }
        if self.words_per_passage == 0 || self.words_per_passage > self.topic_vocab {
            return Err(GplError::Config("words_per_passage must be in 1..=topic_vocab".into()));
        }
        if self.query_len == 0 || self.query_len > self.topic_vocab {
            return Err(GplError::Config("query_len must be in 1..=topic_vocab".into()));
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return Err(GplError::Config("shared_fraction outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.duplicate_fraction) {
            return Err(GplError::Config("duplicate_fraction outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// One domain: passages grouped by topic, graded test queries and the
/// token -> topic lexicon.
///
/// A test query is `query_len` words of one topic. Passages of that topic
/// containing a query word are graded 2, the rest of the topic 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub name: String,
    pub passages: Vec<Passage>,
    pub test_queries: Vec<Query>,
    pub qrels: Qrels,
    pub lexicon: BTreeMap<String, String>,
    /// `(original id, duplicate id)` of planted near-duplicates.
    pub duplicates: Vec<(String, String)>,
}

impl Domain {
    pub fn texts(&self) -> Vec<String> {
        self.passages.iter().map(crate::corpus::passage_text).collect()
    }

    /// `corpus.jsonl`, `queries.jsonl`, `qrels/test.tsv` and `lexicon.tsv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("qrels")).map_err(|e| GplError::io(dir, e))?;
        write_corpus(dir.join("corpus.jsonl"), &self.passages)?;
        write_queries(dir.join("queries.jsonl"), &self.test_queries)?;
        write_qrels(dir.join("qrels").join("test.tsv"), &self.qrels)?;
        let lexicon: String = self.lexicon.iter().map(|(t, c)| format!("{t}\t{c}\n")).collect();
        let path = dir.join("lexicon.tsv");
        std::fs::write(&path, lexicon).map_err(|e| GplError::io(path, e))
    }
}

/// A labelled source domain and an unlabeled target domain. Topic `t` of
/// the target shares part of its vocabulary with topic `t` of the source;
/// the remaining target words never occur in the source.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub source: Domain,
    pub target: Domain,
    pub noise: Vec<String>,
    pub config: WorldConfig,
}

impl World {
    pub fn generate(cfg: &WorldConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(World {
            source: domain("src", cfg, 0.0, 0.0)?,
            target: domain("tgt", cfg, cfg.shared_fraction, cfg.duplicate_fraction)?,
            noise: MockGenerator::default_noise_vocab(cfg.noise_vocab),
            config: cfg.clone(),
        })
    }

    /// Encoder vocabulary: both domains' tokens, stopwords and noise words.
    pub fn vocab(&self) -> Vocab {
        let mut tokens = BTreeSet::new();
        for d in [&self.source, &self.target] {
            for text in d.texts() {
                tokens.extend(tokenize(&text));
            }
            tokens.extend(d.lexicon.keys().cloned());
        }
        tokens.extend(STOPWORDS.iter().map(|s| s.to_string()));
        tokens.extend(self.noise.iter().cloned());
        Vocab::new(tokens)
    }

    /// Lexicon covering both domains.
    pub fn lexicon(&self) -> BTreeMap<String, String> {
        let mut l = self.source.lexicon.clone();
        l.extend(self.target.lexicon.clone());
        l
    }

    /// Mock generator whose off-passage vocabulary is the domain's whole
    /// content lexicon plus the generic noise words. Topics are paired
    /// (`0-1`, `2-3`, ...) and every word is related to the words of its
    /// partner topic, so hot sampling drifts to the partner.
    pub fn generator(&self, domain: &Domain) -> MockGenerator {
        let lexicon = domain.lexicon.keys().filter(|_| self.config.lexicon_noise);
        let mut gen = MockGenerator::for_corpus(&domain.passages, lexicon.chain(&self.noise).cloned());
        if !self.config.topic_drift {
            return gen;
        }
        let mut by_topic: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for (tok, concept) in &domain.lexicon {
            by_topic.entry(concept.as_str()).or_default().push(tok.clone());
        }
        let n = by_topic.len();
        let related: BTreeMap<String, Vec<String>> = domain
            .lexicon
            .iter()
            .filter_map(|(tok, concept)| {
                let t: usize = concept.strip_prefix("topic")?.parse().ok()?;
                let partner = if t ^ 1 < n { t ^ 1 } else { (t + 1) % n };
                let next = by_topic.get(format!("topic{partner}").as_str())?;
                Some((tok.clone(), next.clone()))
            })
            .collect();
        gen.set_related(related.iter().map(|(k, v)| (k.as_str(), v.as_slice())));
        gen
    }
}

fn domain(prefix: &str, cfg: &WorldConfig, shared_fraction: f64, duplicate_fraction: f64) -> Result<Domain> {
    let mut rng = rng_for(cfg.seed, &["synthetic-world".into(), prefix.into()]);
    let n_shared = (shared_fraction * cfg.topic_vocab as f64).round() as usize;
    let word = |t: usize, j: usize| {
        if j < n_shared {
            format!("src{t}w{j}")
        } else {
            format!("{prefix}{t}w{j}")
        }
    };
    let mut passages = Vec::new();
    let mut topic_of = BTreeMap::new();
    let mut lexicon = BTreeMap::new();
    let mut duplicates = Vec::new();
    for t in 0..cfg.n_topics {
        let concept = format!("topic{t}");
        for j in 0..cfg.topic_vocab {
            lexicon.insert(word(t, j), concept.clone());
        }
        for i in 0..cfg.passages_per_topic {
            let mut toks: Vec<String> = rand::seq::index::sample(&mut rng, cfg.topic_vocab, cfg.words_per_passage)
                .into_iter()
                .map(|j| word(t, j))
                .collect();
            for _ in 0..cfg.stopwords_per_passage {
                toks.push(STOPWORDS.choose(&mut rng).expect("stopwords").to_string());
            }
            toks.shuffle(&mut rng);
            let id = format!("{prefix}-t{t}-p{i}");
            topic_of.insert(id.clone(), t);
            passages.push(Passage::new(id.clone(), "", toks.join(" ")));
            if rand::Rng::random::<f64>(&mut rng) < duplicate_fraction {
                let mut dup = toks.clone();
                dup.shuffle(&mut rng);
                if let Some(pos) = dup.iter().position(|w| STOPWORDS.contains(&w.as_str())) {
                    dup[pos] = STOPWORDS.choose(&mut rng).expect("stopwords").to_string();
                }
                let dup_id = format!("{id}-dup");
                topic_of.insert(dup_id.clone(), t);
                passages.push(Passage::new(dup_id.clone(), "", dup.join(" ")));
                duplicates.push((id, dup_id));
            }
        }
    }
    let mut test_queries = Vec::new();
    let mut qrels = Qrels::default();
    for t in 0..cfg.n_topics {
        let in_topic: Vec<&Passage> = passages.iter().filter(|p| topic_of[&p.id] == t).collect();
        let used: Vec<String> = in_topic
            .iter()
            .flat_map(|p| tokenize(&p.body))
            .filter(|w| lexicon.contains_key(w))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for k in 0..cfg.test_queries_per_topic {
            let words: Vec<String> = used.choose_multiple(&mut rng, cfg.query_len.min(used.len())).cloned().collect();
            let qid = format!("{prefix}-q{t}-{k}");
            for p in &in_topic {
                let toks = tokenize(&p.body);
                let grade = if words.iter().any(|w| toks.contains(w)) { 2 } else { 1 };
                qrels.insert(qid.clone(), p.id.clone(), grade);
            }
            test_queries.push(Query::new(qid, words.join(" ")));
        }
    }
    Ok(Domain { name: prefix.to_string(), passages, test_queries, qrels, lexicon, duplicates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::is_stopword;

    #[test]
    fn world_shape() {
        let cfg = WorldConfig::default();
        let w = World::generate(&cfg).unwrap();
        assert_eq!(w.source.passages.len(), 200);
        assert!(w.target.passages.len() > 200 && !w.target.duplicates.is_empty());
        assert_eq!(w.target.test_queries.len(), 50);
        let src: BTreeSet<String> = w.source.texts().iter().flat_map(|t| tokenize(t)).filter(|t| !is_stopword(t)).collect();
        let tgt: BTreeSet<String> = w.target.texts().iter().flat_map(|t| tokenize(t)).filter(|t| !is_stopword(t)).collect();
        let only_tgt: BTreeSet<&String> = tgt.iter().filter(|t| t.starts_with("tgt")).collect();
        assert!(!only_tgt.is_empty() && only_tgt.iter().all(|t| !src.contains(*t)));
        assert!(tgt.iter().any(|t| src.contains(t)));
        assert_eq!(World::generate(&cfg).unwrap(), w);
        for q in &w.target.test_queries {
            let j = w.target.qrels.get(&q.id).unwrap();
            assert!(j.values().any(|&g| g == 2));
        }
    }

    #[test]
    fn duplicates_share_content_words() {
        let w = World::generate(&WorldConfig::default()).unwrap();
        let by_id: BTreeMap<&str, &Passage> = w.target.passages.iter().map(|p| (p.id.as_str(), p)).collect();
        for (a, b) in &w.target.duplicates {
            let content = |id: &str| -> BTreeSet<String> {
                tokenize(&by_id[id].body).into_iter().filter(|t| !is_stopword(t)).collect()
            };
            assert_eq!(content(a), content(b));
        }
    }

    #[test]
    fn write_domain() {
        let w = World::generate(&WorldConfig { n_topics: 2, passages_per_topic: 3, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        w.target.write(dir.path()).unwrap();
        let corpus = crate::corpus::load_corpus(dir.path().join("corpus.jsonl")).unwrap();
        assert_eq!(corpus, w.target.passages);
        let lex = crate::model::LexicalCrossEncoder::load_lexicon(dir.path().join("lexicon.tsv")).unwrap();
        assert_eq!(lex, w.target.lexicon);
    }
}
