use std::collections::{BTreeMap, HashMap};

use ndarray::Array1;
use rand_distr::{Distribution, Normal};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::world::{Domain, World, WorldConfig};
use crate::corpus::{write_corpus, write_queries, Query};
use crate::error::{GplError, Result};
use crate::eval::{evaluate, full_rank, EvalReport, Gain, Metric, DEFAULT_CUTOFF};
use crate::generation::{compute_budget, generate_queries, SamplerConfig};
use crate::labeling::{build_dataset_with, write_dataset, GplDataset};
use crate::pipeline::PipelineConfig;
use crate::mining::{mine_all, Bm25Index, Bm25Retriever, DenseRetriever, NegativePool, RandomRetriever, Retriever};
use crate::model::{EncoderModel, LexicalCrossEncoder, Pooling, Similarity};
use crate::seed::{derive_seed, rng_for};
use crate::training::{gpl_train, qgen_train, LossConfig, QgenNegatives, TrainRunConfig};

/// Everything needed to run the adaptation arms on one synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub dim: usize,
    /// Strength of the concept prior mixed into the initial embeddings.
    pub concept_prior: f64,
    /// Sampling temperature for target-domain query generation.
    pub temperature: f64,
    pub total_budget: usize,
    pub negatives_per_retriever: usize,
    pub tuples_per_query: usize,
    /// Add each positive's planted near-duplicate to its hard-negative pool.
    pub plant_duplicates: bool,
    pub ce_exact_weight: f64,
    pub ce_concept_weight: f64,
    pub source_train: TrainRunConfig,
    pub gpl: TrainRunConfig,
    pub qgen: TrainRunConfig,
    pub loss: LossConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            world: WorldConfig::default(),
            dim: 32,
            concept_prior: 0.3,
            temperature: 1.0,
            total_budget: 4_000,
            negatives_per_retriever: 10,
            tuples_per_query: 1,
            plant_duplicates: true,
            ce_exact_weight: 1.0,
            ce_concept_weight: 0.5,
            source_train: TrainRunConfig { steps: 10_000, learning_rate: 0.3, ..TrainRunConfig::gpl() },
            gpl: TrainRunConfig { steps: 2_000, learning_rate: 0.15, ..TrainRunConfig::gpl() },
            qgen: TrainRunConfig { epochs: Some(3), learning_rate: 0.3, ..TrainRunConfig::qgen() },
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    ZeroShot,
    /// MarginMSE on BM25 + dense (zero-shot) negatives.
    Gpl,
    /// MarginMSE on uniformly random negatives.
    GplRandom,
    /// MNRL with in-batch negatives only.
    Qgen,
    /// MNRL with one mined hard negative per query.
    QgenHardNegatives,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::ZeroShot, Arm::Gpl, Arm::GplRandom, Arm::Qgen, Arm::QgenHardNegatives];
}

/// A prepared experiment: the world, the source-trained zero-shot model and
/// the target-domain generated queries with their negative pools.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub world: World,
    pub zero_shot: EncoderModel,
    pub queries: Vec<Query>,
    pub hard_pools: Vec<NegativePool>,
    pub random_pools: Vec<NegativePool>,
    /// Generated source queries and their labelled tuples (the zero-shot
    /// model's training data).
    pub source_queries: Vec<Query>,
    pub source_data: GplDataset,
}

fn cross_encoder(world: &World, cfg: &ExperimentConfig) -> LexicalCrossEncoder {
    LexicalCrossEncoder::with_concepts(world.lexicon(), cfg.ce_exact_weight, cfg.ce_concept_weight)
}

fn generate(world: &World, domain: &Domain, cfg: &ExperimentConfig, temperature: f64, tag: &str) -> Result<Vec<Query>> {
    let budget = compute_budget(domain.passages.len(), cfg.total_budget)?;
    let sampler = SamplerConfig { temperature, seed: derive_seed(cfg.seed, &[tag.into()]), ..SamplerConfig::default() };
    generate_queries(&world.generator(domain), &domain.passages, &budget, &sampler)
}

fn label(
    world: &World,
    domain: &Domain,
    queries: &[Query],
    pools: &[NegativePool],
    cfg: &ExperimentConfig,
) -> Result<GplDataset> {
    let ce = cross_encoder(world, cfg);
    build_dataset_with(queries, pools, &domain.passages, &ce, cfg.seed, cfg.tuples_per_query)
}

/// Insert the near-duplicate of each pool's positive (in either direction of
/// the pair) under the retriever name `planted`. Returns how many pools changed.
pub fn plant_duplicates(pools: &mut [NegativePool], duplicates: &[(String, String)]) -> usize {
    let mut twin: HashMap<&str, &str> = HashMap::new();
    for (a, b) in duplicates {
        twin.insert(a, b);
        twin.insert(b, a);
    }
    let mut n = 0;
    for pool in pools {
        if let Some(&d) = twin.get(pool.positive.as_str()) {
            pool.by_retriever.insert(PLANTED.to_string(), vec![d.to_string()]);
            n += 1;
        }
    }
    n
}

pub const PLANTED: &str = "planted";

/// Stand-in for language-model pre-training: every token with a lexicon
/// concept gets `strength * v_concept` added to its embedding, with one
/// N(0, 1/d) vector per concept.
pub fn add_concept_prior(model: &mut EncoderModel, lexicon: &BTreeMap<String, String>, strength: f64, seed: u64) {
    if strength == 0.0 {
        return;
    }
    let d = model.dim();
    let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
    let mut directions: BTreeMap<&str, Array1<f64>> = BTreeMap::new();
    for (tok, concept) in lexicon {
        let Some(id) = model.vocab().get(tok) else { continue };
        let v = directions.entry(concept.as_str()).or_insert_with(|| {
            let mut rng = rng_for(seed, &["concept-prior".into(), concept.as_str().into()]);
            Array1::from_shape_fn(d, |_| normal.sample(&mut rng))
        });
        let v = v.clone();
        model.embeddings.row_mut(id).scaled_add(strength, &v);
    }
}

impl Experiment {
    pub fn prepare(cfg: ExperimentConfig) -> Result<Self> {
        let world = World::generate(&WorldConfig { seed: cfg.seed, ..cfg.world.clone() })?;
        let mut init = EncoderModel::new(world.vocab(), cfg.dim, Pooling::Mean, Similarity::Dot, cfg.seed)?;
        add_concept_prior(&mut init, &world.lexicon(), cfg.concept_prior, cfg.seed);

        // Zero-shot: MarginMSE on generated, CE-labelled source data with BM25
        // and random negatives.
        let src = &world.source;
        let src_queries = generate(&world, src, &cfg, 1.0, "source-generate")?;
        let src_bm25 = Bm25Retriever::new(Arc::new(Bm25Index::build(&src.passages, Default::default())?));
        let src_random = RandomRetriever::new(&src.passages, derive_seed(cfg.seed, &["source-random-miner".into()]));
        let src_miners: [&dyn Retriever; 2] = [&src_bm25, &src_random];
        let src_pools = mine_all(&src_queries, &src_miners, cfg.negatives_per_retriever)?;
        let src_data = label(&world, src, &src_queries, &src_pools, &cfg)?;
        let src_cfg = TrainRunConfig { seed: derive_seed(cfg.seed, &["source-train".into()]), ..cfg.source_train.clone() };
        let (zero_shot, _) = gpl_train(init, &src_data, &src.passages, &src_queries, &src_cfg)?;

        let tgt = &world.target;
        let queries = generate(&world, tgt, &cfg, cfg.temperature, "target-generate")?;
        let bm25 = Bm25Retriever::new(Arc::new(Bm25Index::build(&tgt.passages, Default::default())?));
        let dense = DenseRetriever::new("dense", Arc::new(zero_shot.clone()), &tgt.passages);
        let hard: [&dyn Retriever; 2] = [&bm25, &dense];
        let mut hard_pools = mine_all(&queries, &hard, cfg.negatives_per_retriever)?;
        if cfg.plant_duplicates {
            plant_duplicates(&mut hard_pools, &tgt.duplicates);
        }
        let random = RandomRetriever::new(&tgt.passages, derive_seed(cfg.seed, &["random-miner".into()]));
        let random_pools = mine_all(&queries, &[&random], cfg.negatives_per_retriever)?;
        Ok(Experiment {
            cfg,
            world,
            zero_shot,
            queries,
            hard_pools,
            random_pools,
            source_queries: src_queries,
            source_data: src_data,
        })
    }

    /// Write a pipeline-ready directory:
    ///
    /// ```text
    /// target/          corpus.jsonl queries.jsonl qrels/test.tsv lexicon.tsv
    /// source/          corpus.jsonl queries.jsonl gpl-training-data.tsv
    /// zero-shot.json   source-trained checkpoint
    /// pipeline.toml    configuration pointing at the above
    /// ```
    pub fn export(&self, dir: &Path) -> Result<PathBuf> {
        let tgt = &self.world.target;
        tgt.write(dir.join("target"))?;
        let src = dir.join("source");
        write_corpus(src.join("corpus.jsonl"), &self.world.source.passages)?;
        write_queries(src.join("queries.jsonl"), &self.source_queries)?;
        write_dataset(src.join("gpl-training-data.tsv"), &self.source_data)?;
        self.zero_shot.save(dir.join("zero-shot.json"))?;
        let mut cfg = PipelineConfig {
            seed: self.cfg.seed,
            dataset: Some("synthetic".into()),
            gpl: self.cfg.gpl.clone(),
            qgen: self.cfg.qgen.clone(),
            loss: self.cfg.loss,
            ..PipelineConfig::default()
        };
        cfg.paths.data = "target".into();
        cfg.paths.output = "output".into();
        cfg.paths.init_model = Some("zero-shot.json".into());
        cfg.paths.lexicon = Some("target/lexicon.tsv".into());
        cfg.paths.source = Some("source".into());
        cfg.model.dim = self.cfg.dim;
        cfg.generation.temperature = self.cfg.temperature;
        cfg.generation.total_budget = self.cfg.total_budget;
        cfg.generation.noise_vocab = self.cfg.world.noise_vocab;
        cfg.mining.negatives_per_retriever = self.cfg.negatives_per_retriever;
        cfg.labeling.exact_weight = self.cfg.ce_exact_weight;
        cfg.labeling.concept_weight = self.cfg.ce_concept_weight;
        cfg.labeling.tuples_per_query = self.cfg.tuples_per_query;
        cfg.pretrain.steps = 500;
        cfg.pretrain.learning_rate = 0.05;
        let path = dir.join("pipeline.toml");
        std::fs::write(&path, cfg.to_toml()?).map_err(|e| GplError::io(&path, e))?;
        Ok(path)
    }

    pub fn cross_encoder(&self) -> LexicalCrossEncoder {
        cross_encoder(&self.world, &self.cfg)
    }

    pub fn dataset(&self, random_negatives: bool) -> Result<GplDataset> {
        let pools = if random_negatives { &self.random_pools } else { &self.hard_pools };
        label(&self.world, &self.world.target, &self.queries, pools, &self.cfg)
    }

    pub fn train(&self, arm: Arm) -> Result<EncoderModel> {
        let tgt = &self.world.target;
        let seeded = |c: &TrainRunConfig, tag: &str| TrainRunConfig { seed: derive_seed(self.cfg.seed, &[tag.into()]), ..c.clone() };
        match arm {
            Arm::ZeroShot => Ok(self.zero_shot.clone()),
            Arm::Gpl | Arm::GplRandom => {
                let data = self.dataset(arm == Arm::GplRandom)?;
                let cfg = seeded(&self.cfg.gpl, "gpl-train");
                Ok(gpl_train(self.zero_shot.clone(), &data, &tgt.passages, &self.queries, &cfg)?.0)
            }
            Arm::Qgen | Arm::QgenHardNegatives => {
                let negatives = if arm == Arm::Qgen {
                    QgenNegatives::InBatch
                } else {
                    QgenNegatives::Pool(&self.hard_pools)
                };
                let model = self.zero_shot.clone().with_similarity(Similarity::Cosine);
                let cfg = seeded(&self.cfg.qgen, "qgen-train");
                let loss = LossConfig { similarity: Similarity::Cosine, ..self.cfg.loss };
                Ok(qgen_train(model, &self.queries, &tgt.passages, &cfg, negatives, &loss)?.0)
            }
        }
    }

    /// nDCG@10 and MRR@10 on the target test queries.
    pub fn evaluate(&self, model: &EncoderModel) -> Result<EvalReport> {
        let tgt = &self.world.target;
        let run = full_rank(model, &tgt.test_queries, &tgt.passages, DEFAULT_CUTOFF)?;
        evaluate(&run, &tgt.qrels, &[Metric::Ndcg(10), Metric::Mrr(10)], Gain::Linear)
    }

    pub fn ndcg(&self, arm: Arm) -> Result<f64> {
        let report = self.evaluate(&self.train(arm)?)?;
        Ok(report.average(Metric::Ndcg(10)).unwrap_or(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vocab;

    #[test]
    fn planting_adds_twin_in_both_directions() {
        let pool = |q: &str, pos: &str| NegativePool {
            query_id: q.into(),
            positive: pos.into(),
            by_retriever: BTreeMap::new(),
        };
        let mut pools = vec![pool("q1", "a"), pool("q2", "a-dup"), pool("q3", "b")];
        let n = plant_duplicates(&mut pools, &[("a".into(), "a-dup".into())]);
        assert_eq!(n, 2);
        assert_eq!(pools[0].by_retriever[PLANTED], vec!["a-dup".to_string()]);
        assert_eq!(pools[1].by_retriever[PLANTED], vec!["a".to_string()]);
        assert!(pools[2].by_retriever.is_empty());
    }

    #[test]
    fn concept_prior_shares_a_direction() {
        let vocab = Vocab::new(["x", "y", "z"]);
        let base = EncoderModel::new(vocab, 8, Pooling::Mean, Similarity::Dot, 3).unwrap();
        let lexicon: BTreeMap<String, String> =
            [("x", "c1"), ("y", "c1"), ("z", "c2")].into_iter().map(|(a, b)| (a.into(), b.into())).collect();
        let mut m = base.clone();
        add_concept_prior(&mut m, &lexicon, 2.0, 0);
        let shift = |t: &str| {
            let id = m.vocab().id(t);
            &m.embeddings.row(id) - &base.embeddings.row(id)
        };
        assert!((shift("x") - shift("y")).iter().all(|v| v.abs() < 1e-12));
        assert!((shift("x") - shift("z")).iter().any(|v| v.abs() > 1e-3));
        let mut same = base.clone();
        add_concept_prior(&mut same, &lexicon, 0.0, 0);
        assert_eq!(same.embeddings, base.embeddings);
    }
}
