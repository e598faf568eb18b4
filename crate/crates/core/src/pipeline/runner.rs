use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::cache::{config_hash, input_hash, CacheManifest, CacheStatus, DirLock, Producer};
use super::config::PipelineConfig;
use super::{Finetune, Method, PipelineRun, Stage, StageRun};
use crate::corpus::{
    downsample_corpus, load_corpus, load_qrels, load_queries, normalize_passages, passage_text, tokenize,
    write_corpus, write_qrels, write_queries, CorpusStats, Passage, Query, STOPWORDS,
};
use crate::error::{GplError, Result};
use crate::eval::{ce_rerank, evaluate, full_rank, rank_with, EvalReport, RunRanking};
use crate::generation::{compute_budget, generate_queries, write_generated, GenerationBudget, MockGenerator};
use crate::labeling::{build_dataset_with, read_dataset, write_dataset};
use crate::mining::{
    mine_all, read_negatives, write_negatives, Bm25Index, Bm25Retriever, DenseRetriever, RandomRetriever, Retriever,
};
use crate::model::{EncoderModel, LexicalCrossEncoder, Pooling, Similarity, Vocab};
use crate::seed::derive_seed;
use crate::training::pretrain::{pretrain, PretrainMethod};
use crate::training::{gpl_train_with, qgen_train_with, resolve_tuples, LossConfig, QgenNegatives, TrainHooks};

const CORPUS: &str = "corpus.jsonl";
const TRAIN_CORPUS: &str = "train-corpus.jsonl";
const QUERIES: &str = "queries.jsonl";
const QRELS: &str = "qrels.tsv";
const LEXICON: &str = "lexicon.tsv";
const INIT_MODEL: &str = "init-model.json";
const STATS: &str = "stats.json";
const GEN_QUERIES: &str = "gen-queries.jsonl";
const GEN_QRELS: &str = "gen-qrels.tsv";
const NEGATIVES: &str = "hard-negatives.jsonl";
const TRAINING_DATA: &str = "gpl-training-data.tsv";
const TRAINING_DATA_MANIFEST: &str = "gpl-training-data.tsv.manifest.json";
const MODEL: &str = "model.json";
const LOSS: &str = "loss.csv";
const RUN: &str = "run.trec";
const REPORT: &str = "report.json";

/// Summary written by `ingest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub n_passages: usize,
    pub n_train_passages: usize,
    pub avg_doc_len: f64,
    pub n_queries: usize,
    pub n_judged_queries: usize,
    pub budget: GenerationBudget,
}

struct Input {
    label: &'static str,
    path: PathBuf,
    /// Stage that produces the file; `None` for user-supplied files.
    upstream: Option<Stage>,
}

struct Plan {
    stage: Stage,
    key: String,
    inputs: Vec<Input>,
    config_hash: String,
    outputs: Vec<&'static str>,
}

impl Plan {
    fn dir(&self, root: &Path) -> PathBuf {
        root.join(&self.key)
    }

    /// Inputs are listed upstream-first, so scanning in reverse names the
    /// nearest missing stage.
    fn check_inputs(&self) -> Result<()> {
        for i in self.inputs.iter().rev() {
            if i.path.is_file() {
                continue;
            }
            return Err(match i.upstream {
                Some(up) => GplError::MissingArtifact {
                    stage: self.stage.to_string(),
                    upstream: up.to_string(),
                    detail: format!("{} not found", i.path.display()),
                },
                None => GplError::Config(format!("{} input {} not found", i.label, i.path.display())),
            });
        }
        Ok(())
    }

    fn input_hash(&self) -> Result<String> {
        let files: Vec<(&str, &Path)> = self.inputs.iter().map(|i| (i.label, i.path.as_path())).collect();
        input_hash(&files)
    }
}

fn dataset_root(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.output.join(cfg.dataset_name())
}

pub(super) fn resolve(cfg: &PipelineConfig, stage: Stage, method: &Method) -> Result<CacheStatus> {
    let root = dataset_root(cfg);
    let plan = plan(cfg, &root, stage, method)?;
    if plan.check_inputs().is_err() {
        return Ok(CacheStatus::Miss);
    }
    let manifest = CacheManifest::load(&root);
    Ok(manifest.resolve(&root, &plan.key, &plan.input_hash()?, &plan.config_hash))
}

fn common(root: &Path, stage: Stage) -> PathBuf {
    root.join("common").join(stage.as_str())
}

fn file(root: &Path, stage: Stage, name: &str) -> PathBuf {
    common(root, stage).join(name)
}

fn input(label: &'static str, path: PathBuf, upstream: Stage) -> Input {
    Input { label, path, upstream: Some(upstream) }
}

fn user_input(label: &'static str, path: PathBuf) -> Input {
    Input { label, path, upstream: None }
}

fn pretrain_key(p: PretrainMethod) -> String {
    format!("{}/pretrain", p.as_str())
}

/// Checkpoint evaluated for `method`'s first stage.
fn first_stage_model(root: &Path, method: &Method) -> Option<Input> {
    if method.lexical {
        None
    } else if method.finetune.is_some() {
        Some(input("model", root.join(method.base_id()).join("train").join(MODEL), Stage::Train))
    } else if let Some(p) = method.pretrain {
        Some(input("model", root.join(pretrain_key(p)).join(MODEL), Stage::Pretrain))
    } else {
        Some(input("model", file(root, Stage::Ingest, INIT_MODEL), Stage::Ingest))
    }
}

fn no_stage(stage: Stage, method: &Method) -> GplError {
    GplError::Config(format!("method `{method}` has no `{stage}` stage; its stages are {:?}", method.stages()))
}

fn plan(cfg: &PipelineConfig, root: &Path, stage: Stage, method: &Method) -> Result<Plan> {
    let seed = cfg.seed;
    let ingest = |name: &'static str| input(name, file(root, Stage::Ingest, name), Stage::Ingest);
    let (key, inputs, config, outputs): (String, Vec<Input>, serde_json::Value, Vec<&'static str>) = match stage {
        Stage::Ingest => {
            let mut inputs = vec![
                user_input("corpus", cfg.paths.corpus()),
                user_input("queries", cfg.paths.queries()),
                user_input("qrels", cfg.paths.qrels()),
            ];
            if let Some(p) = &cfg.paths.init_model {
                inputs.push(user_input("init_model", p.clone()));
            }
            if let Some(p) = &cfg.paths.lexicon {
                inputs.push(user_input("lexicon", p.clone()));
            }
            let config = json!({
                "seed": seed,
                "total_budget": cfg.generation.total_budget,
                "model": cfg.model,
                "noise_vocab": cfg.generation.noise_vocab,
                "lexicon_noise": cfg.generation.lexicon_noise,
            });
            let outputs = vec![CORPUS, TRAIN_CORPUS, QUERIES, QRELS, LEXICON, INIT_MODEL, STATS];
            ("common/ingest".into(), inputs, config, outputs)
        }
        Stage::Generate => {
            let inputs = vec![ingest(TRAIN_CORPUS), ingest(LEXICON), ingest(STATS)];
            let config = json!({ "seed": seed, "generation": cfg.generation });
            ("common/generate".into(), inputs, config, vec![GEN_QUERIES, GEN_QRELS])
        }
        Stage::Mine => {
            let inputs = vec![
                ingest(TRAIN_CORPUS),
                ingest(INIT_MODEL),
                input("gen_queries", file(root, Stage::Generate, GEN_QUERIES), Stage::Generate),
            ];
            let config = json!({ "seed": seed, "mining": cfg.mining });
            ("common/mine".into(), inputs, config, vec![NEGATIVES])
        }
        Stage::Label => {
            let inputs = vec![
                ingest(TRAIN_CORPUS),
                ingest(LEXICON),
                input("gen_queries", file(root, Stage::Generate, GEN_QUERIES), Stage::Generate),
                input("negatives", file(root, Stage::Mine, NEGATIVES), Stage::Mine),
            ];
            let config = json!({ "seed": seed, "labeling": cfg.labeling });
            ("common/label".into(), inputs, config, vec![TRAINING_DATA, TRAINING_DATA_MANIFEST])
        }
        Stage::Pretrain => {
            let p = method.pretrain.ok_or_else(|| no_stage(stage, method))?;
            let mut inputs = vec![ingest(TRAIN_CORPUS), ingest(INIT_MODEL)];
            if p == PretrainMethod::Udalm {
                let src = cfg.paths.source.clone().ok_or_else(|| {
                    GplError::Config("udalm needs a labelled source task; set paths.source".into())
                })?;
                inputs.push(user_input("source_corpus", src.join(CORPUS)));
                inputs.push(user_input("source_queries", src.join(QUERIES)));
                inputs.push(user_input("source_data", src.join(TRAINING_DATA)));
            }
            let config = json!({ "seed": seed, "method": p.as_str(), "pretrain": cfg.pretrain });
            (pretrain_key(p), inputs, config, vec![MODEL, LOSS])
        }
        Stage::Train => {
            let f = method.finetune.ok_or_else(|| no_stage(stage, method))?;
            let start = match method.pretrain {
                Some(p) => input("start_model", root.join(pretrain_key(p)).join(MODEL), Stage::Pretrain),
                None => ingest(INIT_MODEL),
            };
            let mut inputs = vec![
                ingest(TRAIN_CORPUS),
                start,
                input("gen_queries", file(root, Stage::Generate, GEN_QUERIES), Stage::Generate),
            ];
            let config = match f {
                Finetune::Gpl => {
                    inputs.push(input("training_data", file(root, Stage::Label, TRAINING_DATA), Stage::Label));
                    json!({ "seed": seed, "method": f.as_str(), "run": cfg.gpl, "checkpoint_every": cfg.checkpoint_every })
                }
                Finetune::Qgen | Finetune::QgenHn => {
                    if f == Finetune::QgenHn {
                        inputs.push(input("negatives", file(root, Stage::Mine, NEGATIVES), Stage::Mine));
                    }
                    json!({
                        "seed": seed,
                        "method": f.as_str(),
                        "run": cfg.qgen,
                        "loss": cfg.loss,
                        "checkpoint_every": cfg.checkpoint_every,
                    })
                }
            };
            (format!("{}/train", method.base_id()), inputs, config, vec![MODEL, LOSS])
        }
        Stage::Evaluate => {
            let mut inputs = vec![ingest(CORPUS), ingest(QUERIES), ingest(QRELS)];
            inputs.extend(first_stage_model(root, method));
            let config = json!({ "lexical": method.lexical, "eval": {
                "metrics": cfg.eval.metrics, "gain": cfg.eval.gain, "cutoff": cfg.eval.cutoff,
            }});
            (format!("{}/evaluate", method.base_id()), inputs, config, vec![RUN, REPORT])
        }
        Stage::Rerank => {
            if !method.rerank {
                return Err(no_stage(stage, method));
            }
            let inputs = vec![
                ingest(CORPUS),
                ingest(QUERIES),
                ingest(QRELS),
                ingest(LEXICON),
                input("first_stage", root.join(method.base_id()).join("evaluate").join(RUN), Stage::Evaluate),
            ];
            let config = json!({
                "eval": cfg.eval,
                "cross_encoder": cfg.labeling.cross_encoder,
                "exact_weight": cfg.labeling.exact_weight,
                "concept_weight": cfg.labeling.concept_weight,
            });
            (format!("{}/rerank", method.id()), inputs, config, vec![RUN, REPORT])
        }
    };
    Ok(Plan { stage, key, inputs, config_hash: config_hash(&config)?, outputs })
}

/// An open, locked output directory for one dataset.
#[derive(Debug)]
pub struct Pipeline {
    cfg: PipelineConfig,
    root: PathBuf,
    manifest: CacheManifest,
    _lock: DirLock,
}

impl Pipeline {
    /// Validate `cfg`, lock `<output>/<dataset>` and load its manifest.
    pub fn open(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let root = dataset_root(&cfg);
        let lock = DirLock::acquire(&root)?;
        let manifest = CacheManifest::load(&root);
        Ok(Pipeline { cfg, root, manifest, _lock: lock })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn manifest(&self) -> &CacheManifest {
        &self.manifest
    }

    /// Run every stage of `method` in order and return the final report
    /// (the re-ranked one when the method re-ranks).
    pub fn run(&mut self, method: &Method) -> Result<PipelineRun> {
        let mut stages = Vec::new();
        for stage in method.stages() {
            stages.push(self.run_stage(stage, method)?);
        }
        let last = stages.last().expect("every method evaluates");
        let report = EvalReport::read_json(last.dir.join(REPORT))?;
        Ok(PipelineRun { method: *method, report, stages })
    }

    /// Run one stage, or reuse its outputs when the cache hits.
    pub fn run_stage(&mut self, stage: Stage, method: &Method) -> Result<StageRun> {
        let plan = plan(&self.cfg, &self.root, stage, method)?;
        plan.check_inputs()?;
        let input_hash = plan.input_hash()?;
        let dir = plan.dir(&self.root);
        let outputs: Vec<PathBuf> = plan.outputs.iter().map(|o| dir.join(o)).collect();
        let run = |cached| StageRun { stage, key: plan.key.clone(), dir: dir.clone(), outputs: outputs.clone(), cached };
        if self.manifest.resolve(&self.root, &plan.key, &input_hash, &plan.config_hash) == CacheStatus::Hit {
            log::info!("{}: cached", plan.key);
            return Ok(run(true));
        }
        log::info!("{}: running", plan.key);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| GplError::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| GplError::io(&dir, e))?;
        self.produce(stage, method, &dir)?;
        if let Some(missing) = outputs.iter().find(|o| !o.is_file()) {
            return Err(GplError::Config(format!("stage {stage} did not write {}", missing.display())));
        }
        let names: Vec<String> = plan.outputs.iter().map(|s| s.to_string()).collect();
        Producer {
            stage: plan.key.clone(),
            config_hash: plan.config_hash.clone(),
            input_hash: input_hash.clone(),
            outputs: names.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
        .write(&dir)?;
        self.manifest.record(&plan.key, input_hash, plan.config_hash.clone(), names);
        self.manifest.save(&self.root)?;
        Ok(run(false))
    }

    fn produce(&self, stage: Stage, method: &Method, dir: &Path) -> Result<()> {
        match stage {
            Stage::Ingest => self.ingest(dir),
            Stage::Generate => self.generate(dir),
            Stage::Mine => self.mine(dir),
            Stage::Label => self.label(dir),
            Stage::Pretrain => self.pretrain(method, dir),
            Stage::Train => self.train(method, dir),
            Stage::Evaluate => self.evaluate(method, dir),
            Stage::Rerank => self.rerank(method, dir),
        }
    }

    fn seed(&self, tag: &str) -> u64 {
        derive_seed(self.cfg.seed, &[tag.into()])
    }

    fn ingested(&self, name: &str) -> PathBuf {
        file(&self.root, Stage::Ingest, name)
    }

    fn lexicon(&self) -> Result<BTreeMap<String, String>> {
        LexicalCrossEncoder::load_lexicon(self.ingested(LEXICON))
    }

    fn cross_encoder(&self) -> Result<LexicalCrossEncoder> {
        let l = &self.cfg.labeling;
        Ok(LexicalCrossEncoder::with_concepts(self.lexicon()?, l.exact_weight, l.concept_weight))
    }

    fn noise_words(&self, lexicon: &BTreeMap<String, String>) -> Vec<String> {
        let mut noise = MockGenerator::default_noise_vocab(self.cfg.generation.noise_vocab);
        if self.cfg.generation.lexicon_noise {
            noise.extend(lexicon.keys().cloned());
        }
        noise
    }

    fn ingest(&self, dir: &Path) -> Result<()> {
        let paths = &self.cfg.paths;
        let corpus = normalize_passages(load_corpus(paths.corpus())?, true);
        let queries = load_queries(paths.queries())?;
        let qrels = load_qrels(paths.qrels())?;
        let budget = compute_budget(corpus.len(), self.cfg.generation.total_budget)?;
        let train = if budget.needs_downsampling(corpus.len()) {
            downsample_corpus(&corpus, budget.effective_corpus_size, self.seed("downsample"))?
        } else {
            corpus.clone()
        };
        let lexicon = match &paths.lexicon {
            Some(p) => LexicalCrossEncoder::load_lexicon(p)?,
            None => BTreeMap::new(),
        };
        let model = match &paths.init_model {
            Some(p) => EncoderModel::load(p)?,
            None => {
                let mut tokens: BTreeSet<String> = corpus.iter().flat_map(|p| tokenize(&passage_text(p))).collect();
                tokens.extend(STOPWORDS.iter().map(|s| s.to_string()));
                tokens.extend(self.noise_words(&lexicon));
                let m = &self.cfg.model;
                EncoderModel::new(Vocab::new(tokens), m.dim, m.pooling, m.similarity, self.seed("init-model"))?
            }
        };
        write_corpus(dir.join(CORPUS), &corpus)?;
        write_corpus(dir.join(TRAIN_CORPUS), &train)?;
        write_queries(dir.join(QUERIES), &queries)?;
        write_qrels(dir.join(QRELS), &qrels)?;
        let lex: String = lexicon.iter().map(|(t, c)| format!("{t}\t{c}\n")).collect();
        write_text(&dir.join(LEXICON), &lex)?;
        model.save(dir.join(INIT_MODEL))?;
        let judged = queries.iter().filter(|q| qrels.get(&q.id).is_some_and(|j| !j.is_empty())).count();
        let stats = IngestStats {
            n_passages: corpus.len(),
            n_train_passages: train.len(),
            avg_doc_len: CorpusStats::compute(&corpus).avg_doc_len,
            n_queries: queries.len(),
            n_judged_queries: judged,
            budget,
        };
        write_json(&dir.join(STATS), &stats)
    }

    fn generate(&self, dir: &Path) -> Result<()> {
        let train = load_corpus(self.ingested(TRAIN_CORPUS))?;
        let stats: IngestStats = read_json(&self.ingested(STATS))?;
        let gen = MockGenerator::for_corpus(&train, self.noise_words(&self.lexicon()?));
        let sampler = self.cfg.generation.sampler(self.seed("generate"));
        let queries = generate_queries(&gen, &train, &stats.budget, &sampler)?;
        write_generated(dir, &queries)
    }

    fn gen_queries(&self) -> Result<Vec<Query>> {
        load_queries(file(&self.root, Stage::Generate, GEN_QUERIES))
    }

    fn mine(&self, dir: &Path) -> Result<()> {
        let train = load_corpus(self.ingested(TRAIN_CORPUS))?;
        let queries = self.gen_queries()?;
        let model = Arc::new(EncoderModel::load(self.ingested(INIT_MODEL))?);
        let mut miners: Vec<Box<dyn Retriever>> = Vec::new();
        for name in &self.cfg.mining.retrievers {
            miners.push(match name.as_str() {
                "bm25" => Box::new(Bm25Retriever::new(Arc::new(Bm25Index::build(&train, Default::default())?))),
                "dense" => Box::new(DenseRetriever::new("dense", model.clone(), &train)),
                "random" => Box::new(RandomRetriever::new(&train, self.seed("random-miner"))),
                other => return Err(GplError::Config(format!("unknown miner `{other}`"))),
            });
        }
        let refs: Vec<&dyn Retriever> = miners.iter().map(|m| m.as_ref()).collect();
        let pools = mine_all(&queries, &refs, self.cfg.mining.negatives_per_retriever)?;
        write_negatives(dir.join(NEGATIVES), &pools)
    }

    fn label(&self, dir: &Path) -> Result<()> {
        let train = load_corpus(self.ingested(TRAIN_CORPUS))?;
        let queries = self.gen_queries()?;
        let pools = read_negatives(file(&self.root, Stage::Mine, NEGATIVES))?;
        let ce = self.cross_encoder()?;
        let data = build_dataset_with(
            &queries,
            &pools,
            &train,
            &ce,
            self.seed("label"),
            self.cfg.labeling.tuples_per_query,
        )?;
        write_dataset(dir.join(TRAINING_DATA), &data)
    }

    fn pretrain(&self, method: &Method, dir: &Path) -> Result<()> {
        let p = method.pretrain.ok_or_else(|| no_stage(Stage::Pretrain, method))?;
        let train = load_corpus(self.ingested(TRAIN_CORPUS))?;
        let texts: Vec<String> = train.iter().map(passage_text).collect();
        let mut encoder = EncoderModel::load(self.ingested(INIT_MODEL))?;
        if p == PretrainMethod::Cd && encoder.pooling != Pooling::Cls {
            log::info!("cd pre-training switches the encoder to CLS pooling");
            encoder.pooling = Pooling::Cls;
        }
        let source = match (p, &self.cfg.paths.source) {
            (PretrainMethod::Udalm, Some(src)) => {
                let corpus = load_corpus(src.join(CORPUS))?;
                let queries = load_queries(src.join(QUERIES))?;
                let data = read_dataset(src.join(TRAINING_DATA))?;
                Some(resolve_tuples(&encoder, &data, &corpus, &queries)?)
            }
            _ => None,
        };
        let cfg = crate::training::pretrain::PretrainConfig {
            method: p,
            seed: derive_seed(self.cfg.seed, &["pretrain".into(), p.as_str().into()]),
            ..self.cfg.pretrain.clone()
        };
        let (mut model, trace) = pretrain(encoder, &texts, &cfg, source.as_deref(), &self.hooks(dir))?;
        if matches!(p, PretrainMethod::Ict | PretrainMethod::Simcse | PretrainMethod::Ct) {
            model = model.with_similarity(cfg.loss.similarity);
        }
        model.save(dir.join(MODEL))?;
        trace.write_csv(dir.join(LOSS))
    }

    fn hooks(&self, dir: &Path) -> TrainHooks {
        match self.cfg.checkpoint_every {
            Some(every) => TrainHooks::checkpoints(dir.join("checkpoints"), every),
            None => TrainHooks::default(),
        }
    }

    fn train(&self, method: &Method, dir: &Path) -> Result<()> {
        let f = method.finetune.ok_or_else(|| no_stage(Stage::Train, method))?;
        let train = load_corpus(self.ingested(TRAIN_CORPUS))?;
        let queries = self.gen_queries()?;
        let start = match method.pretrain {
            Some(p) => EncoderModel::load(self.root.join(pretrain_key(p)).join(MODEL))?,
            None => EncoderModel::load(self.ingested(INIT_MODEL))?,
        };
        let seed = derive_seed(self.cfg.seed, &["train".into(), method.base_id().as_str().into()]);
        let hooks = self.hooks(dir);
        let (model, trace) = match f {
            Finetune::Gpl => {
                let data = read_dataset(file(&self.root, Stage::Label, TRAINING_DATA))?;
                let cfg = crate::training::TrainRunConfig { seed, ..self.cfg.gpl.clone() };
                gpl_train_with(start.with_similarity(Similarity::Dot), &data, &train, &queries, &cfg, &hooks)?
            }
            Finetune::Qgen | Finetune::QgenHn => {
                let pools = match f {
                    Finetune::QgenHn => read_negatives(file(&self.root, Stage::Mine, NEGATIVES))?,
                    _ => Vec::new(),
                };
                let negatives = match f {
                    Finetune::QgenHn => QgenNegatives::Pool(&pools),
                    _ => QgenNegatives::InBatch,
                };
                let cfg = crate::training::TrainRunConfig { seed, ..self.cfg.qgen.clone() };
                let loss = LossConfig { similarity: Similarity::Cosine, ..self.cfg.loss };
                let model = start.with_similarity(Similarity::Cosine);
                qgen_train_with(model, &queries, &train, &cfg, negatives, &loss, &hooks)?
            }
        };
        model.save(dir.join(MODEL))?;
        trace.write_csv(dir.join(LOSS))
    }

    fn eval_inputs(&self) -> Result<(Vec<Passage>, Vec<Query>, crate::corpus::Qrels)> {
        let corpus = load_corpus(self.ingested(CORPUS))?;
        let qrels = load_qrels(self.ingested(QRELS))?;
        let queries = load_queries(self.ingested(QUERIES))?
            .into_iter()
            .filter(|q| qrels.get(&q.id).is_some_and(|j| !j.is_empty()))
            .collect();
        Ok((corpus, queries, qrels))
    }

    fn report(&self, run: &RunRanking, qrels: &crate::corpus::Qrels, dir: &Path, tag: &str) -> Result<()> {
        run.write_trec(dir.join(RUN), tag)?;
        let report = evaluate(run, qrels, &self.cfg.eval.metrics, self.cfg.eval.gain)?;
        report.write_json(dir.join(REPORT))
    }

    fn evaluate(&self, method: &Method, dir: &Path) -> Result<()> {
        let (corpus, queries, qrels) = self.eval_inputs()?;
        let cutoff = self.cfg.eval.cutoff;
        let run = match first_stage_model(&self.root, method) {
            None => {
                let bm25 = Bm25Retriever::new(Arc::new(Bm25Index::build(&corpus, Default::default())?));
                rank_with(&bm25, &queries, cutoff)?
            }
            Some(m) => full_rank(&EncoderModel::load(m.path)?, &queries, &corpus, cutoff)?,
        };
        self.report(&run, &qrels, dir, &method.base_id())
    }

    fn rerank(&self, method: &Method, dir: &Path) -> Result<()> {
        let (corpus, queries, qrels) = self.eval_inputs()?;
        let first = RunRanking::read_trec(self.root.join(method.base_id()).join("evaluate").join(RUN))?;
        let ce = self.cross_encoder()?;
        let run = ce_rerank(&first, &ce, &queries, &corpus, self.cfg.eval.rerank_top_n)?;
        self.report(&run, &qrels, dir, &method.id())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| GplError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| GplError::Serde(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| GplError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| GplError::parse(path, 1, e.to_string()))
}
