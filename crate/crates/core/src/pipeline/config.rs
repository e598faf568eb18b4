use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GplError, Result};
use crate::eval::{Gain, Metric, DEFAULT_CUTOFF, DEFAULT_RERANK_TOP_N};
use crate::generation::{SamplerConfig, DEFAULT_TOTAL_BUDGET};
use crate::mining::DEFAULT_NEGATIVES_PER_RETRIEVER;
use crate::model::{Pooling, Similarity};
use crate::training::pretrain::PretrainConfig;
use crate::training::{LossConfig, TrainRunConfig};

/// Whole-run configuration, read from a TOML document. Every key is
/// optional; missing keys take the values of [`PipelineConfig::default`],
/// section by section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Name of the `<out>/<dataset>` directory; defaults to the data
    /// directory's name.
    pub dataset: Option<String>,
    pub paths: PathsConfig,
    pub model: ModelConfig,
    pub generation: GenerationConfig,
    pub mining: MiningConfig,
    pub labeling: LabelingConfig,
    pub gpl: TrainRunConfig,
    pub qgen: TrainRunConfig,
    /// In-batch loss used by the QGen methods.
    pub loss: LossConfig,
    pub pretrain: PretrainConfig,
    pub eval: EvalConfig,
    /// Save a model checkpoint every this many training steps.
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// BeIR-style directory with `corpus.jsonl`, `queries.jsonl` and
    /// `qrels/<split>.tsv`.
    pub data: PathBuf,
    pub split: String,
    pub output: PathBuf,
    /// Starting checkpoint. A fresh encoder over the corpus vocabulary is
    /// used when absent.
    pub init_model: Option<PathBuf>,
    /// `token<TAB>concept` lexicon for the lexical cross-encoder.
    pub lexicon: Option<PathBuf>,
    /// Labelled source task for UDALM: `corpus.jsonl`, `queries.jsonl` and
    /// `gpl-training-data.tsv`.
    pub source: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub pooling: Pooling,
    pub similarity: Similarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub max_query_len: usize,
    pub total_budget: usize,
    /// Number of generic noise words known to the mock generator.
    pub noise_vocab: usize,
    /// Add the lexicon's tokens to the mock generator's noise vocabulary.
    pub lexicon_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// Any of `bm25`, `dense` (the starting model) and `random`.
    pub retrievers: Vec<String>,
    pub negatives_per_retriever: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingConfig {
    /// Only `lexical` is built in.
    pub cross_encoder: String,
    pub exact_weight: f64,
    pub concept_weight: f64,
    pub tuples_per_query: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
    pub gain: Gain,
    pub cutoff: usize,
    pub rerank_top_n: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            dataset: None,
            paths: PathsConfig::default(),
            model: ModelConfig::default(),
            generation: GenerationConfig::default(),
            mining: MiningConfig::default(),
            labeling: LabelingConfig::default(),
            gpl: TrainRunConfig::gpl(),
            qgen: TrainRunConfig::qgen(),
            loss: LossConfig::default(),
            pretrain: PretrainConfig::default(),
            eval: EvalConfig::default(),
            checkpoint_every: None,
        }
    }
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data: PathBuf::from("data"),
            split: "test".into(),
            output: PathBuf::from("output"),
            init_model: None,
            lexicon: None,
            source: None,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            pooling: Pooling::Mean,
            similarity: Similarity::Dot,
        }
    }
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let s = SamplerConfig::default();
        GenerationConfig {
            temperature: s.temperature,
            top_k: s.top_k,
            top_p: s.top_p,
            max_query_len: s.max_query_len,
            total_budget: DEFAULT_TOTAL_BUDGET,
            noise_vocab: 100,
            lexicon_noise: true,
        }
    }
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            retrievers: vec!["bm25".into(), "dense".into()],
            negatives_per_retriever: DEFAULT_NEGATIVES_PER_RETRIEVER,
        }
    }
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig {
            cross_encoder: "lexical".into(),
            exact_weight: 1.0,
            concept_weight: 0.5,
            tuples_per_query: 1,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: vec![Metric::Ndcg(10), Metric::Mrr(10)],
            gain: Gain::Linear,
            cutoff: DEFAULT_CUTOFF,
            rerank_top_n: DEFAULT_RERANK_TOP_N,
        }
    }
}

pub const MINERS: [&str; 3] = ["bm25", "dense", "random"];

impl GenerationConfig {
    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            temperature: self.temperature,
            top_k: self.top_k,
            top_p: self.top_p,
            seed,
            max_query_len: self.max_query_len,
        }
    }
}

impl PipelineConfig {
    /// Parse a TOML document over the defaults. Relative paths are resolved
    /// against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| GplError::Config(format!("config: {e}")))?;
        let mut merged = toml::Table::try_from(PipelineConfig::default())
            .map_err(|e| GplError::Serde(e.to_string()))?;
        merge(&mut merged, user);
        let mut cfg: PipelineConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| GplError::Config(format!("config: {e}")))?;
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GplError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| GplError::Serde(e.to_string()))
    }

    pub fn dataset_name(&self) -> String {
        self.dataset.clone().unwrap_or_else(|| {
            self.paths
                .data
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.generation.sampler(self.seed).validate()?;
        if self.generation.total_budget == 0 {
            return Err(GplError::Config("generation.total_budget must be >= 1".into()));
        }
        if self.model.dim == 0 {
            return Err(GplError::Config("model.dim must be >= 1".into()));
        }
        if self.mining.retrievers.is_empty() {
            return Err(GplError::Config("mining.retrievers is empty".into()));
        }
        if let Some(bad) = self.mining.retrievers.iter().find(|r| !MINERS.contains(&r.as_str())) {
            return Err(GplError::Config(format!("unknown miner `{bad}`; valid: {}", MINERS.join(", "))));
        }
        if self.mining.negatives_per_retriever == 0 {
            return Err(GplError::Config("mining.negatives_per_retriever must be >= 1".into()));
        }
        if self.labeling.cross_encoder != "lexical" {
            return Err(GplError::Config(format!(
                "unknown cross_encoder `{}`; valid: lexical",
                self.labeling.cross_encoder
            )));
        }
        if self.labeling.tuples_per_query == 0 {
            return Err(GplError::Config("labeling.tuples_per_query must be >= 1".into()));
        }
        self.gpl.validate()?;
        self.qgen.validate()?;
        self.loss.validate()?;
        self.pretrain.validate()?;
        if self.eval.metrics.is_empty() || self.eval.cutoff == 0 || self.eval.rerank_top_n == 0 {
            return Err(GplError::Config("eval needs metrics, cutoff >= 1 and rerank_top_n >= 1".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(GplError::Config("checkpoint_every must be >= 1".into()));
        }
        Ok(())
    }
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data);
        fix(&mut self.output);
        for p in [&mut self.init_model, &mut self.lexicon, &mut self.source].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn corpus(&self) -> PathBuf {
        self.data.join("corpus.jsonl")
    }

    pub fn queries(&self) -> PathBuf {
        self.data.join("queries.jsonl")
    }

    pub fn qrels(&self) -> PathBuf {
        self.data.join("qrels").join(format!("{}.tsv", self.split))
    }
}

fn merge(base: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
