//! Stage-based pipeline runner with an on-disk artifact cache.
//!
//! Layout under `<output>/<dataset>/`:
//!
//! ```text
//! manifest.json           cache manifest (all stages)
//! common/ingest/          corpus.jsonl train-corpus.jsonl queries.jsonl qrels.tsv
//!                         lexicon.tsv init-model.json stats.json
//! common/generate/        gen-queries.jsonl gen-qrels.tsv
//! common/mine/            hard-negatives.jsonl
//! common/label/           gpl-training-data.tsv
//! <pretrain>/pretrain/    model.json loss.csv
//! <method>/train/         model.json loss.csv
//! <method>/evaluate/      run.trec report.json
//! <method>+ce/rerank/     run.trec report.json
//! ```
//!
//! Generated queries, negatives and labels are method independent and live
//! under `common/`, so QGen and GPL share them. Every stage directory holds a
//! `_producer.json` sidecar with the hashes that produced it.

mod cache;
mod config;
mod runner;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use cache::{
    config_hash, input_hash, CacheManifest, CacheStatus, DirLock, Producer, StageEntry, LOCK_FILE, MANIFEST_FILE,
    PRODUCER_FILE,
};
pub use config::{
    EvalConfig, GenerationConfig, LabelingConfig, MiningConfig, ModelConfig, PathsConfig, PipelineConfig, MINERS,
};
pub use runner::{IngestStats, Pipeline};

use crate::error::{GplError, Result};
use crate::eval::EvalReport;
use crate::training::pretrain::PretrainMethod;

/// Environment variable that overrides `paths.output`.
pub const CACHE_ROOT_ENV: &str = "PIPELINE_CACHE_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Generate,
    Mine,
    Label,
    Train,
    Pretrain,
    Evaluate,
    Rerank,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Generate,
        Stage::Mine,
        Stage::Label,
        Stage::Train,
        Stage::Pretrain,
        Stage::Evaluate,
        Stage::Rerank,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Generate => "generate",
            Stage::Mine => "mine",
            Stage::Label => "label",
            Stage::Train => "train",
            Stage::Pretrain => "pretrain",
            Stage::Evaluate => "evaluate",
            Stage::Rerank => "rerank",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = GplError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| {
            let valid: Vec<&str> = Stage::ALL.iter().map(|s| s.as_str()).collect();
            GplError::Config(format!("unknown stage `{s}`; valid stages: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Finetune {
    Gpl,
    /// In-batch negatives only.
    Qgen,
    /// In-batch plus one mined hard negative per query.
    QgenHn,
}

impl Finetune {
    pub const ALL: [Finetune; 3] = [Finetune::Gpl, Finetune::Qgen, Finetune::QgenHn];

    pub fn as_str(self) -> &'static str {
        match self {
            Finetune::Gpl => "gpl",
            Finetune::Qgen => "qgen",
            Finetune::QgenHn => "qgen-hn",
        }
    }
}

/// A method id such as `gpl`, `tsdae+gpl`, `qgen-hn`, `bm25+ce` or `udalm`:
/// an optional pre-training objective, an optional fine-tuning objective, a
/// first-stage retriever and optional cross-encoder re-ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Method {
    pub pretrain: Option<PretrainMethod>,
    pub finetune: Option<Finetune>,
    /// BM25 first stage instead of a dense model.
    pub lexical: bool,
    pub rerank: bool,
}

impl Method {
    pub const ZERO_SHOT: Method = Method { pretrain: None, finetune: None, lexical: false, rerank: false };

    pub fn finetune(f: Finetune) -> Self {
        Method { finetune: Some(f), ..Method::ZERO_SHOT }
    }

    /// Id without the `+ce` suffix: the directory of the first stage.
    pub fn base_id(&self) -> String {
        if self.lexical {
            return "bm25".into();
        }
        let parts: Vec<&str> = self
            .pretrain
            .map(PretrainMethod::as_str)
            .into_iter()
            .chain(self.finetune.map(Finetune::as_str))
            .collect();
        if parts.is_empty() {
            "zeroshot".into()
        } else {
            parts.join("+")
        }
    }

    pub fn id(&self) -> String {
        if self.rerank {
            format!("{}+ce", self.base_id())
        } else {
            self.base_id()
        }
    }

    /// Stage sequence executed by [`run_pipeline`].
    pub fn stages(&self) -> Vec<Stage> {
        let mut s = vec![Stage::Ingest];
        if !self.lexical {
            if self.pretrain.is_some() {
                s.push(Stage::Pretrain);
            }
            if let Some(f) = self.finetune {
                s.push(Stage::Generate);
                if f != Finetune::Qgen {
                    s.push(Stage::Mine);
                }
                if f == Finetune::Gpl {
                    s.push(Stage::Label);
                }
                s.push(Stage::Train);
            }
        }
        s.push(Stage::Evaluate);
        if self.rerank {
            s.push(Stage::Rerank);
        }
        s
    }

    /// Every canonical method id, first-stage ids before their `+ce` forms.
    pub fn valid_ids() -> Vec<String> {
        let mut base = vec!["zeroshot".to_string(), "bm25".to_string()];
        base.extend(Finetune::ALL.iter().map(|f| f.as_str().to_string()));
        for p in PretrainMethod::ALL {
            base.push(p.as_str().to_string());
            if p != PretrainMethod::Udalm {
                base.extend(Finetune::ALL.iter().map(|f| format!("{}+{}", p.as_str(), f.as_str())));
            }
        }
        let with_ce: Vec<String> = base.iter().map(|b| format!("{b}+ce")).collect();
        base.extend(with_ce);
        base
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Method {
    type Err = GplError;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || {
            GplError::Config(format!(
                "unknown method `{s}`; valid methods: {}",
                Method::valid_ids().join(", ")
            ))
        };
        let (rest, rerank) = match s.strip_suffix("+ce") {
            Some(r) => (r, true),
            None => (s, false),
        };
        let mut m = Method { rerank, ..Method::ZERO_SHOT };
        match rest {
            "zeroshot" => return Ok(m),
            "bm25" => return Ok(Method { lexical: true, ..m }),
            _ => {}
        }
        let mut parts = rest.split('+');
        let first = parts.next().ok_or_else(unknown)?;
        let second = parts.next();
        if parts.next().is_some() {
            return Err(unknown());
        }
        let finetune = |t: &str| Finetune::ALL.into_iter().find(|f| f.as_str() == t);
        match (first.parse::<PretrainMethod>().ok(), second) {
            (Some(p), None) => m.pretrain = Some(p),
            (Some(p), Some(f)) if p != PretrainMethod::Udalm => {
                m.pretrain = Some(p);
                m.finetune = Some(finetune(f).ok_or_else(unknown)?);
            }
            (None, None) => m.finetune = Some(finetune(first).ok_or_else(unknown)?),
            _ => return Err(unknown()),
        }
        Ok(m)
    }
}

/// Result of one stage invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRun {
    pub stage: Stage,
    /// Stage directory relative to the dataset root.
    pub key: String,
    pub dir: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub method: Method,
    pub report: EvalReport,
    pub stages: Vec<StageRun>,
}

/// Run every stage of `method` in order, reusing cached stages.
pub fn run_pipeline(cfg: PipelineConfig, method: &str) -> Result<PipelineRun> {
    let method: Method = method.parse()?;
    Pipeline::open(cfg)?.run(&method)
}

/// Hit iff `stage` of `method` has a completed manifest entry whose input and
/// config hashes match the current inputs and configuration, and whose
/// outputs exist. Missing inputs count as a miss.
pub fn resolve_cache(cfg: &PipelineConfig, stage: Stage, method: &Method) -> Result<CacheStatus> {
    runner::resolve(cfg, stage, method)
}

/// Every `report.json` under `dir`, keyed by its directory relative to `dir`.
pub fn collect_reports(dir: &Path) -> Result<Vec<(String, EvalReport)>> {
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, EvalReport)>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| GplError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            walk(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n == "report.json") {
            let rel = p.parent().and_then(|d| d.strip_prefix(root).ok()).unwrap_or(Path::new(""));
            let key = rel.to_string_lossy().replace('\\', "/");
            out.push((if key.is_empty() { ".".into() } else { key }, EvalReport::read_json(&p)?));
        }
    }
    Ok(())
}
