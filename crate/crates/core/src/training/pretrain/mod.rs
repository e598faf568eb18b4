//! Pre-training objectives on the unlabeled target corpus: TSDAE, MLM, ICT,
//! SimCSE, CT and the Condenser head, plus UDALM's multi-task step.

mod contrastive;
mod corrupt;
mod heads;

pub use contrastive::{ct_step, simcse_loss, simcse_pairs, CtPair};
pub use corrupt::{
    condenser_corrupt, ict_example, mlm_corrupt, split_sentences, tsdae_corrupt, IctExample, MaskKind,
    MlmCorruption,
};
pub use heads::{condensor_loss, mlm_loss, tsdae_loss, CondenserModel, MlmModel, TsdaeModel};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::finetune::{margin_mse_batch, mnrl_batch, TupleIds};
use super::{BatchSchedule, LossConfig, LossTrace, TrainHooks, DEFAULT_LEARNING_RATE};
use crate::error::{GplError, Result};
use crate::model::{apply_gradients, EncoderModel, Gradients, OptimizerState, Trainable};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainMethod {
    Tsdae,
    Mlm,
    Ict,
    Simcse,
    Ct,
    Cd,
    Udalm,
}

impl PretrainMethod {
    pub const ALL: [PretrainMethod; 7] = [
        PretrainMethod::Tsdae,
        PretrainMethod::Mlm,
        PretrainMethod::Ict,
        PretrainMethod::Simcse,
        PretrainMethod::Ct,
        PretrainMethod::Cd,
        PretrainMethod::Udalm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PretrainMethod::Tsdae => "tsdae",
            PretrainMethod::Mlm => "mlm",
            PretrainMethod::Ict => "ict",
            PretrainMethod::Simcse => "simcse",
            PretrainMethod::Ct => "ct",
            PretrainMethod::Cd => "cd",
            PretrainMethod::Udalm => "udalm",
        }
    }
}

impl fmt::Display for PretrainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PretrainMethod {
    type Err = GplError;

    fn from_str(s: &str) -> Result<Self> {
        PretrainMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| GplError::UnknownId { what: "pre-training method", id: s.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub method: PretrainMethod,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub deletion_ratio: f64,
    pub mask_ratio: f64,
    pub ict_mask_prob: f64,
    pub dropout: f64,
    pub loss: LossConfig,
    /// MLM weight in the UDALM mixture.
    pub udalm_lambda: f64,
    pub log_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            method: PretrainMethod::Tsdae,
            steps: 100_000,
            batch_size: 8,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            deletion_ratio: 0.6,
            mask_ratio: 0.15,
            ict_mask_prob: 0.9,
            dropout: 0.1,
            loss: LossConfig::default(),
            udalm_lambda: 0.5,
            log_every: 100,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(GplError::Config("steps, batch_size and log_every must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GplError::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        for (name, v) in [
            ("deletion_ratio", self.deletion_ratio),
            ("mask_ratio", self.mask_ratio),
            ("ict_mask_prob", self.ict_mask_prob),
            ("udalm_lambda", self.udalm_lambda),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(GplError::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GplError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.loss.validate()
    }
}

/// `λ · L_MLM(target) + (1 - λ) · L_MarginMSE(source)` with one set of
/// gradients aligned with `model`.
pub fn udalm_step(
    model: &MlmModel,
    mlm_batch: &[(Vec<usize>, MlmCorruption)],
    source_batch: &[&TupleIds],
    lambda: f64,
) -> Result<(f64, Gradients)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(GplError::Range(format!("mixing weight {lambda} outside [0, 1]")));
    }
    if mlm_batch.is_empty() || source_batch.is_empty() {
        return Err(GplError::Shape("both UDALM batches must be non-empty".into()));
    }
    let (mlm, mut grads) = mean_loss(model, mlm_batch, |(orig, c)| mlm_loss(model, orig, c))?;
    let (mm, mm_grads) = margin_mse_batch(&model.encoder, source_batch)?;
    grads.scale(lambda);
    for (g, d) in grads.0.iter_mut().zip(&mm_grads.0) {
        g.scaled_add(1.0 - lambda, d);
    }
    Ok((lambda * mlm + (1.0 - lambda) * mm, grads))
}

/// Mean of per-example losses and gradients.
fn mean_loss<M, T, F>(model: &M, batch: &[T], f: F) -> Result<(f64, Gradients)>
where
    M: Trainable,
    F: Fn(&T) -> Result<(f64, Gradients)>,
{
    let mut total = 0.0;
    let mut grads = model.zero_grads();
    let w = 1.0 / batch.len() as f64;
    for item in batch {
        let (l, g) = f(item)?;
        total += l;
        grads.add_scaled(&g, w)?;
    }
    Ok((total * w, grads))
}

enum State {
    Tsdae(TsdaeModel),
    Mlm(MlmModel),
    Cd(CondenserModel),
    Single(EncoderModel),
    Ct(CtPair),
}

impl State {
    fn encoder(&self) -> &EncoderModel {
        match self {
            State::Tsdae(m) => &m.encoder,
            State::Mlm(m) => &m.encoder,
            State::Cd(m) => &m.encoder,
            State::Single(m) => m,
            State::Ct(p) => &p.a,
        }
    }

    fn into_encoder(self) -> EncoderModel {
        match self {
            State::Tsdae(m) => m.encoder,
            State::Mlm(m) => m.encoder,
            State::Cd(m) => m.encoder,
            State::Single(m) => m,
            State::Ct(p) => p.a,
        }
    }
}

/// Pre-train `encoder` on `texts` and return it without any auxiliary heads.
/// UDALM additionally needs labelled source tuples.
pub fn pretrain(
    encoder: EncoderModel,
    texts: &[String],
    cfg: &PretrainConfig,
    source: Option<&[TupleIds]>,
    hooks: &TrainHooks,
) -> Result<(EncoderModel, LossTrace)> {
    cfg.validate()?;
    if texts.is_empty() {
        return Err(GplError::Config("no pre-training texts".into()));
    }
    let source = match (cfg.method, source) {
        (PretrainMethod::Udalm, Some(s)) if !s.is_empty() => s,
        (PretrainMethod::Udalm, _) => {
            return Err(GplError::Config("UDALM needs a non-empty labelled source task".into()))
        }
        (_, s) => s.unwrap_or(&[]),
    };
    let ids: Vec<Vec<usize>> = texts.iter().map(|t| encoder.token_ids(t)).collect();
    let mut state = match cfg.method {
        PretrainMethod::Tsdae => State::Tsdae(TsdaeModel::new(encoder)),
        PretrainMethod::Mlm | PretrainMethod::Udalm => State::Mlm(MlmModel::new(encoder, cfg.seed)?),
        PretrainMethod::Cd => State::Cd(CondenserModel::new(encoder, cfg.seed)?),
        PretrainMethod::Ict | PretrainMethod::Simcse => State::Single(encoder),
        PretrainMethod::Ct => State::Ct(CtPair::new(encoder, cfg.seed)?),
    };
    let method = cfg.method.as_str();
    let mut schedule = BatchSchedule::new(texts.len(), cfg.batch_size, cfg.seed, "pretrain");
    let mut source_schedule = BatchSchedule::new(source.len().max(1), cfg.batch_size, cfg.seed, "udalm-source");
    let mut opt = OptimizerState::sgd(cfg.learning_rate)?;
    let mut trace = LossTrace::new(cfg.log_every);
    for step in 1..=cfg.steps {
        let batch = schedule.next_batch();
        let example_seed =
            |slot: usize| derive_seed(cfg.seed, &["pretrain".into(), method.into(), step.into(), slot.into()]);
        let (loss, grads) = match &state {
            State::Tsdae(m) => {
                let examples = batch
                    .iter()
                    .enumerate()
                    .map(|(slot, &i)| Ok((&ids[i], tsdae_corrupt(&ids[i], cfg.deletion_ratio, example_seed(slot))?)))
                    .collect::<Result<Vec<_>>>()?;
                mean_loss(m, &examples, |(orig, corr)| tsdae_loss(m, orig, corr))?
            }
            State::Mlm(m) => {
                let examples = batch
                    .iter()
                    .enumerate()
                    .map(|(slot, &i)| {
                        Ok((ids[i].clone(), mlm_corrupt(&ids[i], cfg.mask_ratio, m.encoder.vocab(), example_seed(slot))?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if cfg.method == PretrainMethod::Udalm {
                    let src: Vec<&TupleIds> = source_schedule.next_batch().into_iter().map(|i| &source[i]).collect();
                    udalm_step(m, &examples, &src, cfg.udalm_lambda)?
                } else {
                    mean_loss(m, &examples, |(orig, c)| mlm_loss(m, orig, c))?
                }
            }
            State::Cd(m) => {
                let examples = batch
                    .iter()
                    .enumerate()
                    .map(|(slot, &i)| {
                        Ok((&ids[i], condenser_corrupt(&ids[i], cfg.mask_ratio, m.encoder.vocab(), example_seed(slot))?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                mean_loss(m, &examples, |(orig, c)| condensor_loss(m, orig, c))?
            }
            State::Single(m) if cfg.method == PretrainMethod::Ict => {
                let mut q = Vec::with_capacity(batch.len());
                let mut c = Vec::with_capacity(batch.len());
                for (slot, &i) in batch.iter().enumerate() {
                    let ex = ict_example(&texts[i], cfg.ict_mask_prob, example_seed(slot))?;
                    q.push(m.token_ids(&ex.query));
                    c.push(m.token_ids(&ex.context));
                }
                let q: Vec<&[usize]> = q.iter().map(Vec::as_slice).collect();
                let c: Vec<&[usize]> = c.iter().map(Vec::as_slice).collect();
                mnrl_batch(m, &q, &c, &cfg.loss, None)?
            }
            State::Single(m) => {
                let t: Vec<&[usize]> = batch.iter().map(|&i| ids[i].as_slice()).collect();
                simcse_loss(m, &t, cfg.dropout, example_seed(0), &cfg.loss)?
            }
            State::Ct(p) => {
                let t: Vec<&[usize]> = batch.iter().map(|&i| ids[i].as_slice()).collect();
                ct_step(p, &t, &t, &cfg.loss)?
            }
        };
        if !loss.is_finite() {
            return Err(GplError::NonFinite(format!("{method} loss at step {step}")));
        }
        match &mut state {
            State::Tsdae(m) => apply_gradients(m, &grads, &mut opt)?,
            State::Mlm(m) => apply_gradients(m, &grads, &mut opt)?,
            State::Cd(m) => apply_gradients(m, &grads, &mut opt)?,
            State::Single(m) => apply_gradients(m, &grads, &mut opt)?,
            State::Ct(p) => apply_gradients(p, &grads, &mut opt)?,
        }
        trace.record(step, loss);
        hooks.after_step(step, state.encoder())?;
    }
    trace.finish(cfg.steps);
    Ok((state.into_encoder(), trace))
}
