use rand::seq::index;
use rand::Rng;

use crate::error::{GplError, Result};
use crate::model::Vocab;
use crate::seed::rng_for;

fn check_ratio(name: &str, ratio: f64) -> Result<()> {
    if (0.0..=1.0).contains(&ratio) {
        Ok(())
    } else {
        Err(GplError::Range(format!("{name} {ratio} outside [0, 1]")))
    }
}

/// Delete `floor(ratio * n)` tokens uniformly without replacement, keeping
/// survivor order. At least one token survives a non-empty input.
pub fn tsdae_corrupt<T: Clone>(tokens: &[T], deletion_ratio: f64, seed: u64) -> Result<Vec<T>> {
    check_ratio("deletion ratio", deletion_ratio)?;
    let n = tokens.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let keep = (n - (deletion_ratio * n as f64).floor() as usize).max(1);
    let mut rng = rng_for(seed, &["tsdae-delete".into()]);
    let mut kept = index::sample(&mut rng, n, keep).into_vec();
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| tokens[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Mask,
    Random,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmCorruption {
    pub input: Vec<usize>,
    /// Selected positions, ascending.
    pub positions: Vec<usize>,
    pub kinds: Vec<MaskKind>,
}

/// Select `ceil(ratio * n)` positions; 80% become the mask token, 10% a
/// uniformly random regular token, 10% stay unchanged.
pub fn mlm_corrupt(tokens: &[usize], mask_ratio: f64, vocab: &Vocab, seed: u64) -> Result<MlmCorruption> {
    corrupt_positions(tokens, mask_ratio, vocab, seed, 0)
}

/// As [`mlm_corrupt`] but position 0 (the pooled position) is never selected
/// when there are at least two tokens.
pub fn condenser_corrupt(tokens: &[usize], mask_ratio: f64, vocab: &Vocab, seed: u64) -> Result<MlmCorruption> {
    let skip = usize::from(tokens.len() >= 2);
    corrupt_positions(tokens, mask_ratio, vocab, seed, skip)
}

fn corrupt_positions(tokens: &[usize], ratio: f64, vocab: &Vocab, seed: u64, skip: usize) -> Result<MlmCorruption> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(GplError::Range(format!("mask ratio {ratio} outside (0, 1]")));
    }
    if tokens.is_empty() {
        return Err(GplError::Shape("cannot mask an empty sequence".into()));
    }
    let eligible = tokens.len() - skip;
    let k = ((ratio * tokens.len() as f64).ceil() as usize).clamp(1, eligible);
    let mut rng = rng_for(seed, &["mlm-mask".into()]);
    let mut positions: Vec<usize> = index::sample(&mut rng, eligible, k).into_iter().map(|i| i + skip).collect();
    positions.sort_unstable();
    let regular = vocab.regular_ids();
    let mut input = tokens.to_vec();
    let mut kinds = Vec::with_capacity(k);
    for &p in &positions {
        let u: f64 = rng.random();
        let kind = if u < 0.8 {
            input[p] = vocab.mask_id();
            MaskKind::Mask
        } else if u < 0.9 {
            input[p] = if regular.is_empty() { vocab.mask_id() } else { rng.random_range(regular.clone()) };
            MaskKind::Random
        } else {
            MaskKind::Unchanged
        };
        kinds.push(kind);
    }
    Ok(MlmCorruption { input, positions, kinds })
}

/// Sentences end at `.`, `?` or `!` followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!') && chars.peek().is_some_and(|(_, n)| n.is_whitespace()) {
            let end = i + c.len_utf8();
            out.push(text[start..end].trim().to_string());
            start = end;
        }
    }
    out.push(text[start..].trim().to_string());
    out.retain(|s| !s.is_empty());
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IctExample {
    pub query: String,
    pub context: String,
    pub removed: bool,
}

/// One sentence becomes the pseudo query; with probability `mask_prob` it is
/// removed from the context. A single-sentence passage is never emptied.
pub fn ict_example(text: &str, mask_prob: f64, seed: u64) -> Result<IctExample> {
    check_ratio("ICT mask probability", mask_prob)?;
    let sentences = split_sentences(text);
    if sentences.len() <= 1 {
        let s = sentences.into_iter().next().unwrap_or_default();
        return Ok(IctExample { query: s.clone(), context: s, removed: false });
    }
    let mut rng = rng_for(seed, &["ict".into()]);
    let pick = rng.random_range(0..sentences.len());
    let removed = rng.random::<f64>() < mask_prob;
    let context = sentences
        .iter()
        .enumerate()
        .filter(|&(i, _)| !(removed && i == pick))
        .map(|(_, s)| s.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    Ok(IctExample { query: sentences[pick].clone(), context, removed })
}
