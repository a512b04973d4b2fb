use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rng_for, stream};
use crate::error::{Error, Result};
use crate::masking::{select_candidates, Branch};
use crate::model::{forward, Checkpoint};
use crate::pinyin::P_MASK_ID;
use crate::vocab::{Tokenizer, MASK_ID};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub correct: usize,
    pub total: usize,
}

impl ProbeResult {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Masked-token top-1 recovery on `texts`. Positions are chosen from `seed`
/// alone, so different branches probe the same positions. `branch` must be
/// `TokenMask` (pinyin stays visible) or `TogetherMask`.
pub fn recovery_probe(
    ckpt: &Checkpoint,
    tok: &Tokenizer,
    texts: &[String],
    branch: Branch,
    rate: f64,
    seed: u64,
) -> Result<ProbeResult> {
    if !matches!(branch, Branch::TokenMask | Branch::TogetherMask) {
        return Err(Error::Config(vec![format!(
            "probe branch must be token_mask or together_mask, got {branch:?}"
        )]));
    }
    let cfg = &ckpt.config;
    let (w, b) = ckpt.params.layout.token_head;
    let mut result = ProbeResult::default();
    for (i, text) in texts.iter().enumerate() {
        let seq = tok.encode(text, cfg.max_len);
        let positions = select_candidates(&seq, rate, &mut rng_for(seed, &[stream::PROBE, i as u64]));
        for pos in positions {
            let mut masked = seq.clone();
            masked.char_ids[pos] = MASK_ID;
            if branch == Branch::TogetherMask {
                masked.pinyin_ids[pos] = vec![P_MASK_ID; seq.components()];
            }
            let fwd = forward(&ckpt.params, cfg, (&masked).into(), None::<&mut ChaCha8Rng>)?;
            let logits = fwd.hidden.row(pos).dot(ckpt.params.get(w)) + ckpt.params.get(b).row(0);
            let mut best = 0;
            for (j, v) in logits.iter().enumerate() {
                if *v > logits[best] {
                    best = j;
                }
            }
            result.total += 1;
            if best == seq.char_ids[pos] {
                result.correct += 1;
            }
        }
    }
    Ok(result)
}
