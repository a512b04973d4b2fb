//! Desk-scale transformer encoder with summed character, pinyin, position
//! and segment embeddings, masked-LM heads, and hand-written gradients.

mod checkpoint;
mod encoder;
mod heads;
mod ops;
mod optim;
mod params;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use encoder::{
    backward_encoder, embed, encode, forward, EncoderCache, Forward, ModelInput,
};
pub use heads::{
    classify_logits, classify_loss_grad, mlm_accumulate, mlm_backward, mlm_loss, mlm_loss_grad, tag_logits,
    tag_loss_grad, MlmLoss,
};
pub use optim::{AdamW, LrSchedule, OptimizerConfig};
pub use params::{Grads, LayerLayout, Layout, ModelParams, ParamKind, Tensor};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::Scheme;
use crate::pinyin::PinyinMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub char_vocab_size: usize,
    pub pinyin_mode: PinyinMode,
    pub pinyin_table_sizes: Vec<usize>,
    pub dropout: f64,
    pub scheme: Scheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            heads: 4,
            hidden: 64,
            ffn: 256,
            max_len: 128,
            char_vocab_size: 5,
            pinyin_mode: PinyinMode::Plain,
            pinyin_table_sizes: vec![3],
            dropout: 0.1,
            scheme: Scheme::ParallelOut,
        }
    }
}

impl ModelConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("ffn", self.ffn),
            ("max_len", self.max_len),
            ("char_vocab_size", self.char_vocab_size),
        ] {
            if x == 0 {
                v.push(format!("{name} must be at least 1"));
            }
        }
        if self.heads > 0 && self.hidden % self.heads != 0 {
            v.push(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            v.push(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.pinyin_table_sizes.len() != self.pinyin_mode.components() {
            v.push(format!(
                "pinyin mode {} needs {} table sizes, got {}",
                self.pinyin_mode,
                self.pinyin_mode.components(),
                self.pinyin_table_sizes.len()
            ));
        }
        if self.pinyin_table_sizes.iter().any(|&n| n == 0) {
            v.push("pinyin table sizes must be at least 1".into());
        }
        if !self.scheme.compatible_with(self.pinyin_mode) {
            v.push(format!(
                "scheme {:?} is incompatible with pinyin mode {}",
                self.scheme, self.pinyin_mode
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn has_pinyin_heads(&self) -> bool {
        self.scheme.pinyin_heads() && !self.pinyin_table_sizes.is_empty()
    }
}

#[cfg(test)]
mod tests;
