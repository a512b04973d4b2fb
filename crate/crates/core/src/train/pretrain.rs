use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{rng_for, stream};
use crate::confusion::PretrainSet;
use crate::error::{Error, Result};
use crate::masking::{remask_epoch, MaskingConfig};
use crate::model::{
    mlm_accumulate, save_checkpoint, AdamW, Grads, LrSchedule, ModelConfig, ModelParams,
    OptimizerConfig,
};
use crate::vocab::{TokenSequence, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.01,
            warmup_frac: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.batch_size == 0 {
            v.push("batch_size must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            v.push(format!("lr {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            v.push(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            v.push(format!("warmup_frac {} not in [0, 1]", self.warmup_frac));
        }
        v
    }

    pub(crate) fn optimizer(&self, params: &ModelParams, total_steps: usize) -> AdamW {
        let config = OptimizerConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..OptimizerConfig::default()
        };
        let schedule = LrSchedule::WarmupLinear {
            total_steps,
            warmup_frac: self.warmup_frac,
        };
        AdamW::new(params, config, schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub model: ModelConfig,
    pub masking: MaskingConfig,
    pub train: TrainConfig,
    pub seed: u64,
    /// Mean batch loss after each optimizer step.
    pub losses: Vec<(usize, f64)>,
    /// Not serialized, so run records stay reproducible.
    #[serde(skip)]
    pub wall_clock_secs: f64,
    pub checkpoint: Option<String>,
}

impl TrainRun {
    /// Mean of the first and last `window` recorded losses.
    pub fn loss_ends(&self, window: usize) -> Option<(f64, f64)> {
        let n = self.losses.len();
        if n == 0 || window == 0 {
            return None;
        }
        let w = window.min(n);
        let mean = |s: &[(usize, f64)]| s.iter().map(|(_, l)| l).sum::<f64>() / s.len() as f64;
        Some((mean(&self.losses[..w]), mean(&self.losses[n - w..])))
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub run: TrainRun,
    pub params: ModelParams,
}

pub(crate) fn check_tokenizer(mcfg: &ModelConfig, tok: &Tokenizer) -> Result<()> {
    let mut v = Vec::new();
    if mcfg.char_vocab_size != tok.chars.len() {
        v.push(format!(
            "model char_vocab_size {} but vocabulary has {} entries",
            mcfg.char_vocab_size,
            tok.chars.len()
        ));
    }
    if mcfg.pinyin_mode != tok.mode() {
        v.push(format!(
            "model pinyin mode {} but tokenizer mode {}",
            mcfg.pinyin_mode,
            tok.mode()
        ));
    }
    if mcfg.pinyin_table_sizes != tok.pinyin_table_sizes() {
        v.push(format!(
            "model pinyin tables {:?} but tokenizer tables {:?}",
            mcfg.pinyin_table_sizes,
            tok.pinyin_table_sizes()
        ));
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(v))
    }
}

/// Parameters a run with `seed` starts from.
pub fn initial_params(mcfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    ModelParams::init(mcfg, &mut rng_for(seed, &[stream::INIT]))
}

/// Masked-LM pretraining with the corruption pattern redrawn every epoch.
///
/// Writes a checkpoint to `checkpoint` when given. A run with 0 steps returns
/// the initialization unchanged.
#[allow(clippy::too_many_arguments)]
pub fn pretrain(
    corpus: &[String],
    tok: &Tokenizer,
    cs: &PretrainSet,
    mcfg: &ModelConfig,
    kcfg: &MaskingConfig,
    tcfg: &TrainConfig,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<PretrainOutput> {
    let mut v = mcfg.violations();
    v.extend(kcfg.violations());
    v.extend(tcfg.violations());
    if kcfg.scheme != mcfg.scheme {
        v.push(format!(
            "masking scheme {:?} differs from model scheme {:?}",
            kcfg.scheme, mcfg.scheme
        ));
    }
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    check_tokenizer(mcfg, tok)?;
    let sequences: Vec<TokenSequence> = corpus
        .iter()
        .map(|line| tok.encode(line, mcfg.max_len))
        .filter(|s| s.content_positions().next().is_some())
        .collect();
    if sequences.is_empty() && tcfg.steps > 0 {
        return Err(Error::Data("pretraining corpus has no usable lines".into()));
    }

    let start = Instant::now();
    let mut params = initial_params(mcfg, seed)?;
    let mut opt = tcfg.optimizer(&params, tcfg.steps);
    let mut losses = Vec::with_capacity(tcfg.steps);
    let mut step = 0;
    let mut epoch = 0u64;
    while step < tcfg.steps {
        let instances = remask_epoch(&sequences, kcfg, cs, tok, seed, epoch);
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.shuffle(&mut rng_for(seed, &[stream::SHUFFLE, epoch]));
        for batch in order.chunks(tcfg.batch_size) {
            if step == tcfg.steps {
                break;
            }
            step += 1;
            let mut dropout = rng_for(seed, &[stream::DROPOUT, step as u64]);
            let mut grads = Grads::zeros_like(&params);
            let mut total = 0.0;
            let mut counted = 0usize;
            for &i in batch {
                let loss = mlm_accumulate(&params, mcfg, &instances[i], Some(&mut dropout), &mut grads)?;
                if loss.counted() {
                    total += loss.total;
                    counted += 1;
                }
            }
            let loss = if counted > 0 { total / counted as f64 } else { 0.0 };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(step));
            }
            if counted > 0 {
                grads.scale(1.0 / counted as f64);
            }
            opt.step(&mut params, &grads);
            losses.push((step, loss));
            if step % 500 == 0 {
                log::info!("step {step}: loss {loss:.4}");
            }
        }
        epoch += 1;
    }
    let wall_clock_secs = start.elapsed().as_secs_f64();
    log::info!("pretrained {step} steps in {wall_clock_secs:.1}s");

    if let Some(path) = checkpoint {
        let meta = serde_json::json!({ "seed": seed, "steps": tcfg.steps });
        save_checkpoint(path, mcfg, &params, &meta)?;
    }
    Ok(PretrainOutput {
        run: TrainRun {
            model: mcfg.clone(),
            masking: kcfg.clone(),
            train: tcfg.clone(),
            seed,
            losses,
            wall_clock_secs,
            checkpoint: checkpoint.map(|p| p.display().to_string()),
        },
        params,
    })
}
