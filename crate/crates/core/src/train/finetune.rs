use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{LabeledDataset, Target, Task};
use super::metrics::{entity_f1, macro_f1};
use super::pretrain::{check_tokenizer, TrainConfig};
use super::{rng_for, stream};
use crate::error::{Error, Result};
use crate::model::{
    backward_encoder, classify_logits, classify_loss_grad, forward, load_checkpoint,
    save_checkpoint, tag_logits, tag_loss_grad, Checkpoint, Grads, ModelConfig, ModelParams,
};
use crate::vocab::{TokenSequence, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 5,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.01,
            warmup_frac: 0.1,
        }
    }
}

impl FinetuneConfig {
    fn as_train(&self) -> TrainConfig {
        TrainConfig {
            steps: 0,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            warmup_frac: self.warmup_frac,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        self.as_train().violations()
    }
}

/// Encoder plus a task head and its label inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub task: Task,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prediction {
    Label(String),
    Tags(Vec<String>),
}

#[derive(Serialize, Deserialize)]
struct TaskMeta {
    task: Task,
    labels: Vec<String>,
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl TaskModel {
    pub fn predict(&self, tok: &Tokenizer, text: &str) -> Result<Prediction> {
        let seq = tok.encode(text, self.config.max_len);
        let fwd = forward(&self.params, &self.config, (&seq).into(), None::<&mut ChaCha8Rng>)?;
        match self.task {
            Task::Classify => {
                let logits = classify_logits(&self.params, &fwd.hidden)?;
                Ok(Prediction::Label(self.labels[argmax(logits.view())].clone()))
            }
            Task::Tag => {
                let logits = tag_logits(&self.params, &fwd.hidden)?;
                let n = text.chars().count();
                let tags = (0..n)
                    .map(|i| match tag_row(&seq, i) {
                        Some(row) => self.labels[argmax(logits.row(row))].clone(),
                        None => "O".to_string(),
                    })
                    .collect();
                Ok(Prediction::Tags(tags))
            }
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = TaskMeta {
            task: self.task,
            labels: self.labels.clone(),
        };
        Ok(Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            metadata: serde_json::to_value(meta)?,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let meta: TaskMeta = serde_json::from_value(ckpt.metadata)
            .map_err(|e| Error::Checkpoint(format!("not a fine-tuned checkpoint: {e}")))?;
        let (_, b) = ckpt
            .params
            .layout
            .task_head
            .ok_or_else(|| Error::Checkpoint("checkpoint has no task head".into()))?;
        if ckpt.params.get(b).ncols() != meta.labels.len() {
            return Err(Error::Checkpoint("task head size does not match labels".into()));
        }
        Ok(TaskModel {
            config: ckpt.config,
            params: ckpt.params,
            task: meta.task,
            labels: meta.labels,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let c = self.to_checkpoint()?;
        save_checkpoint(path, &c.config, &c.params, &c.metadata)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(load_checkpoint(path)?)
    }
}

/// Encoder row of character `i`, if it survived truncation.
fn tag_row(seq: &TokenSequence, i: usize) -> Option<usize> {
    (i + 2 < seq.len()).then_some(i + 1)
}

enum Gold {
    Label(usize),
    Tags(Vec<(usize, usize)>),
}

fn gold_of(ds: &LabeledDataset, seq: &TokenSequence, target: &Target) -> Result<Gold> {
    let id = |l: &str| {
        ds.label_id(l)
            .ok_or_else(|| Error::Data(format!("label {l:?} outside the inventory")))
    };
    match target {
        Target::Label(l) => Ok(Gold::Label(id(l)?)),
        Target::Tags(tags) => {
            let mut out = Vec::new();
            for (i, t) in tags.iter().enumerate() {
                if let Some(row) = tag_row(seq, i) {
                    out.push((row, id(t)?));
                }
            }
            Ok(Gold::Tags(out))
        }
    }
}

/// Full fine-tuning of `ckpt` with a fresh task head sized to the dataset's
/// label inventory.
pub fn finetune(
    ckpt: &Checkpoint,
    tok: &Tokenizer,
    ds: &LabeledDataset,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<TaskModel> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    check_tokenizer(&ckpt.config, tok)?;
    let mcfg = &ckpt.config;
    let mut params = ckpt.params.clone();
    params.set_task_head(ds.labels.len(), &mut rng_for(seed, &[stream::HEAD]));

    let mut data = Vec::with_capacity(ds.len());
    for ex in &ds.examples {
        let seq = tok.encode(&ex.text, mcfg.max_len);
        let gold = gold_of(ds, &seq, &ex.target)?;
        data.push((seq, gold));
    }
    let per_epoch = ds.len().div_ceil(cfg.batch_size);
    let mut opt = cfg.as_train().optimizer(&params, cfg.epochs * per_epoch);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs as u64 {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_for(seed, &[stream::FINETUNE, stream::SHUFFLE, epoch]));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let mut dropout = rng_for(seed, &[stream::FINETUNE, stream::DROPOUT, step]);
            let mut grads = Grads::zeros_like(&params);
            let mut total = 0.0;
            let mut counted = 0usize;
            for &i in batch {
                let (seq, gold) = &data[i];
                let fwd = forward(&params, mcfg, seq.into(), Some(&mut dropout))?;
                let (loss, dh) = match gold {
                    Gold::Label(l) => classify_loss_grad(&params, &fwd.hidden, *l, &mut grads)?,
                    Gold::Tags(t) if t.is_empty() => continue,
                    Gold::Tags(t) => tag_loss_grad(&params, &fwd.hidden, t, &mut grads)?,
                };
                backward_encoder(&params, mcfg, seq.into(), &fwd, dh, &mut grads);
                total += loss;
                counted += 1;
            }
            if counted == 0 {
                continue;
            }
            let loss = total / counted as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(step as usize));
            }
            grads.scale(1.0 / counted as f64);
            opt.step(&mut params, &grads);
            epoch_loss += loss;
        }
        log::debug!("fine-tune epoch {epoch}: mean loss {:.4}", epoch_loss / per_epoch as f64);
    }
    Ok(TaskModel {
        config: mcfg.clone(),
        params,
        task: ds.task,
        labels: ds.labels.clone(),
    })
}

/// Macro-F1 for classification, entity-level F1 for tagging.
pub fn evaluate_f1(model: &TaskModel, tok: &Tokenizer, ds: &LabeledDataset) -> Result<f64> {
    if model.task != ds.task {
        return Err(Error::Data(format!(
            "model task {:?} does not match dataset task {:?}",
            model.task, ds.task
        )));
    }
    if ds.is_empty() {
        return Err(Error::UndefinedMetric("F1 of an empty dataset".into()));
    }
    match ds.task {
        Task::Classify => {
            let mut gold = Vec::new();
            let mut pred = Vec::new();
            for ex in &ds.examples {
                if let (Target::Label(g), Prediction::Label(p)) =
                    (&ex.target, model.predict(tok, &ex.text)?)
                {
                    gold.push(g.clone());
                    pred.push(p);
                }
            }
            macro_f1(&gold, &pred)
        }
        Task::Tag => {
            let mut gold = Vec::new();
            let mut pred = Vec::new();
            for ex in &ds.examples {
                if let (Target::Tags(g), Prediction::Tags(p)) =
                    (&ex.target, model.predict(tok, &ex.text)?)
                {
                    gold.push(g.clone());
                    pred.push(p);
                }
            }
            entity_f1(&gold, &pred)
        }
    }
}
