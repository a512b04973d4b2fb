use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{backward_encoder, forward};
use super::ops::cross_entropy;
use super::params::{Grads, ModelParams};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::masking::{MaskedInstance, IGNORE};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MlmLoss {
    /// Token loss plus every pinyin head loss.
    pub total: f64,
    pub token: f64,
    pub pinyin: Vec<f64>,
    pub token_count: usize,
    pub pinyin_counts: Vec<usize>,
}

impl MlmLoss {
    /// Whether the instance carried any supervised position.
    pub fn counted(&self) -> bool {
        self.token_count > 0 || self.pinyin_counts.iter().any(|&n| n > 0)
    }
}

/// Mean cross entropy of an affine head over `(row, target)` pairs. When
/// `grads` is given, accumulates head gradients and returns `d hidden`.
fn head_loss(
    hidden: &Array2<f64>,
    w: &Array2<f64>,
    b: &Array2<f64>,
    targets: &[(usize, usize)],
    grads: Option<(&mut Grads, usize, usize, &mut Array2<f64>)>,
) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let n = targets.len() as f64;
    let rows = hidden.select(Axis(0), &targets.iter().map(|(r, _)| *r).collect::<Vec<_>>());
    let logits = rows.dot(w) + b;
    let mut loss = 0.0;
    let mut dlogits = Array2::zeros(logits.raw_dim());
    for (i, (_, t)) in targets.iter().enumerate() {
        let (l, d) = cross_entropy(logits.row(i), *t);
        loss += l;
        dlogits.row_mut(i).assign(&(d / n));
    }
    if let Some((g, wi, bi, dh)) = grads {
        g.tensors[wi] += &rows.t().dot(&dlogits);
        g.tensors[bi] += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let drows = dlogits.dot(&w.t());
        for ((r, _), d) in targets.iter().zip(drows.rows()) {
            let mut row = dh.row_mut(*r);
            row += &d;
        }
    }
    loss / n
}

fn token_targets(inst: &MaskedInstance) -> Vec<(usize, usize)> {
    inst.token_labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l != IGNORE)
        .map(|(i, l)| (i, *l))
        .collect()
}

fn pinyin_targets(inst: &MaskedInstance, component: usize) -> Vec<(usize, usize)> {
    inst.pinyin_labels
        .iter()
        .enumerate()
        .filter_map(|(i, row)| row.get(component).filter(|l| **l != IGNORE).map(|l| (i, *l)))
        .collect()
}

fn mlm_impl(
    params: &ModelParams,
    cfg: &ModelConfig,
    hidden: &Array2<f64>,
    inst: &MaskedInstance,
    mut grads: Option<(&mut Grads, &mut Array2<f64>)>,
) -> MlmLoss {
    let lay = &params.layout;
    let tokens = token_targets(inst);
    let (tw, tb) = lay.token_head;
    let token = head_loss(
        hidden,
        params.get(tw),
        params.get(tb),
        &tokens,
        grads.as_mut().map(|(g, dh)| (&mut **g, tw, tb, &mut **dh)),
    );
    let mut out = MlmLoss {
        total: token,
        token,
        token_count: tokens.len(),
        ..Default::default()
    };
    if cfg.has_pinyin_heads() {
        for (c, &(w, b)) in lay.pinyin_heads.iter().enumerate() {
            let targets = pinyin_targets(inst, c);
            let l = head_loss(
                hidden,
                params.get(w),
                params.get(b),
                &targets,
                grads.as_mut().map(|(g, dh)| (&mut **g, w, b, &mut **dh)),
            );
            out.total += l;
            out.pinyin.push(l);
            out.pinyin_counts.push(targets.len());
        }
    }
    out
}

/// Masked-LM loss on encoder output `hidden`.
pub fn mlm_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    hidden: &Array2<f64>,
    inst: &MaskedInstance,
) -> MlmLoss {
    mlm_impl(params, cfg, hidden, inst, None)
}

/// Masked-LM loss plus its gradient with respect to `hidden`; head
/// gradients accumulate into `grads`.
pub fn mlm_loss_grad(
    params: &ModelParams,
    cfg: &ModelConfig,
    hidden: &Array2<f64>,
    inst: &MaskedInstance,
    grads: &mut Grads,
) -> (MlmLoss, Array2<f64>) {
    let mut dh = Array2::zeros(hidden.raw_dim());
    let loss = mlm_impl(params, cfg, hidden, inst, Some((grads, &mut dh)));
    (loss, dh)
}

/// Forward and backward for one instance: loss and exact gradients of every
/// parameter. Dropout is active when `rng` is given.
pub fn mlm_backward<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &ModelConfig,
    inst: &MaskedInstance,
    rng: Option<&mut R>,
) -> Result<(MlmLoss, Grads)> {
    let mut grads = Grads::zeros_like(params);
    let loss = mlm_accumulate(params, cfg, inst, rng, &mut grads)?;
    Ok((loss, grads))
}

/// Like [`mlm_backward`], adding the instance gradient into `grads`.
pub fn mlm_accumulate<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &ModelConfig,
    inst: &MaskedInstance,
    rng: Option<&mut R>,
    grads: &mut Grads,
) -> Result<MlmLoss> {
    let fwd = forward(params, cfg, inst.into(), rng)?;
    let (loss, dh) = mlm_loss_grad(params, cfg, &fwd.hidden, inst, grads);
    if loss.counted() {
        backward_encoder(params, cfg, inst.into(), &fwd, dh, grads);
    }
    Ok(loss)
}

fn task_head(params: &ModelParams) -> Result<(usize, usize)> {
    params
        .layout
        .task_head
        .ok_or_else(|| Error::Data("model has no task head".into()))
}

/// Class logits from the first (`[CLS]`) position.
pub fn classify_logits(params: &ModelParams, hidden: &Array2<f64>) -> Result<Array1<f64>> {
    let (w, b) = task_head(params)?;
    Ok(hidden.row(0).dot(params.get(w)) + params.get(b).row(0))
}

pub fn classify_loss_grad(
    params: &ModelParams,
    hidden: &Array2<f64>,
    label: usize,
    grads: &mut Grads,
) -> Result<(f64, Array2<f64>)> {
    let (w, b) = task_head(params)?;
    let mut dh = Array2::zeros(hidden.raw_dim());
    let loss = head_loss(
        hidden,
        params.get(w),
        params.get(b),
        &[(0, label)],
        Some((grads, w, b, &mut dh)),
    );
    Ok((loss, dh))
}

/// Per-position tag logits.
pub fn tag_logits(params: &ModelParams, hidden: &Array2<f64>) -> Result<Array2<f64>> {
    let (w, b) = task_head(params)?;
    Ok(hidden.dot(params.get(w)) + params.get(b))
}

/// Mean tag cross entropy over `(position, tag)` targets.
pub fn tag_loss_grad(
    params: &ModelParams,
    hidden: &Array2<f64>,
    targets: &[(usize, usize)],
    grads: &mut Grads,
) -> Result<(f64, Array2<f64>)> {
    let (w, b) = task_head(params)?;
    let mut dh = Array2::zeros(hidden.raw_dim());
    let loss = head_loss(
        hidden,
        params.get(w),
        params.get(b),
        targets,
        Some((grads, w, b, &mut dh)),
    );
    Ok((loss, dh))
}
