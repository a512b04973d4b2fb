use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::ops::{
    affine, all_finite, dropout_mask, gelu, gelu_grad, layer_norm, layer_norm_backward,
    softmax_rows, LnCache,
};
use super::params::{Grads, LayerLayout, ModelParams};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::masking::MaskedInstance;
use crate::vocab::{TokenSequence, PAD_ID};

/// Borrowed model input: one row per position.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub char_ids: &'a [usize],
    pub pinyin_ids: &'a [Vec<usize>],
    pub segment_ids: &'a [usize],
}

impl<'a> From<&'a MaskedInstance> for ModelInput<'a> {
    fn from(m: &'a MaskedInstance) -> Self {
        ModelInput {
            char_ids: &m.input_char_ids,
            pinyin_ids: &m.input_pinyin_ids,
            segment_ids: &m.segment_ids,
        }
    }
}

impl<'a> From<&'a TokenSequence> for ModelInput<'a> {
    fn from(t: &'a TokenSequence) -> Self {
        ModelInput {
            char_ids: &t.char_ids,
            pinyin_ids: &t.pinyin_ids,
            segment_ids: &t.segment_ids,
        }
    }
}

impl ModelInput<'_> {
    pub fn len(&self) -> usize {
        self.char_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.char_ids.is_empty()
    }

    /// `true` at positions attention may look at.
    pub fn key_mask(&self) -> Vec<bool> {
        self.char_ids.iter().map(|&id| id != PAD_ID).collect()
    }
}

fn check_id(table: &str, id: usize, size: usize) -> Result<()> {
    if id < size {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange {
            table: table.to_string(),
            id,
            size,
        })
    }
}

/// Sum of character, pinyin, position and segment embeddings per position.
pub fn embed(params: &ModelParams, input: ModelInput<'_>) -> Result<Array2<f64>> {
    let lay = &params.layout;
    let chars = params.get(lay.char_embed);
    let pos = params.get(lay.pos_embed);
    let seg = params.get(lay.seg_embed);
    let len = input.len();
    if input.pinyin_ids.len() != len || input.segment_ids.len() != len {
        return Err(Error::Data("input streams differ in length".into()));
    }
    check_id("embeddings.position", len.saturating_sub(1), pos.nrows())?;
    let mut out = Array2::zeros((len, chars.ncols()));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let c = input.char_ids[i];
        check_id("embeddings.char", c, chars.nrows())?;
        row += &chars.row(c);
        let py = &input.pinyin_ids[i];
        if py.len() != lay.pinyin_embeds.len() {
            return Err(Error::Data(format!(
                "position {i} has {} pinyin components, model expects {}",
                py.len(),
                lay.pinyin_embeds.len()
            )));
        }
        for (&table, &id) in lay.pinyin_embeds.iter().zip(py) {
            let t = params.get(table);
            check_id(&params.tensors[table].name, id, t.nrows())?;
            row += &t.row(id);
        }
        row += &pos.row(i);
        let sg = input.segment_ids[i];
        check_id("embeddings.segment", sg, seg.nrows())?;
        row += &seg.row(sg);
    }
    Ok(out)
}

pub(crate) struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    drop_attn: Option<Array2<f64>>,
    ln1: LnCache,
    y: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    drop_ffn: Option<Array2<f64>>,
    ln2: LnCache,
}

pub struct EncoderCache {
    layers: Vec<LayerCache>,
}

impl EncoderCache {
    /// Attention probabilities of `layer`, one `L×L` matrix per head.
    pub fn attention(&self, layer: usize) -> &[Array2<f64>] {
        &self.layers[layer].probs
    }
}

pub struct Forward {
    pub hidden: Array2<f64>,
    pub cache: EncoderCache,
}

/// Runs the encoder stack over embedded input `h`.
///
/// Dropout is applied only when `rng` is given; masks are kept in the cache
/// so [`backward_encoder`] differentiates the exact forward computation.
pub fn encode<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &ModelConfig,
    h: Array2<f64>,
    key_mask: &[bool],
    mut rng: Option<&mut R>,
) -> Result<Forward> {
    let len = h.nrows();
    let hidden = cfg.hidden;
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut x = h;
    let mut layers = Vec::with_capacity(params.layout.layers.len());
    for (li, lay) in params.layout.layers.iter().enumerate() {
        let p = |i: usize| params.get(i);
        let xv = x.view();
        let q = affine(&xv, p(lay.wq), p(lay.bq));
        let k = affine(&xv, p(lay.wk), p(lay.bk));
        let v = affine(&xv, p(lay.wv), p(lay.bv));
        let mut ctx = Array2::zeros((len, hidden));
        let mut probs = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let cols = s![.., head * d..(head + 1) * d];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            scores *= scale;
            for (j, _) in key_mask.iter().enumerate().filter(|(_, keep)| !**keep) {
                scores.column_mut(j).fill(f64::NEG_INFINITY);
            }
            softmax_rows(scores.view_mut());
            let mut out = ctx.slice_mut(cols);
            general_mat_mul(1.0, &scores, &v.slice(cols), 0.0, &mut out);
            probs.push(scores);
        }
        let mut attn = affine(&ctx.view(), p(lay.wo), p(lay.bo));
        let drop_attn = dropout_mask(len, hidden, cfg.dropout, rng.as_deref_mut());
        if let Some(m) = &drop_attn {
            attn *= m;
        }
        let r1 = &x + &attn;
        let (y, ln1) = layer_norm(&r1, p(lay.ln1_gamma), p(lay.ln1_beta));
        let pre = affine(&y.view(), p(lay.w_in), p(lay.b_in));
        let act = pre.mapv(gelu);
        let mut ffn = affine(&act.view(), p(lay.w_out), p(lay.b_out));
        let drop_ffn = dropout_mask(len, hidden, cfg.dropout, rng.as_deref_mut());
        if let Some(m) = &drop_ffn {
            ffn *= m;
        }
        let r2 = &y + &ffn;
        let (z, ln2) = layer_norm(&r2, p(lay.ln2_gamma), p(lay.ln2_beta));
        if !all_finite(&z) {
            return Err(Error::NumericOverflow(li));
        }
        layers.push(LayerCache {
            x,
            q,
            k,
            v,
            probs,
            ctx,
            drop_attn,
            ln1,
            y,
            pre,
            act,
            drop_ffn,
            ln2,
        });
        x = z;
    }
    Ok(Forward {
        hidden: x,
        cache: EncoderCache { layers },
    })
}

/// Embedding followed by the encoder stack.
pub fn forward<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &ModelConfig,
    input: ModelInput<'_>,
    rng: Option<&mut R>,
) -> Result<Forward> {
    let h = embed(params, input)?;
    encode(params, cfg, h, &input.key_mask(), rng)
}

fn add_matmul_tn(acc: &mut Array2<f64>, a: &Array2<f64>, b: &Array2<f64>) {
    general_mat_mul(1.0, &a.t(), b, 1.0, acc);
}

fn add_bias_grad(acc: &mut Array2<f64>, d: &Array2<f64>) {
    *acc += &d.sum_axis(Axis(0)).insert_axis(Axis(0));
}

fn layer_backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    lay: &LayerLayout,
    c: &LayerCache,
    dz: Array2<f64>,
    grads: &mut Grads,
) -> Array2<f64> {
    let p = |i: usize| params.get(i);
    let g = &mut grads.tensors;
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();

    let (dg2, rest) = split_two(g, lay.ln2_gamma, lay.ln2_beta);
    let dr2 = layer_norm_backward(&dz, &c.ln2, p(lay.ln2_gamma), dg2, rest);
    let mut dffn = dr2.clone();
    if let Some(m) = &c.drop_ffn {
        dffn *= m;
    }
    add_matmul_tn(&mut g[lay.w_out], &c.act, &dffn);
    add_bias_grad(&mut g[lay.b_out], &dffn);
    let mut dpre = dffn.dot(&p(lay.w_out).t());
    dpre.zip_mut_with(&c.pre, |g, &x| *g *= gelu_grad(x));
    add_matmul_tn(&mut g[lay.w_in], &c.y, &dpre);
    add_bias_grad(&mut g[lay.b_in], &dpre);
    let mut dy = dr2;
    general_mat_mul(1.0, &dpre, &p(lay.w_in).t(), 1.0, &mut dy);

    let (dg1, rest) = split_two(g, lay.ln1_gamma, lay.ln1_beta);
    let dr1 = layer_norm_backward(&dy, &c.ln1, p(lay.ln1_gamma), dg1, rest);
    let mut dattn = dr1.clone();
    if let Some(m) = &c.drop_attn {
        dattn *= m;
    }
    add_matmul_tn(&mut g[lay.wo], &c.ctx, &dattn);
    add_bias_grad(&mut g[lay.bo], &dattn);
    let dctx = dattn.dot(&p(lay.wo).t());

    let len = c.x.nrows();
    let mut dq = Array2::zeros((len, cfg.hidden));
    let mut dk = Array2::zeros((len, cfg.hidden));
    let mut dv = Array2::zeros((len, cfg.hidden));
    for (head, probs) in c.probs.iter().enumerate() {
        let cols = s![.., head * d..(head + 1) * d];
        let dctx_h = dctx.slice(cols);
        let mut dp = dctx_h.dot(&c.v.slice(cols).t());
        general_mat_mul(1.0, &probs.t(), &dctx_h, 0.0, &mut dv.slice_mut(cols));
        for (mut drow, prow) in dp.rows_mut().into_iter().zip(probs.rows()) {
            let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
            drow.zip_mut_with(&prow, |g, &pv| *g = pv * (*g - dot) * scale);
        }
        general_mat_mul(1.0, &dp, &c.k.slice(cols), 0.0, &mut dq.slice_mut(cols));
        general_mat_mul(1.0, &dp.t(), &c.q.slice(cols), 0.0, &mut dk.slice_mut(cols));
    }
    let mut dx = dr1;
    for (dproj, w, b) in [(&dq, lay.wq, lay.bq), (&dk, lay.wk, lay.bk), (&dv, lay.wv, lay.bv)] {
        add_matmul_tn(&mut g[w], &c.x, dproj);
        add_bias_grad(&mut g[b], dproj);
        general_mat_mul(1.0, dproj, &p(w).t(), 1.0, &mut dx);
    }
    dx
}

fn split_two(g: &mut [Array2<f64>], a: usize, b: usize) -> (&mut Array2<f64>, &mut Array2<f64>) {
    assert!(a < b);
    let (lo, hi) = g.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Back-propagates `d_hidden` through the encoder and embeddings,
/// accumulating into `grads`.
pub fn backward_encoder(
    params: &ModelParams,
    cfg: &ModelConfig,
    input: ModelInput<'_>,
    fwd: &Forward,
    d_hidden: Array2<f64>,
    grads: &mut Grads,
) {
    let mut d = d_hidden;
    for (lay, c) in params
        .layout
        .layers
        .iter()
        .zip(&fwd.cache.layers)
        .rev()
    {
        d = layer_backward(params, cfg, lay, c, d, grads);
    }
    let lay = &params.layout;
    for (i, row) in d.rows().into_iter().enumerate() {
        let mut add = |table: usize, id: usize| {
            let mut r = grads.tensors[table].row_mut(id);
            r += &row;
        };
        add(lay.char_embed, input.char_ids[i]);
        for (&table, &id) in lay.pinyin_embeds.iter().zip(&input.pinyin_ids[i]) {
            add(table, id);
        }
        add(lay.pos_embed, i);
        add(lay.seg_embed, input.segment_ids[i]);
    }
}
