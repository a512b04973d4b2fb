use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Embedding,
    Weight,
    Bias,
    Norm,
}

impl ParamKind {
    /// Decoupled weight decay applies to embedding tables and weight matrices.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Embedding | ParamKind::Weight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub kind: ParamKind,
    pub value: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_gamma: usize,
    pub ln1_beta: usize,
    pub w_in: usize,
    pub b_in: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub ln2_gamma: usize,
    pub ln2_beta: usize,
}

/// Index of every role in [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub char_embed: usize,
    pub pinyin_embeds: Vec<usize>,
    pub pos_embed: usize,
    pub seg_embed: usize,
    pub layers: Vec<LayerLayout>,
    pub token_head: (usize, usize),
    pub pinyin_heads: Vec<(usize, usize)>,
    /// Fine-tuning head, `(weight, bias)`.
    pub task_head: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
    pub layout: Layout,
}

struct Builder<'a, R: Rng + ?Sized> {
    tensors: Vec<Tensor>,
    rng: &'a mut R,
    normal: Normal<f64>,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn push(&mut self, name: String, kind: ParamKind, rows: usize, cols: usize) -> usize {
        let value = match kind {
            ParamKind::Embedding | ParamKind::Weight => {
                Array2::from_shape_simple_fn((rows, cols), || truncated(&self.normal, self.rng))
            }
            ParamKind::Bias => Array2::zeros((rows, cols)),
            ParamKind::Norm if name.ends_with("gamma") => Array2::ones((rows, cols)),
            ParamKind::Norm => Array2::zeros((rows, cols)),
        };
        self.tensors.push(Tensor { name, kind, value });
        self.tensors.len() - 1
    }

    fn affine(&mut self, prefix: &str, input: usize, output: usize) -> (usize, usize) {
        let w = self.push(format!("{prefix}.weight"), ParamKind::Weight, input, output);
        let b = self.push(format!("{prefix}.bias"), ParamKind::Bias, 1, output);
        (w, b)
    }
}

/// Normal(0, σ) truncated to ±2σ by resampling.
fn truncated<R: Rng + ?Sized>(normal: &Normal<f64>, rng: &mut R) -> f64 {
    loop {
        let x = normal.sample(rng);
        if x.abs() <= 2.0 * INIT_STD {
            return x;
        }
    }
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let mut b = Builder {
            tensors: Vec::new(),
            rng,
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        };
        let char_embed = b.push("embeddings.char".into(), ParamKind::Embedding, cfg.char_vocab_size, h);
        let pinyin_embeds = cfg
            .pinyin_table_sizes
            .iter()
            .enumerate()
            .map(|(c, &n)| b.push(format!("embeddings.pinyin.{c}"), ParamKind::Embedding, n, h))
            .collect();
        let pos_embed = b.push("embeddings.position".into(), ParamKind::Embedding, cfg.max_len, h);
        let seg_embed = b.push("embeddings.segment".into(), ParamKind::Embedding, 2, h);
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("layer.{l}");
                let (wq, bq) = b.affine(&format!("{p}.attn.q"), h, h);
                let (wk, bk) = b.affine(&format!("{p}.attn.k"), h, h);
                let (wv, bv) = b.affine(&format!("{p}.attn.v"), h, h);
                let (wo, bo) = b.affine(&format!("{p}.attn.o"), h, h);
                let ln1_gamma = b.push(format!("{p}.ln1.gamma"), ParamKind::Norm, 1, h);
                let ln1_beta = b.push(format!("{p}.ln1.beta"), ParamKind::Norm, 1, h);
                let (w_in, b_in) = b.affine(&format!("{p}.ffn.in"), h, cfg.ffn);
                let (w_out, b_out) = b.affine(&format!("{p}.ffn.out"), cfg.ffn, h);
                let ln2_gamma = b.push(format!("{p}.ln2.gamma"), ParamKind::Norm, 1, h);
                let ln2_beta = b.push(format!("{p}.ln2.beta"), ParamKind::Norm, 1, h);
                LayerLayout {
                    wq,
                    bq,
                    wk,
                    bk,
                    wv,
                    bv,
                    wo,
                    bo,
                    ln1_gamma,
                    ln1_beta,
                    w_in,
                    b_in,
                    w_out,
                    b_out,
                    ln2_gamma,
                    ln2_beta,
                }
            })
            .collect();
        let token_head = b.affine("head.token", h, cfg.char_vocab_size);
        let pinyin_heads = if cfg.has_pinyin_heads() {
            cfg.pinyin_table_sizes
                .iter()
                .enumerate()
                .map(|(c, &n)| b.affine(&format!("head.pinyin.{c}"), h, n))
                .collect()
        } else {
            Vec::new()
        };
        Ok(ModelParams {
            tensors: b.tensors,
            layout: Layout {
                char_embed,
                pinyin_embeds,
                pos_embed,
                seg_embed,
                layers,
                token_head,
                pinyin_heads,
                task_head: None,
            },
        })
    }

    /// Appends (or replaces) a freshly initialized `hidden → outputs` task head.
    pub fn set_task_head<R: Rng + ?Sized>(&mut self, outputs: usize, rng: &mut R) {
        if let Some((w, bias)) = self.layout.task_head.take() {
            self.tensors.truncate(w.min(bias));
        }
        let hidden = self.tensors[self.layout.char_embed].value.ncols();
        let mut b = Builder {
            tensors: std::mem::take(&mut self.tensors),
            rng,
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        };
        self.layout.task_head = Some(b.affine("head.task", hidden, outputs));
        self.tensors = b.tensors;
    }

    pub fn get(&self, idx: usize) -> &Array2<f64> {
        &self.tensors[idx].value
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.value.iter().all(|x| x.is_finite()))
    }

    /// Rebuilds parameters from named tensors, checking every expected shape.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Array2<f64>)>) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut params = ModelParams::init(cfg, &mut rng)?;
        let has_task = named.iter().any(|(n, _)| n == "head.task.weight");
        if has_task {
            let outputs = named
                .iter()
                .find(|(n, _)| n == "head.task.bias")
                .map(|(_, a)| a.ncols())
                .ok_or_else(|| Error::Checkpoint("head.task.bias missing".into()))?;
            params.set_task_head(outputs, &mut rng);
        }
        if named.len() != params.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                params.tensors.len(),
                named.len()
            )));
        }
        for (t, (name, value)) in params.tensors.iter_mut().zip(named) {
            if t.name != name || t.value.dim() != value.dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} {:?} does not match expected {} {:?}",
                    value.dim(),
                    t.name,
                    t.value.dim()
                )));
            }
            t.value = value;
        }
        Ok(params)
    }
}

/// Gradients, one array per parameter tensor in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Array2<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Grads {
            tensors: params
                .tensors
                .iter()
                .map(|t| Array2::zeros(t.value.raw_dim()))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Grads, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.scaled_add(scale, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.tensors {
            *a *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|a| a.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}
