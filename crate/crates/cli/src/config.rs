//! Flat run configuration: one JSON object, every field optional, command
//! line flags override file values.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use pmbert::confusion::SamplingStrategy;
use pmbert::masking::{MaskingConfig, Replacement, Scheme};
use pmbert::model::ModelConfig;
use pmbert::pinyin::PinyinMode;
use pmbert::train::{FinetuneConfig, ReportConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,

    pub corpus: Option<PathBuf>,
    pub dict: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub pinyin_vocab: Option<PathBuf>,
    pub confusion: Option<PathBuf>,
    pub eval_confusion: Option<PathBuf>,
    pub eval_pairs: Option<PathBuf>,
    pub eval_base: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    /// `name=checkpoint` entries for the report.
    pub variants: Vec<String>,
    pub chars: String,
    pub min_freq: u64,

    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub pinyin_mode: PinyinMode,
    pub scheme: Scheme,

    pub select_rate: f64,
    pub mask_prob: f64,
    pub confusion_frac: f64,
    pub unchanged_frac: f64,
    pub task_proportions: [f64; 3],
    pub strategy: SamplingStrategy,
    pub replacement: Replacement,

    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,

    pub epochs: usize,
    pub ft_batch_size: usize,
    pub ft_lr: f64,
    pub ft_weight_decay: f64,
    pub ft_warmup_frac: f64,

    pub noise_rate: f64,
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub noise_train: bool,
    pub dataset_id: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let k = MaskingConfig::default();
        let t = TrainConfig::default();
        let f = FinetuneConfig::default();
        RunConfig {
            seed: 0,
            corpus: None,
            dict: None,
            vocab: None,
            pinyin_vocab: None,
            confusion: None,
            eval_confusion: None,
            eval_pairs: None,
            eval_base: None,
            checkpoint: None,
            data: None,
            train_data: None,
            test_data: None,
            synthetic: None,
            variants: Vec::new(),
            chars: String::new(),
            min_freq: 1,
            layers: m.layers,
            heads: m.heads,
            hidden: m.hidden,
            ffn: m.ffn,
            max_len: m.max_len,
            dropout: m.dropout,
            pinyin_mode: m.pinyin_mode,
            scheme: m.scheme,
            select_rate: k.select_rate,
            mask_prob: k.mask_prob,
            confusion_frac: k.confusion_frac,
            unchanged_frac: k.unchanged_frac,
            task_proportions: k.task_proportions,
            strategy: k.strategy,
            replacement: k.replacement,
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            weight_decay: t.weight_decay,
            warmup_frac: t.warmup_frac,
            epochs: f.epochs,
            ft_batch_size: f.batch_size,
            ft_lr: f.lr,
            ft_weight_decay: f.weight_decay,
            ft_warmup_frac: f.warmup_frac,
            noise_rate: 0.0,
            rates: vec![0.0, 0.1, 0.2, 0.5],
            seeds: Vec::new(),
            noise_train: true,
            dataset_id: String::new(),
        }
    }
}

impl RunConfig {
    /// Reads a config file. A run manifest is accepted too; its recorded
    /// configuration is used.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if value.get("manifest_version").is_some() {
            value = value["config"].take();
        }
        serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn model(&self, char_vocab_size: usize, pinyin_table_sizes: Vec<usize>) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            hidden: self.hidden,
            ffn: self.ffn,
            max_len: self.max_len,
            char_vocab_size,
            pinyin_mode: self.pinyin_mode,
            pinyin_table_sizes,
            dropout: self.dropout,
            scheme: self.scheme,
        }
    }

    pub fn masking(&self) -> MaskingConfig {
        MaskingConfig {
            select_rate: self.select_rate,
            mask_prob: self.mask_prob,
            confusion_frac: self.confusion_frac,
            unchanged_frac: self.unchanged_frac,
            task_proportions: self.task_proportions,
            strategy: self.strategy,
            scheme: self.scheme,
            replacement: self.replacement,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            warmup_frac: self.warmup_frac,
        }
    }

    pub fn finetune(&self) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.epochs,
            batch_size: self.ft_batch_size,
            lr: self.ft_lr,
            weight_decay: self.ft_weight_decay,
            warmup_frac: self.ft_warmup_frac,
        }
    }

    pub fn report(&self) -> ReportConfig {
        ReportConfig {
            rates: self.rates.clone(),
            seeds: if self.seeds.is_empty() {
                vec![self.seed]
            } else {
                self.seeds.clone()
            },
            finetune: self.finetune(),
            noise_train: self.noise_train,
            dataset_id: self.dataset_id.clone(),
        }
    }

    /// Every violated invariant across the constituent configurations.
    pub fn violations(&self) -> Vec<String> {
        let placeholder_tables = vec![1; self.pinyin_mode.components()];
        let mut v = self.model(1, placeholder_tables).violations();
        v.extend(self.masking().violations());
        v.extend(self.train().violations());
        v.extend(
            self.finetune()
                .violations()
                .into_iter()
                .map(|m| format!("fine-tuning: {m}")),
        );
        if !(0.0..=1.0).contains(&self.noise_rate) {
            v.push(format!("noise_rate {} not in [0, 1]", self.noise_rate));
        }
        for r in &self.rates {
            if !(0.0..=1.0).contains(r) {
                v.push(format!("rate {r} not in [0, 1]"));
            }
        }
        for entry in &self.variants {
            if !entry.contains('=') {
                v.push(format!("variant {entry:?} is not name=checkpoint"));
            }
        }
        v
    }
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Command-line overrides, one per config field.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dict: Option<PathBuf>,
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    #[arg(long, global = true)]
    pub pinyin_vocab: Option<PathBuf>,
    #[arg(long, global = true)]
    pub confusion: Option<PathBuf>,
    #[arg(long, global = true)]
    pub eval_confusion: Option<PathBuf>,
    #[arg(long, global = true)]
    pub eval_pairs: Option<PathBuf>,
    #[arg(long, global = true)]
    pub eval_base: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub train_data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub test_data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub synthetic: Option<PathBuf>,
    /// `name=checkpoint`; repeat for several variants.
    #[arg(long = "variant", global = true)]
    pub variants: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub chars: Option<String>,
    #[arg(long, global = true)]
    pub min_freq: Option<u64>,

    #[arg(long, global = true)]
    pub layers: Option<usize>,
    #[arg(long, global = true)]
    pub heads: Option<usize>,
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    #[arg(long, global = true)]
    pub ffn: Option<usize>,
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    #[arg(long, global = true, value_parser = parse_enum::<PinyinMode>)]
    pub pinyin_mode: Option<PinyinMode>,
    #[arg(long, global = true, value_parser = parse_enum::<Scheme>)]
    pub scheme: Option<Scheme>,

    #[arg(long, global = true)]
    pub select_rate: Option<f64>,
    #[arg(long, global = true)]
    pub mask_prob: Option<f64>,
    #[arg(long, global = true)]
    pub confusion_frac: Option<f64>,
    #[arg(long, global = true)]
    pub unchanged_frac: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',', num_args = 3)]
    pub task_proportions: Option<Vec<f64>>,
    #[arg(long, global = true, value_parser = parse_enum::<SamplingStrategy>)]
    pub strategy: Option<SamplingStrategy>,
    #[arg(long, global = true, value_parser = parse_enum::<Replacement>)]
    pub replacement: Option<Replacement>,

    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub weight_decay: Option<f64>,
    #[arg(long, global = true)]
    pub warmup_frac: Option<f64>,

    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub ft_batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub ft_lr: Option<f64>,
    #[arg(long, global = true)]
    pub ft_weight_decay: Option<f64>,
    #[arg(long, global = true)]
    pub ft_warmup_frac: Option<f64>,

    #[arg(long, global = true)]
    pub noise_rate: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    pub noise_train: Option<bool>,
    #[arg(long, global = true)]
    pub dataset_id: Option<String>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { cfg.$f = v.clone(); } )* };
        }
        macro_rules! set_path {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { cfg.$f = Some(v.clone()); } )* };
        }
        set!(seed, variants, chars, min_freq);
        set_path!(
            corpus, dict, vocab, pinyin_vocab, confusion, eval_confusion, eval_pairs, eval_base,
            checkpoint, data, train_data, test_data, synthetic
        );
        set!(layers, heads, hidden, ffn, max_len, dropout, pinyin_mode, scheme);
        set!(select_rate, mask_prob, confusion_frac, unchanged_frac, strategy, replacement);
        if let Some(p) = &self.task_proportions {
            cfg.task_proportions = [p[0], p[1], p[2]];
        }
        set!(steps, batch_size, lr, weight_decay, warmup_frac);
        set!(epochs, ft_batch_size, ft_lr, ft_weight_decay, ft_warmup_frac);
        set!(noise_rate, rates, seeds, noise_train, dataset_id);
    }
}
