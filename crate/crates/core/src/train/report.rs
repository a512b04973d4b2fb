use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::LabeledDataset;
use super::finetune::{evaluate_f1, finetune, FinetuneConfig};
use super::noise::{inject_noise, NoiseStats};
use super::{finetune_seed, noise_rng};
use crate::confusion::EvalSet;
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::vocab::Tokenizer;

/// A pretrained checkpoint and the tokenizer it was trained with.
#[derive(Debug, Clone, Copy)]
pub struct Variant<'a> {
    pub name: &'a str,
    pub tokenizer: &'a Tokenizer,
    pub checkpoint: &'a Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub finetune: FinetuneConfig,
    /// Noise the fine-tuning split too, not only the test split.
    pub noise_train: bool,
    pub dataset_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub rate: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub variant: String,
    pub rate: f64,
    pub seed: u64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub rate: f64,
    pub seed: u64,
    pub split: String,
    pub stats: NoiseStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset_id: String,
    pub seeds: Vec<u64>,
    pub noise_train: bool,
    pub finetune: FinetuneConfig,
    pub per_seed: Vec<SeedScore>,
    pub noise: Vec<NoiseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// F1 averaged over seeds, variant-major then in sweep order.
    pub rows: Vec<ReportRow>,
    pub metadata: ReportMeta,
}

impl RobustnessReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\trate\tf1\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{:.6}\n", r.variant, r.rate, r.f1));
        }
        out
    }

    pub fn f1(&self, variant: &str, rate: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.rate == rate)
            .map(|r| r.f1)
    }

    /// Writes the TSV table and a `.json` metadata sidecar next to it.
    pub fn save(&self, tsv: impl AsRef<Path>) -> Result<()> {
        let tsv = tsv.as_ref();
        std::fs::write(tsv, self.to_tsv()).map_err(|e| Error::io(tsv, e))?;
        let sidecar = tsv.with_extension("json");
        let json = serde_json::to_string_pretty(&self.metadata)?;
        std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
    }
}

/// For every variant and noise rate: noise the splits, fine-tune, evaluate.
///
/// Noise and fine-tuning seeds depend only on the seed and rate, so every
/// variant sees exactly the same noisy data.
pub fn robustness_report(
    variants: &[Variant<'_>],
    train: &LabeledDataset,
    test: &LabeledDataset,
    cs: &EvalSet,
    cfg: &ReportConfig,
) -> Result<RobustnessReport> {
    let mut v = cfg.finetune.violations();
    if cfg.seeds.is_empty() {
        v.push("at least one seed is required".into());
    }
    for r in &cfg.rates {
        if !(0.0..=1.0).contains(r) {
            v.push(format!("noise rate {r} not in [0, 1]"));
        }
    }
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let mut per_seed = Vec::new();
    let mut noise = Vec::new();
    let mut sums = vec![vec![0.0; cfg.rates.len()]; variants.len()];
    for &seed in &cfg.seeds {
        for (ri, &rate) in cfg.rates.iter().enumerate() {
            let noisy_train = if cfg.noise_train {
                let (ds, stats) =
                    inject_noise(train, rate, cs, &mut noise_rng(seed, rate, 0))?;
                noise.push(NoiseRecord {
                    rate,
                    seed,
                    split: "train".into(),
                    stats,
                });
                ds
            } else {
                train.clone()
            };
            let (noisy_test, stats) =
                inject_noise(test, rate, cs, &mut noise_rng(seed, rate, 1))?;
            noise.push(NoiseRecord {
                rate,
                seed,
                split: "test".into(),
                stats,
            });
            let ft_seed = finetune_seed(seed, rate);
            for (vi, var) in variants.iter().enumerate() {
                let model = finetune(var.checkpoint, var.tokenizer, &noisy_train, &cfg.finetune, ft_seed)?;
                let f1 = evaluate_f1(&model, var.tokenizer, &noisy_test)?;
                log::info!("{} rate {rate} seed {seed}: F1 {f1:.4}", var.name);
                sums[vi][ri] += f1;
                per_seed.push(SeedScore {
                    variant: var.name.to_string(),
                    rate,
                    seed,
                    f1,
                });
            }
        }
    }
    let n = cfg.seeds.len() as f64;
    let rows = variants
        .iter()
        .enumerate()
        .flat_map(|(vi, var)| {
            let sums = &sums;
            cfg.rates.iter().enumerate().map(move |(ri, &rate)| ReportRow {
                variant: var.name.to_string(),
                rate,
                f1: sums[vi][ri] / n,
            })
        })
        .collect();
    Ok(RobustnessReport {
        rows,
        metadata: ReportMeta {
            dataset_id: cfg.dataset_id.clone(),
            seeds: cfg.seeds.clone(),
            noise_train: cfg.noise_train,
            finetune: cfg.finetune.clone(),
            per_seed,
            noise,
        },
    })
}
