//! Pretraining, fine-tuning, noise injection, metrics and the robustness report.

mod data;
mod export;
mod finetune;
mod metrics;
mod noise;
mod pretrain;
mod probe;
mod report;
pub mod synthetic;

pub use data::{Example, LabeledDataset, Target, Task};
pub use export::export_embeddings;
pub use finetune::{evaluate_f1, finetune, FinetuneConfig, Prediction, TaskModel};
pub use metrics::{bio_spans, entity_f1, macro_f1};
pub use noise::{inject_noise, NoiseStats};
pub use pretrain::{initial_params, pretrain, PretrainOutput, TrainConfig, TrainRun};
pub use probe::{recovery_probe, ProbeResult};
pub use report::{robustness_report, ReportConfig, ReportRow, RobustnessReport, Variant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::seed::derive_seed;

/// Stream tags keeping the RNG uses of one run apart.
pub(crate) mod stream {
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const DROPOUT: u64 = 0x6472_6f70;
    pub const HEAD: u64 = 0x6865_6164;
    pub const NOISE: u64 = 0x6e6f_6973;
    pub const FINETUNE: u64 = 0x6669_6e65;
    pub const PROBE: u64 = 0x7072_6f62;
}

pub(crate) fn rng_for(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Noise stream for one (seed, rate, split) cell of a sweep; split 0 is the
/// fine-tuning split, 1 the test split.
pub fn noise_rng(seed: u64, rate: f64, split: u64) -> ChaCha8Rng {
    rng_for(seed, &[stream::NOISE, rate.to_bits(), split])
}

/// Fine-tuning seed for one (seed, rate) cell of a sweep.
pub fn finetune_seed(seed: u64, rate: f64) -> u64 {
    derive_seed(seed, &[stream::FINETUNE, rate.to_bits()])
}
