use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::LabeledDataset;
use crate::confusion::EvalSet;
use crate::error::{Error, Result};
use crate::masking::candidate_count;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub substitutions: usize,
    /// Examples left unchanged because none of their characters is replaceable.
    pub without_replaceable: usize,
}

/// Replaces `round(rate * replaceable)` characters of every example with an
/// observed confusion. Labels, tags and lengths are untouched.
///
/// Only an evaluation-provenance set is accepted:
///
/// ```compile_fail
/// # use pmbert::confusion::PretrainSet;
/// # use pmbert::train::{inject_noise, LabeledDataset};
/// fn leak(ds: &LabeledDataset, cs: &PretrainSet) {
///     let mut rng = rand::thread_rng();
///     inject_noise(ds, 0.2, cs, &mut rng).unwrap();
/// }
/// ```
pub fn inject_noise<R: Rng + ?Sized>(
    ds: &LabeledDataset,
    rate: f64,
    cs: &EvalSet,
    rng: &mut R,
) -> Result<(LabeledDataset, NoiseStats)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(vec![format!("noise rate {rate} not in [0, 1]")]));
    }
    let mut stats = NoiseStats::default();
    let mut out = ds.clone();
    for ex in &mut out.examples {
        let mut chars: Vec<char> = ex.text.chars().collect();
        let replaceable: Vec<usize> = (0..chars.len())
            .filter(|&i| cs.is_replaceable(chars[i]))
            .collect();
        if replaceable.is_empty() {
            if rate > 0.0 {
                stats.without_replaceable += 1;
            }
            continue;
        }
        let k = candidate_count(rate, replaceable.len());
        for j in sample(rng, replaceable.len(), k) {
            let pos = replaceable[j];
            if let Some(sub) = cs.sample_pair(chars[pos], rng) {
                chars[pos] = sub;
                stats.substitutions += 1;
            }
        }
        ex.text = chars.into_iter().collect();
    }
    Ok((out, stats))
}
