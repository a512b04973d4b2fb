//! Dynamic corruption for parallel character/pinyin masked language modeling.
//!
//! A fraction of the content positions is selected as candidates. Each
//! candidate then draws one uniform number that picks its branch:
//!
//! ```text
//! [0, mask_prob)                         mask, split by task proportions:
//!                                          together | token only | pinyin only
//! [mask_prob, mask_prob + confusion)     replace with a same-pinyin character
//! [mask_prob + confusion, 1)             leave unchanged (still predicted)
//! ```

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confusion::{PretrainSet, SamplingStrategy};
use crate::error::{Error, Result};
use crate::pinyin::{PinyinMode, P_MASK_ID};
use crate::seed::derive_seed;
use crate::vocab::{Tokenizer, TokenSequence, MASK_ID, SPECIALS};

/// Label value at positions that carry no supervision.
pub const IGNORE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Character stream only; replacements come from the confusion set.
    ConfusionOnly,
    /// Characters and pinyin summed at the input, token head only.
    Parallel,
    /// As `Parallel`, plus a pinyin recovery head per component.
    #[default]
    ParallelOut,
}

impl Scheme {
    pub fn pinyin_heads(self) -> bool {
        self == Scheme::ParallelOut
    }

    pub fn compatible_with(self, mode: PinyinMode) -> bool {
        match self {
            Scheme::ConfusionOnly => mode == PinyinMode::None,
            Scheme::Parallel | Scheme::ParallelOut => mode != PinyinMode::None,
        }
    }
}

/// Where the replacement branch draws its characters from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    #[default]
    ConfusionSet,
    /// Any non-special vocabulary token, as in plain BERT.
    RandomToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    NotCandidate,
    TogetherMask,
    TokenMask,
    PinyinMask,
    ConfusionReplace,
    Unchanged,
}

impl Branch {
    pub const CANDIDATE_BRANCHES: [Branch; 5] = [
        Branch::TogetherMask,
        Branch::TokenMask,
        Branch::PinyinMask,
        Branch::ConfusionReplace,
        Branch::Unchanged,
    ];

    pub fn token_supervised(self) -> bool {
        !matches!(self, Branch::NotCandidate | Branch::PinyinMask)
    }

    pub fn pinyin_masked(self) -> bool {
        matches!(self, Branch::TogetherMask | Branch::PinyinMask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskingConfig {
    pub select_rate: f64,
    pub mask_prob: f64,
    pub confusion_frac: f64,
    pub unchanged_frac: f64,
    /// (together, token only, pinyin only)
    pub task_proportions: [f64; 3],
    pub strategy: SamplingStrategy,
    pub scheme: Scheme,
    pub replacement: Replacement,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            select_rate: 0.45,
            mask_prob: 0.8,
            confusion_frac: 0.1,
            unchanged_frac: 0.1,
            task_proportions: [0.8, 0.1, 0.1],
            strategy: SamplingStrategy::Frequency,
            scheme: Scheme::ParallelOut,
            replacement: Replacement::ConfusionSet,
        }
    }
}

impl MaskingConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.select_rate) {
            v.push(format!("select_rate {} not in [0, 1]", self.select_rate));
        }
        for (name, x) in [
            ("mask_prob", self.mask_prob),
            ("confusion_frac", self.confusion_frac),
            ("unchanged_frac", self.unchanged_frac),
        ] {
            if !unit(x) {
                v.push(format!("{name} {x} not in [0, 1]"));
            }
        }
        let branch_sum = self.mask_prob + self.confusion_frac + self.unchanged_frac;
        if (branch_sum - 1.0).abs() > 1e-9 {
            v.push(format!(
                "mask_prob + confusion_frac + unchanged_frac = {branch_sum}, expected 1"
            ));
        }
        if self.task_proportions.iter().any(|p| !unit(*p)) {
            v.push(format!("task_proportions {:?} not in [0, 1]", self.task_proportions));
        }
        let task_sum: f64 = self.task_proportions.iter().sum();
        if (task_sum - 1.0).abs() > 1e-9 {
            v.push(format!("task_proportions sum to {task_sum}, expected 1"));
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

    /// Expected share of each candidate branch, in `Branch::CANDIDATE_BRANCHES` order,
    /// for an instance that carries a pinyin stream.
    pub fn branch_probabilities(&self) -> [f64; 5] {
        let [t, k, p] = self.task_proportions;
        [
            self.mask_prob * t,
            self.mask_prob * k,
            self.mask_prob * p,
            self.confusion_frac,
            self.unchanged_frac,
        ]
    }

    fn draw_branch(&self, u: f64, has_pinyin: bool) -> Branch {
        if u < self.mask_prob {
            if !has_pinyin {
                return Branch::TokenMask;
            }
            let [t, k, _] = self.task_proportions;
            if u < self.mask_prob * t {
                Branch::TogetherMask
            } else if u < self.mask_prob * (t + k) {
                Branch::TokenMask
            } else {
                Branch::PinyinMask
            }
        } else if u < self.mask_prob + self.confusion_frac {
            Branch::ConfusionReplace
        } else {
            Branch::Unchanged
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedInstance {
    pub input_char_ids: Vec<usize>,
    pub input_pinyin_ids: Vec<Vec<usize>>,
    pub segment_ids: Vec<usize>,
    pub token_labels: Vec<usize>,
    pub pinyin_labels: Vec<Vec<usize>>,
    pub corruption_log: Vec<Branch>,
}

impl MaskedInstance {
    /// An uncorrupted instance with no labels.
    pub fn unmasked(seq: &TokenSequence) -> Self {
        let c = seq.components();
        MaskedInstance {
            input_char_ids: seq.char_ids.clone(),
            input_pinyin_ids: seq.pinyin_ids.clone(),
            segment_ids: seq.segment_ids.clone(),
            token_labels: vec![IGNORE; seq.len()],
            pinyin_labels: vec![vec![IGNORE; c]; seq.len()],
            corruption_log: vec![Branch::NotCandidate; seq.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.input_char_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_char_ids.is_empty()
    }

    pub fn components(&self) -> usize {
        self.input_pinyin_ids.first().map_or(0, Vec::len)
    }

    pub fn labeled_tokens(&self) -> usize {
        self.token_labels.iter().filter(|l| **l != IGNORE).count()
    }

    /// One JSON line for the corruption audit log.
    pub fn audit_record(&self, index: usize) -> serde_json::Value {
        let positions: Vec<_> = self
            .corruption_log
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != Branch::NotCandidate)
            .map(|(i, b)| serde_json::json!([i, b]))
            .collect();
        serde_json::json!({ "instance": index, "positions": positions })
    }
}

/// `round(rate * n)` with halves rounded up.
pub fn candidate_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64) + 1e-9).round().min(n as f64) as usize
}

/// Uniformly samples `candidate_count(rate, N)` of the N content positions.
pub fn select_candidates<R: Rng + ?Sized>(seq: &TokenSequence, rate: f64, rng: &mut R) -> Vec<usize> {
    let positions: Vec<usize> = seq.content_positions().collect();
    let k = candidate_count(rate, positions.len());
    let mut picked: Vec<usize> = sample(rng, positions.len(), k)
        .into_iter()
        .map(|i| positions[i])
        .collect();
    picked.sort_unstable();
    picked
}

pub fn apply_masking<R: Rng + ?Sized>(
    seq: &TokenSequence,
    cfg: &MaskingConfig,
    cs: &PretrainSet,
    tok: &Tokenizer,
    rng: &mut R,
) -> MaskedInstance {
    let mut inst = MaskedInstance::unmasked(seq);
    let c = seq.components();
    let has_pinyin = c > 0;
    for pos in select_candidates(seq, cfg.select_rate, rng) {
        let original = seq.char_ids[pos];
        let u: f64 = rng.gen();
        let mut branch = cfg.draw_branch(u, has_pinyin);
        match branch {
            Branch::TogetherMask => {
                inst.input_char_ids[pos] = MASK_ID;
                inst.input_pinyin_ids[pos] = vec![P_MASK_ID; c];
            }
            Branch::TokenMask => inst.input_char_ids[pos] = MASK_ID,
            Branch::PinyinMask => inst.input_pinyin_ids[pos] = vec![P_MASK_ID; c],
            Branch::ConfusionReplace => match replacement(original, cfg, cs, tok, rng) {
                Some(id) => {
                    inst.input_char_ids[pos] = id;
                    inst.input_pinyin_ids[pos] = tok.id_pinyin(id);
                }
                None => {
                    log::trace!("no replacement for id {original}; left unchanged");
                    branch = Branch::Unchanged;
                }
            },
            Branch::Unchanged | Branch::NotCandidate => {}
        }
        inst.corruption_log[pos] = branch;
        if branch.token_supervised() {
            inst.token_labels[pos] = original;
        }
        if branch.pinyin_masked() {
            inst.pinyin_labels[pos] = seq.pinyin_ids[pos].clone();
        }
    }
    inst
}

fn replacement<R: Rng + ?Sized>(
    original: usize,
    cfg: &MaskingConfig,
    cs: &PretrainSet,
    tok: &Tokenizer,
    rng: &mut R,
) -> Option<usize> {
    match cfg.replacement {
        Replacement::RandomToken => {
            let n = tok.chars.len();
            (n > SPECIALS.len()).then(|| rng.gen_range(SPECIALS.len()..n))
        }
        Replacement::ConfusionSet => {
            let ch = tok.chars.char_of(original)?;
            let sub = cs.sample(ch, cfg.strategy, rng).ok()?;
            tok.chars.id(sub)
        }
    }
}

/// Masking stream for one instance; a pure function of its coordinates.
pub fn instance_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x6d61_736b, epoch, index]))
}

/// Re-corrupts a whole batch for one epoch.
pub fn remask_epoch(
    batch: &[TokenSequence],
    cfg: &MaskingConfig,
    cs: &PretrainSet,
    tok: &Tokenizer,
    seed: u64,
    epoch: u64,
) -> Vec<MaskedInstance> {
    batch
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            let mut rng = instance_rng(seed, epoch, i as u64);
            apply_masking(seq, cfg, cs, tok, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pinyin::PinyinDict;
    use crate::vocab::CharVocab;
    use proptest::prelude::*;

    fn setup(mode: PinyinMode) -> (Tokenizer, PretrainSet) {
        let dict: PinyinDict = "拨\tbo1\n播\tbo2\n中\tzhong1\n国\tguo2\n人\tren2\n"
            .parse()
            .unwrap();
        let vocab = CharVocab::build(["拨拨拨播中国人人"], 1);
        let cs = PretrainSet::build(&vocab, &dict);
        (Tokenizer::new(vocab, dict, mode).unwrap(), cs)
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(candidate_count(0.45, 10), 5);
        assert_eq!(candidate_count(0.0, 10), 0);
        assert_eq!(candidate_count(1.0, 10), 10);
        assert_eq!(candidate_count(0.15, 10), 2);
        assert_eq!(candidate_count(0.5, 0), 0);
    }

    #[test]
    fn select_extremes() {
        let (tok, _) = setup(PinyinMode::Plain);
        let seq = tok.encode("拨播中国人拨播中国人", 32);
        let mut rng = instance_rng(1, 0, 0);
        assert!(select_candidates(&seq, 0.0, &mut rng).is_empty());
        assert_eq!(select_candidates(&seq, 1.0, &mut rng), (1..=10).collect::<Vec<_>>());
        assert_eq!(select_candidates(&seq, 0.45, &mut rng).len(), 5);
    }

    #[test]
    fn zero_rate_changes_nothing() {
        let (tok, cs) = setup(PinyinMode::Plain);
        let seq = tok.encode("拨播中国人", 32);
        let cfg = MaskingConfig {
            select_rate: 0.0,
            ..Default::default()
        };
        let inst = apply_masking(&seq, &cfg, &cs, &tok, &mut instance_rng(0, 0, 0));
        assert_eq!(inst, MaskedInstance::unmasked(&seq));
        assert!(inst.token_labels.iter().all(|l| *l == IGNORE));
    }

    #[test]
    fn confusion_replace_keeps_class_pinyin() {
        let (tok, cs) = setup(PinyinMode::Plain);
        let seq = tok.encode("拨", 8);
        let cfg = MaskingConfig {
            select_rate: 1.0,
            mask_prob: 0.0,
            confusion_frac: 1.0,
            unchanged_frac: 0.0,
            ..Default::default()
        };
        let inst = apply_masking(&seq, &cfg, &cs, &tok, &mut instance_rng(0, 0, 0));
        let bo = tok.chars.id('拨').unwrap();
        assert_eq!(inst.corruption_log[1], Branch::ConfusionReplace);
        assert_eq!(inst.input_char_ids[1], tok.chars.id('播').unwrap());
        assert_eq!(inst.input_pinyin_ids[1], seq.pinyin_ids[1]);
        assert_eq!(inst.token_labels[1], bo);
        assert!(inst.pinyin_labels[1].iter().all(|l| *l == IGNORE));
    }

    #[test]
    fn toned_replacement_takes_replacement_pinyin() {
        let (tok, cs) = setup(PinyinMode::PlainTone);
        let seq = tok.encode("拨", 8);
        let cfg = MaskingConfig {
            select_rate: 1.0,
            mask_prob: 0.0,
            confusion_frac: 1.0,
            unchanged_frac: 0.0,
            ..Default::default()
        };
        let inst = apply_masking(&seq, &cfg, &cs, &tok, &mut instance_rng(0, 0, 0));
        assert_eq!(inst.input_pinyin_ids[1], tok.char_pinyin('播'));
        assert_ne!(inst.input_pinyin_ids[1], seq.pinyin_ids[1]);
    }

    #[test]
    fn singleton_class_replacement_is_identity() {
        let (tok, cs) = setup(PinyinMode::Plain);
        let seq = tok.encode("中", 8);
        let cfg = MaskingConfig {
            select_rate: 1.0,
            mask_prob: 0.0,
            confusion_frac: 1.0,
            unchanged_frac: 0.0,
            ..Default::default()
        };
        let inst = apply_masking(&seq, &cfg, &cs, &tok, &mut instance_rng(0, 0, 0));
        assert_eq!(inst.input_char_ids, seq.char_ids);
        assert_eq!(inst.token_labels[1], tok.chars.id('中').unwrap());
    }

    #[test]
    fn unknown_character_downgraded_to_unchanged() {
        let (tok, cs) = setup(PinyinMode::Plain);
        let seq = tok.encode("X", 8);
        let cfg = MaskingConfig {
            select_rate: 1.0,
            mask_prob: 0.0,
            confusion_frac: 1.0,
            unchanged_frac: 0.0,
            ..Default::default()
        };
        let inst = apply_masking(&seq, &cfg, &cs, &tok, &mut instance_rng(0, 0, 0));
        assert_eq!(inst.corruption_log[1], Branch::Unchanged);
        assert_eq!(inst.input_char_ids, seq.char_ids);
    }

    #[test]
    fn character_only_masks_are_token_masks() {
        let (tok, cs) = setup(PinyinMode::None);
        let seq = tok.encode("拨播中国人拨播中国人", 32);
        let cfg = MaskingConfig {
            select_rate: 1.0,
            mask_prob: 1.0,
            confusion_frac: 0.0,
            unchanged_frac: 0.0,
            scheme: Scheme::ConfusionOnly,
            ..Default::default()
        };
        let inst = apply_masking(&seq, &cfg, &cs, &tok, &mut instance_rng(3, 0, 0));
        assert!(inst.corruption_log[1..11].iter().all(|b| *b == Branch::TokenMask));
    }

    #[test]
    fn random_token_replacement_stays_in_vocab() {
        let (tok, cs) = setup(PinyinMode::Plain);
        let seq = tok.encode("拨播中国人拨播中国人", 32);
        let cfg = MaskingConfig {
            select_rate: 1.0,
            mask_prob: 0.0,
            confusion_frac: 1.0,
            unchanged_frac: 0.0,
            replacement: Replacement::RandomToken,
            ..Default::default()
        };
        let inst = apply_masking(&seq, &cfg, &cs, &tok, &mut instance_rng(3, 0, 0));
        for i in 1..11 {
            assert!(inst.input_char_ids[i] >= SPECIALS.len());
            assert_eq!(inst.input_pinyin_ids[i], tok.id_pinyin(inst.input_char_ids[i]));
        }
    }

    #[test]
    fn remask_is_deterministic_per_epoch() {
        let (tok, cs) = setup(PinyinMode::Plain);
        let seqs: Vec<_> = ["拨播中国人拨播中国人", "中国人"]
            .iter()
            .map(|t| tok.encode(t, 32))
            .collect();
        let cfg = MaskingConfig::default();
        let a = remask_epoch(&seqs, &cfg, &cs, &tok, 7, 0);
        let b = remask_epoch(&seqs, &cfg, &cs, &tok, 7, 0);
        assert_eq!(a, b);
        assert!(remask_epoch(&[], &cfg, &cs, &tok, 7, 0).is_empty());
    }

    #[test]
    fn config_violations_are_all_listed() {
        let cfg = MaskingConfig {
            select_rate: 1.5,
            mask_prob: 0.7,
            task_proportions: [0.5, 0.1, 0.1],
            ..Default::default()
        };
        assert_eq!(cfg.violations().len(), 3);
        assert!(MaskingConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn masking_invariants(text in "[拨播中国人X]{0,30}", seed in any::<u64>(), rate in 0.0f64..=1.0) {
            let (tok, cs) = setup(PinyinMode::InitFinalTone);
            let seq = tok.encode(&text, 64);
            let cfg = MaskingConfig { select_rate: rate, ..Default::default() };
            let inst = apply_masking(&seq, &cfg, &cs, &tok, &mut instance_rng(seed, 0, 0));
            let n = seq.content_positions().count();
            let candidates = inst.corruption_log.iter().filter(|b| **b != Branch::NotCandidate).count();
            prop_assert_eq!(candidates, candidate_count(rate, n));
            for i in 0..seq.len() {
                let b = inst.corruption_log[i];
                prop_assert_eq!(inst.token_labels[i] != IGNORE, b.token_supervised());
                if inst.token_labels[i] != IGNORE {
                    prop_assert_eq!(inst.token_labels[i], seq.char_ids[i]);
                }
                prop_assert_eq!(inst.pinyin_labels[i].iter().all(|l| *l != IGNORE), b.pinyin_masked());
                if b == Branch::NotCandidate {
                    prop_assert_eq!(inst.input_char_ids[i], seq.char_ids[i]);
                    prop_assert_eq!(&inst.input_pinyin_ids[i], &seq.pinyin_ids[i]);
                }
                if b == Branch::ConfusionReplace {
                    let orig = tok.chars.char_of(seq.char_ids[i]).unwrap();
                    let new = tok.chars.char_of(inst.input_char_ids[i]).unwrap();
                    prop_assert_eq!(cs.class_of(orig), cs.class_of(new));
                }
            }
            prop_assert_eq!(inst.corruption_log[0], Branch::NotCandidate);
            prop_assert_eq!(*inst.corruption_log.last().unwrap(), Branch::NotCandidate);
        }
    }
}
