//! Phonetic confusion sets.
//!
//! The pretraining set groups every in-vocabulary character by toneless
//! pinyin and weights it by corpus frequency. The evaluation set is built
//! from aligned clean/noisy sentence pairs and keeps the observed
//! character-to-character confusions. The two are distinct types
//! ([`PretrainSet`] and [`EvalSet`]) so the noise injector cannot be handed
//! the set the model was pretrained with.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::marker::PhantomData;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pinyin::PinyinDict;
use crate::vocab::CharVocab;

pub trait Provenance: fmt::Debug + Clone + Default + 'static {
    const NAME: &'static str;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Pretrain;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Eval;

impl Provenance for Pretrain {
    const NAME: &'static str = "pretrain";
}

impl Provenance for Eval {
    const NAME: &'static str = "eval";
}

pub type PretrainSet = ConfusionSet<Pretrain>;
pub type EvalSet = ConfusionSet<Eval>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    #[default]
    Frequency,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionSet<P: Provenance> {
    classes: BTreeMap<String, Vec<(char, f64)>>,
    /// Observed replacements per source character (eval sets only).
    pairs: BTreeMap<char, Vec<(char, f64)>>,
    class_of: HashMap<char, String>,
    _provenance: PhantomData<P>,
}

impl<P: Provenance> Default for ConfusionSet<P> {
    fn default() -> Self {
        Self::from_parts(BTreeMap::new(), BTreeMap::new())
    }
}

impl<P: Provenance> ConfusionSet<P> {
    fn from_parts(
        classes: BTreeMap<String, Vec<(char, f64)>>,
        pairs: BTreeMap<char, Vec<(char, f64)>>,
    ) -> Self {
        let class_of = classes
            .iter()
            .flat_map(|(k, members)| members.iter().map(move |(c, _)| (*c, k.clone())))
            .collect();
        ConfusionSet {
            classes,
            pairs,
            class_of,
            _provenance: PhantomData,
        }
    }

    pub fn provenance(&self) -> &'static str {
        P::NAME
    }

    pub fn classes(&self) -> &BTreeMap<String, Vec<(char, f64)>> {
        &self.classes
    }

    pub fn class(&self, pinyin: &str) -> Option<&[(char, f64)]> {
        self.classes.get(pinyin).map(Vec::as_slice)
    }

    pub fn class_of(&self, ch: char) -> Option<&str> {
        self.class_of.get(&ch).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty() && self.pairs.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ConfusionFile {
            provenance: P::NAME.to_string(),
            classes: self.classes.clone(),
            pairs: self.pairs.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ConfusionFile = serde_json::from_str(text)?;
        if file.provenance != P::NAME {
            return Err(Error::Data(format!(
                "expected a {} confusion set, file has provenance {:?}",
                P::NAME,
                file.provenance
            )));
        }
        let set = Self::from_parts(file.classes, file.pairs);
        let members: usize = set.classes.values().map(Vec::len).sum();
        if members != set.class_of.len() {
            return Err(Error::Data("character listed in more than one class".into()));
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Draws a replacement for `ch` from its class, excluding `ch` itself
    /// unless it is the only member.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        ch: char,
        strategy: SamplingStrategy,
        rng: &mut R,
    ) -> Result<char> {
        let key = self.class_of.get(&ch).ok_or(Error::NoClass(ch))?;
        let members = &self.classes[key];
        if members.len() == 1 {
            return Ok(ch);
        }
        let others = members.iter().filter(|(c, _)| *c != ch);
        let picked = match strategy {
            SamplingStrategy::Uniform => {
                let n = members.len() - 1;
                others.map(|(c, _)| *c).nth(rng.gen_range(0..n))
            }
            SamplingStrategy::Frequency => weighted_pick(others.copied(), rng),
        };
        Ok(picked.expect("class has at least two members"))
    }
}

/// Weighted draw over positive weights; the final candidate absorbs rounding.
fn weighted_pick<R: Rng + ?Sized>(
    candidates: impl Iterator<Item = (char, f64)> + Clone,
    rng: &mut R,
) -> Option<char> {
    let total: f64 = candidates.clone().map(|(_, w)| w).sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = None;
    for (c, w) in candidates {
        if u < w {
            return Some(c);
        }
        u -= w;
        last = Some(c);
    }
    last
}

impl ConfusionSet<Pretrain> {
    /// Same-pinyin classes over the characters of `vocab` that the dictionary knows,
    /// weighted by normalized corpus frequency.
    pub fn build(vocab: &CharVocab, dict: &PinyinDict) -> Self {
        let mut grouped: BTreeMap<String, Vec<(char, u64)>> = BTreeMap::new();
        for (id, ch) in vocab.chars() {
            if let Some(s) = dict.get(ch) {
                grouped.entry(s.text.clone()).or_default().push((ch, vocab.freq(id)));
            }
        }
        let classes = grouped
            .into_iter()
            .map(|(key, mut members)| {
                members.sort_by_key(|(c, _)| *c);
                (key, normalize(&members))
            })
            .collect();
        Self::from_parts(classes, BTreeMap::new())
    }
}

fn normalize(members: &[(char, u64)]) -> Vec<(char, f64)> {
    let total: u64 = members.iter().map(|(_, n)| n).sum();
    if total == 0 {
        let w = 1.0 / members.len() as f64;
        return members.iter().map(|(c, _)| (*c, w)).collect();
    }
    members
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|(c, n)| (*c, *n as f64 / total as f64))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalBuildStats {
    pub pairs_read: usize,
    pub substitutions: usize,
    pub skipped_length_mismatch: usize,
}

impl ConfusionSet<Eval> {
    /// Extracts character confusions from aligned `<clean>\t<noisy>` lines.
    ///
    /// Pairs are keyed by the clean character. Classes group the observed
    /// noisy characters under the clean character's pinyin (clean characters
    /// the dictionary does not know are grouped under their own literal).
    /// An optional `base` set contributes every within-class pair, weighted
    /// by the target's class weight.
    pub fn from_pairs_text(
        text: &str,
        dict: &PinyinDict,
        base: Option<&ConfusionSet<Eval>>,
    ) -> Result<(Self, EvalBuildStats)> {
        let mut stats = EvalBuildStats::default();
        let mut counts: BTreeMap<char, BTreeMap<char, f64>> = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (clean, noisy) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: "expected <clean>\\t<noisy>".into(),
            })?;
            stats.pairs_read += 1;
            if clean.chars().count() != noisy.chars().count() {
                stats.skipped_length_mismatch += 1;
                continue;
            }
            for (a, b) in clean.chars().zip(noisy.chars()).filter(|(a, b)| a != b) {
                *counts.entry(a).or_default().entry(b).or_default() += 1.0;
                stats.substitutions += 1;
            }
        }
        if let Some(base) = base {
            for (src, targets) in &base.pairs {
                for (dst, w) in targets {
                    *counts.entry(*src).or_default().entry(*dst).or_default() += w;
                }
            }
        }
        let pairs: BTreeMap<char, Vec<(char, f64)>> = counts
            .iter()
            .map(|(src, targets)| (*src, targets.iter().map(|(d, n)| (*d, *n)).collect()))
            .collect();

        let mut grouped: BTreeMap<String, BTreeMap<char, f64>> = BTreeMap::new();
        for (src, targets) in &counts {
            let key = dict
                .get(*src)
                .map(|s| s.text.clone())
                .unwrap_or_else(|| src.to_string());
            let class = grouped.entry(key).or_default();
            for (dst, n) in targets {
                *class.entry(*dst).or_default() += n;
            }
        }
        // A character may only sit in one class; keep it where it was seen most.
        let mut best: HashMap<char, (f64, String)> = HashMap::new();
        for (key, members) in &grouped {
            for (c, n) in members {
                let e = best.entry(*c).or_insert((*n, key.clone()));
                if *n > e.0 {
                    *e = (*n, key.clone());
                }
            }
        }
        let classes = grouped
            .into_iter()
            .filter_map(|(key, members)| {
                let kept: Vec<(char, f64)> = members
                    .into_iter()
                    .filter(|(c, _)| best[c].1 == key)
                    .collect();
                let total: f64 = kept.iter().map(|(_, n)| n).sum();
                (!kept.is_empty())
                    .then(|| (key, kept.into_iter().map(|(c, n)| (c, n / total)).collect()))
            })
            .collect();
        Ok((Self::from_parts(classes, pairs), stats))
    }

    pub fn build_from_file(
        path: impl AsRef<Path>,
        dict: &PinyinDict,
        base: Option<&ConfusionSet<Eval>>,
    ) -> Result<(Self, EvalBuildStats)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_pairs_text(&text, dict, base)
    }

    pub fn pairs(&self) -> &BTreeMap<char, Vec<(char, f64)>> {
        &self.pairs
    }

    /// Raw weight of the observed `src → dst` confusion.
    pub fn pair_count(&self, src: char, dst: char) -> f64 {
        self.pairs
            .get(&src)
            .and_then(|t| t.iter().find(|(c, _)| *c == dst))
            .map_or(0.0, |(_, n)| *n)
    }

    pub fn is_replaceable(&self, ch: char) -> bool {
        self.pairs.contains_key(&ch)
    }

    /// Draws an observed replacement for `ch`, proportional to its count.
    pub fn sample_pair<R: Rng + ?Sized>(&self, ch: char, rng: &mut R) -> Option<char> {
        self.pairs
            .get(&ch)
            .and_then(|targets| weighted_pick(targets.iter().copied(), rng))
    }
}

#[derive(Serialize, Deserialize)]
struct ConfusionFile {
    provenance: String,
    classes: BTreeMap<String, Vec<(char, f64)>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pairs: BTreeMap<char, Vec<(char, f64)>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bo_dict() -> PinyinDict {
        "拨\tbo1\n播\tbo1\n中\tzhong1\n".parse().unwrap()
    }

    #[test]
    fn frequency_weights() {
        let vocab = CharVocab::build(["拨拨拨播中"], 1);
        let cs = PretrainSet::build(&vocab, &bo_dict());
        assert_eq!(cs.class("bo").unwrap(), &[('拨', 0.75), ('播', 0.25)]);
        assert_eq!(cs.class("zhong").unwrap(), &[('中', 1.0)]);
        assert_eq!(cs.class_of('播'), Some("bo"));
    }

    #[test]
    fn characters_outside_dictionary_excluded() {
        let vocab = CharVocab::build(["拨A"], 1);
        let cs = PretrainSet::build(&vocab, &bo_dict());
        assert_eq!(cs.class_of('A'), None);
        assert!(matches!(
            cs.sample('A', SamplingStrategy::Frequency, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::NoClass('A'))
        ));
    }

    #[test]
    fn zero_total_falls_back_to_uniform() {
        assert_eq!(normalize(&[('a', 0), ('b', 0)]), vec![('a', 0.5), ('b', 0.5)]);
    }

    #[test]
    fn singleton_returns_itself() {
        let vocab = CharVocab::build(["中"], 1);
        let cs = PretrainSet::build(&vocab, &bo_dict());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(cs.sample('中', SamplingStrategy::Uniform, &mut rng).unwrap(), '中');
    }

    #[test]
    fn two_member_class_always_swaps() {
        let vocab = CharVocab::build(["拨拨拨播"], 1);
        let cs = PretrainSet::build(&vocab, &bo_dict());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            assert_eq!(cs.sample('拨', SamplingStrategy::Frequency, &mut rng).unwrap(), '播');
            assert_eq!(cs.sample('播', SamplingStrategy::Uniform, &mut rng).unwrap(), '拨');
        }
    }

    #[test]
    fn eval_pairs_counted() {
        let text = "拨打电话\t播打电话\n拨打电话\t播打电话\n拨打电话\t播打电话\n";
        let (cs, stats) = EvalSet::from_pairs_text(text, &bo_dict(), None).unwrap();
        assert_eq!(cs.pair_count('拨', '播'), 3.0);
        assert_eq!(stats.substitutions, 3);
        assert_eq!(cs.provenance(), "eval");
        assert_eq!(cs.class("bo").unwrap(), &[('播', 1.0)]);
        assert!(cs.is_replaceable('拨'));
        assert!(!cs.is_replaceable('打'));
    }

    #[test]
    fn eval_skips_mismatched_lengths() {
        let text = "拨打\t播\n拨打电话\t播打电话\n";
        let (cs, stats) = EvalSet::from_pairs_text(text, &bo_dict(), None).unwrap();
        assert_eq!(stats.skipped_length_mismatch, 1);
        assert_eq!(cs.pair_count('拨', '播'), 1.0);
    }

    #[test]
    fn empty_eval_file() {
        let (cs, stats) = EvalSet::from_pairs_text("", &bo_dict(), None).unwrap();
        assert!(cs.is_empty());
        assert_eq!(stats, EvalBuildStats::default());
    }

    #[test]
    fn base_set_merged() {
        let (base, _) = EvalSet::from_pairs_text("拨\t播\n", &bo_dict(), None).unwrap();
        let (cs, _) = EvalSet::from_pairs_text("拨\t播\n播\t拨\n", &bo_dict(), Some(&base)).unwrap();
        assert_eq!(cs.pair_count('拨', '播'), 2.0);
        assert_eq!(cs.pair_count('播', '拨'), 1.0);
    }

    #[test]
    fn json_round_trip_and_provenance_check() {
        let vocab = CharVocab::build(["拨拨拨播中"], 1);
        let cs = PretrainSet::build(&vocab, &bo_dict());
        let json = cs.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["provenance"], "pretrain");
        assert_eq!(v["classes"]["bo"][0][0], "拨");
        assert_eq!(PretrainSet::from_json(&json).unwrap(), cs);
        assert!(EvalSet::from_json(&json).is_err());
    }
}
