//! Toy language for desk-scale robustness experiments.
//!
//! Characters are drawn from homophone classes of the pinyin dictionary.
//! Sentences are filler words with one or two keywords inserted. Each label
//! owns a few keyword classes and its sentences always write them with the
//! class's dominant character; the other members (the homophones) only occur
//! in corpus sentences whose keywords are drawn without regard to any label.
//! Replacing a keyword with a homophone therefore keeps its pinyin but removes
//! the character identity the labeled data relies on.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Example, LabeledDataset, Target, Task};
use super::rng_for;
use crate::error::{Error, Result};
use crate::pinyin::PinyinDict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub labels: usize,
    pub keyword_classes_per_label: usize,
    pub keyword_class_size: usize,
    pub filler_classes: usize,
    pub filler_class_size: usize,
    /// Size of the filler-word lexicon built from filler characters.
    pub filler_words: usize,
    /// Inclusive range of filler word lengths.
    pub word_len: [usize; 2],
    pub min_len: usize,
    pub max_len: usize,
    /// Inclusive range of keyword characters per labeled sentence.
    pub keywords: [usize; 2],
    pub corpus_sentences: usize,
    /// Share of corpus sentences whose keywords are random members of random
    /// keyword classes rather than the dominant characters of one label.
    pub free_fraction: f64,
    pub classify_train: usize,
    pub classify_test: usize,
    pub tag_train: usize,
    pub tag_test: usize,
    pub heldout: usize,
    pub eval_pairs: usize,
    /// Per-character substitution probability in the eval pair file.
    pub eval_substitution: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 20_240_521,
            labels: 4,
            keyword_classes_per_label: 5,
            keyword_class_size: 4,
            filler_classes: 40,
            filler_class_size: 3,
            filler_words: 60,
            word_len: [2, 3],
            min_len: 10,
            max_len: 16,
            keywords: [1, 2],
            corpus_sentences: 5000,
            free_fraction: 0.3,
            classify_train: 300,
            classify_test: 400,
            tag_train: 300,
            tag_test: 400,
            heldout: 300,
            eval_pairs: 2000,
            eval_substitution: 0.15,
        }
    }
}

impl SyntheticConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.labels == 0 || self.keyword_classes_per_label == 0 {
            v.push("labels and keyword_classes_per_label must be at least 1".into());
        }
        if self.keyword_class_size < 2 || self.filler_class_size < 2 {
            v.push("class sizes must be at least 2".into());
        }
        if self.filler_classes == 0 || self.filler_words == 0 {
            v.push("filler_classes and filler_words must be at least 1".into());
        }
        if self.word_len[0] == 0 || self.word_len[0] > self.word_len[1] {
            v.push(format!("bad word length range {:?}", self.word_len));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            v.push(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        let [lo, hi] = self.keywords;
        if lo == 0 || lo > hi || 2 * hi >= self.min_len {
            v.push(format!("bad keyword range {lo}..={hi} for min_len {}", self.min_len));
        }
        if !(0.0..=1.0).contains(&self.free_fraction) {
            v.push(format!("free_fraction {} not in [0, 1]", self.free_fraction));
        }
        if !(0.0..=1.0).contains(&self.eval_substitution) {
            v.push(format!("eval_substitution {} not in [0, 1]", self.eval_substitution));
        }
        v
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpus: Vec<String>,
    pub heldout: Vec<String>,
    /// `<clean>\t<noisy>` lines.
    pub eval_pairs: Vec<String>,
    pub classify_train: LabeledDataset,
    pub classify_test: LabeledDataset,
    pub tag_train: LabeledDataset,
    pub tag_test: LabeledDataset,
    /// Keyword classes per label, dominant character first.
    pub keyword_classes: Vec<Vec<Vec<char>>>,
}

impl SyntheticData {
    pub const FILES: [&'static str; 7] = [
        "corpus.txt",
        "heldout.txt",
        "eval_pairs.tsv",
        "classify_train.jsonl",
        "classify_test.jsonl",
        "tag_train.jsonl",
        "tag_test.jsonl",
    ];

    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lines = |v: &[String]| v.iter().map(|l| format!("{l}\n")).collect::<String>();
        let contents = [
            lines(&self.corpus),
            lines(&self.heldout),
            lines(&self.eval_pairs),
            self.classify_train.to_jsonl()?,
            self.classify_test.to_jsonl()?,
            self.tag_train.to_jsonl()?,
            self.tag_test.to_jsonl()?,
        ];
        for (name, body) in Self::FILES.iter().zip(contents) {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

struct Language {
    /// `[label][class]` members, dominant first.
    keywords: Vec<Vec<Vec<char>>>,
    words: Vec<Vec<char>>,
    class_of: BTreeMap<char, Vec<char>>,
}

fn pick_classes(cfg: &SyntheticConfig, dict: &PinyinDict) -> Result<Language> {
    let mut classes: BTreeMap<&str, Vec<char>> = BTreeMap::new();
    for (ch, syl) in dict.iter() {
        classes.entry(syl.text.as_str()).or_default().push(ch);
    }
    let mut keys: Vec<&str> = classes.keys().copied().collect();
    keys.shuffle(&mut rng_for(cfg.seed, &[0x636c_6173]));

    let n_kw = cfg.labels * cfg.keyword_classes_per_label;
    let mut kw = Vec::new();
    let mut fill = Vec::new();
    for k in keys {
        let members = &classes[k];
        if kw.len() < n_kw && members.len() >= cfg.keyword_class_size {
            kw.push(members[..cfg.keyword_class_size].to_vec());
        } else if fill.len() < cfg.filler_classes && members.len() >= cfg.filler_class_size {
            fill.push(members[..cfg.filler_class_size].to_vec());
        }
    }
    if kw.len() < n_kw || fill.len() < cfg.filler_classes {
        return Err(Error::Data(format!(
            "dictionary has too few homophone classes: {} keyword and {} filler classes found",
            kw.len(),
            fill.len()
        )));
    }
    let mut class_of = BTreeMap::new();
    for class in kw.iter().chain(&fill) {
        for &c in class {
            class_of.insert(c, class.clone());
        }
    }
    let fillers: Vec<char> = fill.concat();
    let mut r = rng_for(cfg.seed, &[0x776f_7264]);
    let words = (0..cfg.filler_words)
        .map(|_| {
            let n = r.gen_range(cfg.word_len[0]..=cfg.word_len[1]);
            (0..n).map(|_| *fillers.choose(&mut r).expect("fillers")).collect()
        })
        .collect();
    let keywords = kw
        .chunks(cfg.keyword_classes_per_label)
        .map(|c| c.to_vec())
        .collect();
    Ok(Language {
        keywords,
        words,
        class_of,
    })
}

enum Keywords {
    /// Dominant characters of the label's keyword classes.
    Label(usize),
    /// Any member of any keyword class.
    Free,
}

impl Language {
    /// Filler words with keyword spans of width `span_len` inserted at word
    /// boundaries. Returns the characters and the start of every span.
    fn sentence(
        &self,
        cfg: &SyntheticConfig,
        keywords: Keywords,
        span_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<char>, Vec<usize>) {
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let n = rng.gen_range(cfg.keywords[0]..=cfg.keywords[1]);
        let filler_len = len - n * span_len;
        let mut words: Vec<Vec<char>> = Vec::new();
        let mut total = 0;
        while total < filler_len {
            let mut w = self.words.choose(rng).expect("filler words").clone();
            w.truncate(filler_len - total);
            total += w.len();
            words.push(w);
        }
        let mut slots: Vec<usize> = rand::seq::index::sample(rng, words.len() + 1, n)
            .into_iter()
            .collect();
        slots.sort_unstable();
        let mut chars = Vec::with_capacity(len);
        let mut starts = Vec::with_capacity(n);
        for i in 0..=words.len() {
            if slots.contains(&i) {
                starts.push(chars.len());
                for _ in 0..span_len {
                    let c = match keywords {
                        Keywords::Label(l) => self.keywords[l].choose(rng).expect("classes")[0],
                        Keywords::Free => {
                            let classes = self.keywords.choose(rng).expect("labels");
                            *classes.choose(rng).expect("classes").choose(rng).expect("members")
                        }
                    };
                    chars.push(c);
                }
            }
            if let Some(w) = words.get(i) {
                chars.extend(w);
            }
        }
        (chars, starts)
    }

    fn homophone(&self, c: char, rng: &mut ChaCha8Rng) -> char {
        let others: Vec<char> = self.class_of[&c].iter().copied().filter(|&o| o != c).collect();
        *others.choose(rng).unwrap_or(&c)
    }
}

fn label_name(l: usize) -> String {
    format!("T{l}")
}

fn classify_set(
    lang: &Language,
    cfg: &SyntheticConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledDataset> {
    let examples = (0..n)
        .map(|i| {
            let label = i % cfg.labels;
            let (chars, _) = lang.sentence(cfg, Keywords::Label(label), 1, rng);
            Example {
                text: chars.into_iter().collect(),
                target: Target::Label(label_name(label)),
            }
        })
        .collect();
    LabeledDataset::new(Task::Classify, examples)
}

fn tag_set(
    lang: &Language,
    cfg: &SyntheticConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledDataset> {
    let examples = (0..n)
        .map(|_| {
            let label = rng.gen_range(0..cfg.labels);
            let (chars, starts) = lang.sentence(cfg, Keywords::Label(label), 2, rng);
            let mut tags = vec!["O".to_string(); chars.len()];
            for s in starts {
                tags[s] = format!("B-{}", label_name(label));
                tags[s + 1] = format!("I-{}", label_name(label));
            }
            Example {
                text: chars.into_iter().collect(),
                target: Target::Tags(tags),
            }
        })
        .collect();
    LabeledDataset::new(Task::Tag, examples)
}

/// Generates every synthetic artifact from `cfg` and the pinyin dictionary.
pub fn generate(cfg: &SyntheticConfig, dict: &PinyinDict) -> Result<SyntheticData> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let lang = pick_classes(cfg, dict)?;
    let rng = |tag: u64| rng_for(cfg.seed, &[tag]);

    let mut r = rng(1);
    let corpus = (0..cfg.corpus_sentences)
        .map(|_| {
            let keywords = if r.gen_bool(cfg.free_fraction) {
                Keywords::Free
            } else {
                Keywords::Label(r.gen_range(0..cfg.labels))
            };
            lang.sentence(cfg, keywords, 1, &mut r).0.into_iter().collect()
        })
        .collect();

    let mut r = rng(2);
    let heldout = (0..cfg.heldout)
        .map(|_| {
            let label = r.gen_range(0..cfg.labels);
            lang.sentence(cfg, Keywords::Label(label), 1, &mut r).0.into_iter().collect()
        })
        .collect();

    let mut r = rng(3);
    let eval_pairs = (0..cfg.eval_pairs)
        .map(|_| {
            let label = r.gen_range(0..cfg.labels);
            let clean = lang.sentence(cfg, Keywords::Label(label), 1, &mut r).0;
            let noisy: String = clean
                .iter()
                .map(|&c| {
                    if r.gen_bool(cfg.eval_substitution) {
                        lang.homophone(c, &mut r)
                    } else {
                        c
                    }
                })
                .collect();
            format!("{}\t{noisy}", clean.iter().collect::<String>())
        })
        .collect();

    Ok(SyntheticData {
        corpus,
        heldout,
        eval_pairs,
        classify_train: classify_set(&lang, cfg, cfg.classify_train, &mut rng(4))?,
        classify_test: classify_set(&lang, cfg, cfg.classify_test, &mut rng(5))?,
        tag_train: tag_set(&lang, cfg, cfg.tag_train, &mut rng(6))?,
        tag_test: tag_set(&lang, cfg, cfg.tag_test, &mut rng(7))?,
        keyword_classes: lang.keywords,
    })
}
