//! Character vocabulary and encoding of text into parallel character/pinyin ids.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pinyin::{PinyinDict, PinyinMode, PinyinVocab, P_PAD_ID};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const MASK_ID: usize = 4;
pub const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<Option<char>>,
    freq: Vec<u64>,
    index: HashMap<char, usize>,
}

pub fn is_special(id: usize) -> bool {
    id < SPECIALS.len()
}

impl CharVocab {
    /// Counts every character of every line (line terminators excluded) and
    /// keeps those seen at least `min_freq` times, most frequent first.
    pub fn build<I, S>(lines: I, min_freq: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let min_freq = min_freq.max(1);
        let mut counts: HashMap<char, u64> = HashMap::new();
        for line in lines {
            for ch in line.as_ref().chars().filter(|c| *c != '\n' && *c != '\r') {
                *counts.entry(ch).or_default() += 1;
            }
        }
        let mut kept: Vec<(char, u64)> = counts.into_iter().filter(|(_, n)| *n >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Self::from_entries(kept)
    }

    fn from_entries(entries: Vec<(char, u64)>) -> Self {
        let mut chars = vec![None; SPECIALS.len()];
        let mut freq = vec![0; SPECIALS.len()];
        let mut index = HashMap::with_capacity(entries.len());
        for (ch, n) in entries {
            index.insert(ch, chars.len());
            chars.push(Some(ch));
            freq.push(n);
        }
        CharVocab { chars, freq, index }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.len() == SPECIALS.len()
    }

    pub fn id(&self, ch: char) -> Option<usize> {
        self.index.get(&ch).copied()
    }

    pub fn id_or_unk(&self, ch: char) -> usize {
        self.id(ch).unwrap_or(UNK_ID)
    }

    /// The character behind a non-special id.
    pub fn char_of(&self, id: usize) -> Option<char> {
        self.chars.get(id).copied().flatten()
    }

    pub fn freq(&self, id: usize) -> u64 {
        self.freq.get(id).copied().unwrap_or(0)
    }

    pub fn count(&self, ch: char) -> u64 {
        self.id(ch).map(|id| self.freq[id]).unwrap_or(0)
    }

    pub fn token(&self, id: usize) -> String {
        match self.chars.get(id) {
            Some(Some(c)) => c.to_string(),
            Some(None) => SPECIALS[id].to_string(),
            None => SPECIALS[UNK_ID].to_string(),
        }
    }

    /// Non-special characters in id order.
    pub fn chars(&self) -> impl Iterator<Item = (usize, char)> + '_ {
        self.chars
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| (i, c)))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for id in 0..self.len() {
            out.push_str(&self.token(id));
            out.push('\t');
            out.push_str(&self.freq[id].to_string());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let parse_err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            let (token, count) = line
                .rsplit_once('\t')
                .ok_or_else(|| parse_err("expected <char>\\t<count>".into()))?;
            let count: u64 = count
                .parse()
                .map_err(|_| parse_err(format!("bad count {count:?}")))?;
            if idx < SPECIALS.len() {
                if token != SPECIALS[idx] || count != 0 {
                    return Err(parse_err(format!("expected special {}", SPECIALS[idx])));
                }
                continue;
            }
            let mut it = token.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => entries.push((c, count)),
                _ => return Err(parse_err(format!("expected one character, got {token:?}"))),
            }
        }
        let vocab = Self::from_entries(entries);
        if vocab.index.len() + SPECIALS.len() != vocab.len() {
            return Err(Error::Data("vocabulary contains duplicate characters".into()));
        }
        Ok(vocab)
    }
}

/// One encoded sentence: `[CLS] chars... [SEP]` plus optional `[PAD]` tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub char_ids: Vec<usize>,
    /// One row per position, one column per pinyin component.
    pub pinyin_ids: Vec<Vec<usize>>,
    pub segment_ids: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.char_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.char_ids.is_empty()
    }

    pub fn components(&self) -> usize {
        self.pinyin_ids.first().map_or(0, Vec::len)
    }

    pub fn pad_to(&mut self, len: usize) {
        let c = self.components();
        while self.char_ids.len() < len {
            self.char_ids.push(PAD_ID);
            self.pinyin_ids.push(vec![P_PAD_ID; c]);
            self.segment_ids.push(0);
        }
    }

    /// Positions that are not `[CLS]`, `[SEP]` or `[PAD]`.
    pub fn content_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.char_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| !matches!(**id, PAD_ID | CLS_ID | SEP_ID))
            .map(|(i, _)| i)
    }
}

/// Everything needed to turn text into model inputs.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub chars: CharVocab,
    pub dict: PinyinDict,
    pub pinyin: Option<PinyinVocab>,
}

impl Tokenizer {
    pub fn new(chars: CharVocab, dict: PinyinDict, mode: PinyinMode) -> Result<Self> {
        let pinyin = match mode {
            PinyinMode::None => None,
            m => Some(PinyinVocab::build(&dict, m)?),
        };
        Ok(Tokenizer {
            chars,
            dict,
            pinyin,
        })
    }

    pub fn with_vocab(chars: CharVocab, dict: PinyinDict, pinyin: Option<PinyinVocab>) -> Self {
        Tokenizer {
            chars,
            dict,
            pinyin,
        }
    }

    pub fn mode(&self) -> PinyinMode {
        self.pinyin.as_ref().map_or(PinyinMode::None, |p| p.mode)
    }

    pub fn components(&self) -> usize {
        self.pinyin.as_ref().map_or(0, PinyinVocab::components)
    }

    pub fn pinyin_table_sizes(&self) -> Vec<usize> {
        self.pinyin
            .as_ref()
            .map(PinyinVocab::table_sizes)
            .unwrap_or_default()
    }

    /// Pinyin ids of a character as it is fed to the model. Characters outside
    /// the vocabulary become `[UNK]`, whose pinyin is `[P-UNK]`.
    pub fn char_pinyin(&self, ch: char) -> Vec<usize> {
        match &self.pinyin {
            None => Vec::new(),
            Some(pv) if self.chars.id(ch).is_none() => pv.ids(None),
            Some(pv) => pv.ids(self.dict.get(ch)),
        }
    }

    pub fn id_pinyin(&self, id: usize) -> Vec<usize> {
        match self.chars.char_of(id) {
            Some(ch) => self.char_pinyin(ch),
            None if id == UNK_ID => self.pinyin.as_ref().map(|p| p.ids(None)).unwrap_or_default(),
            None => vec![P_PAD_ID; self.components()],
        }
    }

    pub fn encode(&self, text: &str, max_len: usize) -> TokenSequence {
        let max_len = max_len.max(2);
        let c = self.components();
        let body: Vec<char> = text
            .chars()
            .filter(|c| *c != '\n' && *c != '\r')
            .take(max_len - 2)
            .collect();
        let mut char_ids = Vec::with_capacity(body.len() + 2);
        let mut pinyin_ids = Vec::with_capacity(body.len() + 2);
        char_ids.push(CLS_ID);
        pinyin_ids.push(vec![P_PAD_ID; c]);
        for ch in body {
            char_ids.push(self.chars.id_or_unk(ch));
            pinyin_ids.push(self.char_pinyin(ch));
        }
        char_ids.push(SEP_ID);
        pinyin_ids.push(vec![P_PAD_ID; c]);
        let segment_ids = vec![0; char_ids.len()];
        TokenSequence {
            char_ids,
            pinyin_ids,
            segment_ids,
        }
    }
}

/// Reads a one-sentence-per-line corpus, skipping blank lines.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if !line.trim().is_empty() {
            out.push(line.to_string());
        }
    }
    Ok(out)
}
