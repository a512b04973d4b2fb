//! Character to pinyin lookup and the id tables for each pinyin representation.
//!
//! A syllable such as `zhong1` is split into an initial (`zh`), a final
//! (`ong`) and a tone (`1`). Depending on [`PinyinMode`] a character's pinyin
//! is fed to the model as one id (`zhong` or `zhong1`) or as one id per
//! component.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placeholder for syllables without an initial (`an`, `er`, ...).
pub const ZERO_INITIAL: &str = "∅";

pub const P_PAD: &str = "[P-PAD]";
pub const P_MASK: &str = "[P-MASK]";
pub const P_UNK: &str = "[P-UNK]";
pub const P_PAD_ID: usize = 0;
pub const P_MASK_ID: usize = 1;
pub const P_UNK_ID: usize = 2;

/// Two-letter initials come first so prefix search is longest-match.
const INITIALS: [&str; 23] = [
    "zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "r",
    "z", "c", "s", "y", "w",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Syllable {
    pub text: String,
    pub initial: String,
    pub final_: String,
    pub tone: u8,
}

impl Syllable {
    /// Parses `zhong1`-style pinyin. Tone 5 is the neutral tone and is stored as 0.
    pub fn parse(numbered: &str) -> std::result::Result<Self, String> {
        let mut chars = numbered.chars();
        let digit = chars
            .next_back()
            .ok_or_else(|| "empty pinyin".to_string())?;
        let tone = match digit {
            '1'..='4' => digit as u8 - b'0',
            '5' | '0' => 0,
            _ => return Err(format!("missing or bad tone digit in {numbered:?}")),
        };
        let text = chars.as_str();
        if text.is_empty() || !text.bytes().all(|b| b.is_ascii_lowercase()) {
            return Err(format!("pinyin {text:?} is not lowercase ascii"));
        }
        let (initial, final_) = decompose(text).map_err(|e| e.to_string())?;
        Ok(Syllable {
            text: text.to_string(),
            initial,
            final_,
            tone,
        })
    }

    pub fn with_tone(&self) -> String {
        format!("{}{}", self.text, self.tone)
    }
}

impl fmt::Display for Syllable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.text, self.tone)
    }
}

/// Splits toneless pinyin into `(initial, final)` by longest initial prefix.
pub fn decompose(pinyin: &str) -> Result<(String, String)> {
    let initial = INITIALS.iter().find(|i| pinyin.starts_with(*i));
    match initial {
        Some(i) if i.len() == pinyin.len() => Err(Error::Decomposition(pinyin.to_string())),
        Some(i) => Ok((i.to_string(), pinyin[i.len()..].to_string())),
        None if pinyin.is_empty() => Err(Error::Decomposition(pinyin.to_string())),
        None => Ok((ZERO_INITIAL.to_string(), pinyin.to_string())),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PinyinDict {
    entries: BTreeMap<char, Syllable>,
}

impl PinyinDict {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn get(&self, ch: char) -> Option<&Syllable> {
        self.entries.get(&ch)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, &Syllable)> {
        self.entries.iter().map(|(c, s)| (*c, s))
    }

    pub fn insert(&mut self, ch: char, syllable: Syllable) -> Option<Syllable> {
        self.entries.insert(ch, syllable)
    }
}

impl FromStr for PinyinDict {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let (head, pinyin) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected <char>\\t<pinyin>".into()))?;
            let mut head_chars = head.chars();
            let ch = match (head_chars.next(), head_chars.next()) {
                (Some(c), None) => c,
                _ => return Err(parse_err(format!("expected one character, got {head:?}"))),
            };
            let syllable = Syllable::parse(pinyin.trim()).map_err(parse_err)?;
            if entries.insert(ch, syllable).is_some() {
                return Err(Error::DuplicateEntry { line: line_no, ch });
            }
        }
        Ok(PinyinDict { entries })
    }
}

/// Absent characters (not in the dictionary) get `[P-UNK]` in every component.
pub fn to_syllable(ch: char, dict: &PinyinDict) -> Option<&Syllable> {
    dict.get(ch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinyinMode {
    /// Character-only input, no pinyin embedding.
    None,
    #[default]
    Plain,
    PlainTone,
    InitFinal,
    InitFinalTone,
}

impl PinyinMode {
    pub fn components(self) -> usize {
        match self {
            PinyinMode::None => 0,
            PinyinMode::Plain | PinyinMode::PlainTone => 1,
            PinyinMode::InitFinal => 2,
            PinyinMode::InitFinalTone => 3,
        }
    }

    fn table_names(self) -> &'static [&'static str] {
        match self {
            PinyinMode::None => &[],
            PinyinMode::Plain => &["syllable"],
            PinyinMode::PlainTone => &["syllable_tone"],
            PinyinMode::InitFinal => &["initial", "final"],
            PinyinMode::InitFinalTone => &["initial", "final", "tone"],
        }
    }

    fn keys(self, s: &Syllable) -> Vec<String> {
        match self {
            PinyinMode::None => Vec::new(),
            PinyinMode::Plain => vec![s.text.clone()],
            PinyinMode::PlainTone => vec![s.with_tone()],
            PinyinMode::InitFinal => vec![s.initial.clone(), s.final_.clone()],
            PinyinMode::InitFinalTone => {
                vec![s.initial.clone(), s.final_.clone(), s.tone.to_string()]
            }
        }
    }
}

impl FromStr for PinyinMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidMode(s.to_string()))
    }
}

impl fmt::Display for PinyinMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(v.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TableRepr", into = "TableRepr")]
pub struct PinyinTable {
    pub name: String,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    name: String,
    tokens: Vec<String>,
}

impl From<TableRepr> for PinyinTable {
    fn from(r: TableRepr) -> Self {
        PinyinTable::from_tokens(r.name, r.tokens)
    }
}

impl From<PinyinTable> for TableRepr {
    fn from(t: PinyinTable) -> Self {
        TableRepr {
            name: t.name,
            tokens: t.tokens,
        }
    }
}

impl PinyinTable {
    fn from_tokens(name: String, tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        PinyinTable {
            name,
            tokens,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinyinVocab {
    pub mode: PinyinMode,
    pub tables: Vec<PinyinTable>,
}

impl PinyinVocab {
    pub fn build(dict: &PinyinDict, mode: PinyinMode) -> Result<Self> {
        if mode == PinyinMode::None {
            return Err(Error::InvalidMode(
                "a pinyin vocabulary needs a mode other than none".into(),
            ));
        }
        let names = mode.table_names();
        let mut values: Vec<BTreeSet<String>> = vec![BTreeSet::new(); names.len()];
        for (_, syllable) in dict.iter() {
            for (set, key) in values.iter_mut().zip(mode.keys(syllable)) {
                set.insert(key);
            }
        }
        let tables = names
            .iter()
            .zip(values)
            .map(|(name, set)| {
                let tokens = [P_PAD, P_MASK, P_UNK]
                    .into_iter()
                    .map(String::from)
                    .chain(set)
                    .collect();
                PinyinTable::from_tokens(name.to_string(), tokens)
            })
            .collect();
        Ok(PinyinVocab { mode, tables })
    }

    pub fn components(&self) -> usize {
        self.tables.len()
    }

    pub fn table_sizes(&self) -> Vec<usize> {
        self.tables.iter().map(PinyinTable::len).collect()
    }

    /// Component ids for one character; unknown syllables or components map to `[P-UNK]`.
    pub fn ids(&self, syllable: Option<&Syllable>) -> Vec<usize> {
        match syllable {
            None => vec![P_UNK_ID; self.tables.len()],
            Some(s) => self
                .tables
                .iter()
                .zip(self.mode.keys(s))
                .map(|(t, k)| t.id(&k).unwrap_or(P_UNK_ID))
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Pinyin ids for an optional vocabulary; mode `None` yields no components.
pub fn pinyin_ids(syllable: Option<&Syllable>, vocab: Option<&PinyinVocab>) -> Vec<usize> {
    vocab.map(|v| v.ids(syllable)).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict(lines: &str) -> PinyinDict {
        lines.parse().unwrap()
    }

    #[test]
    fn parses_zhong() {
        let d = dict("中\tzhong1\n");
        let s = d.get('中').unwrap();
        assert_eq!(s.text, "zhong");
        assert_eq!(s.initial, "zh");
        assert_eq!(s.final_, "ong");
        assert_eq!(s.tone, 1);
    }

    #[test]
    fn same_pronunciation_bo() {
        let d = dict("拨\tbo1\n播\tbo1\n");
        assert_eq!(d.get('拨').unwrap().text, "bo");
        assert_eq!(d.get('播').unwrap().text, "bo");
    }

    #[test]
    fn empty_and_comments() {
        assert!(dict("").is_empty());
        assert!(dict("# header\n\n").is_empty());
    }

    #[test]
    fn neutral_tone_normalized() {
        let d = dict("了\tle5\n");
        assert_eq!(d.get('了').unwrap().tone, 0);
    }

    #[test]
    fn rejects_malformed_lines() {
        for (text, line) in [
            ("中zhong1\n", 1),
            ("中\tzhong\n", 1),
            ("中\tzhong6\n", 1),
            ("中\tzhong1\n嗯\tn2\n", 2),
            ("中文\tzhong1\n", 1),
        ] {
            match text.parse::<PinyinDict>() {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_duplicates() {
        let err = "中\tzhong1\n中\tzhong4\n".parse::<PinyinDict>().unwrap_err();
        assert!(matches!(err, Error::DuplicateEntry { line: 2, ch: '中' }));
    }

    #[test]
    fn decompose_cases() {
        assert_eq!(decompose("zhong").unwrap(), ("zh".into(), "ong".into()));
        assert_eq!(decompose("an").unwrap(), (ZERO_INITIAL.into(), "an".into()));
        assert_eq!(decompose("jiu").unwrap(), ("j".into(), "iu".into()));
        assert_eq!(decompose("shi").unwrap(), ("sh".into(), "i".into()));
        assert!(matches!(decompose("zh"), Err(Error::Decomposition(_))));
        assert!(matches!(decompose("n"), Err(Error::Decomposition(_))));
    }

    #[test]
    fn absent_characters() {
        let d = dict("中\tzhong1\n");
        assert!(to_syllable('A', &d).is_none());
        assert!(to_syllable('中', &PinyinDict::default()).is_none());
    }

    #[test]
    fn plain_vocab_is_sorted_after_reserved() {
        let d = dict("中\tzhong1\n拨\tbo1\n播\tbo1\n");
        let v = PinyinVocab::build(&d, PinyinMode::Plain).unwrap();
        assert_eq!(v.tables.len(), 1);
        let t = &v.tables[0];
        let tokens: Vec<_> = (0..t.len()).map(|i| t.token(i).unwrap()).collect();
        assert_eq!(tokens, [P_PAD, P_MASK, P_UNK, "bo", "zhong"]);
    }

    #[test]
    fn init_final_vocab() {
        let d = dict("中\tzhong1\n拨\tbo1\n播\tbo1\n");
        let v = PinyinVocab::build(&d, PinyinMode::InitFinal).unwrap();
        assert_eq!(v.table_sizes(), [5, 5]);
        assert_eq!(v.tables[0].id("b"), Some(3));
        assert_eq!(v.tables[0].id("zh"), Some(4));
        assert_eq!(v.tables[1].id("o"), Some(3));
        assert_eq!(v.tables[1].id("ong"), Some(4));
        assert_eq!(v.tables[0].id(ZERO_INITIAL), None);
    }

    #[test]
    fn zero_initial_has_own_id() {
        let d = dict("安\tan1\n");
        let v = PinyinVocab::build(&d, PinyinMode::InitFinal).unwrap();
        assert_eq!(v.ids(d.get('安')), vec![3, 3]);
    }

    #[test]
    fn empty_dict_vocab_only_reserved() {
        for mode in [PinyinMode::Plain, PinyinMode::InitFinalTone] {
            let v = PinyinVocab::build(&PinyinDict::default(), mode).unwrap();
            assert!(v.table_sizes().iter().all(|&n| n == 3));
        }
    }

    #[test]
    fn none_mode_rejected() {
        assert!(matches!(
            PinyinVocab::build(&PinyinDict::default(), PinyinMode::None),
            Err(Error::InvalidMode(_))
        ));
    }

    #[test]
    fn component_ids() {
        let d = dict("中\tzhong1\n拨\tbo1\n");
        let zhong = d.get('中');
        let plain = PinyinVocab::build(&d, PinyinMode::Plain).unwrap();
        assert_eq!(plain.ids(zhong), vec![plain.tables[0].id("zhong").unwrap()]);
        let toned = PinyinVocab::build(&d, PinyinMode::PlainTone).unwrap();
        assert_eq!(toned.ids(zhong), vec![toned.tables[0].id("zhong1").unwrap()]);
        let full = PinyinVocab::build(&d, PinyinMode::InitFinalTone).unwrap();
        assert_eq!(
            full.ids(zhong),
            vec![
                full.tables[0].id("zh").unwrap(),
                full.tables[1].id("ong").unwrap(),
                full.tables[2].id("1").unwrap()
            ]
        );
        let init_final = PinyinVocab::build(&d, PinyinMode::InitFinal).unwrap();
        assert_eq!(init_final.ids(None), vec![P_UNK_ID, P_UNK_ID]);
        assert!(pinyin_ids(zhong, None).is_empty());
    }

    #[test]
    fn mode_names_round_trip() {
        for mode in [
            PinyinMode::None,
            PinyinMode::Plain,
            PinyinMode::PlainTone,
            PinyinMode::InitFinal,
            PinyinMode::InitFinalTone,
        ] {
            assert_eq!(mode.to_string().parse::<PinyinMode>().unwrap(), mode);
        }
        assert!("pinyin".parse::<PinyinMode>().is_err());
    }

    #[test]
    fn vocab_json_round_trip() {
        let d = dict("中\tzhong1\n拨\tbo1\n");
        let v = PinyinVocab::build(&d, PinyinMode::InitFinalTone).unwrap();
        let back: PinyinVocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }
}
