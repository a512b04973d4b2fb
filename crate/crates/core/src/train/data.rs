//! Labeled downstream datasets, stored as JSON lines.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Tag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Label(String),
    Tags(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    #[serde(flatten)]
    pub target: Target,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleLine {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    pub task: Task,
    pub examples: Vec<Example>,
    /// Sorted label (or tag) inventory.
    pub labels: Vec<String>,
}

impl LabeledDataset {
    /// Builds a dataset, checking tag counts and deriving the label inventory.
    pub fn new(task: Task, examples: Vec<Example>) -> Result<Self> {
        let mut labels = BTreeSet::new();
        for (i, ex) in examples.iter().enumerate() {
            match (&ex.target, task) {
                (Target::Label(l), Task::Classify) => {
                    labels.insert(l.clone());
                }
                (Target::Tags(tags), Task::Tag) => {
                    let n = ex.text.chars().count();
                    if tags.len() != n {
                        return Err(Error::Data(format!(
                            "example {i}: {} tags for {n} characters",
                            tags.len()
                        )));
                    }
                    labels.extend(tags.iter().cloned());
                }
                _ => {
                    return Err(Error::Data(format!(
                        "example {i} does not match task {task:?}"
                    )))
                }
            }
        }
        Ok(LabeledDataset {
            task,
            examples,
            labels: labels.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut examples = Vec::new();
        let mut task = None;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            let raw: ExampleLine =
                serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            let (t, target) = match (raw.label, raw.tags) {
                (Some(l), None) => (Task::Classify, Target::Label(l)),
                (None, Some(t)) => (Task::Tag, Target::Tags(t)),
                _ => return Err(parse_err("expected exactly one of label or tags".into())),
            };
            if *task.get_or_insert(t) != t {
                return Err(parse_err("mixed label and tag examples".into()));
            }
            examples.push(Example {
                text: raw.text,
                target,
            });
        }
        Self::new(task.unwrap_or(Task::Classify), examples)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for ex in &self.examples {
            let line = match &ex.target {
                Target::Label(l) => ExampleLine {
                    text: ex.text.clone(),
                    label: Some(l.clone()),
                    tags: None,
                },
                Target::Tags(t) => ExampleLine {
                    text: ex.text.clone(),
                    label: None,
                    tags: Some(t.clone()),
                },
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let text = "{\"text\":\"拨打\",\"label\":\"call\"}\n{\"text\":\"听歌\",\"label\":\"music\"}\n";
        let ds = LabeledDataset::from_jsonl(text).unwrap();
        assert_eq!(ds.task, Task::Classify);
        assert_eq!(ds.labels, ["call", "music"]);
        assert_eq!(ds.to_jsonl().unwrap(), text);

        let tags = "{\"text\":\"北京\",\"tags\":[\"B-LOC\",\"I-LOC\"]}\n";
        let ds = LabeledDataset::from_jsonl(tags).unwrap();
        assert_eq!(ds.task, Task::Tag);
        assert_eq!(ds.label_id("I-LOC"), Some(1));
        assert_eq!(ds.to_jsonl().unwrap(), tags);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(LabeledDataset::from_jsonl("{\"text\":\"北京\",\"tags\":[\"O\"]}\n").is_err());
        assert!(LabeledDataset::from_jsonl("{\"text\":\"a\"}\n").is_err());
        let mixed = "{\"text\":\"a\",\"label\":\"x\"}\n{\"text\":\"a\",\"tags\":[\"O\"]}\n";
        assert!(matches!(
            LabeledDataset::from_jsonl(mixed),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(LabeledDataset::from_jsonl("{\"text\":\"a\",\"label\":\"x\",\"extra\":1}\n").is_err());
    }
}
