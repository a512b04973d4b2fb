use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const DICT: &str = "拨\tbo1\n播\tbo1\n打\tda3\n大\tda4\n电\tdian4\n店\tdian4\n话\thua4\n画\thua4\n是\tshi4\n就\tjiu4\n九\tjiu3\n";
const CORPUS: &str = "拨打电话\n就是大店\n播画九是\n电话就打\n大画是店\n";

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("dict.tsv"), DICT).unwrap();
        std::fs::write(dir.path().join("corpus.txt"), CORPUS).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_pmbert"))
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn vocab(&self) {
        self.ok(&["build-vocab", "--corpus", "corpus.txt", "--dict", "dict.tsv", "--out", "v"]);
    }

    fn pretrain(&self, out: &str) {
        self.vocab();
        self.ok(&["build-confusion", "--vocab", "v/vocab.tsv", "--dict", "dict.tsv", "--out", "cs"]);
        self.ok(&[
            "pretrain",
            "--corpus", "corpus.txt",
            "--dict", "dict.tsv",
            "--vocab", "v/vocab.tsv",
            "--pinyin-vocab", "v/pinyin_vocab.json",
            "--confusion", "cs/confusion_pretrain.json",
            "--hidden", "8", "--heads", "2", "--layers", "1", "--ffn", "16", "--max-len", "16",
            "--steps", "20", "--batch-size", "2",
            "--out", out,
        ]);
    }
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn manifest(p: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_slice(&read(p.as_ref().join("manifest.json"))).unwrap()
}

#[test]
fn build_vocab_writes_both_vocabularies() {
    let f = Fixture::new();
    f.vocab();
    let vocab = String::from_utf8(read(f.path("v/vocab.tsv"))).unwrap();
    assert!(vocab.contains('拨') && vocab.contains('画'));
    assert!(f.path("v/pinyin_vocab.json").exists());
    let m = manifest(f.path("v"));
    assert_eq!(m["command"], "build-vocab");
    assert!(m["outputs"].as_object().unwrap().len() == 2);
}

#[test]
fn missing_corpus_names_the_path() {
    let f = Fixture::new();
    let out = f.run(&["build-vocab", "--corpus", "nowhere.txt", "--dict", "dict.tsv", "--out", "v"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.txt"));
}

#[test]
fn rerun_is_byte_identical() {
    let f = Fixture::new();
    f.vocab();
    let first = (read(f.path("v/vocab.tsv")), read(f.path("v/pinyin_vocab.json")));
    f.vocab();
    assert_eq!(first, (read(f.path("v/vocab.tsv")), read(f.path("v/pinyin_vocab.json"))));
}

#[test]
fn eval_set_without_pairs_is_a_usage_error() {
    let f = Fixture::new();
    let out = f.run(&["build-confusion", "--provenance", "eval", "--dict", "dict.tsv", "--out", "cs"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--eval-pairs"));
}

#[test]
fn eval_counts_match_hand_tally() {
    let f = Fixture::new();
    std::fs::write(f.path("pairs.tsv"), "拨打电话\t播打电话\n拨打\t播大\n就是\t九是\n").unwrap();
    f.ok(&[
        "build-confusion", "--provenance", "eval",
        "--dict", "dict.tsv", "--eval-pairs", "pairs.tsv", "--out", "cs",
    ]);
    let cs: serde_json::Value = serde_json::from_slice(&read(f.path("cs/confusion_eval.json"))).unwrap();
    assert_eq!(cs["provenance"], "eval");
    let pairs = &cs["pairs"];
    assert_eq!(pairs["拨"], serde_json::json!([["播", 2.0]]));
    assert_eq!(pairs["打"], serde_json::json!([["大", 1.0]]));
    assert_eq!(pairs["就"], serde_json::json!([["九", 1.0]]));
    assert_eq!(pairs.as_object().unwrap().len(), 3);
    let m = manifest(f.path("cs"));
    assert_eq!(m["details"]["pairs_read"], 3);
    assert_eq!(m["details"]["substitutions"], 4);
}

#[test]
fn pretraining_twice_gives_identical_checkpoints() {
    let f = Fixture::new();
    f.pretrain("a");
    f.pretrain("b");
    assert_eq!(read(f.path("a/checkpoint.bin")), read(f.path("b/checkpoint.bin")));
    assert_eq!(read(f.path("a/losses.tsv")), read(f.path("b/losses.tsv")));
    let m = manifest(f.path("a"));
    assert_eq!(
        m["outputs"]["checkpoint.bin"]["sha256"],
        manifest(f.path("b"))["outputs"]["checkpoint.bin"]["sha256"]
    );
}

#[test]
fn report_has_a_row_per_variant_and_rate() {
    let f = Fixture::new();
    f.pretrain("a");
    f.ok(&[
        "pretrain",
        "--corpus", "corpus.txt", "--dict", "dict.tsv", "--vocab", "v/vocab.tsv",
        "--confusion", "cs/confusion_pretrain.json",
        "--pinyin-mode", "none", "--scheme", "confusion_only", "--replacement", "random_token",
        "--hidden", "8", "--heads", "2", "--layers", "1", "--ffn", "16", "--max-len", "16",
        "--steps", "10", "--batch-size", "2", "--out", "base",
    ]);
    std::fs::write(f.path("pairs.tsv"), "拨打电话\t播打店话\n就是\t九是\n").unwrap();
    f.ok(&[
        "build-confusion", "--provenance", "eval",
        "--dict", "dict.tsv", "--eval-pairs", "pairs.tsv", "--out", "ev",
    ]);
    let data = "{\"text\":\"拨打电话\",\"label\":\"call\"}\n{\"text\":\"就是大店\",\"label\":\"shop\"}\n";
    std::fs::write(f.path("train.jsonl"), data).unwrap();
    f.ok(&[
        "report",
        "--dict", "dict.tsv", "--vocab", "v/vocab.tsv", "--pinyin-vocab", "v/pinyin_vocab.json",
        "--eval-confusion", "ev/confusion_eval.json",
        "--train-data", "train.jsonl", "--test-data", "train.jsonl",
        "--variant", "po=a/checkpoint.bin", "--variant", "base=base/checkpoint.bin",
        "--rates", "0,0.1,0.2,0.5", "--epochs", "1",
        "--out", "r",
    ]);
    let tsv = String::from_utf8(read(f.path("r/report.tsv"))).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "variant\trate\tf1");
    assert_eq!(lines.len(), 9);
    assert!(f.path("r/report.json").exists());
}

#[test]
fn override_is_recorded_in_manifest() {
    let f = Fixture::new();
    f.ok(&[
        "build-vocab", "--corpus", "corpus.txt", "--dict", "dict.tsv",
        "--select-rate", "0.45", "--out", "v",
    ]);
    let m = manifest(f.path("v"));
    assert_eq!(m["config"]["select_rate"], 0.45);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["inputs"]["corpus"]["path"], "corpus.txt");
}

#[test]
fn unknown_config_key_is_rejected() {
    let f = Fixture::new();
    std::fs::write(f.path("run.json"), "{\"seed\": 1, \"select_rat\": 0.2}").unwrap();
    let out = f.run(&["--config", "run.json", "build-vocab", "--out", "v"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("select_rat"));
}

#[test]
fn validation_lists_every_violation() {
    let f = Fixture::new();
    std::fs::write(f.path("run.json"), "{\"select_rate\": 1.5, \"hidden\": 10, \"heads\": 4, \"lr\": -1.0}")
        .unwrap();
    let out = f.run(&["--config", "run.json", "build-vocab", "--out", "v"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.matches("\n  - ").count() >= 3, "{err}");
    assert!(!f.path("v").exists());
}
