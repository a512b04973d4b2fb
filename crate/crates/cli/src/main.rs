mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pmbert::confusion::{EvalSet, PretrainSet};
use pmbert::model::load_checkpoint;
use pmbert::pinyin::{PinyinDict, PinyinMode, PinyinVocab};
use pmbert::train::synthetic::{generate, SyntheticConfig};
use pmbert::train::{
    evaluate_f1, export_embeddings, finetune, inject_noise, noise_rng, pretrain,
    robustness_report, LabeledDataset, Variant,
};
use pmbert::vocab::{read_corpus, CharVocab, Tokenizer};

use config::{Overrides, RunConfig};
use manifest::Manifest;

#[derive(Parser)]
#[command(name = "pmbert", version = manifest::VERSION, about = "Character + pinyin masked-LM pretraining and phonetic-noise robustness experiments")]
struct Cli {
    /// JSON config file (or a run manifest to repeat).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Provenance {
    Pretrain,
    Eval,
}

#[derive(Subcommand)]
enum Command {
    /// Character vocabulary and pinyin vocabulary from a corpus.
    BuildVocab,
    /// Pretraining confusion set from the vocabulary, or evaluation set from
    /// aligned sentence pairs.
    BuildConfusion {
        #[arg(long, value_enum, default_value = "pretrain")]
        provenance: Provenance,
    },
    /// Masked-LM pretraining.
    Pretrain,
    /// Phonetic noise injection into a labeled dataset.
    Noise,
    /// Fine-tune a pretrained checkpoint on a labeled dataset.
    Finetune,
    /// Noise-rate sweep over several pretrained variants.
    Report,
    /// Dump character embeddings.
    ExportEmbeddings,
    /// Generate the synthetic corpus and datasets.
    GenSynthetic,
}

/// Misuse of the command line rather than a failure while running.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn required<'a>(field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    match field {
        Some(p) => Ok(p),
        None => Err(UsageError(format!(
            "missing input `{name}` (set it in the config or pass --{})",
            name.replace('_', "-")
        ))
        .into()),
    }
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn input(&mut self, role: &str) -> Result<PathBuf> {
        let field = match role {
            "corpus" => &self.cfg.corpus,
            "dict" => &self.cfg.dict,
            "vocab" => &self.cfg.vocab,
            "confusion" => &self.cfg.confusion,
            "eval_confusion" => &self.cfg.eval_confusion,
            "eval_pairs" => &self.cfg.eval_pairs,
            "checkpoint" => &self.cfg.checkpoint,
            "data" => &self.cfg.data,
            "train_data" => &self.cfg.train_data,
            "test_data" => &self.cfg.test_data,
            _ => unreachable!("unknown input role {role}"),
        };
        let path = required(field, role)?.to_path_buf();
        self.manifest.input(role, &path)?;
        Ok(path)
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&mut self, name: &str, body: impl AsRef<[u8]>) -> Result<()> {
        let path = self.out_path(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.output(&path)
    }

    fn dict(&mut self) -> Result<PinyinDict> {
        Ok(PinyinDict::load(self.input("dict")?)?)
    }

    /// Tokenizer over the configured vocabulary for `mode`, using the
    /// configured pinyin vocabulary when it matches.
    fn tokenizer(&mut self, mode: PinyinMode) -> Result<Tokenizer> {
        let chars = CharVocab::load(self.input("vocab")?)?;
        let dict = self.dict()?;
        if mode == PinyinMode::None {
            return Ok(Tokenizer::new(chars, dict, mode)?);
        }
        if let Some(path) = self.cfg.pinyin_vocab.clone() {
            let pv = PinyinVocab::load(&path)?;
            if pv.mode == mode {
                self.manifest.input("pinyin_vocab", &path)?;
                return Ok(Tokenizer::with_vocab(chars, dict, Some(pv)));
            }
        }
        Ok(Tokenizer::new(chars, dict, mode)?)
    }
}

fn build_vocab(run: &mut Run) -> Result<()> {
    let corpus = read_corpus(run.input("corpus")?)?;
    let dict = run.dict()?;
    let vocab = CharVocab::build(&corpus, run.cfg.min_freq);
    vocab.save(run.out_path("vocab.tsv"))?;
    run.manifest.output(&run.out_path("vocab.tsv"))?;
    let mut details = serde_json::json!({ "chars": vocab.len() });
    if run.cfg.pinyin_mode != PinyinMode::None {
        let pv = PinyinVocab::build(&dict, run.cfg.pinyin_mode)?;
        details["pinyin_tables"] = serde_json::json!(pv.tables.iter().map(|t| t.len()).collect::<Vec<_>>());
        pv.save(run.out_path("pinyin_vocab.json"))?;
        run.manifest.output(&run.out_path("pinyin_vocab.json"))?;
    }
    run.manifest.details = details;
    Ok(())
}

fn build_confusion(run: &mut Run, provenance: Provenance) -> Result<()> {
    let dict = run.dict()?;
    match provenance {
        Provenance::Pretrain => {
            let vocab = CharVocab::load(run.input("vocab")?)?;
            let cs = PretrainSet::build(&vocab, &dict);
            run.manifest.details = serde_json::json!({ "classes": cs.classes().len() });
            run.write("confusion_pretrain.json", cs.to_json()?)
        }
        Provenance::Eval => {
            if run.cfg.eval_pairs.is_none() {
                return Err(UsageError(
                    "an eval confusion set needs --eval-pairs <file of clean\\tnoisy lines>".into(),
                )
                .into());
            }
            let pairs = run.input("eval_pairs")?;
            let base = match run.cfg.eval_base.clone() {
                Some(p) => {
                    run.manifest.input("eval_base", &p)?;
                    Some(EvalSet::load(&p)?)
                }
                None => None,
            };
            let (cs, stats) = EvalSet::build_from_file(pairs, &dict, base.as_ref())?;
            run.manifest.details = serde_json::to_value(&stats)?;
            run.write("confusion_eval.json", cs.to_json()?)
        }
    }
}

fn cmd_pretrain(run: &mut Run) -> Result<()> {
    let corpus = read_corpus(run.input("corpus")?)?;
    let tok = run.tokenizer(run.cfg.pinyin_mode)?;
    let cs = PretrainSet::load(run.input("confusion")?)?;
    let mcfg = run.cfg.model(tok.chars.len(), tok.pinyin_table_sizes());
    let ckpt = run.out_path("checkpoint.bin");
    let out = pretrain(
        &corpus,
        &tok,
        &cs,
        &mcfg,
        &run.cfg.masking(),
        &run.cfg.train(),
        run.cfg.seed,
        Some(&ckpt),
    )?;
    run.manifest.output(&ckpt)?;
    let mut losses = String::from("step\tloss\n");
    for (step, loss) in &out.run.losses {
        losses.push_str(&format!("{step}\t{loss}\n"));
    }
    run.write("losses.tsv", losses)?;
    run.write("run.json", serde_json::to_string_pretty(&out.run)? + "\n")?;
    run.manifest.details = serde_json::json!({
        "final_loss": out.run.losses.last().map(|(_, l)| *l),
        "parameters": out.params.num_scalars(),
    });
    eprintln!(
        "pretrained {} steps in {:.1}s",
        out.run.losses.len(),
        out.run.wall_clock_secs
    );
    Ok(())
}

fn cmd_noise(run: &mut Run) -> Result<()> {
    let ds = LabeledDataset::load(run.input("data")?)?;
    let cs = EvalSet::load(run.input("eval_confusion")?)?;
    let rate = run.cfg.noise_rate;
    let (noisy, stats) = inject_noise(&ds, rate, &cs, &mut noise_rng(run.cfg.seed, rate, 1))?;
    run.write("noisy.jsonl", noisy.to_jsonl()?)?;
    run.manifest.details = serde_json::to_value(&stats)?;
    Ok(())
}

fn cmd_finetune(run: &mut Run) -> Result<()> {
    let ckpt = load_checkpoint(run.input("checkpoint")?)?;
    let tok = run.tokenizer(ckpt.config.pinyin_mode)?;
    let train = LabeledDataset::load(run.input("train_data")?)?;
    let model = finetune(&ckpt, &tok, &train, &run.cfg.finetune(), run.cfg.seed)?;
    let path = run.out_path("finetuned.bin");
    model.save(&path)?;
    run.manifest.output(&path)?;
    let mut details = serde_json::json!({ "train_f1": evaluate_f1(&model, &tok, &train)? });
    if run.cfg.test_data.is_some() {
        let test = LabeledDataset::load(run.input("test_data")?)?;
        details["test_f1"] = serde_json::json!(evaluate_f1(&model, &tok, &test)?);
    }
    run.write("metrics.json", serde_json::to_string_pretty(&details)? + "\n")?;
    run.manifest.details = details;
    Ok(())
}

fn cmd_report(run: &mut Run) -> Result<()> {
    if run.cfg.variants.is_empty() {
        return Err(UsageError("a report needs at least one --variant name=checkpoint".into()).into());
    }
    let train = LabeledDataset::load(run.input("train_data")?)?;
    let test = LabeledDataset::load(run.input("test_data")?)?;
    let cs = EvalSet::load(run.input("eval_confusion")?)?;
    let mut loaded = Vec::new();
    for entry in run.cfg.variants.clone() {
        let (name, path) = entry.split_once('=').expect("validated");
        run.manifest.input(&format!("variant.{name}"), Path::new(path))?;
        let ckpt = load_checkpoint(path)?;
        let tok = run.tokenizer(ckpt.config.pinyin_mode)?;
        loaded.push((name.to_string(), tok, ckpt));
    }
    let variants: Vec<Variant<'_>> = loaded
        .iter()
        .map(|(name, tok, ckpt)| Variant {
            name,
            tokenizer: tok,
            checkpoint: ckpt,
        })
        .collect();
    let report = robustness_report(&variants, &train, &test, &cs, &run.cfg.report())?;
    let tsv = run.out_path("report.tsv");
    report.save(&tsv)?;
    run.manifest.output(&tsv)?;
    run.manifest.output(&tsv.with_extension("json"))?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn cmd_export(run: &mut Run) -> Result<()> {
    let ckpt = load_checkpoint(run.input("checkpoint")?)?;
    let tok = run.tokenizer(ckpt.config.pinyin_mode)?;
    let chars: Vec<char> = run.cfg.chars.chars().filter(|c| !c.is_whitespace()).collect();
    let table = export_embeddings(&ckpt.params, &tok, &chars);
    run.write("embeddings.tsv", table)
}

fn cmd_gen_synthetic(run: &mut Run) -> Result<()> {
    let syn = match run.cfg.synthetic.clone() {
        Some(p) => {
            run.manifest.input("synthetic", &p)?;
            SyntheticConfig::load(&p)?
        }
        None => SyntheticConfig::default(),
    };
    let dict = run.dict()?;
    let data = generate(&syn, &dict)?;
    data.write_to(&run.out)?;
    for name in pmbert::train::synthetic::SyntheticData::FILES {
        run.manifest.output(&run.out.join(name))?;
    }
    run.manifest.details = serde_json::to_value(&syn)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    let violations = cfg.violations();
    if !violations.is_empty() {
        bail!("invalid configuration:\n  - {}", violations.join("\n  - "));
    }
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;
    let name = match &cli.command {
        Command::BuildVocab => "build-vocab",
        Command::BuildConfusion { .. } => "build-confusion",
        Command::Pretrain => "pretrain",
        Command::Noise => "noise",
        Command::Finetune => "finetune",
        Command::Report => "report",
        Command::ExportEmbeddings => "export-embeddings",
        Command::GenSynthetic => "gen-synthetic",
    };
    let mut run = Run {
        manifest: Manifest::new(name, &cfg)?,
        cfg,
        out: cli.out.clone(),
    };
    match cli.command {
        Command::BuildVocab => build_vocab(&mut run)?,
        Command::BuildConfusion { provenance } => build_confusion(&mut run, provenance)?,
        Command::Pretrain => cmd_pretrain(&mut run)?,
        Command::Noise => cmd_noise(&mut run)?,
        Command::Finetune => cmd_finetune(&mut run)?,
        Command::Report => cmd_report(&mut run)?,
        Command::ExportEmbeddings => cmd_export(&mut run)?,
        Command::GenSynthetic => cmd_gen_synthetic(&mut run)?,
    }
    run.manifest.write(&run.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
