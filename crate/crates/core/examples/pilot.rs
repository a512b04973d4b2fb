//! Pilot run on the synthetic corpus: pretrains the ParallelOut model and the
//! character-only baseline, then prints the noise sweep and the recovery probe.
//!
//! cargo run --release -p pmbert --example pilot -- [steps] [seed]

use std::time::Instant;

use pmbert::confusion::{EvalSet, PretrainSet};
use pmbert::masking::{Branch, MaskingConfig, Replacement, Scheme};
use pmbert::model::{Checkpoint, ModelConfig};
use pmbert::pinyin::{PinyinDict, PinyinMode};
use pmbert::train::synthetic::{generate, SyntheticConfig};
use pmbert::train::{
    pretrain, recovery_probe, robustness_report, FinetuneConfig, ReportConfig, TrainConfig,
    Variant,
};
use pmbert::vocab::{CharVocab, Tokenizer};

fn main() -> pmbert::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map_or(1000, |s| s.parse().unwrap());
    let seed: u64 = args.get(2).map_or(1, |s| s.parse().unwrap());
    let hidden: usize = std::env::var("HIDDEN").map_or(32, |s| s.parse().unwrap());

    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");
    let dict = PinyinDict::load(format!("{root}/pinyin_dict.tsv"))?;
    let syn = SyntheticConfig::load(format!("{root}/synthetic.json"))?;
    let data = generate(&syn, &dict)?;
    let vocab = CharVocab::build(&data.corpus, 1);
    let cs = PretrainSet::build(&vocab, &dict);
    let (eval, _) = EvalSet::from_pairs_text(&data.eval_pairs.join("\n"), &dict, None)?;

    let tcfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let mut ckpts = Vec::new();
    for (mode, scheme, replacement) in [
        (PinyinMode::Plain, Scheme::ParallelOut, Replacement::ConfusionSet),
        (PinyinMode::None, Scheme::ConfusionOnly, Replacement::RandomToken),
    ] {
        let tok = Tokenizer::new(vocab.clone(), dict.clone(), mode)?;
        let mcfg = ModelConfig {
            layers: 2,
            heads: 4,
            hidden,
            ffn: 4 * hidden,
            max_len: 32,
            char_vocab_size: vocab.len(),
            pinyin_mode: mode,
            pinyin_table_sizes: tok.pinyin_table_sizes(),
            dropout: 0.1,
            scheme,
        };
        let kcfg = MaskingConfig {
            scheme,
            replacement,
            ..MaskingConfig::default()
        };
        let t = Instant::now();
        let out = pretrain(&data.corpus, &tok, &cs, &mcfg, &kcfg, &tcfg, seed, None)?;
        let (first, last) = out.run.loss_ends(50).unwrap();
        println!(
            "{mode}: {steps} steps in {:.1}s, loss {first:.3} -> {last:.3}",
            t.elapsed().as_secs_f64()
        );
        let ckpt = Checkpoint {
            config: mcfg,
            params: out.params,
            metadata: serde_json::Value::Null,
        };
        if mode != PinyinMode::None {
            for branch in [Branch::TokenMask, Branch::TogetherMask] {
                let r = recovery_probe(&ckpt, &tok, &data.heldout, branch, 0.3, seed)?;
                println!("  probe {branch:?}: {}/{} = {:.3}", r.correct, r.total, r.accuracy());
            }
        }
        ckpts.push((mode.to_string(), tok, ckpt));
    }
    let variants: Vec<Variant<'_>> = ckpts
        .iter()
        .map(|(n, tok, c)| Variant {
            name: n,
            tokenizer: tok,
            checkpoint: c,
        })
        .collect();
    let cfg = ReportConfig {
        rates: vec![0.0, 0.2, 0.5],
        seeds: vec![seed],
        finetune: FinetuneConfig {
            epochs: std::env::var("EPOCHS").map_or(10, |s| s.parse().unwrap()),
            ..FinetuneConfig::default()
        },
        noise_train: true,
        dataset_id: "synthetic-classify".into(),
    };
    let t = Instant::now();
    let report = robustness_report(
        &variants,
        &data.classify_train,
        &data.classify_test,
        &eval,
        &cfg,
    )?;
    println!("report in {:.1}s", t.elapsed().as_secs_f64());
    print!("{}", report.to_tsv());
    Ok(())
}
