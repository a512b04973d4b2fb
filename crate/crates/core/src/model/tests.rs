use super::*;
use crate::masking::{Branch, MaskedInstance, Scheme, IGNORE};
use crate::pinyin::PinyinMode;
use crate::vocab::{CLS_ID, PAD_ID, SEP_ID};
use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Rng8 = ChaCha8Rng;

fn no_rng() -> Option<&'static mut Rng8> {
    None
}

fn cfg(mode: PinyinMode, scheme: Scheme, hidden: usize, layers: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        layers,
        heads,
        hidden,
        ffn: 2 * hidden,
        max_len: 10,
        char_vocab_size: 12,
        pinyin_mode: mode,
        pinyin_table_sizes: vec![7; mode.components()],
        dropout: 0.1,
        scheme,
    }
}

/// Rescales parameters away from the tiny init so every path carries signal.
fn perturbed(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = Rng8::seed_from_u64(seed);
    let mut p = ModelParams::init(cfg, &mut rng).unwrap();
    use rand::Rng;
    for t in &mut p.tensors {
        let base = if t.name.ends_with("gamma") { 1.0 } else { 0.0 };
        t.value.mapv_inplace(|_| base + rng.gen_range(-0.5..0.5));
    }
    p
}

fn instance(components: usize) -> MaskedInstance {
    let chars = vec![CLS_ID, 4, 7, 9, 5, 11, SEP_ID, PAD_ID];
    let len = chars.len();
    let pinyin: Vec<Vec<usize>> = (0..len).map(|i| vec![(i * 3 + 1) % 7; components]).collect();
    let mut token_labels = vec![IGNORE; len];
    token_labels[1] = 6;
    token_labels[3] = 9;
    token_labels[4] = 5;
    let mut pinyin_labels = vec![vec![IGNORE; components]; len];
    pinyin_labels[1] = vec![4; components];
    pinyin_labels[2] = vec![3; components];
    let mut log = vec![Branch::NotCandidate; len];
    log[1] = Branch::TogetherMask;
    log[2] = Branch::PinyinMask;
    log[3] = Branch::ConfusionReplace;
    log[4] = Branch::Unchanged;
    MaskedInstance {
        input_char_ids: chars,
        input_pinyin_ids: pinyin,
        segment_ids: vec![0; len],
        token_labels,
        pinyin_labels,
        corruption_log: log,
    }
}

fn eval_loss(p: &ModelParams, cfg: &ModelConfig, inst: &MaskedInstance) -> f64 {
    let fwd = forward(p, cfg, inst.into(), no_rng()).unwrap();
    mlm_loss(p, cfg, &fwd.hidden, inst).total
}

#[test]
fn config_checks() {
    assert!(ModelConfig::default().validate().is_ok());
    let bad = ModelConfig {
        hidden: 10,
        heads: 4,
        dropout: 1.0,
        pinyin_table_sizes: vec![],
        ..Default::default()
    };
    assert_eq!(bad.violations().len(), 3);
    let incompatible = ModelConfig {
        pinyin_mode: PinyinMode::None,
        pinyin_table_sizes: vec![],
        scheme: Scheme::Parallel,
        ..Default::default()
    };
    assert!(incompatible.validate().is_err());
}

#[test]
fn baseline_has_no_pinyin_parameters() {
    let c = cfg(PinyinMode::None, Scheme::ConfusionOnly, 8, 1, 2);
    let p = ModelParams::init(&c, &mut Rng8::seed_from_u64(0)).unwrap();
    assert!(p.tensors.iter().all(|t| !t.name.contains("pinyin")));
    assert!(p.layout.pinyin_embeds.is_empty() && p.layout.pinyin_heads.is_empty());
    let parallel = cfg(PinyinMode::Plain, Scheme::Parallel, 8, 1, 2);
    let p = ModelParams::init(&parallel, &mut Rng8::seed_from_u64(0)).unwrap();
    assert_eq!(p.layout.pinyin_embeds.len(), 1);
    assert!(p.layout.pinyin_heads.is_empty());
}

#[test]
fn init_is_truncated_normal() {
    let c = ModelConfig {
        char_vocab_size: 500,
        ..Default::default()
    };
    let p = ModelParams::init(&c, &mut Rng8::seed_from_u64(0)).unwrap();
    let e = p.get(p.layout.char_embed);
    assert!(e.iter().all(|v| v.abs() <= 0.04));
    let std = (e.mapv(|v| v * v).sum() / e.len() as f64).sqrt();
    assert!((0.015..0.02).contains(&std), "std {std}");
    let l = &p.layout.layers[0];
    assert!(p.get(l.ln1_gamma).iter().all(|v| *v == 1.0));
    assert!(p.get(l.bq).iter().all(|v| *v == 0.0));
}

fn two_dim_params(mode: PinyinMode) -> (ModelConfig, ModelParams) {
    let c = ModelConfig {
        layers: 0,
        heads: 1,
        hidden: 2,
        ffn: 2,
        max_len: 4,
        char_vocab_size: 6,
        pinyin_mode: mode,
        pinyin_table_sizes: vec![4; mode.components()],
        dropout: 0.0,
        scheme: if mode == PinyinMode::None {
            Scheme::ConfusionOnly
        } else {
            Scheme::Parallel
        },
    };
    let mut p = ModelParams::init(&c, &mut Rng8::seed_from_u64(0)).unwrap();
    for t in &mut p.tensors {
        t.value.fill(0.0);
    }
    (c, p)
}

#[test]
fn embedding_hand_sum() {
    let (_, mut p) = two_dim_params(PinyinMode::Plain);
    let lay = p.layout.clone();
    p.tensors[lay.char_embed].value.row_mut(5).assign(&array![1.0, 0.0]);
    p.tensors[lay.pinyin_embeds[0]].value.row_mut(3).assign(&array![0.0, 1.0]);
    p.tensors[lay.pos_embed].value.row_mut(0).assign(&array![1.0, 1.0]);
    let input = ModelInput {
        char_ids: &[5],
        pinyin_ids: &[vec![3]],
        segment_ids: &[0],
    };
    assert_eq!(embed(&p, input).unwrap(), array![[2.0, 2.0]]);
}

#[test]
fn zero_tables_give_zero_embedding() {
    let (_, p) = two_dim_params(PinyinMode::InitFinalTone);
    let rows = vec![vec![1, 2, 3], vec![0, 0, 0]];
    let input = ModelInput {
        char_ids: &[5, 2],
        pinyin_ids: &rows,
        segment_ids: &[0, 1],
    };
    assert_eq!(embed(&p, input).unwrap(), Array2::<f64>::zeros((2, 2)));
}

#[test]
fn zeroed_pinyin_table_equals_character_only() {
    let c_plain = cfg(PinyinMode::Plain, Scheme::Parallel, 8, 1, 2);
    let mut plain = perturbed(&c_plain, 3);
    let idx = plain.layout.pinyin_embeds[0];
    plain.tensors[idx].value.fill(0.0);
    let c_none = cfg(PinyinMode::None, Scheme::ConfusionOnly, 8, 1, 2);
    let mut none = ModelParams::init(&c_none, &mut Rng8::seed_from_u64(0)).unwrap();
    for t in &mut none.tensors {
        t.value = plain
            .tensors
            .iter()
            .find(|u| u.name == t.name)
            .unwrap()
            .value
            .clone();
    }
    let with = instance(1);
    let without = MaskedInstance {
        input_pinyin_ids: vec![vec![]; with.len()],
        pinyin_labels: vec![vec![]; with.len()],
        ..with.clone()
    };
    let a = embed(&plain, (&with).into()).unwrap();
    let b = embed(&none, (&without).into()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn embedding_is_additive_per_table() {
    let c = cfg(PinyinMode::InitFinal, Scheme::ParallelOut, 8, 1, 2);
    let p = perturbed(&c, 4);
    let inst = instance(2);
    let full = embed(&p, (&inst).into()).unwrap();
    let mut zeroed = p.clone();
    let table = p.layout.pinyin_embeds[1];
    zeroed.tensors[table].value.fill(0.0);
    let partial = embed(&zeroed, (&inst).into()).unwrap();
    let diff = &full - &partial;
    for (i, row) in diff.rows().into_iter().enumerate() {
        let id = inst.input_pinyin_ids[i][1];
        let expected = p.get(table).row(id);
        for (a, b) in row.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn out_of_range_ids_are_errors() {
    let (_, p) = two_dim_params(PinyinMode::None);
    let input = ModelInput {
        char_ids: &[9],
        pinyin_ids: &[vec![]],
        segment_ids: &[0],
    };
    assert!(matches!(embed(&p, input), Err(crate::Error::IndexOutOfRange { id: 9, .. })));
}

#[test]
fn zero_layers_is_identity() {
    let c = cfg(PinyinMode::Plain, Scheme::Parallel, 8, 0, 2);
    let p = perturbed(&c, 1);
    let inst = instance(1);
    let h = embed(&p, (&inst).into()).unwrap();
    let fwd = encode(&p, &c, h.clone(), &ModelInput::from(&inst).key_mask(), no_rng()).unwrap();
    assert_eq!(fwd.hidden, h);
}

#[test]
fn eval_forward_is_deterministic_and_attention_normalized() {
    let c = cfg(PinyinMode::Plain, Scheme::ParallelOut, 8, 2, 2);
    let p = perturbed(&c, 5);
    let inst = instance(1);
    let a = forward(&p, &c, (&inst).into(), no_rng()).unwrap();
    let b = forward(&p, &c, (&inst).into(), no_rng()).unwrap();
    assert_eq!(a.hidden, b.hidden);
    for layer in 0..2 {
        for probs in a.cache.attention(layer) {
            for (i, row) in probs.rows().into_iter().enumerate() {
                if inst.input_char_ids[i] != PAD_ID {
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                }
                assert_eq!(row[7], 0.0, "padded key must get no weight");
            }
        }
    }
}

#[test]
fn padding_never_leaks_into_real_positions() {
    let c = cfg(PinyinMode::InitFinal, Scheme::ParallelOut, 8, 2, 2);
    let p = perturbed(&c, 6);
    let inst = instance(2);
    let mut other = inst.clone();
    other.input_pinyin_ids[7] = vec![5, 6];
    other.segment_ids[7] = 1;
    let a = forward(&p, &c, (&inst).into(), no_rng()).unwrap().hidden;
    let b = forward(&p, &c, (&other).into(), no_rng()).unwrap().hidden;
    for i in 0..7 {
        assert_eq!(a.row(i), b.row(i));
    }
}

#[test]
fn dropout_only_in_training() {
    let c = cfg(PinyinMode::Plain, Scheme::Parallel, 8, 1, 2);
    let p = perturbed(&c, 7);
    let inst = instance(1);
    let eval = forward(&p, &c, (&inst).into(), no_rng()).unwrap().hidden;
    let mut rng = Rng8::seed_from_u64(1);
    let train = forward(&p, &c, (&inst).into(), Some(&mut rng)).unwrap().hidden;
    assert_ne!(eval, train);
}

#[test]
fn uniform_logits_give_log_vocab() {
    let c = cfg(PinyinMode::None, Scheme::ConfusionOnly, 8, 1, 2);
    let mut p = perturbed(&c, 8);
    let (w, b) = p.layout.token_head;
    p.tensors[w].value.fill(0.0);
    p.tensors[b].value.fill(0.0);
    let mut inst = MaskedInstance::unmasked(&crate::vocab::TokenSequence {
        char_ids: vec![CLS_ID, 6, SEP_ID],
        pinyin_ids: vec![vec![]; 3],
        segment_ids: vec![0; 3],
    });
    inst.token_labels[1] = 6;
    let loss = eval_loss(&p, &c, &inst);
    assert!((loss - (c.char_vocab_size as f64).ln()).abs() < 1e-12);
}

#[test]
fn hand_computed_mean_cross_entropy() {
    // hidden rows are one-hot, so logits are rows of the head weight.
    let c = ModelConfig {
        layers: 0,
        heads: 1,
        hidden: 2,
        ffn: 2,
        max_len: 4,
        char_vocab_size: 3,
        pinyin_mode: PinyinMode::None,
        pinyin_table_sizes: vec![],
        dropout: 0.0,
        scheme: Scheme::ConfusionOnly,
    };
    let mut p = ModelParams::init(&c, &mut Rng8::seed_from_u64(0)).unwrap();
    let (w, _) = p.layout.token_head;
    p.tensors[w].value = array![[1.0, 2.0, 0.0], [0.0, 0.0, 3.0]];
    let hidden = array![[1.0, 0.0], [0.0, 1.0]];
    let inst = MaskedInstance {
        input_char_ids: vec![0, 0],
        input_pinyin_ids: vec![vec![], vec![]],
        segment_ids: vec![0, 0],
        token_labels: vec![0, 2],
        pinyin_labels: vec![vec![], vec![]],
        corruption_log: vec![Branch::TokenMask; 2],
    };
    let lse = |v: &[f64]| v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
    let expected = ((lse(&[1.0, 2.0, 0.0]) - 1.0) + (lse(&[0.0, 0.0, 3.0]) - 3.0)) / 2.0;
    let got = mlm_loss(&p, &c, &hidden, &inst);
    assert!((got.token - expected).abs() < 1e-12);
    assert_eq!(got.token_count, 2);
}

#[test]
fn unlabeled_instance_has_zero_loss_and_gradient() {
    let c = cfg(PinyinMode::Plain, Scheme::ParallelOut, 8, 1, 2);
    let p = perturbed(&c, 9);
    let inst = MaskedInstance {
        token_labels: vec![IGNORE; 8],
        pinyin_labels: vec![vec![IGNORE]; 8],
        ..instance(1)
    };
    let (loss, grads) = mlm_backward(&p, &c, &inst, no_rng()).unwrap();
    assert_eq!(loss.total, 0.0);
    assert!(!loss.counted());
    assert_eq!(grads.max_abs(), 0.0);
}

#[test]
fn pinyin_head_unused_without_out_scheme() {
    let c = cfg(PinyinMode::Plain, Scheme::Parallel, 8, 1, 2);
    let p = perturbed(&c, 10);
    let (loss, _) = mlm_backward(&p, &c, &instance(1), no_rng()).unwrap();
    assert!(loss.pinyin.is_empty());
    assert_eq!(loss.total, loss.token);
    // With the head present but the scheme not using it, its gradient is exactly zero.
    let out = cfg(PinyinMode::Plain, Scheme::ParallelOut, 8, 1, 2);
    let p = perturbed(&out, 10);
    let c_no_head = ModelConfig {
        scheme: Scheme::Parallel,
        ..out.clone()
    };
    let (_, g) = mlm_backward(&p, &c_no_head, &instance(1), no_rng()).unwrap();
    let (w, b) = p.layout.pinyin_heads[0];
    assert_eq!(g.tensors[w].iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
    assert_eq!(g.tensors[b].iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
}

/// Central differences on a handful of entries of every tensor.
#[test]
fn gradients_match_central_differences_with_dropout() {
    let c = cfg(PinyinMode::InitFinalTone, Scheme::ParallelOut, 8, 1, 2);
    let p = perturbed(&c, 11);
    let inst = instance(3);
    let seed = 99;
    let loss_at = |q: &ModelParams| {
        let mut rng = Rng8::seed_from_u64(seed);
        let fwd = forward(q, &c, (&inst).into(), Some(&mut rng)).unwrap();
        mlm_loss(q, &c, &fwd.hidden, &inst).total
    };
    let mut rng = Rng8::seed_from_u64(seed);
    let (_, grads) = mlm_backward(&p, &c, &inst, Some(&mut rng)).unwrap();
    let eps = 1e-5;
    for (ti, t) in p.tensors.iter().enumerate() {
        let n = t.value.len();
        for k in [0, n / 2, n - 1] {
            let (r, col) = (k / t.value.ncols(), k % t.value.ncols());
            let mut plus = p.clone();
            plus.tensors[ti].value[[r, col]] += eps;
            let mut minus = p.clone();
            minus.tensors[ti].value[[r, col]] -= eps;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
            let analytic = grads.tensors[ti][[r, col]];
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            assert!(err < 1e-4, "{} [{r},{col}]: fd {numeric} vs {analytic}", t.name);
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let c = cfg(PinyinMode::InitFinal, Scheme::ParallelOut, 8, 1, 2);
    let mut p = ModelParams::init(&c, &mut Rng8::seed_from_u64(3)).unwrap();
    p.set_task_head(4, &mut Rng8::seed_from_u64(4));
    let meta = serde_json::json!({"labels": ["a", "b"]});
    let bytes = checkpoint_bytes(&c, &p, &meta).unwrap();
    let ck = parse_checkpoint(&bytes).unwrap();
    assert_eq!(ck.config, c);
    assert_eq!(ck.metadata, meta);
    assert_eq!(ck.params.layout, p.layout);
    for (a, b) in ck.params.tensors.iter().zip(&p.tensors) {
        assert_eq!(a.name, b.name);
        assert!(a.value.iter().zip(b.value.iter()).all(|(x, y)| *x == (*y as f32) as f64));
    }
    assert_eq!(checkpoint_bytes(&c, &ck.params, &meta).unwrap(), bytes);
    assert!(parse_checkpoint(&bytes[..bytes.len() - 4]).is_err());
}

#[test]
fn replacing_task_head_keeps_encoder() {
    let c = cfg(PinyinMode::Plain, Scheme::Parallel, 8, 1, 2);
    let mut p = ModelParams::init(&c, &mut Rng8::seed_from_u64(3)).unwrap();
    let n = p.tensors.len();
    p.set_task_head(3, &mut Rng8::seed_from_u64(1));
    p.set_task_head(5, &mut Rng8::seed_from_u64(1));
    assert_eq!(p.tensors.len(), n + 2);
    assert_eq!(p.tensors[n].value.dim(), (8, 5));
}
