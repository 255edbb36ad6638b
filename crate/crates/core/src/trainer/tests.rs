use super::*;
use crate::dataset::{build_vocab, prepare_all};
use crate::model::{init_params, Positional};
use crate::stg::{default_schema_e, generate_e, Split};
use crate::supervision::TokenAdjacency;

fn setup(n: usize) -> (ModelConfig, ParamStore<f32>, Vec<PreparedExample>) {
    let ex = generate_e(&default_schema_e(), n, Split::IidTrain, 7).unwrap();
    let vocab = build_vocab(&ex).unwrap();
    let data = prepare_all(&ex, &vocab, LossMask::AnswerOnly);
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        n_heads: 2,
        d_k: 8,
        d_v: 8,
        n_layers: 1,
        max_seq_len: 96,
        ffn_mult: 2,
        positional: Positional::Sinusoidal,
    };
    let params = init_params(&cfg, 1).unwrap();
    (cfg, params, data)
}

fn small(mode: Mode) -> TrainConfig {
    TrainConfig { mode, epochs: 4, batch_size: 4, lr: 1e-2, ..Default::default() }
}

fn no_hook() -> impl FnMut(usize, &ParamStore<f32>, Option<&LoraSet<f32>>) -> Option<f64> {
    |_, _, _| None
}

#[test]
fn gamma_logged_per_epoch() {
    let (m, mut p, data) = setup(8);
    let (rec, _) = train(&m, &mut p, None, &data, &small(Mode::Cat), &mut no_hook()).unwrap();
    for (i, e) in rec.epochs.iter().enumerate() {
        assert_eq!(e.gamma, (-(i as f64)).exp());
    }
    assert!(rec.steps.iter().all(|s| s.gamma == (-(s.epoch as f64)).exp()));
    assert!(rec.steps.iter().all(|s| s.l_attn >= 0.0));
    assert_eq!(rec.steps.len(), 4 * 2);
}

#[test]
fn zero_gamma_matches_vanilla_bit_for_bit() {
    let (m, p0, data) = setup(8);
    let mut cat_cfg = small(Mode::Cat);
    cat_cfg.gamma_schedule = "constant".into();
    cat_cfg.gamma_value = 0.0;
    let mut a = p0.clone();
    let (ra, _) = train(&m, &mut a, None, &data, &cat_cfg, &mut no_hook()).unwrap();
    let mut b = p0.clone();
    let (rb, _) = train(&m, &mut b, None, &data, &small(Mode::Vanilla), &mut no_hook()).unwrap();
    assert!(ra.same_trace(&rb));
    assert_eq!(a, b);
    assert_ne!(a, p0);
}

#[test]
fn tiny_alpha_is_inactive_hinge() {
    let (m, p0, data) = setup(8);
    let mut a = p0.clone();
    let cfg = TrainConfig { alpha: 1e-12, ..small(Mode::Cat) };
    let (ra, _) = train(&m, &mut a, None, &data, &cfg, &mut no_hook()).unwrap();
    assert!(ra.steps.iter().all(|s| s.l_attn == 0.0));
    let mut b = p0.clone();
    train(&m, &mut b, None, &data, &TrainConfig { alpha: 1e-12, ..small(Mode::Vanilla) }, &mut no_hook()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn deterministic() {
    let (m, p0, data) = setup(6);
    let mut a = p0.clone();
    let mut b = p0.clone();
    let (ra, _) = train(&m, &mut a, None, &data, &small(Mode::Cat), &mut no_hook()).unwrap();
    let (rb, _) = train(&m, &mut b, None, &data, &small(Mode::Cat), &mut no_hook()).unwrap();
    assert!(ra.same_trace(&rb));
    assert_eq!(a, b);
}

#[test]
fn empty_adjacency_gives_zero_attention_loss() {
    let (m, mut p, mut data) = setup(6);
    for d in &mut data {
        d.adjacency = TokenAdjacency::empty(d.input_ids.len());
    }
    let (rec, _) = train(&m, &mut p, None, &data, &small(Mode::Cat), &mut no_hook()).unwrap();
    assert!(rec.steps.iter().all(|s| s.l_attn == 0.0 && s.supervised_rows == 0));
}

#[test]
fn attention_loss_reaches_projections() {
    let (m, p, data) = setup(1);
    let mut g = Graph::new();
    let out = Transformer::new(&m, &p).forward(&mut g, &data[0].input_ids).unwrap();
    let terms = attn_ratio_terms(&mut g, &data[0].adjacency, out.capture.average).unwrap();
    assert!(!terms.terms.is_empty());
    let loss = re_attention_loss(&mut g, &terms, 1e3).unwrap();
    let grads = g.backward(loss).unwrap();
    let names: Vec<&str> = p.iter().map(|(n, _)| n).collect();
    let nonzero = names.iter().zip(&out.params).any(|(n, &v)| {
        (n.ends_with(".wq") || n.ends_with(".wk")) && grads.get(v).is_some_and(|g| g.iter().any(|&x| x != 0.0))
    });
    assert!(nonzero);
}

#[test]
fn errors() {
    let (m, mut p, data) = setup(4);
    assert!(matches!(
        train(&m, &mut p, None, &[], &small(Mode::Cat), &mut no_hook()),
        Err(TrainError::EmptyDataset)
    ));
    let bad = TrainConfig { alpha: 0.0, ..small(Mode::Cat) };
    assert!(matches!(train(&m, &mut p, None, &data, &bad, &mut no_hook()), Err(TrainError::Config(_))));
    let bad = TrainConfig { gamma_schedule: "nope".into(), ..small(Mode::Cat) };
    assert!(matches!(train(&m, &mut p, None, &data, &bad, &mut no_hook()), Err(TrainError::Schedule(_))));

    p.get_mut("lm_head").unwrap().data_mut()[0] = f32::NAN;
    assert!(matches!(
        train(&m, &mut p, None, &data, &small(Mode::Cat), &mut no_hook()),
        Err(TrainError::NonFinite { epoch: 0, batch: 0 })
    ));
}

#[test]
fn lora_training_freezes_base() {
    let (m, p0, data) = setup(4);
    let mut p = p0.clone();
    let lora0 = LoraSet::init(&m, LoraConfig { rank: 2, ..Default::default() }, 1).unwrap();
    let mut lora = lora0.clone();
    let mut epochs_seen = Vec::new();
    let mut hook = |e: usize, _: &ParamStore<f32>, l: Option<&LoraSet<f32>>| {
        assert!(l.is_some());
        epochs_seen.push(e);
        Some(0.5)
    };
    let (rec, _) = train(&m, &mut p, Some(&mut lora), &data, &small(Mode::Cat), &mut hook).unwrap();
    assert_eq!(p, p0);
    assert_ne!(lora, lora0);
    assert_eq!(epochs_seen, vec![0, 1, 2, 3]);
    assert_eq!(rec.epochs[0].valid_accuracy, Some(0.5));
}

#[test]
fn record_lines() {
    let (m, mut p, data) = setup(4);
    let (rec, _) = train(&m, &mut p, None, &data, &small(Mode::Vanilla), &mut no_hook()).unwrap();
    let text = rec.to_jsonl();
    let kinds: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.first().unwrap(), "config");
    assert_eq!(kinds.last().unwrap(), "summary");
    assert_eq!(kinds.iter().filter(|k| *k == "step").count(), rec.steps.len());
}
