use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use cat_annotator::{annotate_file, builtin_templates, EndpointConfig, OpenAiClient, RetryPolicy};
use cat_core::dataset::{prepare_all, LossMask};
use cat_core::evaluator::{attention_by_class, export_heatmap, write_density_csv, EvalReport, FactorClass};
use cat_core::experiment::{accuracy_on, alpha_grid, run, sweep_row, write_sweep_csv, Benchmark};
use cat_core::model::checkpoint::Checkpoint;
use cat_core::model::{init_params, LoraConfig, LoraSet, ModelConfig, ParamStore, Positional, Transformer};
use cat_core::stg::{generate, load_jsonl, save_jsonl, variant_for_answer, variants, GenOptions, Split, StgExample};
use cat_core::tokenizer::Vocab;
use cat_core::trainer::{train, AdamWConfig, Mode, TrainConfig};
use serde_json::json;

use crate::config::Config;

pub const SPLIT_FILES: [(&str, Split); 4] = [
    ("train", Split::IidTrain),
    ("valid", Split::IidValid),
    ("iid_test", Split::IidTest),
    ("ood_test", Split::OodTest),
];

pub fn dispatch(command: &str, cfg: &Config) -> Result<()> {
    init_threads(cfg)?;
    match command {
        "gen" => gen(cfg),
        "annotate" => annotate(cfg),
        "train" => train_cmd(cfg),
        "eval" => eval(cfg),
        "sweep" => sweep(cfg),
        "export-attn" => export_attn(cfg),
        "cost" => cost(cfg),
        other => bail!("unknown command {other:?}"),
    }
}

fn init_threads(cfg: &Config) -> Result<()> {
    let n = cfg.usize("threads")?;
    if n > 0 {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Creates `<out>/<command>-<utc timestamp>-<config hash>` and writes the
/// config snapshot into it.
pub fn create_run_dir(cfg: &Config, command: &str) -> Result<PathBuf> {
    let root = cfg.path("out").unwrap_or_else(|| PathBuf::from("runs"));
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{command}-{stamp}-{}", cfg.hash(command));
    std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    let mut dir = root.join(&base);
    let mut k = 1;
    while dir.exists() {
        dir = root.join(format!("{base}-{k}"));
        k += 1;
    }
    std::fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("config.toml"), cfg.snapshot(command))?;
    eprintln!("[{command}] run directory {}", dir.display());
    println!("{}", dir.display());
    Ok(dir)
}

fn generate_splits(cfg: &Config) -> Result<Vec<(&'static str, Vec<StgExample>)>> {
    let reg = variants();
    let v = reg.get(cfg.str("data.variant"))?;
    let sizes = v.sizes(cfg.str("data.size"))?;
    let schema = v.schema();
    let seed = cfg.u64("seed")?;
    let opts = GenOptions { shuffle_factors: cfg.bool("data.shuffle_factors") };
    let mut out = Vec::new();
    for (name, split) in SPLIT_FILES {
        let n = match split {
            Split::IidTrain => sizes.train,
            Split::IidValid if !cfg.bool("data.with_valid") => continue,
            Split::IidValid | Split::IidTest => sizes.iid_test,
            Split::OodTest => sizes.ood_test,
        };
        out.push((name, generate(&schema, limited(cfg, n)?, split, seed, opts)?));
    }
    Ok(out)
}

fn limited(cfg: &Config, n: usize) -> Result<usize> {
    Ok(match cfg.usize("data.limit")? {
        0 => n,
        k => n.min(k),
    })
}

/// Loads `data.dir` when set, otherwise generates from the data keys.
fn load_benchmark(cfg: &Config) -> Result<(Benchmark, &'static str)> {
    let splits = match cfg.path("data.dir") {
        Some(dir) => {
            let mut out = Vec::new();
            for (name, _) in SPLIT_FILES {
                let p = dir.join(format!("{name}.jsonl"));
                if p.exists() {
                    let mut records = load_jsonl(&p).with_context(|| format!("loading {}", p.display()))?;
                    records.truncate(limited(cfg, records.len())?);
                    out.push((name, records));
                } else if name != "valid" {
                    bail!("{} is missing", p.display());
                }
            }
            out
        }
        None => generate_splits(cfg)?,
    };
    let take = |name: &str| splits.iter().find(|(n, _)| *n == name).map(|(_, v)| v.clone()).unwrap_or_default();
    let (train, valid, iid, ood) = (take("train"), take("valid"), take("iid_test"), take("ood_test"));
    let first = train.first().ok_or_else(|| anyhow!("training split is empty"))?;
    let name = variant_for_answer(&first.answer);
    let kind = variants().get(name)?.answer_kind();
    Ok((Benchmark::from_splits(kind, train, valid, iid, ood)?, name))
}

fn model_config(cfg: &Config, vocab_size: usize) -> Result<ModelConfig> {
    let d_model = cfg.usize("model.d_model")?;
    let n_heads = cfg.usize("model.n_heads")?.max(1);
    let m = ModelConfig {
        vocab_size,
        d_model,
        n_heads,
        d_k: d_model / n_heads,
        d_v: d_model / n_heads,
        n_layers: cfg.usize("model.n_layers")?,
        max_seq_len: cfg.usize("model.max_seq_len")?,
        ffn_mult: cfg.usize("model.ffn_mult")?,
        positional: Positional::Sinusoidal,
    };
    m.validate()?;
    Ok(m)
}

pub fn train_config(cfg: &Config) -> Result<TrainConfig> {
    let tc = TrainConfig {
        mode: cfg.str("train.mode").parse::<Mode>().map_err(|e| anyhow!(e))?,
        alpha: cfg.f64("train.alpha"),
        gamma_schedule: cfg.str("train.gamma_schedule").to_string(),
        gamma_value: cfg.f64("train.gamma_value"),
        lr: cfg.f64("train.lr"),
        warmup: cfg.f64("train.warmup"),
        epochs: cfg.usize("train.epochs")?,
        batch_size: cfg.usize("train.batch_size")?,
        grad_accum: cfg.usize("train.grad_accum")?,
        seed: cfg.u64("seed")?,
        optimizer: AdamWConfig {
            beta1: cfg.f64("train.beta1"),
            beta2: cfg.f64("train.beta2"),
            eps: cfg.f64("train.eps"),
            weight_decay: cfg.f64("train.weight_decay"),
        },
        lora: cfg.bool("train.lora").then(|| LoraConfig {
            rank: cfg.usize("train.lora_rank").unwrap_or(8),
            scale: cfg.f64("train.lora_scale"),
            ..LoraConfig::default()
        }),
        loss_mask: cfg.str("train.loss_mask").parse::<LossMask>().map_err(|e| anyhow!(e))?,
    };
    tc.validate()?;
    Ok(tc)
}

fn check_lengths(bench: &Benchmark, model: &ModelConfig) -> Result<()> {
    let need = bench.max_len();
    if need > model.max_seq_len {
        bail!("longest sequence has {need} tokens but model.max_seq_len is {}", model.max_seq_len);
    }
    Ok(())
}

fn gen(cfg: &Config) -> Result<()> {
    let splits = generate_splits(cfg)?;
    let dir = create_run_dir(cfg, "gen")?;
    for (name, records) in &splits {
        let p = dir.join(format!("{name}.jsonl"));
        save_jsonl(&p, records)?;
        eprintln!("[gen] {} records -> {}", records.len(), p.display());
    }
    let train = &splits[0].1;
    cat_core::dataset::build_vocab(train)?.save(&dir.join("vocab.txt"))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_results(path: &Path, reports: &[(&str, &EvalReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["split", "total", "correct", "accuracy", "unparseable", "within5_accuracy", "mae"])?;
    for (name, r) in reports {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        w.write_record([
            name.to_string(),
            r.total.to_string(),
            r.correct.to_string(),
            format!("{:.6}", r.accuracy),
            r.unparseable.to_string(),
            opt(r.within5_accuracy),
            opt(r.mae),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn named_splits<'b>(bench: &'b Benchmark, list: &str) -> Result<Vec<(&'static str, &'b [StgExample])>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (n, ex): (&'static str, &[StgExample]) = match name {
            "train" => ("train", &bench.train),
            "valid" => ("valid", &bench.valid),
            "iid_test" | "test" | "iid" => ("iid_test", &bench.iid_test),
            "ood_test" | "ood" => ("ood_test", &bench.ood_test),
            other => bail!("unknown split {other:?}"),
        };
        if !ex.is_empty() {
            out.push((n, ex));
        }
    }
    Ok(out)
}

fn evaluate_splits(
    dir: &Path,
    model: &ModelConfig,
    params: &ParamStore<f32>,
    lora: Option<&LoraSet<f32>>,
    vocab: &Vocab,
    bench: &Benchmark,
    list: &str,
    tag: &str,
) -> Result<()> {
    let mut reports = Vec::new();
    for (name, ex) in named_splits(bench, list)? {
        let t = Instant::now();
        let r = accuracy_on(model, params, lora, vocab, ex, bench.kind)?;
        eprintln!("[{tag}] {name}: accuracy {:.4} ({}/{}) in {:.1}s", r.accuracy, r.correct, r.total, t.elapsed().as_secs_f64());
        write_json(&dir.join(format!("eval_{name}.json")), &r)?;
        reports.push((name, r));
    }
    let refs: Vec<(&str, &EvalReport)> = reports.iter().map(|(n, r)| (*n, r)).collect();
    write_results(&dir.join("results.csv"), &refs)
}

fn train_cmd(cfg: &Config) -> Result<()> {
    let (bench, _) = load_benchmark(cfg)?;
    let model = model_config(cfg, bench.vocab.len())?;
    let tc = train_config(cfg)?;
    check_lengths(&bench, &model)?;
    let dir = create_run_dir(cfg, "train")?;
    let data = bench.prepared_train(tc.loss_mask);
    let skipped: usize = data.iter().map(|p| p.report.skipped.len()).sum();
    if skipped > 0 {
        eprintln!("[train] warning: {skipped} causal-map phrases could not be located and were skipped");
    }
    eprintln!(
        "[train] mode {:?}, {} examples, {} parameters, {} epochs",
        tc.mode,
        data.len(),
        model.param_count(),
        tc.epochs
    );
    let mut params = init_params::<f32>(&model, tc.seed)?;
    let mut lora = match &tc.lora {
        Some(l) => Some(LoraSet::init(&model, l.clone(), tc.seed)?),
        None => None,
    };
    let start = Instant::now();
    let mut hook = |epoch: usize, _: &ParamStore<f32>, _: Option<&LoraSet<f32>>| {
        eprintln!("[train] epoch {}/{} done at {:.1}s", epoch + 1, tc.epochs, start.elapsed().as_secs_f64());
        None
    };
    let (record, optimizer) = train(&model, &mut params, lora.as_mut(), &data, &tc, &mut hook)?;
    for e in &record.epochs {
        eprintln!(
            "[train] epoch {} gamma {:.6} l_next {:.5} l_attn {:.5} rows at alpha {:.3}",
            e.epoch, e.gamma, e.l_next, e.l_attn, e.frac_at_alpha
        );
    }
    let ck = Checkpoint {
        config: model.clone(),
        vocab_sha256: bench.vocab.fingerprint(),
        params,
        lora,
        optimizer: Some(optimizer.state()),
        meta: json!({
            "mode": tc.mode,
            "alpha": tc.alpha,
            "seed": tc.seed,
            "epochs": tc.epochs,
            "config_hash": cfg.hash("train"),
        }),
    };
    ck.save(&dir.join("checkpoint.bin"))?;
    bench.vocab.save(&dir.join("vocab.txt"))?;
    std::fs::write(dir.join("run.jsonl"), record.to_jsonl())?;
    if cfg.bool("train.evaluate") {
        evaluate_splits(&dir, &model, &ck.params, ck.lora.as_ref(), &bench.vocab, &bench, "valid,iid_test,ood_test", "train")?;
    }
    eprintln!("[train] done in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn load_checkpoint(cfg: &Config, key: &str) -> Result<(Checkpoint, Vocab)> {
    let path = cfg.path(key).ok_or_else(|| anyhow!("{key} is required (--checkpoint)"))?;
    let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let vocab_path = cfg.path("eval.vocab").unwrap_or_else(|| path.with_file_name("vocab.txt"));
    let vocab = Vocab::load(&vocab_path).with_context(|| format!("loading {}", vocab_path.display()))?;
    ck.check_vocab(&vocab.fingerprint())?;
    Ok((ck, vocab))
}

fn eval(cfg: &Config) -> Result<()> {
    let (ck, vocab) = load_checkpoint(cfg, "eval.checkpoint")?;
    let (bench, _) = load_benchmark(cfg)?;
    let dir = create_run_dir(cfg, "eval")?;
    evaluate_splits(&dir, &ck.config, &ck.params, ck.lora.as_ref(), &vocab, &bench, cfg.str("eval.splits"), "eval")
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad alpha grid {spec:?}: {e}")))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [a] => Ok(vec![*a]),
        [a, b, c] => Ok(alpha_grid(*a, *b, *c)?),
        _ => bail!("alpha grid must be start:stop:step or a single value, got {spec:?}"),
    }
}

fn sweep(cfg: &Config) -> Result<()> {
    let (bench, _) = load_benchmark(cfg)?;
    let model = model_config(cfg, bench.vocab.len())?;
    let base = train_config(cfg)?;
    check_lengths(&bench, &model)?;
    let grid = parse_grid(cfg.str("sweep.alphas"))?;
    let seeds: Vec<u64> = cfg
        .str("sweep.seeds")
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|e| anyhow!("bad seed {s:?}: {e}")))
        .collect::<Result<_>>()?;
    let dir = create_run_dir(cfg, "sweep")?;
    let mut rows = Vec::new();
    let start = Instant::now();
    for &seed in &seeds {
        let mut jobs: Vec<TrainConfig> = Vec::new();
        if cfg.bool("sweep.include_vanilla") {
            jobs.push(TrainConfig { mode: Mode::Vanilla, seed, ..base.clone() });
        }
        jobs.extend(grid.iter().map(|&alpha| TrainConfig { mode: Mode::Cat, alpha, seed, ..base.clone() }));
        for tc in jobs {
            let out = run(&bench, &model, &tc)?;
            let row = sweep_row(&tc, &out);
            eprintln!(
                "[sweep] seed {} {:?} alpha {:.2}: valid {} iid {:.4} ood {:.4} ({:.0}s)",
                row.seed,
                row.mode,
                row.alpha,
                row.valid_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
                row.iid_accuracy,
                row.ood_accuracy,
                start.elapsed().as_secs_f64()
            );
            rows.push(row);
        }
    }
    write_sweep_csv(File::create(dir.join("sweep.csv"))?, &rows)?;
    Ok(())
}

fn export_attn(cfg: &Config) -> Result<()> {
    let (ck, vocab) = load_checkpoint(cfg, "export.checkpoint")?;
    let (bench, variant) = load_benchmark(cfg)?;
    let schema = variants().get(variant)?.schema();
    let split = cfg.str("export.split");
    let examples = named_splits(&bench, split)?
        .into_iter()
        .next()
        .map(|(_, ex)| ex)
        .ok_or_else(|| anyhow!("split {split:?} is empty"))?;
    let prepared = prepare_all(examples, &vocab, LossMask::AnswerOnly);
    let dir = create_run_dir(cfg, "export-attn")?;
    let model = || Transformer::new(&ck.config, &ck.params).with_lora(ck.lora.as_ref());
    for idx in cfg.str("export.examples").split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let i: usize = idx.parse().map_err(|e| anyhow!("bad example index {idx:?}: {e}"))?;
        let p = prepared.get(i).ok_or_else(|| anyhow!("example {i} out of range ({} in split)", prepared.len()))?;
        let path = dir.join(format!("heatmap_{split}_{i}.csv"));
        export_heatmap(BufWriter::new(File::create(&path)?), model(), &vocab, &p.input_ids)?;
        eprintln!("[export-attn] {}", path.display());
    }
    let density = attention_by_class(model(), &vocab, &schema, examples, &prepared)?;
    write_density_csv(BufWriter::new(File::create(dir.join("density.csv"))?), &density, cfg.usize("export.bins")?)?;
    let alpha = cfg.f64("train.alpha");
    let summary = json!({
        "split": split,
        "examples": examples.len(),
        "skipped": density.skipped,
        "causal_mean": density.class_mean(FactorClass::Causal),
        "spurious_mean": density.class_mean(FactorClass::Spurious),
        "irrelevant_mean": density.class_mean(FactorClass::Irrelevant),
        "causal_over_spurious": density.causal_over_spurious(),
        "alpha": alpha,
        "fraction_at_alpha": density.fraction_at_alpha(alpha),
    });
    eprintln!("[export-attn] {summary}");
    write_json(&dir.join("summary.json"), &summary)
}

fn annotate(cfg: &Config) -> Result<()> {
    let input = cfg.path("annotate.input").ok_or_else(|| anyhow!("--in is required"))?;
    let output = cfg.path("annotate.output").ok_or_else(|| anyhow!("--out is required"))?;
    if input == output {
        bail!("--in and --out must differ");
    }
    let templates = builtin_templates();
    let template = templates.get(cfg.str("annotate.template"))?;
    let endpoint = EndpointConfig::from_env()?;
    eprintln!("[annotate] endpoint {endpoint:?}");
    let client = Arc::new(OpenAiClient::new(endpoint)?);
    let retry = RetryPolicy {
        max_attempts: cfg.usize("annotate.retries")?.max(1) as u32,
        backoff: Duration::from_millis(cfg.u64("annotate.backoff_ms")?),
    };
    let dir = create_run_dir(cfg, "annotate")?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let report = rt.block_on(annotate_file(&input, &output, template, client, cfg.usize("annotate.parallel")?, retry))?;
    eprintln!(
        "[annotate] {} records: {} annotated, {} already done, {} failed -> {}",
        report.total,
        report.annotated,
        report.skipped_existing,
        report.failed.len(),
        output.display()
    );
    for f in report.failed.iter().take(10) {
        eprintln!("[annotate] record {} failed: {}", f.id, f.reason);
    }
    write_json(&dir.join("report.json"), &report)
}

fn cost(cfg: &Config) -> Result<()> {
    let (input, prompt, completion) = (cfg.f64("cost.input_tokens"), cfg.f64("cost.prompt_tokens"), cfg.f64("cost.completion_tokens"));
    let single = cfg.f64("cost.single_rate");
    let amount = if single > 0.0 {
        cat_annotator::estimate_cost_single_rate(input, prompt, completion, single)?
    } else {
        cat_annotator::estimate_cost(input, prompt, completion, cfg.f64("cost.price_in"), cfg.f64("cost.price_out"))?
    };
    let dir = create_run_dir(cfg, "cost")?;
    eprintln!("[cost] estimated cost per 1M input tokens: {amount:.2}");
    write_json(&dir.join("cost.json"), &json!({ "cost": amount }))
}
