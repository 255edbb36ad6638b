//! `catlab` command-line entry point.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use toml::Value;

use config::Config;

#[derive(Debug, Parser)]
#[command(name = "catlab", version, about = "Causal attention tuning on synthetic spurious-token benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a benchmark (train, valid, IID test, OOD test) as JSONL.
    Gen(GenArgs),
    /// Benchmark generator commands.
    Stg {
        #[command(subcommand)]
        command: StgCommand,
    },
    /// Annotate a JSONL dataset with causal maps through a chat endpoint.
    Annotate(AnnotateArgs),
    /// Train a model, save a checkpoint and evaluate it.
    Train(TrainArgs),
    /// Evaluate a checkpoint on dataset splits.
    Eval(EvalArgs),
    /// Train once per alpha (and seed) and tabulate accuracies.
    Sweep(SweepArgs),
    /// Export attention heatmaps and per-class densities from a checkpoint.
    ExportAttn(ExportArgs),
    /// Estimate annotation cost per record.
    Cost(CostArgs),
}

#[derive(Debug, Subcommand)]
pub enum StgCommand {
    Gen(GenArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Config file with flat dotted keys; a run's config.toml works too.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 means one per core.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory written by `gen`; when absent the benchmark is generated in memory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    /// `s`, `m` or `l` for variant `e`; omit for the variant default.
    #[arg(long)]
    pub size: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub variant: Option<String>,
    /// `s`, `m` or `l` for variant `e`; omit for the variant default.
    #[arg(long)]
    pub size: Option<String>,
    /// Parent directory for the run directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Render factors in a per-record random order.
    #[arg(long)]
    pub shuffle_factors: bool,
    /// Skip the IID validation split.
    #[arg(long)]
    pub no_valid: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnnotateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "in", value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[arg(long = "out", value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub parallel: Option<usize>,
    #[arg(long)]
    pub retries: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Train rank-decomposed adapters on Q and V instead of all weights.
    #[arg(long)]
    pub lora: bool,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated subset of valid, iid_test, ood_test.
    #[arg(long)]
    pub splits: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Inclusive grid `start:stop:step`.
    #[arg(long)]
    pub alphas: Option<String>,
    /// Comma-separated training seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Also train a vanilla baseline per seed.
    #[arg(long)]
    pub include_vanilla: bool,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Comma-separated example indices to export heatmaps for.
    #[arg(long)]
    pub examples: Option<String>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CostArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input_tokens: Option<f64>,
    #[arg(long)]
    pub prompt_tokens: Option<f64>,
    #[arg(long)]
    pub completion_tokens: Option<f64>,
    #[arg(long)]
    pub price_in: Option<f64>,
    #[arg(long)]
    pub price_out: Option<f64>,
    /// Price both token kinds at this one rate.
    #[arg(long)]
    pub single_rate: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

struct Layer<'a>(&'a mut Config);

impl Layer<'_> {
    fn put(&mut self, key: &str, v: Option<impl Into<Value>>) -> anyhow::Result<&mut Self> {
        if let Some(v) = v {
            self.0.set_value(key, v.into())?;
        }
        Ok(self)
    }

    fn path(&mut self, key: &str, p: &Option<PathBuf>) -> anyhow::Result<&mut Self> {
        self.put(key, p.as_ref().map(|p| p.to_string_lossy().into_owned()))
    }

    fn flag(&mut self, key: &str, on: bool) -> anyhow::Result<&mut Self> {
        self.put(key, on.then_some(true))
    }

    fn count(&mut self, key: &str, v: Option<usize>) -> anyhow::Result<&mut Self> {
        self.put(key, v.map(|n| n as i64))
    }
}

fn base_config(common: &Common) -> anyhow::Result<Config> {
    let mut cfg = Config::default();
    if let Some(p) = &common.config {
        cfg.merge_file(p)?;
    }
    for s in &common.set {
        cfg.apply_override(s)?;
    }
    Layer(&mut cfg).put("seed", common.seed.map(|s| s as i64))?.count("threads", common.threads)?;
    Ok(cfg)
}

fn data_layer(cfg: &mut Config, d: &DataArgs) -> anyhow::Result<()> {
    Layer(cfg).path("data.dir", &d.data)?.put("data.variant", d.variant.clone())?.put("data.size", d.size.clone())?;
    Ok(())
}

fn gen_config(a: &GenArgs) -> anyhow::Result<Config> {
    let mut cfg = base_config(&a.common)?;
    Layer(&mut cfg)
        .put("data.variant", a.variant.clone())?
        .put("data.size", a.size.clone())?
        .path("out", &a.out)?
        .flag("data.shuffle_factors", a.shuffle_factors)?
        .put("data.with_valid", a.no_valid.then_some(false))?;
    Ok(cfg)
}

/// Resolves the merged configuration and the command name for `cli`.
pub fn resolve(cli: &Cli) -> anyhow::Result<(&'static str, Config)> {
    Ok(match &cli.command {
        Command::Gen(a) | Command::Stg { command: StgCommand::Gen(a) } => ("gen", gen_config(a)?),
        Command::Annotate(a) => {
            let mut cfg = base_config(&a.common)?;
            Layer(&mut cfg)
                .path("annotate.input", &a.input)?
                .path("annotate.output", &a.output)?
                .put("annotate.template", a.template.clone())?
                .count("annotate.parallel", a.parallel)?
                .count("annotate.retries", a.retries)?;
            ("annotate", cfg)
        }
        Command::Train(a) => {
            let mut cfg = base_config(&a.common)?;
            data_layer(&mut cfg, &a.data)?;
            Layer(&mut cfg)
                .put("train.mode", a.mode.clone())?
                .put("train.alpha", a.alpha)?
                .count("train.epochs", a.epochs)?
                .put("train.lr", a.lr)?
                .flag("train.lora", a.lora)?
                .path("out", &a.out)?;
            ("train", cfg)
        }
        Command::Eval(a) => {
            let mut cfg = base_config(&a.common)?;
            data_layer(&mut cfg, &a.data)?;
            Layer(&mut cfg).path("eval.checkpoint", &a.checkpoint)?.put("eval.splits", a.splits.clone())?.path("out", &a.out)?;
            ("eval", cfg)
        }
        Command::Sweep(a) => {
            let mut cfg = base_config(&a.common)?;
            data_layer(&mut cfg, &a.data)?;
            Layer(&mut cfg)
                .put("sweep.alphas", a.alphas.clone())?
                .put("sweep.seeds", a.seeds.clone())?
                .count("train.epochs", a.epochs)?
                .flag("sweep.include_vanilla", a.include_vanilla)?
                .path("out", &a.out)?;
            ("sweep", cfg)
        }
        Command::ExportAttn(a) => {
            let mut cfg = base_config(&a.common)?;
            data_layer(&mut cfg, &a.data)?;
            Layer(&mut cfg)
                .path("export.checkpoint", &a.checkpoint)?
                .put("export.split", a.split.clone())?
                .put("export.examples", a.examples.clone())?
                .count("export.bins", a.bins)?
                .path("out", &a.out)?;
            ("export-attn", cfg)
        }
        Command::Cost(a) => {
            let mut cfg = base_config(&a.common)?;
            Layer(&mut cfg)
                .put("cost.input_tokens", a.input_tokens)?
                .put("cost.prompt_tokens", a.prompt_tokens)?
                .put("cost.completion_tokens", a.completion_tokens)?
                .put("cost.price_in", a.price_in)?
                .put("cost.price_out", a.price_out)?
                .put("cost.single_rate", a.single_rate)?
                .path("out", &a.out)?;
            ("cost", cfg)
        }
    })
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match resolve(&cli).and_then(|(name, cfg)| commands::dispatch(name, &cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
