//! Flat dotted-key configuration: built-in defaults, then a TOML file, then
//! `--set key=value` and dedicated flags. The merged result is snapshotted
//! into every run directory and can be fed back with `--config`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};
use toml::Value;

const DEFAULTS: &str = r#"
seed = 42
threads = 0
out = "runs"

data.dir = ""
data.variant = "e"
data.size = ""
data.shuffle_factors = false
data.with_valid = true
# Keep only the first N records of every split; 0 keeps all.
data.limit = 0

model.d_model = 128
model.n_heads = 4
model.n_layers = 2
model.ffn_mult = 4
model.max_seq_len = 128

train.mode = "cat"
train.alpha = 0.3
train.gamma_schedule = "epoch_decay"
train.gamma_value = 1.0
train.lr = 1e-3
train.warmup = 0.1
train.epochs = 20
train.batch_size = 16
train.grad_accum = 1
train.loss_mask = "answer_only"
train.weight_decay = 0.01
train.beta1 = 0.9
train.beta2 = 0.999
train.eps = 1e-8
train.lora = false
train.lora_rank = 8
train.lora_scale = 2.0
train.evaluate = true

eval.checkpoint = ""
eval.vocab = ""
eval.splits = "valid,iid_test,ood_test"

sweep.alphas = "0.05:0.35:0.05"
sweep.seeds = "42"
sweep.include_vanilla = false

export.checkpoint = ""
export.split = "ood_test"
export.examples = "0"
export.bins = 20

annotate.input = ""
annotate.output = ""
annotate.template = "stg"
annotate.parallel = 8
annotate.retries = 3
annotate.backoff_ms = 500

cost.input_tokens = 168.4
cost.prompt_tokens = 570.0
cost.completion_tokens = 163.9
cost.price_in = 2.5
cost.price_out = 10.0
cost.single_rate = 0.0
"#;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, table: toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other);
            }
        }
    }
}

fn parse_flat(text: &str) -> Result<BTreeMap<String, Value>> {
    let table: toml::Table = text.parse()?;
    let mut out = BTreeMap::new();
    flatten("", table, &mut out);
    Ok(out)
}

impl Default for Config {
    fn default() -> Self {
        Self { values: parse_flat(DEFAULTS).expect("built-in defaults parse") }
    }
}

impl Config {
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Sets a known key, coercing integers to floats where the default is a
    /// float. Unknown keys and type mismatches are errors.
    pub fn set_value(&mut self, key: &str, value: Value) -> Result<()> {
        let Some(slot) = self.values.get_mut(key) else {
            bail!("unknown config key {key:?}");
        };
        let value = match (&*slot, value) {
            (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
            (old, new) if std::mem::discriminant(old) == std::mem::discriminant(&new) => new,
            (old, new) => bail!("config key {key:?} expects a {}, got {}", old.type_str(), new.type_str()),
        };
        *slot = value;
        Ok(())
    }

    /// `raw` is read as a TOML value, falling back to a bare string.
    pub fn set_raw(&mut self, key: &str, raw: &str) -> Result<()> {
        let parsed = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .filter(|_| !matches!(self.values.get(key), Some(Value::String(_))))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set_value(key, parsed)
    }

    /// Parses a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| anyhow!("override {assignment:?} is not key=value"))?;
        self.set_raw(k.trim(), v.trim())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (k, v) in parse_flat(&text).with_context(|| format!("parsing config {}", path.display()))? {
            self.set_value(&k, v).with_context(|| format!("in {}", path.display()))?;
        }
        Ok(())
    }

    fn get(&self, key: &str) -> &Value {
        self.values.get(key).unwrap_or_else(|| panic!("config key {key:?} has no default"))
    }

    pub fn str(&self, key: &str) -> &str {
        self.get(key).as_str().expect("string key")
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.get(key).as_float().expect("float key")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.get(key).as_bool().expect("bool key")
    }

    pub fn i64(&self, key: &str) -> i64 {
        self.get(key).as_integer().expect("integer key")
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        usize::try_from(self.i64(key)).map_err(|_| anyhow!("config key {key:?} must be nonnegative"))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        u64::try_from(self.i64(key)).map_err(|_| anyhow!("config key {key:?} must be nonnegative"))
    }

    /// Empty string means unset.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        Some(self.str(key)).filter(|s| !s.is_empty()).map(PathBuf::from)
    }

    /// Sorted `key = value` lines; readable by [`Config::merge_file`].
    pub fn snapshot(&self, command: &str) -> String {
        let mut s = format!("# catlab {command}\n");
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// First 12 hex digits of the snapshot digest.
    pub fn hash(&self, command: &str) -> String {
        hex::encode(Sha256::digest(self.snapshot(command).as_bytes()))[..12].to_string()
    }
}
