use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use cat_core::supervision::CausalMap;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use crate::client::ChatClient;
use crate::extract::extract_causal_map;
use crate::template::Template;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: usize,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts per record, including the first.
    pub max_attempts: u32,
    /// Wait before attempt `k + 1` is `k * backoff`.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff: Duration::from_millis(500) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub id: usize,
    pub attempts: u32,
    /// Last raw response, if any arrived.
    pub raw_response: Option<String>,
    pub causal_map: Option<CausalMap>,
    pub failure: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl AnnotationResult {
    fn failed(id: usize, reason: String) -> Self {
        Self { id, attempts: 0, raw_response: None, causal_map: None, failure: Some(reason), prompt_tokens: 0, completion_tokens: 0 }
    }
}

async fn annotate_one(client: Arc<dyn ChatClient>, id: usize, prompt: String, retry: RetryPolicy) -> AnnotationResult {
    let mut out = AnnotationResult::failed(id, String::new());
    for attempt in 1..=retry.max_attempts.max(1) {
        if attempt > 1 {
            tokio::time::sleep(retry.backoff * (attempt - 1)).await;
        }
        out.attempts = attempt;
        match client.complete(&prompt).await {
            Err(e) => out.failure = Some(format!("transport: {e}")),
            Ok(c) => {
                out.prompt_tokens += c.prompt_tokens.unwrap_or(0);
                out.completion_tokens += c.completion_tokens.unwrap_or(0);
                match extract_causal_map(&c.content) {
                    Ok(map) => {
                        out.raw_response = Some(c.content);
                        out.causal_map = Some(map);
                        out.failure = None;
                        return out;
                    }
                    Err(e) => {
                        out.raw_response = Some(c.content);
                        out.failure = Some(e.to_string());
                    }
                }
            }
        }
    }
    out
}

/// Annotates `records` with at most `parallelism` requests in flight.
/// Results come back in record order; failures never abort the batch.
pub async fn annotate_batch(
    records: &[Record],
    template: &dyn Template,
    client: Arc<dyn ChatClient>,
    parallelism: usize,
    retry: RetryPolicy,
) -> Vec<AnnotationResult> {
    let permits = Arc::new(Semaphore::new(parallelism.max(1)));
    let mut set = JoinSet::new();
    let mut results = Vec::with_capacity(records.len());
    for r in records {
        let prompt = match template.render(&r.question, &r.answer) {
            Ok(p) => p,
            Err(e) => {
                results.push(AnnotationResult::failed(r.id, format!("template: {e}")));
                continue;
            }
        };
        let (client, permits, id) = (client.clone(), permits.clone(), r.id);
        set.spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore stays open");
            annotate_one(client, id, prompt, retry).await
        });
    }
    while let Some(done) = set.join_next().await {
        match done {
            Ok(r) => results.push(r),
            Err(e) => results.push(AnnotationResult::failed(usize::MAX, format!("worker panicked: {e}"))),
        }
    }
    results.sort_by_key(|r| r.id);
    results
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: usize,
    pub reason: String,
    pub raw_response: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub total: usize,
    pub skipped_existing: usize,
    pub annotated: usize,
    pub failed: Vec<Failure>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{path}: line {line}: {msg}")]
    Record { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn read_objects(path: &Path) -> Result<Vec<serde_json::Map<String, serde_json::Value>>, FileError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line)? {
            serde_json::Value::Object(m) => out.push(m),
            _ => return Err(FileError::Record { path: path.into(), line: i + 1, msg: "not a JSON object".into() }),
        }
    }
    Ok(out)
}

fn text_field(m: &serde_json::Map<String, serde_json::Value>, key: &str) -> String {
    match m.get(key) {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(v) if !v.is_null() => v.to_string(),
        _ => String::new(),
    }
}

pub fn report_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".report.json");
    output.with_file_name(name)
}

/// Annotates a JSONL file whose records carry `question` and `answer`.
/// Record ids are line indices. Records already annotated in an existing
/// `output` (same question, `causal_map` present) are kept and not re-sent.
/// Failed records are written without a `causal_map`. A JSON report is
/// written next to the output.
pub async fn annotate_file(
    input: &Path,
    output: &Path,
    template: &dyn Template,
    client: Arc<dyn ChatClient>,
    parallelism: usize,
    retry: RetryPolicy,
) -> Result<FileReport, FileError> {
    let mut records = read_objects(input)?;
    let existing = if output.exists() { read_objects(output)? } else { Vec::new() };
    let mut todo = Vec::new();
    let mut report = FileReport { total: records.len(), ..Default::default() };
    for (id, rec) in records.iter_mut().enumerate() {
        let done = existing.get(id).filter(|prev| {
            prev.get("question") == rec.get("question")
                && prev.get("causal_map").is_some_and(|m| CausalMap::from_json_value(m).is_ok())
        });
        match done {
            Some(prev) => {
                rec.insert("causal_map".into(), prev["causal_map"].clone());
                report.skipped_existing += 1;
            }
            None => {
                rec.remove("causal_map");
                todo.push(Record { id, question: text_field(rec, "question"), answer: text_field(rec, "answer") });
            }
        }
    }
    for r in annotate_batch(&todo, template, client, parallelism, retry).await {
        report.prompt_tokens += r.prompt_tokens;
        report.completion_tokens += r.completion_tokens;
        match (r.causal_map, records.get_mut(r.id)) {
            (Some(map), Some(rec)) => {
                rec.insert("causal_map".into(), serde_json::to_value(&map)?);
                report.annotated += 1;
            }
            _ => report.failed.push(Failure {
                id: r.id,
                reason: r.failure.unwrap_or_default(),
                raw_response: r.raw_response,
            }),
        }
    }

    let tmp = output.with_extension("partial");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for rec in &records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, output)?;
    std::fs::write(report_path(output), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}
