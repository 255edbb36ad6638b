//! Causal-map annotation: prompt templates, an OpenAI-compatible chat client,
//! JSON extraction and validation, a bounded-concurrency batch pipeline and
//! a cost estimator.

pub mod client;
pub mod cost;
pub mod extract;
#[cfg(feature = "mock")]
pub mod mock;
pub mod pipeline;
pub mod template;

pub use client::{ChatClient, Completion, EndpointConfig, OpenAiClient, TransportError};
pub use cost::{estimate_cost, estimate_cost_single_rate, CostError};
pub use extract::{extract_causal_map, first_json_object, ExtractError};
pub use pipeline::{annotate_batch, annotate_file, report_path, AnnotationResult, Failure, FileError, FileReport, Record, RetryPolicy};
pub use template::{builtin_templates, PromptTemplate, Template, TemplateError};
