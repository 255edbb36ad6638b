use cat_core::supervision::{CausalMap, SupervisionError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractError {
    #[error("no JSON object found in response")]
    NoObject,
    #[error("schema validation failed: {0}")]
    Schema(String),
}

/// Byte range of the first balanced `{...}` that parses as JSON. Braces
/// inside string literals are ignored.
pub fn first_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        if let Some(close) = balanced_end(bytes, open) {
            let candidate = &text[open..=close];
            if serde_json::from_str::<serde_json::Value>(candidate).is_ok() {
                return Some(candidate);
            }
        }
        start = open + 1;
    }
    None
}

fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Finds the first JSON object in a model response and validates it as a
/// causal map.
pub fn extract_causal_map(response: &str) -> Result<CausalMap, ExtractError> {
    let obj = first_json_object(response).ok_or(ExtractError::NoObject)?;
    let value: serde_json::Value = serde_json::from_str(obj).map_err(|e| ExtractError::Schema(e.to_string()))?;
    CausalMap::from_json_value(&value).map_err(|e: SupervisionError| ExtractError::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_object_in_prose_and_fences() {
        let r = "Sure! Here it is:\n```json\n{\"a {b}\": [\"c\"]}\n```\nDone {not json}";
        assert_eq!(first_json_object(r), Some("{\"a {b}\": [\"c\"]}"));
        let m = extract_causal_map(r).unwrap();
        assert_eq!(m.causes("a {b}").unwrap(), ["c"]);
    }

    #[test]
    fn skips_unparseable_brace_runs() {
        assert_eq!(first_json_object("{oops} then {\"x\": [\"y\"]}"), Some("{\"x\": [\"y\"]}"));
        assert_eq!(first_json_object("no braces"), None);
        assert_eq!(first_json_object("{\"open\": "), None);
    }

    #[test]
    fn schema_errors_quote_fragment() {
        let err = extract_causal_map("{\"a\": \"b\"}").unwrap_err();
        let ExtractError::Schema(msg) = err else { panic!("expected schema error") };
        assert!(msg.contains("\"b\""), "{msg}");
        assert_eq!(extract_causal_map("I cannot help"), Err(ExtractError::NoObject));
    }

    #[test]
    fn nested_structure_rejected() {
        assert!(matches!(extract_causal_map("{\"a\": [[\"b\"]]}"), Err(ExtractError::Schema(_))));
        assert!(matches!(extract_causal_map("{\"a\": {\"b\": []}}"), Err(ExtractError::Schema(_))));
    }
}
