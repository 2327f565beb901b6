//! Chat-completions request and response JSON.

use base64::Engine;
use serde_json::{json, Value};

use super::{BackendConfig, GatewayError, Usage};
use crate::prompt::{Part, Prompt, Role};

fn content_part(part: &Part) -> Value {
    match part {
        Part::Text { text } => json!({"type": "text", "text": text}),
        Part::Image { media_type, data } => {
            let b64 = base64::engine::general_purpose::STANDARD.encode(data);
            json!({
                "type": "image_url",
                "image_url": {"url": format!("data:{media_type};base64,{b64}")}
            })
        }
    }
}

/// Request body with images inlined as base64 data URIs.
pub fn chat_request_body(prompt: &Prompt, backend: &BackendConfig) -> Vec<u8> {
    let mut messages = vec![json!({"role": "system", "content": prompt.system_text})];
    for turn in &prompt.turns {
        let role = match turn.role {
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        let content: Vec<Value> = turn.parts.iter().map(content_part).collect();
        messages.push(json!({"role": role, "content": content}));
    }
    let mut body = json!({
        "model": backend.model_name,
        "messages": messages,
        "temperature": backend.temperature,
    });
    if let Some(m) = backend.max_tokens {
        body["max_tokens"] = json!(m);
    }
    serde_json::to_vec(&body).expect("request serialization cannot fail")
}

/// Assistant text and token usage from a response body.
pub fn extract_completion(raw: &str) -> Result<(String, Option<Usage>), GatewayError> {
    let v: Value = serde_json::from_str(raw).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
    let content = &v["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("\n"),
        _ => return Err(GatewayError::BadResponse("no choices[0].message.content".into())),
    };
    let usage = v.get("usage").filter(|u| u.is_object()).map(|u| Usage {
        prompt_tokens: u["prompt_tokens"].as_u64(),
        completion_tokens: u["completion_tokens"].as_u64(),
        total_tokens: u["total_tokens"].as_u64(),
    });
    Ok((text, usage))
}
