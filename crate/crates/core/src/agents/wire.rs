//! JSON wire formats for the two kinds of remote call.
//!
//! Language roles (decomposition, sequencing, judging) speak a
//! chat-completions shape: `{model, temperature, messages}` where the
//! user message carries one text part and the request's image parts, and
//! the reply text sits at `choices[0].message.content`. The editing role
//! speaks an image-edit shape: `{model, prompt, image}` returning
//! `{image}`. Images travel as plain URIs, or as `data:` URIs with a
//! base64 payload when inline.

use base64::Engine;
use serde_json::{json, Value};

use crate::schema::ImageRef;

use super::AgentError;

fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

pub fn chat_url(base_url: &str) -> String {
    join_url(base_url, "chat/completions")
}

pub fn edit_url(base_url: &str) -> String {
    join_url(base_url, "images/edits")
}

/// Renders an image reference for the wire: URIs pass through, inline
/// bytes become a `data:` URI.
pub fn image_to_wire(image: &ImageRef) -> String {
    match image {
        ImageRef::Uri(uri) => uri.clone(),
        ImageRef::Inline(img) => format!(
            "data:{};base64,{}",
            img.media_type,
            base64::engine::general_purpose::STANDARD.encode(&img.bytes)
        ),
    }
}

/// Inverse of [`image_to_wire`]: `data:` URIs decode to inline bytes,
/// anything else is kept as a URI.
pub fn image_from_wire(s: &str) -> Result<ImageRef, AgentError> {
    let Some(rest) = s.strip_prefix("data:") else {
        return ImageRef::uri(s).map_err(AgentError::from);
    };
    let Some((media_type, payload)) = rest.split_once(";base64,") else {
        return Err(AgentError::BadResponse(format!(
            "unsupported data URI (expected ';base64,'): {}",
            &s[..s.len().min(40)]
        )));
    };
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(payload)
        .map_err(|e| AgentError::BadResponse(format!("bad base64 image payload: {e}")))?;
    ImageRef::inline(media_type, bytes).map_err(AgentError::from)
}

/// Builds a chat-completions request with one text part and the given
/// image parts in the user message.
pub fn chat_request(
    model: &str,
    temperature: f64,
    system: &str,
    user_text: &str,
    images: &[&ImageRef],
) -> Value {
    let mut parts = vec![json!({ "type": "text", "text": user_text })];
    for image in images {
        parts.push(json!({
            "type": "image_url",
            "image_url": { "url": image_to_wire(image) },
        }));
    }
    json!({
        "model": model,
        "temperature": temperature,
        "messages": [
            { "role": "system", "content": system },
            { "role": "user", "content": parts },
        ],
    })
}

/// Extracts the completion text at `choices[0].message.content`. Accepts
/// either a plain string or a list of text parts.
pub fn chat_reply_text(response: &Value) -> Result<String, AgentError> {
    let content = response
        .pointer("/choices/0/message/content")
        .ok_or_else(|| {
            AgentError::BadResponse("missing choices[0].message.content".to_string())
        })?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => {
            let mut text = String::new();
            for part in parts {
                if let Some(t) = part.get("text").and_then(Value::as_str) {
                    text.push_str(t);
                }
            }
            if text.is_empty() {
                Err(AgentError::BadResponse(
                    "completion content had no text parts".to_string(),
                ))
            } else {
                Ok(text)
            }
        }
        other => Err(AgentError::BadResponse(format!(
            "completion content has unexpected type: {other}"
        ))),
    }
}

/// Builds an image-edit request.
pub fn edit_request(model: &str, prompt: &str, image: &ImageRef) -> Value {
    json!({
        "model": model,
        "prompt": prompt,
        "image": image_to_wire(image),
    })
}

/// Extracts the edited image from an image-edit response. A `refusal`
/// field is surfaced as [`AgentError::Refused`], distinct from transport
/// failures.
pub fn edit_reply_image(response: &Value) -> Result<ImageRef, AgentError> {
    if let Some(reason) = response.get("refusal").and_then(Value::as_str) {
        return Err(AgentError::Refused(reason.to_string()));
    }
    let image = response
        .get("image")
        .and_then(Value::as_str)
        .ok_or_else(|| AgentError::BadResponse("missing image field".to_string()))?;
    image_from_wire(image)
}
