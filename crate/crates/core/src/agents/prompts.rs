//! Prompt templates for the language-model roles.
//!
//! A template is plain text with `{name}` placeholders (lowercase
//! letters and underscores). Rendering substitutes every placeholder
//! from the supplied bindings and fails if one is unbound; braces that
//! do not form a placeholder pass through literally.

use serde::{Deserialize, Serialize};

use super::AgentError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// Which agent role the template belongs to, e.g. "decompose".
    pub role: String,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(role: impl Into<String>, text: impl Into<String>) -> Self {
        PromptTemplate {
            role: role.into(),
            text: text.into(),
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (name, _) in scan(&self.text) {
            if !names.contains(&name) {
                names.push(name);
            }
        }
        names
    }

    /// Substitutes every placeholder; unbound placeholders are an error,
    /// unused bindings are fine.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, AgentError> {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some((name, (start, end))) = scan(rest).into_iter().next() {
            out.push_str(&rest[..start]);
            match bindings.iter().find(|(k, _)| *k == name) {
                Some((_, value)) => out.push_str(value),
                None => return Err(AgentError::UnboundPlaceholder { name }),
            }
            rest = &rest[end..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// Finds `{name}` spans: (name, (byte start of '{', byte end past '}')).
fn scan(text: &str) -> Vec<(String, (usize, usize))> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                found.push((text[i + 1..j].to_string(), (i, j + 1)));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    found
}

/// Default user-message template for the decomposition role.
pub fn decompose_template() -> PromptTemplate {
    PromptTemplate::new(
        "decompose",
        "Decompose the edit request below into the operations to perform, \
the subjects they apply to, and the desired end states.\n\
Reply with exactly four tag sections and nothing else:\n\
<think>your reasoning</think>\
<action>[\"operation\", ...]</action>\
<subjects>[\"subject\", ...]</subjects>\
<goals>[\"goal\", ...]</goals>\n\
Each list is a bracketed list of quoted terms; use [] when a list is empty.\n\
\n\
Edit request: {instruction}",
    )
}

/// Default user-message template for the sequencing role.
pub fn sequence_template() -> PromptTemplate {
    PromptTemplate::new(
        "sequence",
        "Order the decomposed edit below into sub-requests executable \
against the attached image, one edit per step.\n\
Reply with a numbered list, one imperative sub-request per line, and \
nothing else.\n\
\n\
Decomposition: {decomposition}",
    )
}
