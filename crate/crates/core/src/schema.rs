//! Tagged decomposition output format.
//!
//! A decomposition model emits four tagged sections, in any order:
//!
//! ```text
//! <think>free-form reasoning</think>
//! <action>["Recoloring"]</action>
//! <subjects>["coat", "hair"]</subjects>
//! <goals>["scarlet or copper red"]</goals>
//! ```
//!
//! Output is *well-formed* when each of the four tag pairs appears exactly
//! once, balanced and non-nested. Section bodies hold term lists in either
//! bracketed quoted form (`["a", "b"]`) or bare comma-separated form
//! (`a, b`); the serializer always emits the bracketed form. Terms are
//! compared under [`normalize_term`]: lowercased, inner whitespace collapsed,
//! leading and trailing punctuation stripped.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The four section tags of a decomposition output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Think,
    Action,
    Subjects,
    Goals,
}

impl Tag {
    pub const ALL: [Tag; 4] = [Tag::Think, Tag::Action, Tag::Subjects, Tag::Goals];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Think => "think",
            Tag::Action => "action",
            Tag::Subjects => "subjects",
            Tag::Goals => "goals",
        }
    }

    pub fn open_token(self) -> &'static str {
        match self {
            Tag::Think => "<think>",
            Tag::Action => "<action>",
            Tag::Subjects => "<subjects>",
            Tag::Goals => "<goals>",
        }
    }

    pub fn close_token(self) -> &'static str {
        match self {
            Tag::Think => "</think>",
            Tag::Action => "</action>",
            Tag::Subjects => "</subjects>",
            Tag::Goals => "</goals>",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn tag_tokens() -> impl Iterator<Item = &'static str> {
    Tag::ALL
        .iter()
        .flat_map(|t| [t.open_token(), t.close_token()])
}

/// True when `s` contains any literal tag token, which would make the
/// string unsafe to embed in a serialized section body.
pub fn contains_tag_token(s: &str) -> bool {
    tag_tokens().any(|tok| s.contains(tok))
}

/// Canonical form used for term comparison: lowercase, single-spaced,
/// no leading or trailing punctuation or whitespace. Idempotent.
pub fn normalize_term(term: &str) -> String {
    let trimmed = term.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    trimmed
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// An insertion-ordered set of terms, deduplicated under
/// [`normalize_term`]. Terms whose normal form is empty are dropped.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TermSet {
    items: Vec<String>,
}

impl TermSet {
    pub fn new<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = TermSet { items: Vec::new() };
        for item in items {
            set.insert(item.into());
        }
        set
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Inserts `item` unless its normal form is empty or already present.
    /// Returns whether the set changed.
    pub fn insert(&mut self, item: String) -> bool {
        let key = normalize_term(&item);
        if key.is_empty() || self.items.iter().any(|t| normalize_term(t) == key) {
            return false;
        }
        self.items.push(item);
        true
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(String::as_str)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The terms in normal form, preserving insertion order. Distinct by
    /// construction.
    pub fn normalized(&self) -> Vec<String> {
        self.items.iter().map(|t| normalize_term(t)).collect()
    }

    pub fn contains_normalized(&self, term: &str) -> bool {
        let key = normalize_term(term);
        self.items.iter().any(|t| normalize_term(t) == key)
    }
}

impl From<Vec<String>> for TermSet {
    fn from(items: Vec<String>) -> Self {
        TermSet::new(items)
    }
}

impl From<TermSet> for Vec<String> {
    fn from(set: TermSet) -> Self {
        set.items
    }
}

impl<S: Into<String>> FromIterator<S> for TermSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TermSet::new(iter)
    }
}

/// Errors for schema-level constructors and serialization.
#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("image uri is empty")]
    EmptyUri,
    #[error("inline image has no bytes")]
    EmptyImageBytes,
    #[error("media type {0:?} is not of the form type/subtype")]
    BadMediaType(String),
    #[error("{place} contains a literal tag token and cannot be serialized")]
    TagTokenInContent { place: &'static str },
}

/// Reference to an image, either by location or as inline bytes. In
/// JSON a bare string is a URI; inline bytes are an object with a
/// media type and base64 payload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Uri(String),
    Inline(InlineImage),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InlineImage {
    pub media_type: String,
    #[serde(rename = "b64", with = "b64_bytes")]
    pub bytes: Vec<u8>,
}

impl ImageRef {
    pub fn uri(uri: impl Into<String>) -> Result<Self, SchemaError> {
        let uri = uri.into();
        if uri.trim().is_empty() {
            return Err(SchemaError::EmptyUri);
        }
        Ok(ImageRef::Uri(uri))
    }

    pub fn inline(media_type: impl Into<String>, bytes: Vec<u8>) -> Result<Self, SchemaError> {
        let media_type = media_type.into();
        if bytes.is_empty() {
            return Err(SchemaError::EmptyImageBytes);
        }
        let mut parts = media_type.splitn(2, '/');
        let (ty, sub) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
        if ty.is_empty() || sub.is_empty() {
            return Err(SchemaError::BadMediaType(media_type));
        }
        Ok(ImageRef::Inline(InlineImage { media_type, bytes }))
    }

    /// Short human-readable description for logs and provenance records.
    pub fn describe(&self) -> String {
        match self {
            ImageRef::Uri(uri) => uri.clone(),
            ImageRef::Inline(img) => format!("inline:{}({} bytes)", img.media_type, img.bytes.len()),
        }
    }
}

mod b64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(de)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

/// An edit instruction bound to a source image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub id: String,
    pub instruction: String,
    pub source_image: ImageRef,
}

impl EditRequest {
    pub fn new(
        id: impl Into<String>,
        instruction: impl Into<String>,
        source_image: ImageRef,
    ) -> Result<Self, SchemaError> {
        let instruction = instruction.into();
        if instruction.trim().is_empty() {
            return Err(SchemaError::EmptyInstruction);
        }
        Ok(EditRequest {
            id: id.into(),
            instruction,
            source_image,
        })
    }

    /// Re-checks invariants for values built by deserialization rather
    /// than [`EditRequest::new`].
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.instruction.trim().is_empty() {
            return Err(SchemaError::EmptyInstruction);
        }
        Ok(())
    }
}

/// The structured result of decomposing an edit instruction: what to do,
/// to what, toward which end state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub actions: TermSet,
    pub subjects: TermSet,
    pub goals: TermSet,
    pub reasoning: Option<String>,
}

impl Decomposition {
    /// Builds a decomposition, rejecting content that could not survive a
    /// serialize/parse round trip. An empty `reasoning` collapses to `None`.
    pub fn new(
        actions: TermSet,
        subjects: TermSet,
        goals: TermSet,
        reasoning: Option<String>,
    ) -> Result<Self, SchemaError> {
        for (place, set) in [
            ("actions", &actions),
            ("subjects", &subjects),
            ("goals", &goals),
        ] {
            if set.iter().any(contains_tag_token) {
                return Err(SchemaError::TagTokenInContent { place });
            }
        }
        let reasoning = reasoning.filter(|r| !r.is_empty());
        if reasoning.as_deref().is_some_and(contains_tag_token) {
            return Err(SchemaError::TagTokenInContent { place: "reasoning" });
        }
        Ok(Decomposition {
            actions,
            subjects,
            goals,
            reasoning,
        })
    }

    pub fn empty() -> Self {
        Decomposition::default()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty() && self.subjects.is_empty() && self.goals.is_empty()
    }
}

/// A single grammar violation found while parsing tagged output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseIssue {
    MissingTag(Tag),
    DuplicateTag(Tag),
    UnbalancedTag(Tag),
    OverlappingTags(Tag, Tag),
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseIssue::MissingTag(t) => write!(f, "missing tag: {t}"),
            ParseIssue::DuplicateTag(t) => write!(f, "duplicate tag: {t}"),
            ParseIssue::UnbalancedTag(t) => write!(f, "unbalanced tag: {t}"),
            ParseIssue::OverlappingTags(a, b) => write!(f, "overlapping tags: {a} and {b}"),
        }
    }
}

/// Raw section bodies of a well-formed tagged output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedOutput {
    pub raw: String,
    pub sections: BTreeMap<Tag, String>,
}

/// Result of [`parse_tagged_output`]. `decomposition` and `tagged` are
/// present exactly when `well_formed` is true.
#[derive(Clone, Debug, PartialEq)]
pub struct ParseOutcome {
    pub well_formed: bool,
    pub decomposition: Option<Decomposition>,
    pub tagged: Option<TaggedOutput>,
    pub diagnostics: Vec<ParseIssue>,
}

impl ParseOutcome {
    fn malformed(issue: ParseIssue) -> Self {
        ParseOutcome {
            well_formed: false,
            decomposition: None,
            tagged: None,
            diagnostics: vec![issue],
        }
    }
}

/// Parses model output in the four-tag format. Total over arbitrary input:
/// malformed text yields `well_formed = false` and a diagnostic naming the
/// first violated rule, never an error or panic.
pub fn parse_tagged_output(raw: &str) -> ParseOutcome {
    struct Span {
        tag: Tag,
        open_start: usize,
        body_start: usize,
        body_end: usize,
        close_end: usize,
    }

    let mut spans = Vec::with_capacity(4);
    for tag in Tag::ALL {
        let opens: Vec<usize> = raw.match_indices(tag.open_token()).map(|(i, _)| i).collect();
        let closes: Vec<usize> = raw.match_indices(tag.close_token()).map(|(i, _)| i).collect();
        if opens.is_empty() && closes.is_empty() {
            return ParseOutcome::malformed(ParseIssue::MissingTag(tag));
        }
        if opens.len() != closes.len() {
            return ParseOutcome::malformed(ParseIssue::UnbalancedTag(tag));
        }
        if opens.len() > 1 {
            return ParseOutcome::malformed(ParseIssue::DuplicateTag(tag));
        }
        let (open, close) = (opens[0], closes[0]);
        if close < open {
            return ParseOutcome::malformed(ParseIssue::UnbalancedTag(tag));
        }
        spans.push(Span {
            tag,
            open_start: open,
            body_start: open + tag.open_token().len(),
            body_end: close,
            close_end: close + tag.close_token().len(),
        });
    }

    spans.sort_by_key(|s| s.open_start);
    for pair in spans.windows(2) {
        if pair[1].open_start < pair[0].close_end {
            return ParseOutcome::malformed(ParseIssue::OverlappingTags(
                pair[0].tag,
                pair[1].tag,
            ));
        }
    }

    let mut sections = BTreeMap::new();
    for span in &spans {
        sections.insert(span.tag, raw[span.body_start..span.body_end].to_string());
    }

    let reasoning = sections.get(&Tag::Think).cloned();
    let actions = parse_term_list(&sections[&Tag::Action]);
    let subjects = parse_term_list(&sections[&Tag::Subjects]);
    let goals = parse_term_list(&sections[&Tag::Goals]);

    // Section bodies cannot contain tag tokens (each token occurs exactly
    // once in `raw`, spent on the section delimiters themselves), so this
    // constructor cannot fail on parser output. Stay total regardless.
    match Decomposition::new(actions, subjects, goals, reasoning) {
        Ok(decomposition) => ParseOutcome {
            well_formed: true,
            decomposition: Some(decomposition),
            tagged: Some(TaggedOutput {
                raw: raw.to_string(),
                sections,
            }),
            diagnostics: Vec::new(),
        },
        Err(_) => ParseOutcome::malformed(ParseIssue::MissingTag(Tag::Think)),
    }
}

/// Parses a section body as a term list. Accepts the bracketed quoted form
/// and the bare comma-separated form.
fn parse_term_list(body: &str) -> TermSet {
    let trimmed = body.trim();
    if trimmed.is_empty() {
        return TermSet::empty();
    }
    let inner = match trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
        Some(inner) => inner,
        None => trimmed,
    };
    scan_items(inner)
}

/// Splits `inner` on top-level commas. A leading double quote opens a
/// quoted item supporting `\"` and `\\` escapes; anything between the
/// closing quote and the next comma is ignored.
fn scan_items(inner: &str) -> TermSet {
    let mut items = TermSet::empty();
    let mut chars = inner.char_indices().peekable();

    loop {
        while matches!(chars.peek(), Some((_, c)) if c.is_whitespace()) {
            chars.next();
        }
        match chars.peek().copied() {
            None => break,
            Some((_, '"')) => {
                chars.next();
                let mut item = String::new();
                let mut closed = false;
                while let Some((_, c)) = chars.next() {
                    match c {
                        '\\' => {
                            if let Some((_, esc)) = chars.next() {
                                item.push(esc);
                            }
                        }
                        '"' => {
                            closed = true;
                            break;
                        }
                        _ => item.push(c),
                    }
                }
                if closed {
                    for (_, c) in chars.by_ref() {
                        if c == ',' {
                            break;
                        }
                    }
                }
                items.insert(item);
            }
            Some((start, _)) => {
                let mut end = inner.len();
                for (i, c) in chars.by_ref() {
                    if c == ',' {
                        end = i;
                        break;
                    }
                }
                items.insert(inner[start..end].trim().to_string());
            }
        }
    }
    items
}

fn quote_term(term: &str) -> String {
    let escaped = term.replace('\\', "\\\\").replace('"', "\\\"");
    format!("\"{escaped}\"")
}

/// Renders a decomposition in the canonical tagged form: four sections in
/// fixed order, bracketed quoted lists, reasoning inside `<think>`. The
/// output parses back to an equal [`Decomposition`].
pub fn serialize_decomposition(d: &Decomposition) -> Result<String, SchemaError> {
    // Re-validate so values deserialized from external data cannot smuggle
    // tag tokens past the round-trip guarantee.
    let checked = Decomposition::new(
        d.actions.clone(),
        d.subjects.clone(),
        d.goals.clone(),
        d.reasoning.clone(),
    )?;
    let list = |set: &TermSet| {
        let quoted: Vec<String> = set.iter().map(quote_term).collect();
        format!("[{}]", quoted.join(", "))
    };
    Ok(format!(
        "<think>{}</think><action>{}</action><subjects>{}</subjects><goals>{}</goals>",
        checked.reasoning.as_deref().unwrap_or(""),
        list(&checked.actions),
        list(&checked.subjects),
        list(&checked.goals),
    ))
}
