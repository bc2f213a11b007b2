//! Agent abstractions for the three pipeline roles: decomposition,
//! sequencing, and editing.
//!
//! Each role is a small trait ([`Decomposer`], [`Sequencer`], [`Editor`])
//! with two families of implementations:
//!
//! - remote clients ([`RemoteDecomposer`], [`RemoteSequencer`],
//!   [`RemoteEditor`]) that speak JSON over HTTP through a pluggable
//!   [`Transport`], with bounded retries, per-endpoint parallelism caps,
//!   and a re-prompt budget for malformed language-model output;
//! - deterministic rule-based mocks ([`MockDecomposer`],
//!   [`MockSequencer`], [`MockEditor`]) for offline runs and tests.
//!
//! Auth tokens are only ever read from the environment variable named in
//! the endpoint configuration; token values are never stored or logged.

mod mock;
mod prompts;
mod remote;
mod transport;
mod wire;

pub(crate) use remote::call_with_retries;
pub(crate) use transport::Gate;

pub use mock::{provenance, MockDecomposer, MockEditor, MockSequencer};
pub use prompts::{decompose_template, sequence_template, PromptTemplate};
pub use remote::{parse_numbered_plan, RemoteDecomposer, RemoteEditor, RemoteSequencer};
pub use transport::{
    backoff_delay, CountingTransport, RecordingTransport, ReqwestTransport, ScriptedTransport,
    Transport, TransportError,
};
pub use wire::{
    chat_reply_text, chat_request, chat_url, edit_reply_image, edit_request, edit_url,
    image_from_wire, image_to_wire,
};

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{Decomposition, EditRequest, ImageRef, SchemaError};

/// Connection settings for one remote agent role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentEndpoint {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token. Empty
    /// means the endpoint is unauthenticated. Only the *name* may appear
    /// in configuration or on disk.
    pub auth_token_env_var: String,
    pub timeout_ms: u64,
    /// Retries after the first attempt, for network errors and HTTP
    /// 429/5xx responses.
    pub max_retries: u32,
    /// Maximum concurrent in-flight requests to this endpoint.
    pub parallelism_cap: usize,
    /// First retry delay; doubles per retry.
    pub initial_backoff_ms: u64,
}

impl Default for AgentEndpoint {
    fn default() -> Self {
        AgentEndpoint {
            base_url: String::new(),
            model_name: String::new(),
            auth_token_env_var: String::new(),
            timeout_ms: 60_000,
            max_retries: 2,
            parallelism_cap: 4,
            initial_backoff_ms: 250,
        }
    }
}

impl AgentEndpoint {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        AgentEndpoint {
            base_url: base_url.into(),
            model_name: model_name.into(),
            ..AgentEndpoint::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let err = |msg: &str| Err(AgentError::InvalidEndpoint(msg.to_string()));
        if self.base_url.trim().is_empty() {
            return err("base_url is empty");
        }
        if self.model_name.trim().is_empty() {
            return err("model_name is empty");
        }
        if self.timeout_ms == 0 {
            return err("timeout_ms must be positive");
        }
        if self.parallelism_cap == 0 {
            return err("parallelism_cap must be at least 1");
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Resolves the bearer token, or `None` for unauthenticated endpoints.
    /// The value is read fresh from the environment on every call and is
    /// never cached or logged.
    pub fn auth_token(&self) -> Result<Option<String>, AgentError> {
        if self.auth_token_env_var.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.auth_token_env_var) {
            Ok(v) => Ok(Some(v)),
            Err(_) => Err(AgentError::MissingAuthToken {
                var: self.auth_token_env_var.clone(),
            }),
        }
    }
}

/// An ordered, non-empty list of imperative edit sentences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct SubRequestPlan {
    sub_requests: Vec<String>,
}

impl SubRequestPlan {
    pub fn new<I, S>(items: I) -> Result<Self, AgentError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sub_requests: Vec<String> = items.into_iter().map(Into::into).collect();
        if sub_requests.is_empty() {
            return Err(AgentError::EmptyPlan);
        }
        if let Some(index) = sub_requests.iter().position(|s| s.trim().is_empty()) {
            return Err(AgentError::BlankSubRequest { index });
        }
        Ok(SubRequestPlan { sub_requests })
    }

    pub fn sub_requests(&self) -> &[String] {
        &self.sub_requests
    }

    pub fn len(&self) -> usize {
        self.sub_requests.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.sub_requests.iter().map(String::as_str)
    }
}

impl TryFrom<Vec<String>> for SubRequestPlan {
    type Error = AgentError;

    fn try_from(items: Vec<String>) -> Result<Self, Self::Error> {
        SubRequestPlan::new(items)
    }
}

impl From<SubRequestPlan> for Vec<String> {
    fn from(plan: SubRequestPlan) -> Self {
        plan.sub_requests
    }
}

/// A successful decomposition, with the raw backend output retained for
/// audit and the number of attempts it took.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionOutcome {
    pub decomposition: Decomposition,
    pub raw_output: String,
    pub attempts: u32,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("output stayed malformed after {attempts} attempt(s): {diagnostic}")]
    MalformedOutput { attempts: u32, diagnostic: String },
    #[error("sequencing produced an empty plan")]
    EmptyPlan,
    #[error("sub-request {index} is blank")]
    BlankSubRequest { index: usize },
    #[error("editing backend refused the request: {0}")]
    Refused(String),
    #[error("placeholder {{{name}}} is not bound")]
    UnboundPlaceholder { name: String },
    #[error("auth token environment variable {var} is not set")]
    MissingAuthToken { var: String },
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
    #[error("invalid endpoint configuration: {0}")]
    InvalidEndpoint(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Maps an edit request to its structured decomposition.
pub trait Decomposer: Send + Sync {
    fn decompose(&self, request: &EditRequest) -> Result<DecompositionOutcome, AgentError>;
}

/// Orders a decomposition into an executable plan for the given image.
/// Deliberately sees only the image and the decomposition, not the
/// original request text.
pub trait Sequencer: Send + Sync {
    fn sequence(
        &self,
        image: &ImageRef,
        decomposition: &Decomposition,
    ) -> Result<SubRequestPlan, AgentError>;
}

/// Applies one edit instruction to an image.
pub trait Editor: Send + Sync {
    fn edit(&self, image: &ImageRef, instruction: &str) -> Result<ImageRef, AgentError>;
}
