//! Remote agent clients: chat-completions calls for the language roles
//! and image-edit calls for the editor, with bounded retries, a
//! per-endpoint parallelism cap, and re-prompting on malformed output.

use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;

use crate::schema::{
    parse_tagged_output, serialize_decomposition, Decomposition, EditRequest, ImageRef,
};

use super::prompts::{decompose_template, sequence_template, PromptTemplate};
use super::transport::{backoff_delay, Gate, Transport};
use super::wire;
use super::{
    AgentEndpoint, AgentError, Decomposer, DecompositionOutcome, Editor, Sequencer,
    SubRequestPlan,
};

/// Agents re-send a corrected request this many times after a malformed
/// reply before giving up (total attempts = budget + 1).
pub(crate) const DEFAULT_REPROMPT_BUDGET: u32 = 2;

const DECOMPOSE_SYSTEM: &str =
    "You decompose image edit requests into structured parts. Follow the output format exactly.";
const SEQUENCE_SYSTEM: &str =
    "You order decomposed image edits into an executable plan. Follow the output format exactly.";

/// POSTs with the endpoint's retry policy: network errors and HTTP
/// 429/5xx retry up to `max_retries` with exponentially growing delays.
pub(crate) fn call_with_retries(
    transport: &dyn Transport,
    endpoint: &AgentEndpoint,
    gate: &Gate,
    url: &str,
    body: &Value,
) -> Result<Value, AgentError> {
    let token = endpoint.auth_token()?;
    let mut attempt = 0u32;
    loop {
        let outcome = {
            let _slot = gate.acquire();
            transport.post_json(url, token.as_deref(), body, endpoint.timeout())
        };
        match outcome {
            Ok(value) => return Ok(value),
            Err(e) if e.is_retryable() && attempt < endpoint.max_retries => {
                std::thread::sleep(backoff_delay(
                    Duration::from_millis(endpoint.initial_backoff_ms),
                    attempt,
                ));
                attempt += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Splits a numbered-list completion into plan items: leading `N.`,
/// `N)`, or `-` markers are stripped, blank lines dropped.
pub fn parse_numbered_plan(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| {
            let line = line.trim();
            let unnumbered = line
                .strip_prefix(|c: char| c.is_ascii_digit())
                .map(|rest| rest.trim_start_matches(|c: char| c.is_ascii_digit()))
                .and_then(|rest| {
                    rest.strip_prefix('.')
                        .or_else(|| rest.strip_prefix(')'))
                })
                .unwrap_or_else(|| line.strip_prefix('-').unwrap_or(line));
            unnumbered.trim().to_string()
        })
        .filter(|item| !item.is_empty())
        .collect()
}

pub struct RemoteDecomposer {
    endpoint: AgentEndpoint,
    transport: Arc<dyn Transport>,
    template: PromptTemplate,
    reprompt_budget: u32,
    gate: Gate,
}

impl RemoteDecomposer {
    pub fn new(endpoint: AgentEndpoint, transport: Arc<dyn Transport>) -> Result<Self, AgentError> {
        endpoint.validate()?;
        let gate = Gate::new(endpoint.parallelism_cap);
        Ok(RemoteDecomposer {
            endpoint,
            transport,
            template: decompose_template(),
            reprompt_budget: DEFAULT_REPROMPT_BUDGET,
            gate,
        })
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn with_reprompt_budget(mut self, budget: u32) -> Self {
        self.reprompt_budget = budget;
        self
    }
}

impl Decomposer for RemoteDecomposer {
    fn decompose(&self, request: &EditRequest) -> Result<DecompositionOutcome, AgentError> {
        request.validate()?;
        let base_text = self
            .template
            .render(&[("instruction", request.instruction.as_str())])?;
        let url = wire::chat_url(&self.endpoint.base_url);
        let mut user_text = base_text.clone();
        let mut last_diagnostic = String::new();
        let attempts_allowed = 1 + self.reprompt_budget;
        for attempt in 1..=attempts_allowed {
            let body = wire::chat_request(
                &self.endpoint.model_name,
                0.0,
                DECOMPOSE_SYSTEM,
                &user_text,
                &[&request.source_image],
            );
            let response =
                call_with_retries(self.transport.as_ref(), &self.endpoint, &self.gate, &url, &body)?;
            let text = wire::chat_reply_text(&response)?;
            let outcome = parse_tagged_output(&text);
            if let (true, Some(decomposition)) = (outcome.well_formed, outcome.decomposition) {
                return Ok(DecompositionOutcome {
                    decomposition,
                    raw_output: text,
                    attempts: attempt,
                });
            }
            last_diagnostic = outcome
                .diagnostics
                .first()
                .map(ToString::to_string)
                .unwrap_or_else(|| "output did not parse".to_string());
            user_text = format!(
                "{base_text}\n\nYour previous reply was rejected ({last_diagnostic}). \
Reply again using exactly the four tag sections."
            );
        }
        Err(AgentError::MalformedOutput {
            attempts: attempts_allowed,
            diagnostic: last_diagnostic,
        })
    }
}

pub struct RemoteSequencer {
    endpoint: AgentEndpoint,
    transport: Arc<dyn Transport>,
    template: PromptTemplate,
    reprompt_budget: u32,
    gate: Gate,
}

impl RemoteSequencer {
    pub fn new(endpoint: AgentEndpoint, transport: Arc<dyn Transport>) -> Result<Self, AgentError> {
        endpoint.validate()?;
        let gate = Gate::new(endpoint.parallelism_cap);
        Ok(RemoteSequencer {
            endpoint,
            transport,
            template: sequence_template(),
            reprompt_budget: DEFAULT_REPROMPT_BUDGET,
            gate,
        })
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn with_reprompt_budget(mut self, budget: u32) -> Self {
        self.reprompt_budget = budget;
        self
    }
}

impl Sequencer for RemoteSequencer {
    fn sequence(
        &self,
        image: &ImageRef,
        decomposition: &Decomposition,
    ) -> Result<SubRequestPlan, AgentError> {
        let serialized = serialize_decomposition(decomposition)?;
        let base_text = self
            .template
            .render(&[("decomposition", serialized.as_str())])?;
        let url = wire::chat_url(&self.endpoint.base_url);
        let mut user_text = base_text.clone();
        for _ in 0..=self.reprompt_budget {
            let body = wire::chat_request(
                &self.endpoint.model_name,
                0.0,
                SEQUENCE_SYSTEM,
                &user_text,
                &[image],
            );
            let response =
                call_with_retries(self.transport.as_ref(), &self.endpoint, &self.gate, &url, &body)?;
            let text = wire::chat_reply_text(&response)?;
            let items = parse_numbered_plan(&text);
            if !items.is_empty() {
                return SubRequestPlan::new(items);
            }
            user_text = format!(
                "{base_text}\n\nYour previous reply contained no sub-requests. \
Reply again with a numbered list of imperative edits."
            );
        }
        Err(AgentError::EmptyPlan)
    }
}

pub struct RemoteEditor {
    endpoint: AgentEndpoint,
    transport: Arc<dyn Transport>,
    gate: Gate,
}

impl RemoteEditor {
    pub fn new(endpoint: AgentEndpoint, transport: Arc<dyn Transport>) -> Result<Self, AgentError> {
        endpoint.validate()?;
        let gate = Gate::new(endpoint.parallelism_cap);
        Ok(RemoteEditor {
            endpoint,
            transport,
            gate,
        })
    }
}

impl Editor for RemoteEditor {
    fn edit(&self, image: &ImageRef, instruction: &str) -> Result<ImageRef, AgentError> {
        if instruction.trim().is_empty() {
            return Err(AgentError::BlankSubRequest { index: 0 });
        }
        let url = wire::edit_url(&self.endpoint.base_url);
        let body = wire::edit_request(&self.endpoint.model_name, instruction, image);
        let response =
            call_with_retries(self.transport.as_ref(), &self.endpoint, &self.gate, &url, &body)?;
        wire::edit_reply_image(&response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::transport::{ScriptedTransport, TransportError};
    use crate::schema::TermSet;
    use serde_json::json;

    fn endpoint() -> AgentEndpoint {
        let mut e = AgentEndpoint::new("http://agents.test/v1", "test-model");
        e.initial_backoff_ms = 1;
        e
    }

    fn chat_reply(text: &str) -> Value {
        json!({"choices": [{"message": {"content": text}}]})
    }

    const WELL_FORMED: &str = "<think>ok</think><action>[\"Recoloring\"]</action>\
<subjects>[\"coat\"]</subjects><goals>[\"scarlet\"]</goals>";

    #[test]
    fn numbered_plans_parse_across_marker_styles() {
        let text = "1. Recolor the coat\n2) Sharpen the face\n- Trim the hedge\n\n3.Final pass";
        assert_eq!(
            parse_numbered_plan(text),
            [
                "Recolor the coat",
                "Sharpen the face",
                "Trim the hedge",
                "Final pass"
            ]
        );
        assert!(parse_numbered_plan("\n  \n").is_empty());
    }

    #[test]
    fn decomposer_parses_well_formed_reply() {
        let transport = Arc::new(ScriptedTransport::new([Ok(chat_reply(WELL_FORMED))]));
        let agent = RemoteDecomposer::new(endpoint(), transport.clone()).unwrap();
        let request = EditRequest::new(
            "r1",
            "Recolor the coat to scarlet",
            ImageRef::uri("in.png").unwrap(),
        )
        .unwrap();
        let outcome = agent.decompose(&request).unwrap();
        assert_eq!(outcome.attempts, 1);
        assert_eq!(outcome.decomposition.actions.as_slice(), ["Recoloring"]);
        assert_eq!(outcome.raw_output, WELL_FORMED);
        let (url, body) = transport.requests().remove(0);
        assert_eq!(url, "http://agents.test/v1/chat/completions");
        assert_eq!(body["model"], "test-model");
        let text = body["messages"][1]["content"][0]["text"].as_str().unwrap();
        assert!(text.contains("Recolor the coat to scarlet"));
    }

    #[test]
    fn decomposer_reprompts_then_succeeds_recording_attempts() {
        let transport = Arc::new(ScriptedTransport::new([
            Ok(chat_reply("<action>only one tag</action>")),
            Ok(chat_reply("no tags at all")),
            Ok(chat_reply(WELL_FORMED)),
        ]));
        let agent = RemoteDecomposer::new(endpoint(), transport.clone())
            .unwrap()
            .with_reprompt_budget(3);
        let request =
            EditRequest::new("r1", "recolor", ImageRef::uri("in.png").unwrap()).unwrap();
        let outcome = agent.decompose(&request).unwrap();
        assert_eq!(outcome.attempts, 3);
        // the re-prompt carries the parse diagnostic back to the model
        let second = transport.requests()[1].1["messages"][1]["content"][0]["text"]
            .as_str()
            .unwrap()
            .to_string();
        assert!(second.contains("rejected"), "{second}");
    }

    #[test]
    fn decomposer_gives_up_after_budget() {
        let transport = Arc::new(ScriptedTransport::new([
            Ok(chat_reply("junk")),
            Ok(chat_reply("junk")),
            Ok(chat_reply("junk")),
        ]));
        let agent = RemoteDecomposer::new(endpoint(), transport).unwrap();
        let request =
            EditRequest::new("r1", "recolor", ImageRef::uri("in.png").unwrap()).unwrap();
        let err = agent.decompose(&request).unwrap_err();
        assert!(
            matches!(err, AgentError::MalformedOutput { attempts: 3, .. }),
            "{err}"
        );
    }

    #[test]
    fn transport_failures_retry_until_budget_then_surface() {
        let net = || Err(TransportError::Network("reset".into()));
        let transport = Arc::new(ScriptedTransport::new([
            net(),
            net(),
            Ok(chat_reply(WELL_FORMED)),
        ]));
        let agent = RemoteDecomposer::new(endpoint(), transport.clone()).unwrap();
        let request =
            EditRequest::new("r1", "recolor", ImageRef::uri("in.png").unwrap()).unwrap();
        // max_retries = 2: two failures then success, all one attempt
        let outcome = agent.decompose(&request).unwrap();
        assert_eq!(outcome.attempts, 1);
        assert_eq!(transport.requests().len(), 3);

        let transport = Arc::new(ScriptedTransport::new([net(), net(), net()]));
        let agent = RemoteDecomposer::new(endpoint(), transport).unwrap();
        assert!(matches!(
            agent.decompose(&request),
            Err(AgentError::Transport(TransportError::Network(_)))
        ));
    }

    #[test]
    fn permanent_statuses_do_not_retry() {
        let transport = Arc::new(ScriptedTransport::new([Err(TransportError::Status {
            status: 400,
            body: "bad".into(),
        })]));
        let agent = RemoteDecomposer::new(endpoint(), transport.clone()).unwrap();
        let request =
            EditRequest::new("r1", "recolor", ImageRef::uri("in.png").unwrap()).unwrap();
        assert!(agent.decompose(&request).is_err());
        assert_eq!(transport.requests().len(), 1);
    }

    #[test]
    fn sequencer_builds_plan_and_rejects_empty() {
        let transport = Arc::new(ScriptedTransport::new([Ok(chat_reply(
            "1. Recoloring coat to scarlet\n2. Recoloring hair to copper red",
        ))]));
        let agent = RemoteSequencer::new(endpoint(), transport.clone()).unwrap();
        let d = Decomposition::new(
            TermSet::new(["Recoloring"]),
            TermSet::new(["coat", "hair"]),
            TermSet::new(["scarlet or copper red"]),
            None,
        )
        .unwrap();
        let image = ImageRef::uri("in.png").unwrap();
        let plan = agent.sequence(&image, &d).unwrap();
        assert_eq!(
            plan.sub_requests(),
            ["Recoloring coat to scarlet", "Recoloring hair to copper red"]
        );
        // the request embeds the canonical decomposition text
        let body = transport.requests()[0].1.clone();
        let text = body["messages"][1]["content"][0]["text"].as_str().unwrap();
        assert!(text.contains("<subjects>[\"coat\", \"hair\"]</subjects>"), "{text}");

        let empty = Arc::new(ScriptedTransport::new([
            Ok(chat_reply("")),
            Ok(chat_reply("\n")),
            Ok(chat_reply("  ")),
        ]));
        let agent = RemoteSequencer::new(endpoint(), empty).unwrap();
        assert!(matches!(
            agent.sequence(&image, &d),
            Err(AgentError::EmptyPlan)
        ));
    }

    #[test]
    fn editor_round_trips_image_and_surfaces_refusal() {
        let transport = Arc::new(ScriptedTransport::new([
            Ok(json!({"image": "data:image/png;base64,AQID"})),
            Ok(json!({"refusal": "content policy"})),
        ]));
        let agent = RemoteEditor::new(endpoint(), transport.clone()).unwrap();
        let image = ImageRef::uri("in.png").unwrap();
        let out = agent.edit(&image, "recolor the coat").unwrap();
        assert_eq!(out, ImageRef::inline("image/png", vec![1, 2, 3]).unwrap());
        let (url, body) = transport.requests().remove(0);
        assert_eq!(url, "http://agents.test/v1/images/edits");
        assert_eq!(body["prompt"], "recolor the coat");
        assert_eq!(body["image"], "in.png");
        assert!(matches!(
            agent.edit(&image, "again"),
            Err(AgentError::Refused(r)) if r == "content policy"
        ));
        assert!(matches!(
            agent.edit(&image, "  "),
            Err(AgentError::BlankSubRequest { .. })
        ));
    }
}
