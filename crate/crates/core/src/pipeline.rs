//! Runs one edit request end to end: decompose the instruction, order
//! the edits into a plan, then apply the plan either as one composed
//! instruction (single turn) or as one editor call per sub-request with
//! the output image chained forward (multi turn).

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, Decomposer, Editor, Sequencer, SubRequestPlan};
use crate::schema::{Decomposition, EditRequest, ImageRef};

/// How the plan reaches the editing backend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStrategy {
    /// One edit call carrying every sub-request as a numbered list.
    /// The default: composed instructions avoid compounding errors
    /// across editing rounds.
    #[default]
    SingleTurn,
    /// One edit call per sub-request, each fed the previous output.
    MultiTurn,
}

impl std::fmt::Display for ExecutionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExecutionStrategy::SingleTurn => "single_turn",
            ExecutionStrategy::MultiTurn => "multi_turn",
        })
    }
}

/// The pipeline stage a failure is attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Decompose,
    Sequence,
    Edit,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Decompose => "decompose",
            Stage::Sequence => "sequence",
            Stage::Edit => "edit",
        })
    }
}

/// A stage failure. The pipeline never retries on its own; agent-level
/// retries have already run by the time an error reaches here.
#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: AgentError,
}

/// When a stage started and how long it ran. Start timestamps within
/// one run are forced strictly increasing so stage order stays
/// recoverable even on coarse clocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub started_unix_ns: u64,
    pub elapsed_ns: u64,
}

/// Everything one pipeline run produced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub request_id: String,
    /// The original edit instruction, kept with the result so scoring
    /// needs no side lookup.
    pub instruction: String,
    pub strategy: ExecutionStrategy,
    pub original_image: ImageRef,
    pub decomposition: Decomposition,
    /// Raw decomposer transcript, retained for audit.
    pub decomposition_raw: String,
    pub decompose_attempts: u32,
    pub plan: SubRequestPlan,
    /// The exact instruction text of each edit call, in call order.
    pub edit_instructions: Vec<String>,
    pub edited_image: ImageRef,
    /// Always 1 under single turn and |plan| under multi turn.
    pub edit_call_count: usize,
    pub timings: Vec<StageRecord>,
}

impl PipelineResult {
    /// A copy with zeroed timings, for comparisons that should ignore
    /// wall-clock noise.
    pub fn timeless(&self) -> Self {
        let mut copy = self.clone();
        for t in &mut copy.timings {
            t.started_unix_ns = 0;
            t.elapsed_ns = 0;
        }
        copy
    }
}

/// Joins a plan into one numbered instruction: `1. <r1>. 2. <r2>.` and
/// so on. Injective for plans whose items carry no `N. ` prefixes of
/// their own, which [`split_single_turn`] relies on.
pub fn compose_single_turn(plan: &SubRequestPlan) -> String {
    plan.iter()
        .enumerate()
        .map(|(i, item)| format!("{}. {}.", i + 1, item))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Inverse of [`compose_single_turn`] for plans without embedded
/// numbering: splits on the `N. ` markers and drops the added periods.
pub fn split_single_turn(text: &str) -> Vec<String> {
    let mut items = Vec::new();
    let mut rest = text.trim();
    let mut k = 1usize;
    while !rest.is_empty() {
        let marker = format!("{k}. ");
        let Some(body) = rest.strip_prefix(marker.as_str()) else {
            break;
        };
        let next = format!(". {}. ", k + 1);
        if let Some(at) = body.find(next.as_str()) {
            items.push(body[..at].to_string());
            rest = &body[at + 2..];
        } else {
            items.push(body.strip_suffix('.').unwrap_or(body).to_string());
            rest = "";
        }
        k += 1;
    }
    items
}

fn unix_ns() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

fn next_timestamp(last: &mut u64) -> u64 {
    let now = unix_ns().max(*last + 1);
    *last = now;
    now
}

/// Executes decompose, sequence and edit in order. Any stage error
/// aborts the run, attributed to that stage.
pub fn run_pipeline(
    request: &EditRequest,
    decomposer: &dyn Decomposer,
    sequencer: &dyn Sequencer,
    editor: &dyn Editor,
    strategy: ExecutionStrategy,
) -> Result<PipelineResult, PipelineError> {
    let at = |stage: Stage| move |source: AgentError| PipelineError { stage, source };
    let mut last_ts = 0u64;
    let mut timings = Vec::with_capacity(3);
    let mut timed = |stage: Stage, started: u64, begun: Instant| {
        timings.push(StageRecord {
            stage,
            started_unix_ns: started,
            elapsed_ns: begun.elapsed().as_nanos() as u64,
        });
    };

    let started = next_timestamp(&mut last_ts);
    let begun = Instant::now();
    let outcome = decomposer.decompose(request).map_err(at(Stage::Decompose))?;
    timed(Stage::Decompose, started, begun);

    let started = next_timestamp(&mut last_ts);
    let begun = Instant::now();
    let plan = sequencer
        .sequence(&request.source_image, &outcome.decomposition)
        .map_err(at(Stage::Sequence))?;
    timed(Stage::Sequence, started, begun);

    let started = next_timestamp(&mut last_ts);
    let begun = Instant::now();
    let mut edit_instructions = Vec::new();
    let edited_image = match strategy {
        ExecutionStrategy::SingleTurn => {
            let instruction = compose_single_turn(&plan);
            let image = editor
                .edit(&request.source_image, &instruction)
                .map_err(at(Stage::Edit))?;
            edit_instructions.push(instruction);
            image
        }
        ExecutionStrategy::MultiTurn => {
            let mut image = request.source_image.clone();
            for sub_request in plan.iter() {
                image = editor.edit(&image, sub_request).map_err(at(Stage::Edit))?;
                edit_instructions.push(sub_request.to_string());
            }
            image
        }
    };
    timed(Stage::Edit, started, begun);

    Ok(PipelineResult {
        request_id: request.id.clone(),
        instruction: request.instruction.clone(),
        strategy,
        original_image: request.source_image.clone(),
        decomposition: outcome.decomposition,
        decomposition_raw: outcome.raw_output,
        decompose_attempts: outcome.attempts,
        plan,
        edit_call_count: edit_instructions.len(),
        edit_instructions,
        edited_image,
        timings,
    })
}
