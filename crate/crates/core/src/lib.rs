//! Building blocks for instruction-driven image editing with a
//! decompose / sequence / edit agent pipeline, plus the training and
//! evaluation tooling around it:
//!
//! - [`schema`]: the tagged decomposition output format (`<think>`,
//!   `<action>`, `<subjects>`, `<goals>`), its parser, serializer and
//!   term normalization.
//! - [`rewards`]: format and set-F1 rewards over decompositions.
//! - [`grpo`]: group-relative policy optimization at desk scale, with a
//!   tabular softmax policy, analytic gradients and a toy training task.
//! - [`agents`]: transport, wire formats, remote clients and
//!   deterministic mocks for the three agent roles.
//! - [`pipeline`]: end-to-end decompose -> sequence -> edit execution.
//! - [`judge`]: rubric-based scoring of edited images and score
//!   statistics.
//! - [`bench`]: dataset ingestion, benchmark runs, persistence and
//!   report rendering.

pub mod agents;
pub mod bench;
pub mod grpo;
pub mod judge;
pub mod pipeline;
pub mod rewards;
pub mod schema;

pub use rewards::{decomposition_reward, format_reward, set_f1, RewardBreakdown, RewardConfig};
pub use schema::{
    normalize_term, parse_tagged_output, serialize_decomposition, Decomposition, EditRequest,
    ImageRef, ParseOutcome, TermSet,
};
