//! Rubric-based scoring of edited images. A vision-language judge sees
//! the original and edited images plus the edit request, grades
//! fulfillment (0-4), quality (0-3) and preservation (0-3), and replies
//! with a machine-readable score block. This module builds the prompt,
//! parses and validates replies, aggregates scores across a run, and
//! correlates judge totals with human annotations.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    call_with_retries, chat_reply_text, chat_request, chat_url, AgentEndpoint, AgentError, Gate,
    Transport,
};
use crate::pipeline::PipelineResult;
use crate::schema::ImageRef;

/// The grading rubric sent to the judge, with `{edit_request}` standing
/// in for the instruction under evaluation. Tests pin this text; change
/// it only together with them.
const RUBRIC: &str = r#"You are an expert image quality evaluator. You will be shown two images:
1. The ORIGINAL image (first image)
2. The EDITED image (second image)

Edit Request: "{edit_request}"

Please evaluate how well the edited image fulfills the edit request compared to the original image.

Evaluation Criteria:
1. Request Fulfillment (0-4 points): Did the edit successfully accomplish what was requested?
   - 4: Perfectly fulfills the request
   - 3: Mostly fulfills the request with minor issues
   - 2: Partially fulfills the request
   - 1: Barely fulfills the request
   - 0: Does not fulfill the request

2. Image Quality (0-3 points): Is the edited image realistic, coherent, and high quality?
   - 3: Excellent quality, looks natural and professional
   - 2: Good quality with minor artifacts or inconsistencies
   - 1: Noticeable quality issues or artifacts
   - 0: Poor quality, obviously edited

3. Preservation (0-3 points): Are unrelated parts of the image properly preserved?
   - 3: All unrelated areas perfectly preserved
   - 2: Minor changes to unrelated areas
   - 1: Significant unwanted changes
   - 0: Major damage to unrelated areas

Be strict but fair in your evaluation. A score of 10 means perfect execution in all aspects."#;

/// Appended to the rubric so replies end in a block the parser can
/// extract without guessing at prose.
const DIRECTIVE: &str = r#"After your evaluation, finish your reply with exactly this block, using plain integers:

<scores>
fulfillment: <0-4>
quality: <0-3>
preservation: <0-3>
</scores>"#;

const JUDGE_SYSTEM: &str = "Follow the evaluation instructions exactly.";

pub const FULFILLMENT_MAX: u8 = 4;
pub const QUALITY_MAX: u8 = 3;
pub const PRESERVATION_MAX: u8 = 3;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("reply has no <scores> block")]
    MissingScoresBlock,
    #[error("score block is missing the {field} field")]
    MissingField { field: &'static str },
    #[error("{field} score is not an integer")]
    BadInteger { field: &'static str },
    #[error("{field} score {value} is outside 0..={max}")]
    OutOfRange {
        field: &'static str,
        value: i64,
        max: u8,
    },
    #[error("stated total {stated} does not match component sum {computed}")]
    TotalMismatch { stated: u8, computed: u8 },
    #[error("correlation needs {left} and {right} to be the same length")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation needs at least two points, got {points}")]
    TooFewPoints { points: usize },
    #[error("correlation is undefined: {which} has zero variance")]
    ZeroVariance { which: &'static str },
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// One judged edit: three graded components, their sum, and whatever
/// prose surrounded the score block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawJudgeScore", into = "RawJudgeScore")]
pub struct JudgeScore {
    pub fulfillment: u8,
    pub quality: u8,
    pub preservation: u8,
    pub total: u8,
    pub rationale: String,
}

#[derive(Serialize, Deserialize)]
struct RawJudgeScore {
    fulfillment: u8,
    quality: u8,
    preservation: u8,
    total: u8,
    rationale: String,
}

impl From<JudgeScore> for RawJudgeScore {
    fn from(s: JudgeScore) -> Self {
        RawJudgeScore {
            fulfillment: s.fulfillment,
            quality: s.quality,
            preservation: s.preservation,
            total: s.total,
            rationale: s.rationale,
        }
    }
}

impl TryFrom<RawJudgeScore> for JudgeScore {
    type Error = JudgeError;

    fn try_from(raw: RawJudgeScore) -> Result<Self, JudgeError> {
        let score = JudgeScore::new(
            raw.fulfillment,
            raw.quality,
            raw.preservation,
            raw.rationale,
        )?;
        if raw.total != score.total {
            return Err(JudgeError::TotalMismatch {
                stated: raw.total,
                computed: score.total,
            });
        }
        Ok(score)
    }
}

impl JudgeScore {
    /// Builds a score, range-checking each component. The total is
    /// always recomputed, never taken on trust.
    pub fn new(
        fulfillment: u8,
        quality: u8,
        preservation: u8,
        rationale: String,
    ) -> Result<Self, JudgeError> {
        for (field, value, max) in [
            ("fulfillment", fulfillment, FULFILLMENT_MAX),
            ("quality", quality, QUALITY_MAX),
            ("preservation", preservation, PRESERVATION_MAX),
        ] {
            if value > max {
                return Err(JudgeError::OutOfRange {
                    field,
                    value: value as i64,
                    max,
                });
            }
        }
        Ok(JudgeScore {
            fulfillment,
            quality,
            preservation,
            total: fulfillment + quality + preservation,
            rationale,
        })
    }
}

/// The rubric with the instruction substituted, plus the score-block
/// directive.
pub fn build_judge_prompt(instruction: &str) -> String {
    format!(
        "{}\n\n{}",
        RUBRIC.replace("{edit_request}", instruction),
        DIRECTIVE
    )
}

/// Renders a score into the directive's block format. Parsing the
/// result recovers the same components.
pub fn render_score_block(score: &JudgeScore) -> String {
    format!(
        "<scores>\nfulfillment: {}\nquality: {}\npreservation: {}\n</scores>",
        score.fulfillment, score.quality, score.preservation
    )
}

fn block_field(block: &str, field: &'static str, max: u8) -> Result<u8, JudgeError> {
    let mut found = None;
    for line in block.lines() {
        if let Some((key, value)) = line.split_once(':') {
            if key.trim() == field {
                found = Some(value.trim());
            }
        }
    }
    let text = found.ok_or(JudgeError::MissingField { field })?;
    let value: i64 = text
        .parse()
        .map_err(|_| JudgeError::BadInteger { field })?;
    if value < 0 || value > max as i64 {
        return Err(JudgeError::OutOfRange { field, value, max });
    }
    Ok(value as u8)
}

/// Extracts the score block from a judge reply. Only the last
/// `<scores>` block counts; numbers in the surrounding prose are
/// ignored, and the prose becomes the rationale.
pub fn parse_judge_response(text: &str) -> Result<JudgeScore, JudgeError> {
    let open = text.rfind("<scores>").ok_or(JudgeError::MissingScoresBlock)?;
    let body_start = open + "<scores>".len();
    let close_rel = text[body_start..]
        .find("</scores>")
        .ok_or(JudgeError::MissingScoresBlock)?;
    let block = &text[body_start..body_start + close_rel];

    let fulfillment = block_field(block, "fulfillment", FULFILLMENT_MAX)?;
    let quality = block_field(block, "quality", QUALITY_MAX)?;
    let preservation = block_field(block, "preservation", PRESERVATION_MAX)?;

    let before = text[..open].trim();
    let after = text[body_start + close_rel + "</scores>".len()..].trim();
    let rationale = match (before.is_empty(), after.is_empty()) {
        (true, true) => String::new(),
        (false, true) => before.to_string(),
        (true, false) => after.to_string(),
        (false, false) => format!("{before}\n{after}"),
    };
    JudgeScore::new(fulfillment, quality, preservation, rationale)
}

/// Scores one edit given the request text and the before/after images.
pub trait JudgeBackend: Send + Sync {
    fn judge(
        &self,
        instruction: &str,
        original: &ImageRef,
        edited: &ImageRef,
    ) -> Result<JudgeScore, JudgeError>;
}

/// A judge behind a chat-completions endpoint. The original image is
/// sent first and the edited image second, matching the rubric's
/// numbering; temperature is pinned to 0 for reproducible grading.
pub struct RemoteJudge {
    endpoint: AgentEndpoint,
    transport: Arc<dyn Transport>,
    gate: Gate,
}

impl RemoteJudge {
    pub fn new(endpoint: AgentEndpoint, transport: Arc<dyn Transport>) -> Result<Self, JudgeError> {
        endpoint.validate()?;
        let gate = Gate::new(endpoint.parallelism_cap);
        Ok(RemoteJudge {
            endpoint,
            transport,
            gate,
        })
    }
}

impl JudgeBackend for RemoteJudge {
    fn judge(
        &self,
        instruction: &str,
        original: &ImageRef,
        edited: &ImageRef,
    ) -> Result<JudgeScore, JudgeError> {
        let prompt = build_judge_prompt(instruction);
        let body = chat_request(
            &self.endpoint.model_name,
            0.0,
            JUDGE_SYSTEM,
            &prompt,
            &[original, edited],
        );
        let url = chat_url(&self.endpoint.base_url);
        let response = call_with_retries(
            self.transport.as_ref(),
            &self.endpoint,
            &self.gate,
            &url,
            &body,
        )?;
        let text = chat_reply_text(&response)?;
        parse_judge_response(&text)
    }
}

/// A judge that grades everything identically. Useful for exercising
/// aggregation without a backend.
#[derive(Clone, Copy, Debug)]
pub struct MockJudge {
    fulfillment: u8,
    quality: u8,
    preservation: u8,
}

impl MockJudge {
    /// A judge that always answers with the given components.
    pub fn constant(fulfillment: u8, quality: u8, preservation: u8) -> Self {
        MockJudge {
            fulfillment,
            quality,
            preservation,
        }
    }
}

impl Default for MockJudge {
    fn default() -> Self {
        MockJudge::constant(3, 2, 3)
    }
}

impl JudgeBackend for MockJudge {
    fn judge(
        &self,
        _instruction: &str,
        _original: &ImageRef,
        _edited: &ImageRef,
    ) -> Result<JudgeScore, JudgeError> {
        JudgeScore::new(
            self.fulfillment,
            self.quality,
            self.preservation,
            "constant mock judgment".to_string(),
        )
    }
}

/// What one (record, judge) pairing produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JudgeOutcome {
    Scored { score: JudgeScore },
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub record_id: String,
    pub judge: String,
    #[serde(flatten)]
    pub outcome: JudgeOutcome,
}

/// Per-judge aggregates. Means are over scored records only and are 0
/// when a judge scored nothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeSummary {
    pub judge: String,
    pub scored: usize,
    pub failed: usize,
    pub mean_fulfillment: f64,
    pub mean_quality: f64,
    pub mean_preservation: f64,
    pub mean_total: f64,
}

/// Pearson correlation between one judge's totals and human totals,
/// over the records where both exist.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanCorrelation {
    pub judge: String,
    pub points: usize,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// One entry per (record, judge), ordered by record id then judge
    /// position.
    pub scores: Vec<ScoredRecord>,
    pub judges: Vec<JudgeSummary>,
    /// Present only for judges with at least two records that also
    /// carry human totals and nonzero variance on both sides.
    pub human_correlations: Vec<HumanCorrelation>,
}

/// Scores every pipeline result under every judge. Per-record failures
/// are recorded, not fatal; means cover successes only. `human_totals`
/// maps record ids to annotated totals and may be empty.
pub fn evaluate_run(
    results: &[PipelineResult],
    judges: &[(&str, &dyn JudgeBackend)],
    human_totals: &BTreeMap<String, f64>,
) -> EvaluationReport {
    let mut ordered: Vec<&PipelineResult> = results.iter().collect();
    ordered.sort_by(|a, b| a.request_id.cmp(&b.request_id));

    let mut scores = Vec::with_capacity(ordered.len() * judges.len());
    for result in &ordered {
        for (name, backend) in judges {
            let outcome = match backend.judge(
                &result.instruction,
                &result.original_image,
                &result.edited_image,
            ) {
                Ok(score) => JudgeOutcome::Scored { score },
                Err(e) => JudgeOutcome::Failed {
                    error: e.to_string(),
                },
            };
            scores.push(ScoredRecord {
                record_id: result.request_id.clone(),
                judge: name.to_string(),
                outcome,
            });
        }
    }
    let judge_order: Vec<String> = judges.iter().map(|(n, _)| n.to_string()).collect();
    assemble_report(scores, &judge_order, human_totals)
}

/// Aggregates already-produced scores into a report. Pure: rebuilding a
/// report from persisted scores goes through this same path, so the
/// rendered output is a function of the stored records alone.
pub fn assemble_report(
    scores: Vec<ScoredRecord>,
    judge_order: &[String],
    human_totals: &BTreeMap<String, f64>,
) -> EvaluationReport {
    let mut summaries: Vec<JudgeSummary> = judge_order
        .iter()
        .map(|name| JudgeSummary {
            judge: name.clone(),
            scored: 0,
            failed: 0,
            mean_fulfillment: 0.0,
            mean_quality: 0.0,
            mean_preservation: 0.0,
            mean_total: 0.0,
        })
        .collect();
    let mut paired: Vec<(Vec<f64>, Vec<f64>)> =
        vec![(Vec::new(), Vec::new()); judge_order.len()];

    for record in &scores {
        let Some(j) = judge_order.iter().position(|name| *name == record.judge) else {
            continue;
        };
        match &record.outcome {
            JudgeOutcome::Scored { score } => {
                let summary = &mut summaries[j];
                summary.scored += 1;
                summary.mean_fulfillment += score.fulfillment as f64;
                summary.mean_quality += score.quality as f64;
                summary.mean_preservation += score.preservation as f64;
                summary.mean_total += score.total as f64;
                if let Some(human) = human_totals.get(&record.record_id) {
                    paired[j].0.push(score.total as f64);
                    paired[j].1.push(*human);
                }
            }
            JudgeOutcome::Failed { .. } => summaries[j].failed += 1,
        }
    }

    for summary in &mut summaries {
        if summary.scored > 0 {
            let n = summary.scored as f64;
            summary.mean_fulfillment /= n;
            summary.mean_quality /= n;
            summary.mean_preservation /= n;
            summary.mean_total /= n;
        }
    }

    let human_correlations = judge_order
        .iter()
        .zip(&paired)
        .filter_map(|(name, (judge_totals, human))| {
            pearson_correlation(judge_totals, human)
                .ok()
                .map(|r| HumanCorrelation {
                    judge: name.clone(),
                    points: judge_totals.len(),
                    r,
                })
        })
        .collect();

    EvaluationReport {
        scores,
        judges: summaries,
        human_correlations,
    }
}

/// Sample Pearson correlation. Exactly 1 or -1 when the centered
/// moments satisfy the equality case; otherwise the usual ratio,
/// clamped into [-1, 1] against rounding overshoot.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Result<f64, JudgeError> {
    if xs.len() != ys.len() {
        return Err(JudgeError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(JudgeError::TooFewPoints { points: xs.len() });
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(JudgeError::ZeroVariance { which: "xs" });
    }
    if syy == 0.0 {
        return Err(JudgeError::ZeroVariance { which: "ys" });
    }
    if sxy * sxy == sxx * syy {
        return Ok(if sxy > 0.0 { 1.0 } else { -1.0 });
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Renders rows of evaluation reports as an aligned text table: one
/// column per judge's mean total plus an Average column.
pub fn score_table(rows: &[(&str, &EvaluationReport)]) -> String {
    let mut columns: Vec<String> = Vec::new();
    for (_, report) in rows {
        for summary in &report.judges {
            if !columns.contains(&summary.judge) {
                columns.push(summary.judge.clone());
            }
        }
    }

    let mut grid: Vec<Vec<String>> = Vec::with_capacity(rows.len() + 1);
    let mut header = vec!["method".to_string()];
    header.extend(columns.iter().cloned());
    header.push("Average".to_string());
    grid.push(header);

    for (label, report) in rows {
        let mut cells = vec![label.to_string()];
        let mut present = Vec::new();
        for column in &columns {
            match report.judges.iter().find(|s| &s.judge == column) {
                Some(summary) if summary.scored > 0 => {
                    present.push(summary.mean_total);
                    cells.push(format!("{:.2}", summary.mean_total));
                }
                _ => cells.push("-".to_string()),
            }
        }
        if present.is_empty() {
            cells.push("-".to_string());
        } else {
            cells.push(format!(
                "{:.2}",
                present.iter().sum::<f64>() / present.len() as f64
            ));
        }
        grid.push(cells);
    }

    let width_of = |col: usize| grid.iter().map(|row| row[col].len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..grid[0].len()).map(width_of).collect();
    let mut out = String::new();
    for (r, row) in grid.iter().enumerate() {
        let line = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<width$}", width = widths[0])
                } else {
                    format!("{cell:>width$}", width = widths[c])
                }
            })
            .collect::<Vec<_>>()
            .join("  ");
        out.push_str(line.trim_end());
        out.push('\n');
        if r == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}
