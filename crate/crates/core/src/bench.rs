//! Benchmark runs over line-delimited datasets: load and sample
//! records, pipeline each one, judge the results, and persist
//! everything under a per-run directory that supports resuming and
//! byte-stable report re-rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    AgentEndpoint, AgentError, Decomposer, Editor, MockDecomposer, MockEditor, MockSequencer,
    RemoteDecomposer, RemoteEditor, RemoteSequencer, ReqwestTransport, Sequencer,
};
use crate::grpo::GrpoConfig;
use crate::judge::{
    assemble_report, score_table, EvaluationReport, JudgeBackend, JudgeError, JudgeScore,
    MockJudge, RemoteJudge, ScoredRecord, FULFILLMENT_MAX, PRESERVATION_MAX, QUALITY_MAX,
};
use crate::pipeline::{run_pipeline, ExecutionStrategy, PipelineResult, Stage};
use crate::rewards::RewardConfig;
use crate::schema::{Decomposition, EditRequest, ImageRef, SchemaError};

const RECORDS_DIR: &str = "records";
const JUDGMENTS_DIR: &str = "judgments";
const CONFIG_SNAPSHOT: &str = "config.toml";
const REPORT_JSON: &str = "report.json";
const REPORT_TXT: &str = "report.txt";
const REPORT_CSV: &str = "report.csv";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {detail}")]
    BadFile { path: PathBuf, detail: String },
    #[error("dataset {path} contains no usable records")]
    NoValidRecords { path: PathBuf },
    #[error("bad configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot render report: {0}")]
    Render(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Human annotations for one record, on the same component scales the
/// judge uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawHumanScores", into = "RawHumanScores")]
pub struct HumanScores {
    pub fulfillment: u8,
    pub quality: u8,
    pub preservation: u8,
}

#[derive(Serialize, Deserialize)]
struct RawHumanScores {
    fulfillment: u8,
    quality: u8,
    preservation: u8,
}

impl From<HumanScores> for RawHumanScores {
    fn from(h: HumanScores) -> Self {
        RawHumanScores {
            fulfillment: h.fulfillment,
            quality: h.quality,
            preservation: h.preservation,
        }
    }
}

impl TryFrom<RawHumanScores> for HumanScores {
    type Error = JudgeError;

    fn try_from(raw: RawHumanScores) -> Result<Self, JudgeError> {
        HumanScores::new(raw.fulfillment, raw.quality, raw.preservation)
    }
}

impl HumanScores {
    pub fn new(fulfillment: u8, quality: u8, preservation: u8) -> Result<Self, JudgeError> {
        // same ranges as machine judging, checked the same way
        JudgeScore::new(fulfillment, quality, preservation, String::new())?;
        Ok(HumanScores {
            fulfillment,
            quality,
            preservation,
        })
    }

    pub fn total(&self) -> u8 {
        self.fulfillment + self.quality + self.preservation
    }
}

/// One dataset line: an edit request, optionally with a gold
/// decomposition and human score annotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub instruction: String,
    pub image: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Decomposition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_scores: Option<HumanScores>,
}

/// A line that could not become a usable record, and why.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetIssue {
    pub line: usize,
    pub reason: String,
}

/// A parsed record whose image cannot be resolved right now.
#[derive(Clone, Debug, PartialEq)]
pub struct SkippedRecord {
    pub record: DatasetRecord,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedDataset {
    /// Usable records, in file order (sampling preserves it).
    pub records: Vec<DatasetRecord>,
    pub skipped: Vec<SkippedRecord>,
    pub issues: Vec<DatasetIssue>,
}

/// Record ids double as file names under the run directory, so only a
/// conservative character set is allowed.
fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

fn image_unresolvable(image: &ImageRef, base: Option<&Path>) -> Option<String> {
    let ImageRef::Uri(uri) = image else {
        return None;
    };
    if uri.contains("://") || uri.starts_with("data:") || uri.starts_with("mock:") {
        return None;
    }
    let path = Path::new(uri);
    let candidate = match (path.is_absolute(), base) {
        (false, Some(dir)) => dir.join(path),
        _ => path.to_path_buf(),
    };
    if candidate.exists() {
        None
    } else {
        Some(format!("image file not found: {}", candidate.display()))
    }
}

/// Loads a line-delimited dataset. Bad lines become line-numbered
/// issues instead of failures; records whose image cannot be resolved
/// are returned as skipped. With `sample_size` set, keeps a uniform
/// sample without replacement, drawn from a ChaCha8 stream seeded with
/// `seed` so different runs (and implementations) select the same ids.
pub fn load_dataset(
    path: &Path,
    sample_size: Option<usize>,
    seed: u64,
) -> Result<LoadedDataset, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent();
    let mut loaded = LoadedDataset::default();
    let mut seen = BTreeSet::new();

    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut issue = |reason: String| {
            loaded.issues.push(DatasetIssue {
                line: line_no,
                reason,
            })
        };
        match serde_json::from_str::<DatasetRecord>(trimmed) {
            Err(e) => issue(format!("invalid record: {e}")),
            Ok(record) => {
                if !valid_id(&record.id) {
                    issue(format!(
                        "id {:?} is not a safe file name (letters, digits, '.', '_', '-')",
                        record.id
                    ));
                } else if record.instruction.trim().is_empty() {
                    issue(format!("record {}: empty instruction", record.id));
                } else if !seen.insert(record.id.clone()) {
                    issue(format!("duplicate id: {}", record.id));
                } else if let Some(reason) = image_unresolvable(&record.image, base) {
                    loaded.skipped.push(SkippedRecord { record, reason });
                } else {
                    loaded.records.push(record);
                }
            }
        }
    }

    if loaded.records.is_empty() && loaded.skipped.is_empty() {
        return Err(BenchError::NoValidRecords {
            path: path.to_path_buf(),
        });
    }

    if let Some(k) = sample_size {
        if k < loaded.records.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keep = rand::seq::index::sample(&mut rng, loaded.records.len(), k).into_vec();
            keep.sort_unstable();
            loaded.records = keep.into_iter().map(|i| loaded.records[i].clone()).collect();
        }
    }
    Ok(loaded)
}

/// Which backends serve the three pipeline roles.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)] // a handful of these exist per process
pub enum AgentsConfig {
    /// Deterministic in-process agents; no network, no secrets.
    #[default]
    Mock,
    Remote {
        decomposer: AgentEndpoint,
        sequencer: AgentEndpoint,
        editor: AgentEndpoint,
    },
}

fn default_judge_name() -> String {
    "mock".to_string()
}
fn default_fulfillment() -> u8 {
    3
}
fn default_quality() -> u8 {
    2
}
fn default_preservation() -> u8 {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum JudgeConfig {
    Mock {
        #[serde(default = "default_judge_name")]
        name: String,
        #[serde(default = "default_fulfillment")]
        fulfillment: u8,
        #[serde(default = "default_quality")]
        quality: u8,
        #[serde(default = "default_preservation")]
        preservation: u8,
    },
    Remote {
        name: String,
        endpoint: AgentEndpoint,
    },
}

impl JudgeConfig {
    pub fn name(&self) -> &str {
        match self {
            JudgeConfig::Mock { name, .. } | JudgeConfig::Remote { name, .. } => name,
        }
    }
}

fn default_judges() -> Vec<JudgeConfig> {
    vec![JudgeConfig::Mock {
        name: default_judge_name(),
        fulfillment: default_fulfillment(),
        quality: default_quality(),
        preservation: default_preservation(),
    }]
}

fn default_workers() -> usize {
    4
}

/// Everything one benchmark run needs, loadable from a TOML file.
/// Secrets never live here: endpoints name environment variables and
/// the tokens are read from the environment at call time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub strategy: ExecutionStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Process at most this many new records, then stop; a later run
    /// with the same output directory resumes the rest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_after: Option<usize>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub agents: AgentsConfig,
    #[serde(default = "default_judges")]
    pub judges: Vec<JudgeConfig>,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub grpo: GrpoConfig,
}

impl RunConfig {
    /// A mock-agent config over `dataset`, writing under `output_dir`.
    pub fn mock(dataset: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            dataset: dataset.into(),
            output_dir: output_dir.into(),
            strategy: ExecutionStrategy::default(),
            sample_size: None,
            seed: 0,
            stop_after: None,
            workers: default_workers(),
            agents: AgentsConfig::Mock,
            judges: default_judges(),
            reward: RewardConfig::default(),
            grpo: GrpoConfig::default(),
        }
    }

    /// Checks everything checkable before any money or time is spent.
    pub fn validate(&self) -> Result<(), BenchError> {
        if !self.dataset.exists() {
            return Err(BenchError::InvalidConfig(format!(
                "dataset does not exist: {}",
                self.dataset.display()
            )));
        }
        if self.workers == 0 {
            return Err(BenchError::InvalidConfig("workers must be at least 1".into()));
        }
        if self.judges.is_empty() {
            return Err(BenchError::InvalidConfig("at least one judge is required".into()));
        }
        let mut names = BTreeSet::new();
        for judge in &self.judges {
            if judge.name().trim().is_empty() {
                return Err(BenchError::InvalidConfig("judge name must be non-empty".into()));
            }
            if !names.insert(judge.name()) {
                return Err(BenchError::InvalidConfig(format!(
                    "duplicate judge name: {}",
                    judge.name()
                )));
            }
            if let JudgeConfig::Mock {
                fulfillment,
                quality,
                preservation,
                ..
            } = judge
            {
                if *fulfillment > FULFILLMENT_MAX
                    || *quality > QUALITY_MAX
                    || *preservation > PRESERVATION_MAX
                {
                    return Err(BenchError::InvalidConfig(format!(
                        "mock judge {} scores out of range",
                        judge.name()
                    )));
                }
            }
            if let JudgeConfig::Remote { endpoint, .. } = judge {
                endpoint.validate()?;
            }
        }
        if let AgentsConfig::Remote {
            decomposer,
            sequencer,
            editor,
        } = &self.agents
        {
            decomposer.validate()?;
            sequencer.validate()?;
            editor.validate()?;
        }
        self.reward
            .validate()
            .map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
        self.grpo
            .validate()
            .map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// Reads a TOML run configuration without validating it, so callers
/// can apply overrides first.
pub fn parse_run_config(path: &Path) -> Result<RunConfig, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| BenchError::BadFile {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Reads and validates a TOML run configuration.
pub fn load_run_config(path: &Path) -> Result<RunConfig, BenchError> {
    let cfg = parse_run_config(path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub struct AgentStack {
    pub decomposer: Box<dyn Decomposer>,
    pub sequencer: Box<dyn Sequencer>,
    pub editor: Box<dyn Editor>,
}

pub struct JudgeStack {
    pub judges: Vec<(String, Box<dyn JudgeBackend>)>,
}

impl JudgeStack {
    fn as_refs(&self) -> Vec<(&str, &dyn JudgeBackend)> {
        self.judges
            .iter()
            .map(|(name, backend)| (name.as_str(), backend.as_ref()))
            .collect()
    }
}

/// Instantiates the configured pipeline backends.
pub fn build_agents(cfg: &AgentsConfig) -> Result<AgentStack, BenchError> {
    match cfg {
        AgentsConfig::Mock => Ok(AgentStack {
            decomposer: Box::new(MockDecomposer::new()),
            sequencer: Box::new(MockSequencer::new()),
            editor: Box::new(MockEditor::new()),
        }),
        AgentsConfig::Remote {
            decomposer,
            sequencer,
            editor,
        } => {
            let transport = Arc::new(ReqwestTransport::new().map_err(AgentError::from)?);
            Ok(AgentStack {
                decomposer: Box::new(RemoteDecomposer::new(
                    decomposer.clone(),
                    transport.clone(),
                )?),
                sequencer: Box::new(RemoteSequencer::new(sequencer.clone(), transport.clone())?),
                editor: Box::new(RemoteEditor::new(editor.clone(), transport)?),
            })
        }
    }
}

/// Instantiates the configured judges, preserving their order.
pub fn build_judges(cfgs: &[JudgeConfig]) -> Result<JudgeStack, BenchError> {
    let mut judges: Vec<(String, Box<dyn JudgeBackend>)> = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        let backend: Box<dyn JudgeBackend> = match cfg {
            JudgeConfig::Mock {
                fulfillment,
                quality,
                preservation,
                ..
            } => Box::new(MockJudge::constant(*fulfillment, *quality, *preservation)),
            JudgeConfig::Remote { endpoint, .. } => Box::new(RemoteJudge::new(
                endpoint.clone(),
                Arc::new(ReqwestTransport::new().map_err(AgentError::from)?),
            )?),
        };
        judges.push((cfg.name().to_string(), backend));
    }
    Ok(JudgeStack { judges })
}

/// What happened to one record, as persisted under `records/`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)] // completed results dominate by design
pub enum RecordOutcome {
    Completed { result: PipelineResult },
    Failed { stage: Stage, error: String },
    Skipped { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistedRecord {
    pub record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_scores: Option<HumanScores>,
    #[serde(flatten)]
    pub outcome: RecordOutcome,
}

/// Writes through a temp file then renames, so interrupted runs never
/// leave half-written records behind.
fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    let data = serde_json::to_vec_pretty(value).map_err(|e| BenchError::Render(e.to_string()))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, &data).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| BenchError::BadFile {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Ids of records already persisted under `records/`.
fn persisted_ids(records_dir: &Path) -> Result<BTreeSet<String>, BenchError> {
    let mut ids = BTreeSet::new();
    if !records_dir.exists() {
        return Ok(ids);
    }
    for entry in fs::read_dir(records_dir).map_err(io_err(records_dir))? {
        let path = entry.map_err(io_err(records_dir))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.insert(stem.to_string());
            }
        }
    }
    Ok(ids)
}

/// The rendered forms of a run's report plus the headline counts.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedReport {
    pub report: EvaluationReport,
    /// Plain-text summary: counts, score table, correlations.
    pub table: String,
    /// Per-judge means in comma-separated form.
    pub csv: String,
    pub completed: usize,
    pub failed: usize,
    pub skipped: usize,
    pub edit_calls: usize,
}

/// Re-renders a run's report purely from the files under `run_dir`.
/// Calling this twice, or after a resume, yields byte-identical text
/// for the same persisted records.
pub fn rebuild_report(run_dir: &Path) -> Result<RenderedReport, BenchError> {
    let records_dir = run_dir.join(RECORDS_DIR);
    let mut persisted: Vec<PersistedRecord> = Vec::new();
    for id in persisted_ids(&records_dir)? {
        persisted.push(read_json(&records_dir.join(format!("{id}.json")))?);
    }
    persisted.sort_by(|a, b| a.record_id.cmp(&b.record_id));

    let mut completed = 0;
    let mut failed = 0;
    let mut skipped = 0;
    let mut edit_calls = 0;
    let mut human_totals = BTreeMap::new();
    let mut scores: Vec<ScoredRecord> = Vec::new();
    let mut judge_order: Vec<String> = Vec::new();

    for record in &persisted {
        match &record.outcome {
            RecordOutcome::Completed { result } => {
                completed += 1;
                edit_calls += result.edit_call_count;
            }
            RecordOutcome::Failed { .. } => failed += 1,
            RecordOutcome::Skipped { .. } => skipped += 1,
        }
        if let Some(human) = &record.human_scores {
            human_totals.insert(record.record_id.clone(), human.total() as f64);
        }
        let judgment_path = run_dir
            .join(JUDGMENTS_DIR)
            .join(format!("{}.json", record.record_id));
        if judgment_path.exists() {
            let judged: Vec<ScoredRecord> = read_json(&judgment_path)?;
            for entry in &judged {
                if !judge_order.contains(&entry.judge) {
                    judge_order.push(entry.judge.clone());
                }
            }
            scores.extend(judged);
        }
    }

    let report = assemble_report(scores, &judge_order, &human_totals);

    let label = strategy_label(run_dir);
    let mut table = format!(
        "records: {completed} completed, {failed} failed, {skipped} skipped; edit calls: {edit_calls}\n\n"
    );
    table.push_str(&score_table(&[(label.as_str(), &report)]));
    if !report.human_correlations.is_empty() {
        table.push('\n');
        for c in &report.human_correlations {
            table.push_str(&format!(
                "human correlation ({}): r={:.4} over {} records\n",
                c.judge, c.r, c.points
            ));
        }
    }

    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "judge",
            "scored",
            "failed",
            "mean_fulfillment",
            "mean_quality",
            "mean_preservation",
            "mean_total",
        ])
        .map_err(|e| BenchError::Render(e.to_string()))?;
    for summary in &report.judges {
        writer
            .write_record([
                summary.judge.clone(),
                summary.scored.to_string(),
                summary.failed.to_string(),
                format!("{:.4}", summary.mean_fulfillment),
                format!("{:.4}", summary.mean_quality),
                format!("{:.4}", summary.mean_preservation),
                format!("{:.4}", summary.mean_total),
            ])
            .map_err(|e| BenchError::Render(e.to_string()))?;
    }
    let csv = String::from_utf8(
        writer
            .into_inner()
            .map_err(|e| BenchError::Render(e.to_string()))?,
    )
    .map_err(|e| BenchError::Render(e.to_string()))?;

    Ok(RenderedReport {
        report,
        table,
        csv,
        completed,
        failed,
        skipped,
        edit_calls,
    })
}

/// Row label for the score table, read from the config snapshot when
/// one is present.
fn strategy_label(run_dir: &Path) -> String {
    fs::read_to_string(run_dir.join(CONFIG_SNAPSHOT))
        .ok()
        .and_then(|text| text.parse::<toml::Table>().ok())
        .and_then(|table| table.get("strategy").and_then(|v| v.as_str().map(String::from)))
        .unwrap_or_else(|| "run".to_string())
}

/// Writes `report.json`, `report.txt` and `report.csv` under the run
/// directory. These are derived artifacts and are rewritten whenever
/// the underlying records change.
pub fn write_report_files(run_dir: &Path, rendered: &RenderedReport) -> Result<(), BenchError> {
    write_json(&run_dir.join(REPORT_JSON), &rendered.report)?;
    let txt = run_dir.join(REPORT_TXT);
    fs::write(&txt, rendered.table.as_bytes()).map_err(io_err(&txt))?;
    let csv = run_dir.join(REPORT_CSV);
    fs::write(&csv, rendered.csv.as_bytes()).map_err(io_err(&csv))?;
    Ok(())
}

/// What one invocation did: which records it newly processed and the
/// report over everything persisted so far.
pub struct RunSummary {
    pub run_dir: PathBuf,
    /// Ids pipelined by this invocation, in dataset order.
    pub executed: Vec<String>,
    /// Ids newly persisted as skipped by this invocation.
    pub skipped: Vec<String>,
    /// Records still unprocessed (nonzero only with `stop_after`).
    pub remaining: usize,
    pub rendered: RenderedReport,
}

fn judge_record(
    judges: &[(&str, &dyn JudgeBackend)],
    result: &PipelineResult,
) -> Vec<ScoredRecord> {
    judges
        .iter()
        .map(|(name, backend)| {
            let outcome = match backend.judge(
                &result.instruction,
                &result.original_image,
                &result.edited_image,
            ) {
                Ok(score) => crate::judge::JudgeOutcome::Scored { score },
                Err(e) => crate::judge::JudgeOutcome::Failed {
                    error: e.to_string(),
                },
            };
            ScoredRecord {
                record_id: result.request_id.clone(),
                judge: name.to_string(),
                outcome,
            }
        })
        .collect()
}

fn process_record(
    cfg: &RunConfig,
    agents: &AgentStack,
    judges: &[(&str, &dyn JudgeBackend)],
    record: &DatasetRecord,
    records_dir: &Path,
    judgments_dir: &Path,
) -> Result<(), BenchError> {
    let request = EditRequest::new(&record.id, &record.instruction, record.image.clone())?;
    let outcome = match run_pipeline(
        &request,
        agents.decomposer.as_ref(),
        agents.sequencer.as_ref(),
        agents.editor.as_ref(),
        cfg.strategy,
    ) {
        Ok(result) => {
            let judged = judge_record(judges, &result);
            let outcome = RecordOutcome::Completed { result };
            // record first, then judgments: a crash in between leaves a
            // record whose judgments the next invocation fills in
            write_json(
                &records_dir.join(format!("{}.json", record.id)),
                &PersistedRecord {
                    record_id: record.id.clone(),
                    human_scores: record.human_scores,
                    outcome: outcome.clone(),
                },
            )?;
            write_json(&judgments_dir.join(format!("{}.json", record.id)), &judged)?;
            return Ok(());
        }
        Err(e) => RecordOutcome::Failed {
            stage: e.stage,
            error: e.source.to_string(),
        },
    };
    write_json(
        &records_dir.join(format!("{}.json", record.id)),
        &PersistedRecord {
            record_id: record.id.clone(),
            human_scores: record.human_scores,
            outcome,
        },
    )
}

/// Runs the benchmark with explicitly provided backends. Configuration
/// problems abort before anything is written; per-record pipeline and
/// judge failures are persisted, not raised. Re-invoking with the same
/// output directory resumes: already-persisted ids are skipped.
pub fn run_benchmark_with(
    cfg: &RunConfig,
    agents: &AgentStack,
    judges: &JudgeStack,
) -> Result<RunSummary, BenchError> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.dataset, cfg.sample_size, cfg.seed)?;

    let run_dir = cfg.output_dir.clone();
    let records_dir = run_dir.join(RECORDS_DIR);
    let judgments_dir = run_dir.join(JUDGMENTS_DIR);
    fs::create_dir_all(&records_dir).map_err(io_err(&records_dir))?;
    fs::create_dir_all(&judgments_dir).map_err(io_err(&judgments_dir))?;

    let snapshot = run_dir.join(CONFIG_SNAPSHOT);
    if !snapshot.exists() {
        let text = toml::to_string_pretty(cfg).map_err(|e| BenchError::Render(e.to_string()))?;
        fs::write(&snapshot, text).map_err(io_err(&snapshot))?;
    }

    let done = persisted_ids(&records_dir)?;
    let judge_refs = judges.as_refs();

    // unresolvable images are persisted as skipped right away
    let mut newly_skipped = Vec::new();
    for skip in &dataset.skipped {
        if done.contains(&skip.record.id) {
            continue;
        }
        write_json(
            &records_dir.join(format!("{}.json", skip.record.id)),
            &PersistedRecord {
                record_id: skip.record.id.clone(),
                human_scores: skip.record.human_scores,
                outcome: RecordOutcome::Skipped {
                    reason: skip.reason.clone(),
                },
            },
        )?;
        newly_skipped.push(skip.record.id.clone());
    }

    // records persisted earlier but missing judgments (for example an
    // interrupt between the two writes) are judged now
    for id in &done {
        let judgment_path = judgments_dir.join(format!("{id}.json"));
        if judgment_path.exists() {
            continue;
        }
        let persisted: PersistedRecord = read_json(&records_dir.join(format!("{id}.json")))?;
        if let RecordOutcome::Completed { result } = &persisted.outcome {
            write_json(&judgment_path, &judge_record(&judge_refs, result))?;
        }
    }

    let mut worklist: Vec<DatasetRecord> = dataset
        .records
        .into_iter()
        .filter(|r| !done.contains(&r.id))
        .collect();
    let total_pending = worklist.len();
    if let Some(cap) = cfg.stop_after {
        worklist.truncate(cap);
    }
    let executed: Vec<String> = worklist.iter().map(|r| r.id.clone()).collect();
    let remaining = total_pending - worklist.len();

    let workers = cfg.workers.min(worklist.len()).max(1);
    let queue = Mutex::new(worklist.into_iter());
    let first_error: Mutex<Option<BenchError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if first_error.lock().unwrap().is_some() {
                    break;
                }
                let next = queue.lock().unwrap().next();
                let Some(record) = next else { break };
                if let Err(e) = process_record(
                    cfg,
                    agents,
                    &judge_refs,
                    &record,
                    &records_dir,
                    &judgments_dir,
                ) {
                    let mut slot = first_error.lock().unwrap();
                    if slot.is_none() {
                        *slot = Some(e);
                    }
                    break;
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }

    let rendered = rebuild_report(&run_dir)?;
    write_report_files(&run_dir, &rendered)?;

    Ok(RunSummary {
        run_dir,
        executed,
        skipped: newly_skipped,
        remaining,
        rendered,
    })
}

/// Runs the benchmark with backends built from the configuration.
pub fn run_benchmark(cfg: &RunConfig) -> Result<RunSummary, BenchError> {
    cfg.validate()?;
    let agents = build_agents(&cfg.agents)?;
    let judges = build_judges(&cfg.judges)?;
    run_benchmark_with(cfg, &agents, &judges)
}

/// Re-judges every completed record in an existing run with the given
/// judges, rewriting the judgments and derived reports.
pub fn rejudge_run(run_dir: &Path, judges: &JudgeStack) -> Result<RenderedReport, BenchError> {
    let records_dir = run_dir.join(RECORDS_DIR);
    let judgments_dir = run_dir.join(JUDGMENTS_DIR);
    fs::create_dir_all(&judgments_dir).map_err(io_err(&judgments_dir))?;
    let judge_refs = judges.as_refs();
    for id in persisted_ids(&records_dir)? {
        let persisted: PersistedRecord = read_json(&records_dir.join(format!("{id}.json")))?;
        if let RecordOutcome::Completed { result } = &persisted.outcome {
            write_json(
                &judgments_dir.join(format!("{id}.json")),
                &judge_record(&judge_refs, result),
            )?;
        }
    }
    let rendered = rebuild_report(run_dir)?;
    write_report_files(run_dir, &rendered)?;
    Ok(rendered)
}
