//! Line-delimited record files.
//!
//! Every artifact the pipeline reads or writes — corpora, scripted rules,
//! predictions, verdicts, reports — uses the same envelope: UTF-8 text, one
//! JSON object per line, each object self-describing via a `kind` field.
//! The format is append-friendly for large trajectory dumps and diffs cleanly
//! in fixtures.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abstention::{AbstentionDecision, AbstentionPrediction};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::funnel::FunnelReport;
use crate::gateway::ScriptedRule;
use crate::metrics::BugOutcomeSummary;
use crate::validation::ValidationVerdict;

use super::{validate_bugs, validate_trajectories, BugReport, Trajectory, DEFAULT_STEP_LIMIT};

/// Which score stream a [`ScoreRecord`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorePopulation {
    /// Bug-level success probabilities from the abstention model.
    Abstention,
    /// Trajectory-level confidence scores from the validation judge.
    Validation,
}

impl fmt::Display for ScorePopulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScorePopulation::Abstention => "abstention",
            ScorePopulation::Validation => "validation",
        })
    }
}

/// A score paired with its ground-truth label, ready for threshold sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub population: ScorePopulation,
    pub bug_id: String,
    /// Set for validation scores; abstention scores are per bug.
    #[serde(default)]
    pub trajectory_id: Option<String>,
    pub label: bool,
    pub score: f64,
}

/// A validation verdict plus the overall accept/reject bit, so downstream
/// consumers never re-derive the decision rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    #[serde(flatten)]
    pub verdict: ValidationVerdict,
    pub accepted: bool,
}

impl From<ValidationVerdict> for VerdictRecord {
    fn from(verdict: ValidationVerdict) -> Self {
        let accepted = verdict.accepted();
        VerdictRecord { verdict, accepted }
    }
}

/// Provenance stamp accompanying every output file (written as a sidecar so
/// the output itself stays byte-identical across reruns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub created_unix_ms: u64,
    /// The invoking command line, roughly as typed.
    pub command: String,
    /// Digest of the effective run configuration.
    pub config_digest: String,
    /// Input path → content SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: String, config_digest: String, inputs: BTreeMap<String, String>) -> Self {
        let created_unix_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        RunManifest {
            created_unix_ms,
            command,
            config_digest,
            inputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// One line of a record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Bug(BugReport),
    Trajectory(Trajectory),
    Rule(ScriptedRule),
    Prediction(AbstentionPrediction),
    Decision(AbstentionDecision),
    Verdict(VerdictRecord),
    Summary(BugOutcomeSummary),
    Score(ScoreRecord),
    FunnelReport(FunnelReport),
    Manifest(RunManifest),
}

impl Record {
    /// The `kind` tag this record serializes under.
    pub fn kind(&self) -> &'static str {
        match self {
            Record::Bug(_) => "bug",
            Record::Trajectory(_) => "trajectory",
            Record::Rule(_) => "rule",
            Record::Prediction(_) => "prediction",
            Record::Decision(_) => "decision",
            Record::Verdict(_) => "verdict",
            Record::Summary(_) => "summary",
            Record::Score(_) => "score",
            Record::FunnelReport(_) => "funnel_report",
            Record::Manifest(_) => "manifest",
        }
    }
}

/// Reads every record in a file, preserving order. Blank lines are ignored;
/// anything else that fails to parse reports its 1-based line number.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: index + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Serializes records one per line and writes the file atomically.
pub fn write_records(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let mut out = String::new();
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Integrity(format!("unserializable record: {e}")))?;
        debug_assert!(!line.contains('\n'), "JSON encoder must escape newlines");
        out.push_str(&line);
        out.push('\n');
    }
    fsutil::atomic_write(path.as_ref(), out.as_bytes())
}

fn expect_kind<T>(
    path: &Path,
    records: Vec<Record>,
    extract: impl Fn(Record) -> std::result::Result<T, &'static str>,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(records.len());
    for (index, record) in records.into_iter().enumerate() {
        match extract(record) {
            Ok(value) => out.push(value),
            Err(found) => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: index + 1,
                    message: format!("unexpected record kind {found:?} in this file"),
                })
            }
        }
    }
    Ok(out)
}

/// Loads a bug corpus: every record must be a bug, ids must be unique, and
/// per-bug invariants (e.g. sanitizer bugs carry a repro test) must hold.
pub fn load_bugs(path: impl AsRef<Path>) -> Result<Vec<BugReport>> {
    let path = path.as_ref();
    let bugs = expect_kind(path, read_records(path)?, |record| match record {
        Record::Bug(bug) => Ok(bug),
        other => Err(other.kind()),
    })?;
    validate_bugs(&bugs)?;
    Ok(bugs)
}

/// Loads trajectories and cross-validates them against `bugs`: unique ids,
/// unique (bug_id, run_index), known bug references, step and patch
/// integrity.
pub fn load_trajectories(path: impl AsRef<Path>, bugs: &[BugReport]) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let trajectories = expect_kind(path, read_records(path)?, |record| match record {
        Record::Trajectory(trajectory) => Ok(trajectory),
        other => Err(other.kind()),
    })?;
    validate_trajectories(&trajectories, bugs, DEFAULT_STEP_LIMIT)?;
    Ok(trajectories)
}

/// Convenience for tools that accept a rules file: every record must be a
/// scripted rule.
pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<ScriptedRule>> {
    let path = path.as_ref();
    expect_kind(path, read_records(path)?, |record| match record {
        Record::Rule(rule) => Ok(rule),
        other => Err(other.kind()),
    })
}

/// Splits a mixed record stream by kind without cloning.
pub fn partition(records: Vec<Record>) -> RecordsByKind {
    let mut by_kind = RecordsByKind::default();
    for record in records {
        match record {
            Record::Bug(r) => by_kind.bugs.push(r),
            Record::Trajectory(r) => by_kind.trajectories.push(r),
            Record::Rule(r) => by_kind.rules.push(r),
            Record::Prediction(r) => by_kind.predictions.push(r),
            Record::Decision(r) => by_kind.decisions.push(r),
            Record::Verdict(r) => by_kind.verdicts.push(r),
            Record::Summary(r) => by_kind.summaries.push(r),
            Record::Score(r) => by_kind.scores.push(r),
            Record::FunnelReport(r) => by_kind.funnel_reports.push(r),
            Record::Manifest(r) => by_kind.manifests.push(r),
        }
    }
    by_kind
}

/// Buckets produced by [`partition`].
#[derive(Debug, Default)]
pub struct RecordsByKind {
    pub bugs: Vec<BugReport>,
    pub trajectories: Vec<Trajectory>,
    pub rules: Vec<ScriptedRule>,
    pub predictions: Vec<AbstentionPrediction>,
    pub decisions: Vec<AbstentionDecision>,
    pub verdicts: Vec<VerdictRecord>,
    pub summaries: Vec<BugOutcomeSummary>,
    pub scores: Vec<ScoreRecord>,
    pub funnel_reports: Vec<FunnelReport>,
    pub manifests: Vec<RunManifest>,
}
