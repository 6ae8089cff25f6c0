//! Domain data model for bugs and recorded repair trajectories, plus the
//! line-delimited corpus file I/O.
//!
//! A corpus links bug reports to the repair attempts (trajectories) recorded
//! against them. Every value is immutable after load and safe to share
//! read-only across worker threads. Referential integrity is checked at load
//! time and never re-checked downstream.

mod records;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diff;
use crate::error::{Error, Result};

pub use records::{
    load_bugs, load_rules, load_trajectories, partition, read_records, write_records, Record,
    RecordsByKind, RunManifest, ScorePopulation, ScoreRecord, VerdictRecord,
};

/// Agents may take at most this many steps per attempt unless a caller
/// overrides the limit.
pub const DEFAULT_STEP_LIMIT: usize = 25;

/// Broad origin of a bug report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugCategory {
    /// Reported by a person.
    Human,
    /// Null-pointer crash report.
    Npe,
    /// Sanitizer finding; always carries a reproduction test.
    Sanitizer,
    Other,
}

impl fmt::Display for BugCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            BugCategory::Human => "human",
            BugCategory::Npe => "npe",
            BugCategory::Sanitizer => "sanitizer",
            BugCategory::Other => "other",
        };
        f.write_str(name)
    }
}

/// One bug as presented to both policies: title, description, and metadata.
/// Policies never see the codebase itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugReport {
    pub id: String,
    pub title: String,
    pub description: String,
    pub category: BugCategory,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    /// Test target that reproduces the bug, when one exists.
    #[serde(default)]
    pub repro_test: Option<String>,
}

/// Outcome of one build-and-test invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Pass,
    Fail,
    BuildError,
}

impl fmt::Display for TestStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TestStatus::Pass => "pass",
            TestStatus::Fail => "fail",
            TestStatus::BuildError => "build_error",
        };
        f.write_str(name)
    }
}

/// One numbered test attempt for a particular test-suite target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub target: String,
    /// 1-based attempt number; consecutive per target within one trajectory.
    pub attempt: u32,
    pub status: TestStatus,
    #[serde(default)]
    pub log_excerpt: String,
}

/// Tool invoked by an agent step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    CodeSearch,
    Cat,
    Ls,
    FindAndReplaceText,
    Test,
    Finish,
    Other,
}

impl fmt::Display for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Tool::CodeSearch => "code_search",
            Tool::Cat => "cat",
            Tool::Ls => "ls",
            Tool::FindAndReplaceText => "find_and_replace_text",
            Tool::Test => "test",
            Tool::Finish => "finish",
            Tool::Other => "other",
        };
        f.write_str(name)
    }
}

/// A tool invocation with its free-form argument text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub tool: Tool,
    #[serde(default)]
    pub args: String,
}

/// One agent step: a thought, the action taken, and what came back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// Position within the trajectory, 0-based and gapless.
    pub index: usize,
    #[serde(default)]
    pub thought: String,
    pub action: Action,
    #[serde(default)]
    pub observation: String,
    /// Present when the step ran a test.
    #[serde(default)]
    pub test_result: Option<TestResult>,
}

/// Ground-truth outcome of an attempt: a held-out fail-to-pass test or human
/// acceptance. Both oracles are treated identically by the metrics layer;
/// which one a corpus uses is documented per corpus, not per record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Pass,
    Fail,
}

/// One complete recorded repair attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub bug_id: String,
    /// 0-based index among this bug's attempts; (bug_id, run_index) is unique.
    pub run_index: u32,
    #[serde(default)]
    pub steps: Vec<TrajectoryStep>,
    /// Unified-diff text; may be empty when the agent produced no edit.
    #[serde(default)]
    pub patch: String,
    /// Pre-patch content of every file the patch touches, keyed by the paths
    /// in the patch headers. Shipping originals inline keeps the pipeline
    /// hermetic: no checkout is ever consulted.
    #[serde(default)]
    pub edited_files: BTreeMap<String, String>,
    /// Precomputed build/test outcomes for directly dependent targets.
    #[serde(default)]
    pub recorded_regressions: Vec<TestResult>,
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
}

impl Trajectory {
    /// A patch consisting only of whitespace counts as empty: there is
    /// nothing to review.
    pub fn has_empty_patch(&self) -> bool {
        self.patch.trim().is_empty()
    }

    pub fn passed(&self) -> bool {
        self.ground_truth == Some(GroundTruth::Pass)
    }
}

/// A validated set of bugs and their trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub bugs: Vec<BugReport>,
    pub trajectories: Vec<Trajectory>,
}

impl Corpus {
    /// Loads and cross-validates both corpus files.
    pub fn load(
        bugs_path: impl AsRef<std::path::Path>,
        trajectories_path: impl AsRef<std::path::Path>,
    ) -> Result<Self> {
        let bugs = load_bugs(bugs_path)?;
        let trajectories = load_trajectories(trajectories_path, &bugs)?;
        Ok(Corpus { bugs, trajectories })
    }

    /// Validates an in-memory corpus against the same invariants the loaders
    /// enforce.
    pub fn validate(&self) -> Result<()> {
        validate_bugs(&self.bugs)?;
        validate_trajectories(&self.trajectories, &self.bugs, DEFAULT_STEP_LIMIT)
    }

    /// Trajectories of one bug, in corpus order.
    pub fn runs_for(&self, bug_id: &str) -> Vec<&Trajectory> {
        self.trajectories
            .iter()
            .filter(|t| t.bug_id == bug_id)
            .collect()
    }
}

pub(crate) fn validate_bugs(bugs: &[BugReport]) -> Result<()> {
    let mut seen = HashSet::new();
    for bug in bugs {
        if bug.id.is_empty() {
            return Err(Error::Integrity("bug with empty id".into()));
        }
        if !seen.insert(bug.id.as_str()) {
            return Err(Error::Integrity(format!("duplicate bug id {:?}", bug.id)));
        }
        if bug.category == BugCategory::Sanitizer && bug.repro_test.is_none() {
            return Err(Error::Integrity(format!(
                "sanitizer bug {:?} lacks a repro_test",
                bug.id
            )));
        }
    }
    Ok(())
}

pub(crate) fn validate_trajectories(
    trajectories: &[Trajectory],
    bugs: &[BugReport],
    step_limit: usize,
) -> Result<()> {
    let bug_ids: HashSet<&str> = bugs.iter().map(|b| b.id.as_str()).collect();
    let mut seen_ids = HashSet::new();
    let mut seen_runs = HashSet::new();
    for trajectory in trajectories {
        validate_trajectory(trajectory, &bug_ids, step_limit)?;
        if !seen_ids.insert(trajectory.id.as_str()) {
            return Err(Error::Integrity(format!(
                "duplicate trajectory id {:?}",
                trajectory.id
            )));
        }
        if !seen_runs.insert((trajectory.bug_id.as_str(), trajectory.run_index)) {
            return Err(Error::Integrity(format!(
                "trajectory {:?}: duplicate (bug_id, run_index) = ({:?}, {})",
                trajectory.id, trajectory.bug_id, trajectory.run_index
            )));
        }
    }
    Ok(())
}

fn validate_trajectory(
    trajectory: &Trajectory,
    bug_ids: &HashSet<&str>,
    step_limit: usize,
) -> Result<()> {
    let id = &trajectory.id;
    if id.is_empty() {
        return Err(Error::Integrity("trajectory with empty id".into()));
    }
    if !bug_ids.contains(trajectory.bug_id.as_str()) {
        return Err(Error::Integrity(format!(
            "trajectory {id:?} references unknown bug {:?}",
            trajectory.bug_id
        )));
    }
    if trajectory.steps.len() > step_limit {
        return Err(Error::Integrity(format!(
            "trajectory {id:?} has {} steps, beyond the limit of {step_limit}",
            trajectory.steps.len()
        )));
    }
    for (position, step) in trajectory.steps.iter().enumerate() {
        if step.index != position {
            return Err(Error::Integrity(format!(
                "trajectory {id:?}: step at position {position} carries index {}",
                step.index
            )));
        }
    }
    check_attempt_numbering(
        id,
        trajectory.steps.iter().filter_map(|s| s.test_result.as_ref()),
    )?;
    check_attempt_numbering(id, trajectory.recorded_regressions.iter())?;

    if trajectory.has_empty_patch() {
        if !trajectory.edited_files.is_empty() {
            return Err(Error::Integrity(format!(
                "trajectory {id:?}: empty patch but edited_files lists {} file(s)",
                trajectory.edited_files.len()
            )));
        }
        return Ok(());
    }
    let patch_paths = diff::header_paths(&trajectory.patch).map_err(|e| {
        Error::Integrity(format!("trajectory {id:?}: {e}"))
    })?;
    let from_patch: HashSet<&str> = patch_paths.iter().map(String::as_str).collect();
    let from_files: HashSet<&str> = trajectory.edited_files.keys().map(String::as_str).collect();
    if from_patch != from_files {
        let mut missing: Vec<&&str> = from_patch.difference(&from_files).collect();
        let mut extra: Vec<&&str> = from_files.difference(&from_patch).collect();
        missing.sort();
        extra.sort();
        return Err(Error::Integrity(format!(
            "trajectory {id:?}: edited_files does not match patch headers \
             (missing from edited_files: {missing:?}; not in patch: {extra:?})"
        )));
    }
    Ok(())
}

/// Attempt numbers must count 1, 2, 3, ... per target, in list order.
fn check_attempt_numbering<'a>(
    trajectory_id: &str,
    results: impl Iterator<Item = &'a TestResult>,
) -> Result<()> {
    let mut next: HashMap<&str, u32> = HashMap::new();
    for result in results {
        let expected = next.entry(result.target.as_str()).or_insert(1);
        if result.attempt != *expected {
            return Err(Error::Integrity(format!(
                "trajectory {trajectory_id:?}: attempt {} for target {:?}, expected {expected}",
                result.attempt, result.target
            )));
        }
        *expected += 1;
    }
    Ok(())
}
