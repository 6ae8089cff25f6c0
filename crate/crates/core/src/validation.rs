//! Staged patch-validation policy.
//!
//! A candidate patch passes through cheap deterministic filters before any
//! model is consulted: empty patches are dropped, then recorded regression
//! outcomes (or a reproduction test, or an external command) gate the patch,
//! then the agent's own final test run is checked. Only survivors reach the
//! LLM judge, which issues a binary fixed/not-fixed judgment plus an
//! explanation; a confidence score is derived from the judge's token log
//! probabilities. Finally a decision rule — plain binary, or a percentile
//! cutoff over the whole evaluation set — turns verdicts into accept flags.

use std::fmt;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::abstention::{bug_block, or_none};
use crate::corpus::{BugReport, TestStatus, Tool, Trajectory};
use crate::diff;
use crate::error::{Error, Result};
use crate::gateway::{self, Backend, ChatRequest, ResponseSchema};

/// Printed verbatim when a trajectory contains no test runs.
pub const NO_TEST_INFORMATION: &str = "No testing information is available.";

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    EmptyPatch,
    RegressionCheck,
    ReproTest,
    FinalTestHeuristic,
    LlmJudge,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::EmptyPatch => "empty_patch",
            Stage::RegressionCheck => "regression_check",
            Stage::ReproTest => "repro_test",
            Stage::FinalTestHeuristic => "final_test_heuristic",
            Stage::LlmJudge => "llm_judge",
        })
    }
}

/// How the regression gate is evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionMode {
    /// Reject when any recorded build/test outcome is not a pass.
    RecordedBuildTest,
    /// Reject when the bug's reproduction test did not pass on its final
    /// recorded attempt.
    ReproTest,
    /// Run a shell command per distinct recorded target ("{target}" is
    /// substituted); reject on the first non-zero exit.
    ExternalCommand { command: String },
    /// Skip the regression gate entirely.
    #[serde(rename = "none")]
    Disabled,
}

/// Which judge variant to run after the deterministic stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Generate a fix specification first, then judge patch against spec.
    Spec,
    /// Judge the raw step-by-step transcript directly.
    NoSpec,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Spec => "spec",
            Variant::NoSpec => "no_spec",
        })
    }
}

/// How verdicts become accept/reject decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Accept iff the judge said the bug is fixed.
    Binary,
    /// Accept iff the judge said fixed AND the confidence clears a
    /// percentile cutoff computed over every verdict in the set.
    Percentile,
}

impl fmt::Display for DecisionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecisionRule::Binary => "binary",
            DecisionRule::Percentile => "percentile",
        })
    }
}

/// Full configuration of the validation policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub regression_mode: RegressionMode,
    pub variant: Variant,
    pub decision: DecisionRule,
    /// Required (1..=100) when `decision` is percentile.
    #[serde(default)]
    pub percentile: Option<u32>,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            regression_mode: RegressionMode::RecordedBuildTest,
            variant: Variant::Spec,
            decision: DecisionRule::Binary,
            percentile: None,
        }
    }
}

impl ValidationConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.decision, self.percentile) {
            (DecisionRule::Percentile, None) => Err(Error::Config(
                "percentile decision requires a percentile value".into(),
            )),
            (DecisionRule::Percentile, Some(p)) if !(1..=100).contains(&p) => Err(Error::Config(
                format!("percentile must lie in 1..=100, got {p}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Outcome of validating one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub bug_id: String,
    pub trajectory_id: String,
    /// True when every deterministic stage passed.
    pub accepted_by_stage_filters: bool,
    /// The judge's answer; unset when the judge never ran or failed.
    pub judgment: Option<bool>,
    pub explanation: Option<String>,
    /// Zero unless the judge affirmed the fix.
    pub confidence: f64,
    pub rejected_at: Option<Stage>,
    pub variant: Variant,
    /// The generated fix specification, for spec-variant runs that got far
    /// enough to produce one.
    pub spec_text: Option<String>,
}

impl ValidationVerdict {
    /// Acceptance under the binary decision rule. Percentile runs must use
    /// [`decide_verdicts`] instead, which also thresholds the confidence.
    pub fn accepted(&self) -> bool {
        self.rejected_at.is_none()
    }
}

/// Runs the deterministic stages in order. `Ok(None)` means the trajectory
/// survives to the judge; `Ok(Some(stage))` names the stage that rejected it.
pub fn stage_filter(
    bug: &BugReport,
    trajectory: &Trajectory,
    config: &ValidationConfig,
) -> Result<Option<Stage>> {
    if trajectory.has_empty_patch() {
        return Ok(Some(Stage::EmptyPatch));
    }
    if let Some(stage) = regression_gate(bug, trajectory, &config.regression_mode)? {
        return Ok(Some(stage));
    }
    if let Some(stage) = final_test_heuristic(trajectory) {
        return Ok(Some(stage));
    }
    Ok(None)
}

fn regression_gate(
    bug: &BugReport,
    trajectory: &Trajectory,
    mode: &RegressionMode,
) -> Result<Option<Stage>> {
    match mode {
        RegressionMode::RecordedBuildTest => {
            let failed = trajectory
                .recorded_regressions
                .iter()
                .any(|r| r.status != TestStatus::Pass);
            Ok(failed.then_some(Stage::RegressionCheck))
        }
        RegressionMode::ReproTest => {
            let target = bug.repro_test.as_deref().ok_or_else(|| {
                Error::Config(format!(
                    "repro_test regression mode but bug {:?} has no repro_test",
                    bug.id
                ))
            })?;
            // The final recorded attempt for the reproduction target decides.
            let last = trajectory
                .recorded_regressions
                .iter()
                .filter(|r| r.target == target)
                .last()
                .ok_or_else(|| {
                    Error::Integrity(format!(
                        "trajectory {:?} has no recorded outcome for repro test {target:?}",
                        trajectory.id
                    ))
                })?;
            Ok((last.status != TestStatus::Pass).then_some(Stage::ReproTest))
        }
        RegressionMode::ExternalCommand { command } => {
            let mut seen = std::collections::HashSet::new();
            for result in &trajectory.recorded_regressions {
                if !seen.insert(result.target.as_str()) {
                    continue;
                }
                let rendered = command.replace("{target}", &result.target);
                let status = Command::new("sh")
                    .arg("-c")
                    .arg(&rendered)
                    .status()
                    .map_err(|e| Error::io(std::path::Path::new("sh"), e))?;
                if !status.success() {
                    return Ok(Some(Stage::RegressionCheck));
                }
            }
            Ok(None)
        }
        RegressionMode::Disabled => Ok(None),
    }
}

/// The agent's last test invocation decides: a non-pass result rejects the
/// trajectory. No test steps — or a test step that recorded no result —
/// pass through, since there is no failure to point at.
fn final_test_heuristic(trajectory: &Trajectory) -> Option<Stage> {
    let last_test = trajectory
        .steps
        .iter()
        .rev()
        .find(|step| step.action.tool == Tool::Test)?;
    match &last_test.test_result {
        Some(result) if result.status != TestStatus::Pass => Some(Stage::FinalTestHeuristic),
        _ => None,
    }
}

/// Renders a trajectory's test activity for the judge: one block per test
/// run, in step order, or the exact sentinel sentence when there were none.
pub fn extract_test_information(trajectory: &Trajectory) -> String {
    let blocks: Vec<String> = trajectory
        .steps
        .iter()
        .filter_map(|step| step.test_result.as_ref())
        .map(|result| {
            let header = format!(
                "attempt {} of {}: {}",
                result.attempt, result.target, result.status
            );
            let excerpt = result.log_excerpt.trim_end();
            if excerpt.is_empty() {
                header
            } else {
                format!("{header}\n{excerpt}")
            }
        })
        .collect();
    if blocks.is_empty() {
        NO_TEST_INFORMATION.to_string()
    } else {
        blocks.join("\n\n")
    }
}

const SPEC_SYSTEM: &str = "You are an expert software engineer that reviews a bug and lists out a specification for the desired behavior.
You should cover properties desirable for a fix. Be specific, do not provide general properties that apply to all bugs. Do not provide properties that are about artifacts like documentation.";

const JUDGE_SYSTEM: &str = "SETTING: You are a software engineer reviewing code changes to fix bugs. Your job is to review how a bug2code agent tried to fix a bug.
Return a ReviewResponse with whether the bug is fixed and explaining why.";

fn review_schema() -> ResponseSchema {
    ResponseSchema {
        name: "ReviewResponse".to_string(),
        schema: serde_json::json!({
            "type": "object",
            "properties": {
                "is_bug_fixed": {"type": "boolean"},
                "explanation": {"type": "string"}
            },
            "required": ["is_bug_fixed", "explanation"]
        }),
    }
}

/// Renders the fix-specification prompt: the bug report plus the pre-patch
/// content of every edited file, in patch-header order.
pub fn render_fix_spec_prompt(bug: &BugReport, trajectory: &Trajectory) -> Result<ChatRequest> {
    if trajectory.edited_files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "trajectory {:?} has no edited files to specify against",
            trajectory.id
        )));
    }
    let paths = diff::header_paths(&trajectory.patch)?;
    let mut sources = Vec::with_capacity(paths.len());
    for path in &paths {
        let content = trajectory.edited_files.get(path).ok_or_else(|| {
            Error::Integrity(format!(
                "trajectory {:?} patch edits {path:?} but edited_files has no entry",
                trajectory.id
            ))
        })?;
        sources.push(format!("$ cat {path}\n{}", content.trim_end_matches('\n')));
    }
    let user = format!(
        "Here is a bug, please create a fix specification:\n\n\n{}\n\n\n# Original source code\n{}\n\n\n# Specification",
        bug_block(bug),
        sources.join("\n\n"),
    );
    Ok(ChatRequest::new(SPEC_SYSTEM, user))
}

/// Generates the free-form fix specification. No format is imposed on the
/// model's answer; it is stored verbatim.
pub fn generate_fix_spec(
    bug: &BugReport,
    trajectory: &Trajectory,
    backend: &dyn Backend,
) -> Result<String> {
    let request = render_fix_spec_prompt(bug, trajectory)?;
    let response = gateway::complete(&request, backend)?;
    Ok(response.text)
}

/// Renders the spec-variant judge prompt: bug, patch, test information, and
/// the generated specification.
pub fn render_judge_prompt(bug: &BugReport, trajectory: &Trajectory, spec: &str) -> ChatRequest {
    let user = format!(
        "Here's a log of an attempt by a bug2code agent to fix a bug:\n{}\n\n# Patch\n{}\n\n# Test information\n{}\n\n# Specification:\nBased on the bug report and source code, here is a specification for the desired behavior of the fix.\n\n### Fix Specification\n{}",
        bug_block(bug),
        or_none(trajectory.patch.trim_end_matches('\n')),
        extract_test_information(trajectory),
        or_none(spec.trim_end_matches('\n')),
    );
    let mut request = ChatRequest::new(JUDGE_SYSTEM, user);
    request.want_logprobs = true;
    request.response_schema = Some(review_schema());
    request
}

/// Renders the no-spec judge prompt: the bug plus the full step-by-step
/// transcript (thought, action, observation per step, in order).
pub fn render_no_spec_prompt(bug: &BugReport, trajectory: &Trajectory) -> ChatRequest {
    let transcript = if trajectory.steps.is_empty() {
        "(no steps recorded)".to_string()
    } else {
        trajectory
            .steps
            .iter()
            .map(|step| {
                let action = format!("{} {}", step.action.tool, step.action.args);
                format!(
                    "## Step {}\nThought: {}\nAction: {}\nObservation: {}",
                    step.index,
                    or_none(&step.thought),
                    action.trim_end(),
                    or_none(&step.observation),
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    let user = format!(
        "Here's a log of an attempt by a bug2code agent to fix a bug:\n{}\n\n# Trajectory\n{}",
        bug_block(bug),
        transcript,
    );
    let mut request = ChatRequest::new(JUDGE_SYSTEM, user);
    request.want_logprobs = true;
    request.response_schema = Some(review_schema());
    request
}

/// Parsed judge output plus the log probabilities of the response tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Judged {
    pub is_bug_fixed: bool,
    pub explanation: String,
    pub token_logprobs: Vec<f64>,
}

/// ASCII case-insensitive substring search; byte offsets are safe to slice
/// at because the needle is pure ASCII.
fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    debug_assert!(needle.is_ascii());
    haystack
        .as_bytes()
        .windows(needle.len())
        .position(|window| window.eq_ignore_ascii_case(needle.as_bytes()))
}

fn value_as_bool(value: &serde_json::Value) -> Option<bool> {
    match value {
        serde_json::Value::Bool(b) => Some(*b),
        serde_json::Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

/// Parses a ReviewResponse leniently: well-formed JSON first (key order and
/// extra fields ignored), then a `key: value` scan that copes with the
/// YAML-ish shape models often emit. Anything else is a schema violation.
pub fn parse_review(text: &str) -> Result<(bool, String)> {
    if let (Some(start), Some(end)) = (text.find('{'), text.rfind('}')) {
        if start < end {
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(&text[start..=end]) {
                if let Some(flag) = value.get("is_bug_fixed").and_then(value_as_bool) {
                    let explanation = value
                        .get("explanation")
                        .and_then(|v| v.as_str())
                        .unwrap_or_default()
                        .to_string();
                    return Ok((flag, explanation));
                }
            }
        }
    }

    if let Some(pos) = find_ci(text, "is_bug_fixed") {
        let after = text[pos + "is_bug_fixed".len()..]
            .trim_start_matches([':', '=', ' ', '\t', '"', '\'', '*']);
        let flag = if find_ci(after, "true") == Some(0) {
            Some(true)
        } else if find_ci(after, "false") == Some(0) {
            Some(false)
        } else {
            None
        };
        if let Some(flag) = flag {
            let explanation = find_ci(text, "explanation")
                .map(|epos| {
                    text[epos + "explanation".len()..]
                        .trim_start_matches([':', '=', ' ', '\t'])
                        .trim()
                        .trim_matches('"')
                        .to_string()
                })
                .unwrap_or_default();
            return Ok((flag, explanation));
        }
    }

    Err(Error::SchemaViolation(format!(
        "judge output is not a ReviewResponse: {:?}",
        text.chars().take(120).collect::<String>()
    )))
}

fn run_judge(request: &ChatRequest, backend: &dyn Backend) -> Result<Judged> {
    let response = gateway::complete(request, backend)?;
    let (is_bug_fixed, explanation) = parse_review(&response.text)?;
    Ok(Judged {
        is_bug_fixed,
        explanation,
        token_logprobs: response.logprobs(),
    })
}

/// Judges a stage-surviving trajectory against a generated fix spec.
pub fn judge_with_spec(
    bug: &BugReport,
    trajectory: &Trajectory,
    spec: &str,
    backend: &dyn Backend,
) -> Result<Judged> {
    run_judge(&render_judge_prompt(bug, trajectory, spec), backend)
}

/// Judges a stage-surviving trajectory from its raw transcript.
pub fn judge_no_spec(
    bug: &BugReport,
    trajectory: &Trajectory,
    backend: &dyn Backend,
) -> Result<Judged> {
    run_judge(&render_no_spec_prompt(bug, trajectory), backend)
}

/// Confidence attached to a judgment: zero for "not fixed", otherwise the
/// exponential of the mean response-token log probability.
pub fn confidence_score(judgment: bool, token_logprobs: &[f64]) -> Result<f64> {
    if !judgment {
        return Ok(0.0);
    }
    if token_logprobs.is_empty() {
        return Err(Error::InvalidInput(
            "affirmative judgment without response token logprobs".into(),
        ));
    }
    let mean = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok(mean.exp())
}

fn rejected(
    bug: &BugReport,
    trajectory: &Trajectory,
    config: &ValidationConfig,
    stage: Stage,
    spec_text: Option<String>,
) -> ValidationVerdict {
    ValidationVerdict {
        bug_id: bug.id.clone(),
        trajectory_id: trajectory.id.clone(),
        accepted_by_stage_filters: stage == Stage::LlmJudge,
        judgment: None,
        explanation: None,
        confidence: 0.0,
        rejected_at: Some(stage),
        variant: config.variant,
        spec_text,
    }
}

/// Validates one trajectory end to end: deterministic stages, then the
/// configured judge variant.
///
/// Backend failures and malformed judge output do not abort the run; the
/// trajectory is recorded as rejected at the judge stage with confidence 0
/// and the cause is logged. Configuration and corpus-integrity problems do
/// abort, since they invalidate the whole evaluation.
pub fn validate(
    bug: &BugReport,
    trajectory: &Trajectory,
    config: &ValidationConfig,
    backend: &dyn Backend,
) -> Result<ValidationVerdict> {
    config.validate()?;
    if let Some(stage) = stage_filter(bug, trajectory, config)? {
        return Ok(rejected(bug, trajectory, config, stage, None));
    }

    let (spec_text, judged) = match config.variant {
        Variant::Spec => match generate_fix_spec(bug, trajectory, backend) {
            Ok(spec) => {
                let judged = judge_with_spec(bug, trajectory, &spec, backend);
                (Some(spec), judged)
            }
            Err(error) => (None, Err(error)),
        },
        Variant::NoSpec => (None, judge_no_spec(bug, trajectory, backend)),
    };

    let judged = judged.and_then(|j| {
        let confidence = confidence_score(j.is_bug_fixed, &j.token_logprobs)?;
        Ok((j, confidence))
    });
    match judged {
        Ok((judged, confidence)) => Ok(ValidationVerdict {
            bug_id: bug.id.clone(),
            trajectory_id: trajectory.id.clone(),
            accepted_by_stage_filters: true,
            rejected_at: (!judged.is_bug_fixed).then_some(Stage::LlmJudge),
            judgment: Some(judged.is_bug_fixed),
            explanation: Some(judged.explanation),
            confidence,
            variant: config.variant,
            spec_text,
        }),
        Err(error) => {
            log::warn!(
                "judge failed for trajectory {:?} of bug {:?}: {error}; rejecting",
                trajectory.id,
                bug.id
            );
            Ok(rejected(bug, trajectory, config, Stage::LlmJudge, spec_text))
        }
    }
}

/// Nearest-rank percentile: sort ascending and return the element at 1-based
/// rank ⌈p·n/100⌉. The rank is computed in exact integer arithmetic so the
/// cutoff never drifts by a float rounding artifact.
pub fn percentile_cutoff(scores: &[f64], p: u32) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput(
            "percentile cutoff of an empty score set".into(),
        ));
    }
    if !(1..=100).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "percentile must lie in 1..=100, got {p}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN confidence score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as u64;
    let rank = (u64::from(p) * n).div_ceil(100);
    Ok(sorted[(rank - 1) as usize])
}

/// Applies the configured decision rule to a batch of verdicts.
///
/// Binary: accept iff the judge affirmed. Percentile: the cutoff is computed
/// over the confidence scores of **all** verdicts in the set — stage-rejected
/// trajectories contribute their zeros — and a verdict is accepted iff the
/// judge affirmed and its confidence is at or above the cutoff.
pub fn decide_verdicts(
    verdicts: Vec<ValidationVerdict>,
    config: &ValidationConfig,
) -> Result<Vec<(ValidationVerdict, bool)>> {
    config.validate()?;
    match config.decision {
        DecisionRule::Binary => Ok(verdicts
            .into_iter()
            .map(|v| {
                let accept = v.judgment == Some(true);
                (v, accept)
            })
            .collect()),
        DecisionRule::Percentile => {
            if verdicts.is_empty() {
                return Err(Error::InvalidInput(
                    "percentile decision over an empty verdict set".into(),
                ));
            }
            let percentile = self::require_percentile(config)?;
            let scores: Vec<f64> = verdicts.iter().map(|v| v.confidence).collect();
            let cutoff = percentile_cutoff(&scores, percentile)?;
            Ok(verdicts
                .into_iter()
                .map(|v| {
                    let accept = v.judgment == Some(true) && v.confidence >= cutoff;
                    (v, accept)
                })
                .collect())
        }
    }
}

fn require_percentile(config: &ValidationConfig) -> Result<u32> {
    config.percentile.ok_or_else(|| {
        Error::Config("percentile decision requires a percentile value".into())
    })
}
