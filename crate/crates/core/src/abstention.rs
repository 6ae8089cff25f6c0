//! Bug abstention policy: predict, per bug report, whether an automated
//! repair attempt is worth making at all.
//!
//! The model is asked for a single word — "success" or "failure" — and the
//! probability assigned to the success token becomes the bug's score. Bugs
//! scoring below a threshold τ are abstained from before any repair attempt
//! is launched, cutting reviewer noise at the cheapest possible point.
//!
//! Deliberately, the prompt sees only the report (title + description); the
//! policy never gets codebase access.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::corpus::{BugReport, GroundTruth, Trajectory};
use crate::error::{Error, Result};
use crate::gateway::{self, Backend, ChatRequest};
use crate::parallel::ordered_par_map;

/// Threshold applied when the caller expresses no preference.
pub const DEFAULT_TAU: f64 = 0.5;

/// How the bug is rendered for the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Bare report: tool list, step budget, title, description.
    R1,
    /// R1 plus a block of review guidelines describing what makes a bug
    /// tractable for the agent.
    R2,
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::R1 => "r1",
            Representation::R2 => "r2",
        })
    }
}

/// The raw probabilities read off the first answer token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstentionPrediction {
    pub bug_id: String,
    pub representation: Representation,
    pub p_success: f64,
    pub p_failure: f64,
    /// True when the pair was rescaled to sum to one.
    pub normalized: bool,
    /// Full text the model actually produced, kept for auditing.
    pub raw_text: String,
}

/// What to do with a bug.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstentionAction {
    AttemptRepair,
    Abstain,
}

impl fmt::Display for AbstentionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbstentionAction::AttemptRepair => "attempt_repair",
            AbstentionAction::Abstain => "abstain",
        })
    }
}

/// The thresholded decision for one bug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstentionDecision {
    pub bug_id: String,
    pub tau: f64,
    pub action: AbstentionAction,
}

const PREAMBLE: &str = "You are tasked to predict whether an LLM-based agentic approach will successfully fix a bug.
The agent can use a suite of tools by issuing commands, including:
    - `code_search` to find relevant code.
    - `cat` to read file contents.
    - `ls` to list directory contents.
    - `find_and_replace_text` to modify files.
    - `bazel` to run tests.
The agent is presented with a bug report and can perform a maximum of 25 steps.";

const GUIDELINES: &str = "# GUIDELINES
 These guidelines provide criteria for determining if a bug is likely to be solved by the agent.
 - Clear Problem & Action: The bug report explicitly and clearly describes the incorrect behavior, and the required change is well-understood.
 - Precise Code Localization: The report points to the exact file, code line, function, or configuration that needs attention, or it's easily identifiable from provided information (e.g., stack traces).
 - Simple, Localized Fix Anticipated: The likely solution involves a small, straightforward, and localized change.
 - Actionable Reproduction & Sufficient Context: The issue can be easily and reliably reproduced with the information provided, and sufficient context is available within the report for the agent to proceed effectively.
 - Self-Contained and Complete: All necessary information for addressing the bug is provided and self-contained within the report, requiring minimal external look-up or inference.";

const INSTRUCTION: &str = "Analyze the following bug and predict if the agent will succeed. Your output must be a single word: either \"success\" or \"failure\". Do not provide any other text, explanation, or punctuation.";

/// Answer tokens shorter than a sentence: cap the completion budget.
const PREDICTION_MAX_TOKENS: u32 = 8;
/// Alternatives requested for the first answer token.
const PREDICTION_TOP_LOGPROBS: u32 = 5;

/// Substitutes "(none)" for empty prompt fields so templates never render
/// dangling headers.
pub(crate) fn or_none(text: &str) -> &str {
    if text.trim().is_empty() {
        "(none)"
    } else {
        text
    }
}

/// The `# Bug Title` / `# Bug Description` block shared by every prompt that
/// presents a bug report.
pub(crate) fn bug_block(bug: &BugReport) -> String {
    format!(
        "# Bug Title\n{}\n\n# Bug Description\n{}",
        or_none(&bug.title),
        or_none(&bug.description)
    )
}

fn request_for(user: String) -> ChatRequest {
    let mut request = ChatRequest::new("", user);
    request.max_tokens = PREDICTION_MAX_TOKENS;
    request.want_logprobs = true;
    request.want_top_logprobs = PREDICTION_TOP_LOGPROBS;
    request
}

/// Renders the bare-report prediction prompt. Empty title or description is
/// substituted with "(none)".
pub fn render_r1(bug: &BugReport) -> ChatRequest {
    request_for(format!(
        "{PREAMBLE}\n\n{INSTRUCTION}\n\n{}",
        bug_block(bug)
    ))
}

/// Renders the guideline-augmented prompt: the guidelines block sits between
/// the agent preamble and the prediction instruction, so the bug block stays
/// in the same final position as in r1.
pub fn render_r2(bug: &BugReport) -> ChatRequest {
    request_for(format!(
        "{PREAMBLE}\n\n{GUIDELINES}\n\n{INSTRUCTION}\n\n{}",
        bug_block(bug)
    ))
}

/// Renders the prompt for the chosen representation.
pub fn render_prompt(bug: &BugReport, representation: Representation) -> ChatRequest {
    match representation {
        Representation::R1 => render_r1(bug),
        Representation::R2 => render_r2(bug),
    }
}

/// Sums the probability of every alternative whose text, after stripping
/// leading whitespace, equals `label` case-insensitively.
fn label_probability(alternatives: &[gateway::TokenLogprob], label: &str) -> f64 {
    alternatives
        .iter()
        .filter(|alt| alt.token.trim_start().eq_ignore_ascii_case(label))
        .map(|alt| alt.logprob.exp())
        .sum()
}

/// Queries the backend once and reads P(success) / P(failure) off the first
/// answer token's alternatives.
///
/// A label absent from the alternatives contributes probability zero. When
/// both labels are absent the model said something else entirely and the
/// result is a degenerate-output error. With `normalize` set, the pair is
/// rescaled to sum to one.
pub fn predict(
    bug: &BugReport,
    representation: Representation,
    normalize: bool,
    backend: &dyn Backend,
) -> Result<AbstentionPrediction> {
    let request = render_prompt(bug, representation);
    let response = gateway::complete(&request, backend)?;
    let alternatives = response.first_token_alternatives.as_deref().ok_or_else(|| {
        Error::SchemaViolation(format!(
            "backend returned no first-token alternatives for bug {:?}",
            bug.id
        ))
    })?;

    let mut p_success = label_probability(alternatives, "success");
    let mut p_failure = label_probability(alternatives, "failure");
    let sum = p_success + p_failure;
    if sum == 0.0 {
        return Err(Error::DegenerateOutput {
            bug_id: bug.id.clone(),
        });
    }
    if sum > 1.0 + 1e-6 {
        return Err(Error::SchemaViolation(format!(
            "success/failure probabilities sum to {sum} for bug {:?}",
            bug.id
        )));
    }
    let normalized = normalize;
    if normalize {
        p_success /= sum;
        p_failure /= sum;
    }
    Ok(AbstentionPrediction {
        bug_id: bug.id.clone(),
        representation,
        p_success,
        p_failure,
        normalized,
        raw_text: response.text,
    })
}

/// Applies the threshold rule: attempt repair iff `p_success ≥ tau`.
/// The boundary is inclusive, so τ = 0 attempts every bug.
pub fn decide(prediction: &AbstentionPrediction, tau: f64) -> AbstentionDecision {
    debug_assert!((0.0..=1.0).contains(&tau), "tau must lie in [0,1]");
    let action = if prediction.p_success >= tau {
        AbstentionAction::AttemptRepair
    } else {
        AbstentionAction::Abstain
    };
    AbstentionDecision {
        bug_id: prediction.bug_id.clone(),
        tau,
        action,
    }
}

/// Predicts and decides for a whole corpus with bounded parallelism.
///
/// Bugs whose prediction fails are decided Abstain (fail closed) with a
/// logged warning, and no prediction record is emitted for them; decisions
/// therefore always cover every input bug, in input order.
pub fn predict_all(
    bugs: &[BugReport],
    representation: Representation,
    tau: f64,
    normalize: bool,
    backend: &dyn Backend,
    parallelism: usize,
) -> (Vec<AbstentionPrediction>, Vec<AbstentionDecision>) {
    let items: Vec<&BugReport> = bugs.iter().collect();
    let outcomes = ordered_par_map(items, parallelism, |bug| {
        predict(bug, representation, normalize, backend)
    });
    let mut predictions = Vec::new();
    let mut decisions = Vec::new();
    for (bug, outcome) in bugs.iter().zip(outcomes) {
        match outcome {
            Ok(prediction) => {
                decisions.push(decide(&prediction, tau));
                predictions.push(prediction);
            }
            Err(error) => {
                log::warn!(
                    "abstaining from bug {:?}: prediction failed: {error}",
                    bug.id
                );
                decisions.push(AbstentionDecision {
                    bug_id: bug.id.clone(),
                    tau,
                    action: AbstentionAction::Abstain,
                });
            }
        }
    }
    (predictions, decisions)
}

/// Fraction of a bug's recorded attempts that actually succeeded — the
/// empirical probability the predictor is trying to anticipate.
///
/// Every trajectory must carry a ground-truth label and there must be at
/// least one trajectory.
pub fn empirical_success_rate(trajectories: &[&Trajectory]) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::InvalidInput(
            "empirical success rate needs at least one trajectory".into(),
        ));
    }
    let mut passes = 0usize;
    for trajectory in trajectories {
        match trajectory.ground_truth {
            Some(GroundTruth::Pass) => passes += 1,
            Some(GroundTruth::Fail) => {}
            None => {
                return Err(Error::InvalidInput(format!(
                    "trajectory {:?} lacks a ground-truth label",
                    trajectory.id
                )))
            }
        }
    }
    Ok(passes as f64 / trajectories.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::testutil::{bug, trajectory};
    use crate::gateway::{ChatResponse, TokenLogprob};
    use proptest::prelude::*;

    /// Backend that replays one canned response.
    struct Stub(ChatResponse);

    impl Backend for Stub {
        fn name(&self) -> String {
            "stub".into()
        }
        fn complete(&self, _request: &ChatRequest) -> Result<ChatResponse> {
            Ok(self.0.clone())
        }
    }

    fn response_with_alternatives(pairs: &[(&str, f64)]) -> ChatResponse {
        let alternatives: Vec<TokenLogprob> = pairs
            .iter()
            .map(|(token, p)| TokenLogprob::new(*token, p.ln()))
            .collect();
        let text = pairs
            .first()
            .map(|(token, _)| token.trim_start().to_string())
            .unwrap_or_default();
        ChatResponse {
            token_logprobs: vec![TokenLogprob::new(text.clone(), pairs[0].1.ln())],
            first_token_alternatives: Some(alternatives),
            text,
        }
    }

    fn named_bug(title: &str, description: &str) -> crate::corpus::BugReport {
        let mut b = bug("b1");
        b.title = title.into();
        b.description = description.into();
        b
    }

    #[test]
    fn r1_contains_bug_block_and_tool_list() {
        let request = render_r1(&named_bug("T", "D"));
        assert!(request.user.contains("# Bug Title\nT"));
        assert!(request.user.contains("# Bug Description\nD"));
        assert!(request.user.contains("`code_search` to find relevant code."));
        assert!(request.user.contains("maximum of 25 steps"));
        assert!(request.user.contains("Analyze the following bug"));
        assert!(!request.user.contains("# GUIDELINES"));
    }

    #[test]
    fn empty_description_renders_placeholder() {
        let request = render_r1(&named_bug("T", ""));
        assert!(request.user.contains("# Bug Description\n(none)"));
    }

    #[test]
    fn r2_adds_all_five_guideline_categories() {
        let request = render_r2(&named_bug("T", "D"));
        for category in [
            "Clear Problem & Action",
            "Precise Code Localization",
            "Simple, Localized Fix Anticipated",
            "Actionable Reproduction & Sufficient Context",
            "Self-Contained and Complete",
        ] {
            assert!(request.user.contains(category), "missing {category}");
        }
    }

    #[test]
    fn r2_contains_the_r1_bug_block() {
        let b = named_bug("Crash on save", "Steps to reproduce...");
        let r1 = render_r1(&b);
        let r2 = render_r2(&b);
        let bug_block = r1.user.split("Analyze the following bug").nth(1).unwrap();
        assert!(r2.user.contains(bug_block));
        assert!(r2.user.len() > r1.user.len());
    }

    #[test]
    fn rendering_is_pure() {
        let b = named_bug("T", "D");
        assert_eq!(render_r2(&b), render_r2(&b));
        assert_eq!(
            crate::gateway::request_digest(&render_r1(&b)),
            crate::gateway::request_digest(&render_r1(&b))
        );
    }

    #[test]
    fn probabilities_read_from_alternatives() {
        let backend = Stub(response_with_alternatives(&[
            ("success", 0.7),
            ("failure", 0.29),
        ]));
        let p = predict(&named_bug("T", "D"), Representation::R1, false, &backend).unwrap();
        assert!((p.p_success - 0.7).abs() < 1e-12);
        assert!((p.p_failure - 0.29).abs() < 1e-12);
        assert!(!p.normalized);
        assert_eq!(p.raw_text, "success");
    }

    #[test]
    fn matching_strips_whitespace_and_ignores_case() {
        let backend = Stub(response_with_alternatives(&[
            (" Success", 0.6),
            ("FAILURE", 0.3),
        ]));
        let p = predict(&named_bug("T", "D"), Representation::R2, false, &backend).unwrap();
        assert!((p.p_success - 0.6).abs() < 1e-12);
        assert!((p.p_failure - 0.3).abs() < 1e-12);
    }

    #[test]
    fn missing_label_scores_zero() {
        let backend = Stub(response_with_alternatives(&[("success", 0.8)]));
        let p = predict(&named_bug("T", "D"), Representation::R1, false, &backend).unwrap();
        assert!((p.p_success - 0.8).abs() < 1e-12);
        assert_eq!(p.p_failure, 0.0);
    }

    #[test]
    fn symmetric_pair_normalizes_to_halves() {
        let backend = Stub(response_with_alternatives(&[
            ("success", 0.5),
            ("failure", 0.5),
        ]));
        let p = predict(&named_bug("T", "D"), Representation::R1, true, &backend).unwrap();
        assert!((p.p_success - 0.5).abs() < 1e-12);
        assert!((p.p_failure - 0.5).abs() < 1e-12);
        assert!(p.normalized);
        assert!((p.p_success + p.p_failure - 1.0).abs() < 1e-9);
    }

    #[test]
    fn neither_label_present_is_degenerate() {
        let backend = Stub(response_with_alternatives(&[("the", 0.9)]));
        let err = predict(&named_bug("T", "D"), Representation::R1, false, &backend).unwrap_err();
        assert!(matches!(err, Error::DegenerateOutput { .. }), "{err}");
    }

    #[test]
    fn boundary_probability_attempts_repair() {
        let prediction = AbstentionPrediction {
            bug_id: "b1".into(),
            representation: Representation::R2,
            p_success: 0.5,
            p_failure: 0.5,
            normalized: false,
            raw_text: "success".into(),
        };
        assert_eq!(
            decide(&prediction, 0.5).action,
            AbstentionAction::AttemptRepair
        );
        let mut lower = prediction.clone();
        lower.p_success = 0.49;
        assert_eq!(decide(&lower, 0.5).action, AbstentionAction::Abstain);
    }

    #[test]
    fn zero_threshold_attempts_everything() {
        for p in [0.0, 0.1, 0.99] {
            let prediction = AbstentionPrediction {
                bug_id: "b1".into(),
                representation: Representation::R1,
                p_success: p,
                p_failure: 1.0 - p,
                normalized: false,
                raw_text: String::new(),
            };
            assert_eq!(
                decide(&prediction, 0.0).action,
                AbstentionAction::AttemptRepair
            );
        }
    }

    #[test]
    fn failed_predictions_abstain_with_full_coverage() {
        let backend = Stub(response_with_alternatives(&[("the", 0.9)]));
        let bugs = vec![bug("b1"), bug("b2")];
        let (predictions, decisions) =
            predict_all(&bugs, Representation::R2, 0.5, false, &backend, 2);
        assert!(predictions.is_empty());
        assert_eq!(decisions.len(), 2);
        assert!(decisions
            .iter()
            .all(|d| d.action == AbstentionAction::Abstain));
    }

    #[test]
    fn empirical_rate_counts_passes() {
        let mut runs: Vec<Trajectory> = (0..4).map(|i| trajectory(&format!("t{i}"), "b1", i)).collect();
        runs[2].ground_truth = Some(GroundTruth::Pass);
        let refs: Vec<&Trajectory> = runs.iter().collect();
        assert_eq!(empirical_success_rate(&refs).unwrap(), 0.25);

        let all_fail: Vec<Trajectory> =
            (0..20).map(|i| trajectory(&format!("f{i}"), "b1", i)).collect();
        let refs: Vec<&Trajectory> = all_fail.iter().collect();
        assert_eq!(empirical_success_rate(&refs).unwrap(), 0.0);

        assert!(empirical_success_rate(&[]).is_err());

        let mut unlabeled = trajectory("u", "b1", 0);
        unlabeled.ground_truth = None;
        assert!(empirical_success_rate(&[&unlabeled]).is_err());
    }

    proptest! {
        /// Raising the threshold can only shrink the attempted set.
        #[test]
        fn attempted_set_shrinks_with_tau(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..40),
            tau_low in 0.0f64..=1.0,
            delta in 0.0f64..=1.0,
        ) {
            let tau_high = (tau_low + delta).min(1.0);
            let predictions: Vec<AbstentionPrediction> = scores
                .iter()
                .enumerate()
                .map(|(i, &p)| AbstentionPrediction {
                    bug_id: format!("b{i}"),
                    representation: Representation::R1,
                    p_success: p,
                    p_failure: 1.0 - p,
                    normalized: false,
                    raw_text: String::new(),
                })
                .collect();
            for prediction in &predictions {
                let at_high = decide(prediction, tau_high).action;
                let at_low = decide(prediction, tau_low).action;
                if at_high == AbstentionAction::AttemptRepair {
                    prop_assert_eq!(at_low, AbstentionAction::AttemptRepair);
                }
            }
        }

        /// Scaling both raw probabilities by a common factor leaves the
        /// normalized decision unchanged (away from the threshold boundary).
        #[test]
        fn normalized_decision_ignores_common_scale(
            p_success in 0.01f64..=1.0,
            p_failure in 0.01f64..=1.0,
            scale in 0.01f64..=1.0,
            tau in 0.0f64..=1.0,
        ) {
            // Keep the raw pair a valid sub-distribution in both scalings.
            let total = p_success + p_failure;
            let (p_success, p_failure) = (p_success / total, p_failure / total);
            let normalized_full = p_success / (p_success + p_failure);
            let scaled_s = p_success * scale;
            let scaled_f = p_failure * scale;
            let normalized_scaled = scaled_s / (scaled_s + scaled_f);
            prop_assert!((normalized_full - normalized_scaled).abs() < 1e-12);
            if (normalized_full - tau).abs() > 1e-9 {
                prop_assert_eq!(normalized_full >= tau, normalized_scaled >= tau);
            }
        }
    }
}
