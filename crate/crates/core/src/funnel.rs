//! Sequential composition of the two policies: abstention first decides
//! which bugs are worth attempting, then validation decides which of the
//! surviving trajectories are worth showing a human. The funnel records how
//! many bugs and trajectories remain after every stage, and can optionally
//! collapse each bug's accepted patches to a single representative by
//! majority vote over normalized patch text.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::abstention::{
    self, AbstentionAction, AbstentionDecision, AbstentionPrediction, Representation,
};
use crate::corpus::{
    BugReport, Corpus, ScorePopulation, ScoreRecord, Trajectory, VerdictRecord,
};
use crate::diff;
use crate::error::{Error, Result};
use crate::gateway::Backend;
use crate::metrics::BugOutcomeSummary;
use crate::parallel::ordered_par_map;
use crate::validation::{self, Stage, ValidationConfig, ValidationVerdict};

/// Everything the composed pipeline needs to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelConfig {
    /// Bug representation fed to the abstention model.
    pub representation: Representation,
    /// Abstention threshold: attempt iff p_success ≥ tau.
    pub tau: f64,
    /// Rescale the success/failure pair to sum to one before thresholding.
    pub normalize_probabilities: bool,
    pub validation: ValidationConfig,
    /// Majority-vote one patch per bug after validation.
    pub select_one: bool,
    /// Upper bound on concurrent per-bug work items.
    pub parallelism: usize,
}

impl Default for FunnelConfig {
    fn default() -> Self {
        FunnelConfig {
            representation: Representation::R2,
            tau: abstention::DEFAULT_TAU,
            normalize_probabilities: false,
            validation: ValidationConfig::default(),
            select_one: false,
            parallelism: 4,
        }
    }
}

impl FunnelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) || self.tau.is_nan() {
            return Err(Error::Config(format!(
                "tau must lie in [0,1], got {}",
                self.tau
            )));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        self.validation.validate()
    }
}

/// How many bugs and trajectories were still alive after one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub bugs: u64,
    pub trajectories: u64,
}

/// Per-stage counts plus the final survivor set.
///
/// `surviving` has one entry per bug that abstention let through — a bug
/// whose every trajectory was later rejected keeps its (empty) entry, so the
/// audit trail distinguishes "never attempted" from "attempted, nothing
/// survived".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub stage_counts: Vec<StageCount>,
    pub surviving: BTreeMap<String, Vec<String>>,
}

impl FunnelReport {
    /// Counts must be non-increasing along both axes as stages progress.
    pub fn validate(&self) -> Result<()> {
        for window in self.stage_counts.windows(2) {
            let (earlier, later) = (&window[0], &window[1]);
            if later.bugs > earlier.bugs || later.trajectories > earlier.trajectories {
                return Err(Error::Integrity(format!(
                    "funnel counts grew from stage {:?} ({}, {}) to {:?} ({}, {})",
                    earlier.stage,
                    earlier.bugs,
                    earlier.trajectories,
                    later.stage,
                    later.bugs,
                    later.trajectories
                )));
            }
        }
        Ok(())
    }
}

/// The report plus every intermediate artifact, for audit output.
#[derive(Debug, Clone, PartialEq)]
pub struct FunnelOutcome {
    pub report: FunnelReport,
    pub predictions: Vec<AbstentionPrediction>,
    pub decisions: Vec<AbstentionDecision>,
    pub verdicts: Vec<VerdictRecord>,
    pub summaries: Vec<BugOutcomeSummary>,
    pub scores: Vec<ScoreRecord>,
}

/// Runs abstention strictly before validation and assembles the funnel
/// report.
///
/// Validation only ever touches trajectories of bugs that abstention let
/// through. The decision rule (binary or percentile) is applied across all
/// verdicts of the run in one batch, matching [`validation::decide_verdicts`].
pub fn run_funnel(
    corpus: &Corpus,
    config: &FunnelConfig,
    backend: &dyn Backend,
) -> Result<FunnelOutcome> {
    config.validate()?;
    corpus.validate()?;

    let mut stage_counts = vec![StageCount {
        stage: "input".into(),
        bugs: corpus.bugs.len() as u64,
        trajectories: corpus.trajectories.len() as u64,
    }];

    let (predictions, decisions) = abstention::predict_all(
        &corpus.bugs,
        config.representation,
        config.tau,
        config.normalize_probabilities,
        backend,
        config.parallelism,
    );
    let attempted: Vec<&BugReport> = corpus
        .bugs
        .iter()
        .filter(|bug| {
            decisions
                .iter()
                .any(|d| d.bug_id == bug.id && d.action == AbstentionAction::AttemptRepair)
        })
        .collect();
    let work_items: Vec<(&BugReport, Vec<&Trajectory>)> = attempted
        .iter()
        .map(|bug| (*bug, corpus.runs_for(&bug.id)))
        .collect();
    stage_counts.push(StageCount {
        stage: "abstention".into(),
        bugs: work_items.len() as u64,
        trajectories: work_items.iter().map(|(_, runs)| runs.len() as u64).sum(),
    });

    let per_bug: Vec<Result<Vec<ValidationVerdict>>> =
        ordered_par_map(work_items, config.parallelism, |(bug, runs)| {
            runs.iter()
                .map(|run| validation::validate(bug, run, &config.validation, backend))
                .collect()
        });
    let mut verdicts = Vec::new();
    for bug_verdicts in per_bug {
        verdicts.extend(bug_verdicts?);
    }

    for stage in active_stages(&config.validation) {
        let alive =
            |verdict: &ValidationVerdict| verdict.rejected_at.map_or(true, |at| at > stage);
        push_verdict_count(&mut stage_counts, stage.to_string(), &verdicts, alive);
    }

    let decided = validation::decide_verdicts(verdicts, &config.validation)?;
    let verdicts: Vec<VerdictRecord> = decided
        .into_iter()
        .map(|(verdict, accepted)| VerdictRecord { verdict, accepted })
        .collect();
    {
        let accepted_records: Vec<&VerdictRecord> =
            verdicts.iter().filter(|record| record.accepted).collect();
        let bugs_alive = attempted
            .iter()
            .filter(|bug| accepted_records.iter().any(|r| r.verdict.bug_id == bug.id))
            .count() as u64;
        stage_counts.push(StageCount {
            stage: "decision".into(),
            bugs: bugs_alive,
            trajectories: accepted_records.len() as u64,
        });
    }

    let mut surviving: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for bug in &attempted {
        let ids: Vec<String> = verdicts
            .iter()
            .filter(|record| record.accepted && record.verdict.bug_id == bug.id)
            .map(|record| record.verdict.trajectory_id.clone())
            .collect();
        surviving.insert(bug.id.clone(), ids);
    }

    if config.select_one {
        for (bug_id, ids) in surviving.iter_mut() {
            if ids.len() > 1 {
                let runs: Vec<&Trajectory> = corpus
                    .trajectories
                    .iter()
                    .filter(|t| t.bug_id == *bug_id && ids.contains(&t.id))
                    .collect();
                let winner = majority_pick(&runs)?;
                *ids = vec![winner.id.clone()];
            }
        }
        let bugs_alive = surviving.values().filter(|ids| !ids.is_empty()).count() as u64;
        stage_counts.push(StageCount {
            stage: "majority_vote".into(),
            bugs: bugs_alive,
            trajectories: bugs_alive,
        });
    }

    let summaries = summarize_outcomes(corpus, &surviving);
    let scores = collect_scores(corpus, &predictions, &verdicts);

    let report = FunnelReport {
        stage_counts,
        surviving,
    };
    report.validate()?;
    Ok(FunnelOutcome {
        report,
        predictions,
        decisions,
        verdicts,
        summaries,
        scores,
    })
}

/// The validation stages that can actually reject under this configuration,
/// in execution order.
fn active_stages(config: &ValidationConfig) -> Vec<Stage> {
    let mut stages = vec![Stage::EmptyPatch];
    match config.regression_mode {
        validation::RegressionMode::RecordedBuildTest
        | validation::RegressionMode::ExternalCommand { .. } => {
            stages.push(Stage::RegressionCheck)
        }
        validation::RegressionMode::ReproTest => stages.push(Stage::ReproTest),
        validation::RegressionMode::Disabled => {}
    }
    stages.push(Stage::FinalTestHeuristic);
    stages.push(Stage::LlmJudge);
    stages
}

fn push_verdict_count(
    stage_counts: &mut Vec<StageCount>,
    stage: String,
    verdicts: &[ValidationVerdict],
    alive: impl Fn(&ValidationVerdict) -> bool,
) {
    let survivors: Vec<&ValidationVerdict> = verdicts.iter().filter(|v| alive(v)).collect();
    let mut bug_ids: Vec<&str> = survivors.iter().map(|v| v.bug_id.as_str()).collect();
    bug_ids.sort_unstable();
    bug_ids.dedup();
    stage_counts.push(StageCount {
        stage,
        bugs: bug_ids.len() as u64,
        trajectories: survivors.len() as u64,
    });
}

/// Per-bug outcome counts for the whole corpus, with the filtered counts
/// taken from the funnel's final survivor lists. Bugs abstained from have
/// `n′ = 0`; runs without a ground-truth label count as non-successes.
pub fn summarize_outcomes(
    corpus: &Corpus,
    surviving: &BTreeMap<String, Vec<String>>,
) -> Vec<BugOutcomeSummary> {
    corpus
        .bugs
        .iter()
        .map(|bug| {
            let runs = corpus.runs_for(&bug.id);
            let empty = Vec::new();
            let kept = surviving.get(&bug.id).unwrap_or(&empty);
            let n = runs.len() as u32;
            let c = runs.iter().filter(|t| t.passed()).count() as u32;
            let n_prime = kept.len() as u32;
            let c_prime = runs
                .iter()
                .filter(|t| t.passed() && kept.contains(&t.id))
                .count() as u32;
            BugOutcomeSummary {
                bug_id: bug.id.clone(),
                n,
                c,
                n_prime,
                c_prime,
            }
        })
        .collect()
}

/// Labeled score rows for downstream precision/recall analysis: one
/// abstention row per predicted bug (label: did any recorded run pass?) and
/// one validation row per verdict (label: did that run pass?).
fn collect_scores(
    corpus: &Corpus,
    predictions: &[AbstentionPrediction],
    verdicts: &[VerdictRecord],
) -> Vec<ScoreRecord> {
    let mut scores = Vec::new();
    for prediction in predictions {
        let label = corpus
            .runs_for(&prediction.bug_id)
            .iter()
            .any(|t| t.passed());
        scores.push(ScoreRecord {
            population: ScorePopulation::Abstention,
            bug_id: prediction.bug_id.clone(),
            trajectory_id: None,
            label,
            score: prediction.p_success,
        });
    }
    for record in verdicts {
        let label = corpus
            .trajectories
            .iter()
            .find(|t| t.id == record.verdict.trajectory_id)
            .is_some_and(Trajectory::passed);
        scores.push(ScoreRecord {
            population: ScorePopulation::Validation,
            bug_id: record.verdict.bug_id.clone(),
            trajectory_id: Some(record.verdict.trajectory_id.clone()),
            label,
            score: record.verdict.confidence,
        });
    }
    scores
}

/// Canonicalizes a unified diff for patch-equivalence comparison.
///
/// Only added/removed lines survive (headers, hunk markers and context are
/// dropped). Each line keeps its `+`/`-` marker; runs of whitespace collapse
/// to a single space; identifier-like tokens are replaced by `ID0`, `ID1`, …
/// in first-occurrence order across the whole patch. A token is
/// identifier-like when it starts with a letter or underscore and contains
/// an underscore or an internal case change — plain words (`foo`, `Foo`,
/// `RETURN`) keep their spelling, so renames of `snake_case` / `camelCase`
/// style identifiers map to the same canonical form. (A literal `ID<n>`
/// token in the source is indistinguishable from a mapped one.)
pub fn normalize_patch(patch: &str) -> Result<String> {
    let changed = diff::changed_lines(patch)?;
    let mut names: BTreeMap<String, usize> = BTreeMap::new();
    let mut lines = Vec::new();
    for line in changed {
        let mut parts = vec![line.sign.marker().to_string()];
        for token in tokenize(line.content) {
            if is_identifier_like(token) {
                let next_index = names.len();
                let index = *names.entry(token.to_string()).or_insert(next_index);
                parts.push(format!("ID{index}"));
            } else {
                parts.push(token.to_string());
            }
        }
        lines.push(parts.join(" "));
    }
    Ok(lines.join("\n"))
}

/// Splits into word tokens (`[A-Za-z0-9_]+`) and single-character symbol
/// tokens, discarding whitespace.
fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;
    for (offset, ch) in text.char_indices() {
        let is_word = ch.is_ascii_alphanumeric() || ch == '_';
        if is_word {
            word_start.get_or_insert(offset);
            continue;
        }
        if let Some(start) = word_start.take() {
            tokens.push(&text[start..offset]);
        }
        if !ch.is_whitespace() {
            tokens.push(&text[offset..offset + ch.len_utf8()]);
        }
    }
    if let Some(start) = word_start {
        tokens.push(&text[start..]);
    }
    tokens
}

/// Heuristic for "likely identifier": letter/underscore-initial word that
/// contains an underscore, a lower→upper transition, or an acronym boundary
/// (upper, upper, lower).
fn is_identifier_like(token: &str) -> bool {
    let bytes = token.as_bytes();
    let starts_well = bytes
        .first()
        .is_some_and(|b| b.is_ascii_alphabetic() || *b == b'_');
    if !starts_well {
        return false;
    }
    if token.contains('_') {
        return true;
    }
    bytes.windows(2).any(|w| {
        w[0].is_ascii_lowercase() && w[1].is_ascii_uppercase()
    }) || bytes.windows(3).any(|w| {
        w[0].is_ascii_uppercase() && w[1].is_ascii_uppercase() && w[2].is_ascii_lowercase()
    })
}

/// Picks one representative from a bug's accepted trajectories by majority
/// vote over canonical patch forms. Ties go to the group with the fewest
/// canonical changed lines, then to the group containing the lowest
/// `run_index`; the representative is that group's lowest-`run_index`
/// member.
pub fn majority_pick<'a>(trajectories: &[&'a Trajectory]) -> Result<&'a Trajectory> {
    if trajectories.is_empty() {
        return Err(Error::InvalidInput(
            "majority vote over zero trajectories".into(),
        ));
    }
    let mut groups: BTreeMap<String, Vec<&'a Trajectory>> = BTreeMap::new();
    for trajectory in trajectories {
        groups
            .entry(normalize_patch(&trajectory.patch)?)
            .or_default()
            .push(trajectory);
    }
    let winner = groups
        .iter()
        .min_by_key(|(canonical, members)| {
            let size = members.len();
            let line_count = if canonical.is_empty() {
                0
            } else {
                canonical.lines().count()
            };
            let earliest = members.iter().map(|t| t.run_index).min().unwrap_or(u32::MAX);
            (usize::MAX - size, line_count, earliest)
        })
        .map(|(_, members)| members)
        .expect("non-empty groups");
    Ok(winner
        .iter()
        .copied()
        .min_by_key(|t| t.run_index)
        .expect("non-empty group"))
}
