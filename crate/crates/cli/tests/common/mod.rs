//! Deterministic synthetic corpus used by the end-to-end tests.
//!
//! The generator produces a 174-bug corpus (5 recorded repair attempts per
//! bug) plus a scripted-backend rules file, shaped so the full pipeline lands
//! on known stage counts and filtered success rates:
//!
//! * abstention at τ = 0.5 keeps 39 of 174 bugs (one sits exactly on the
//!   threshold);
//! * binary validation keeps 33 bugs, filtered success@1 = (19/3 + 13/4)/33
//!   ≈ 0.2904;
//! * percentile-90 validation keeps the 12 bugs holding the 20
//!   highest-confidence verdicts, filtered success@1 = 19/36 ≈ 0.5278.
//!
//! Routing to canned responses works by substring sentinels: each attempted
//! trajectory carries a `review-signal-*` marker in a step observation (seen
//! only by judge prompts), and each bug title carries a `triage-*` marker
//! (seen by both; judge rules are listed first, so they win on judge
//! prompts). The checked-in files under `fixtures/stub/` at the repository
//! root are byte-for-byte reproducible; a drift-guard test regenerates and
//! compares them, and setting `PATCHFUNNEL_REGEN_FIXTURES=1` rewrites them in
//! place.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use patchfunnel::corpus::{
    self, Action, BugCategory, BugReport, GroundTruth, Record, TestResult, TestStatus, Tool,
    Trajectory, TrajectoryStep,
};
use patchfunnel::gateway::{ChatResponse, RuleMatch, ScriptedRule, TokenLogprob};

pub const TOTAL_BUGS: usize = 174;
pub const RUNS_PER_BUG: usize = 5;

/// Bugs the abstention policy attempts at τ = 0.5.
pub const ATTEMPTED_BUGS: u64 = 39;
/// Bugs retained by binary validation.
pub const BINARY_BUGS: u64 = 33;
/// Bugs retained by percentile-90 validation.
pub const P90_BUGS: u64 = 12;
/// Trajectories the judge affirms (20 strong + 26 weak).
pub const JUDGED_TRUE_TRAJECTORIES: u64 = 46;
/// Trajectories accepted under the percentile-90 rule.
pub const P90_TRAJECTORIES: u64 = 20;

/// Marker planted in bug metadata standing in for the known-correct fix; no
/// rendered prompt may ever contain it.
pub const ORACLE_PATCH_SENTINEL: &str = "GT-PATCH-SENTINEL-7f3a";

/// Expected filtered success@1 under binary validation.
pub fn binary_rate() -> f64 {
    // 12 percentile-grade bugs contribute 5·(1/1) + 4·(1/3) + 3·0 = 19/3;
    // the binary-only bugs add 2·(1/1) + 2·(1/2) + 1·(1/4) = 13/4.
    (19.0 / 3.0 + 13.0 / 4.0) / 33.0
}

/// Expected filtered success@1 under percentile-90 validation.
pub fn p90_rate() -> f64 {
    (5.0 + 4.0 / 3.0) / 12.0
}

/// How the judge reacts to one trajectory.
#[derive(Clone, Copy, PartialEq)]
pub enum Signal {
    /// Affirmed with high confidence (0.9).
    Strong,
    /// Affirmed with low confidence (0.6).
    Weak,
    /// Rejected.
    None,
}

impl Signal {
    fn marker(self) -> &'static str {
        match self {
            Signal::Strong => "review-signal-strong",
            Signal::Weak => "review-signal-weak",
            Signal::None => "review-signal-none",
        }
    }
}

/// How the abstention model scores a bug.
#[derive(Clone, Copy, PartialEq)]
enum Triage {
    /// P(success) exactly at the 0.5 threshold.
    Borderline,
    /// P(success) = 0.75: attempted.
    Likely,
    /// P(success) = 0.2: abstained.
    Unlikely,
}

impl Triage {
    fn marker(self) -> &'static str {
        match self {
            Triage::Borderline => "triage-borderline",
            Triage::Likely => "triage-likely",
            Triage::Unlikely => "triage-unlikely",
        }
    }
}

/// One bug archetype: its triage class and the judge signal plus ground
/// truth of each of its five runs. `None` runs are never validated (the bug
/// is abstained) and get an empty patch.
struct BugClass {
    count: usize,
    triage: Triage,
    runs: Option<[(Signal, bool); RUNS_PER_BUG]>,
}

fn layout() -> Vec<BugClass> {
    use Signal::{None as Rej, Strong, Weak};
    let attempted = |count, triage, runs| BugClass {
        count,
        triage,
        runs: Some(runs),
    };
    vec![
        // Percentile-grade bugs: 20 strong verdicts across 12 bugs.
        attempted(
            5,
            Triage::Borderline, // only the first bug of this class stays borderline
            [(Strong, true), (Rej, false), (Rej, false), (Rej, false), (Rej, false)],
        ),
        attempted(
            4,
            Triage::Likely,
            [(Strong, true), (Strong, false), (Strong, false), (Rej, false), (Rej, false)],
        ),
        attempted(
            3,
            Triage::Likely,
            [(Strong, false), (Rej, false), (Rej, false), (Rej, false), (Rej, false)],
        ),
        // Binary-only bugs: weak verdicts that a percentile cutoff discards.
        attempted(
            2,
            Triage::Likely,
            [(Weak, true), (Rej, false), (Rej, false), (Rej, false), (Rej, false)],
        ),
        attempted(
            2,
            Triage::Likely,
            [(Weak, true), (Weak, false), (Rej, false), (Rej, false), (Rej, false)],
        ),
        attempted(
            1,
            Triage::Likely,
            [(Weak, true), (Weak, false), (Weak, false), (Weak, false), (Rej, false)],
        ),
        attempted(
            16,
            Triage::Likely,
            [(Weak, false), (Rej, false), (Rej, false), (Rej, false), (Rej, false)],
        ),
        // Attempted but every verdict rejected.
        attempted(
            6,
            Triage::Likely,
            [(Rej, false), (Rej, false), (Rej, false), (Rej, false), (Rej, false)],
        ),
        // Abstained outright.
        BugClass {
            count: 135,
            triage: Triage::Unlikely,
            runs: None,
        },
    ]
}

const COMPONENTS: &[&str] = &[
    "auth", "billing", "cache", "export", "gateway", "indexer", "jobs", "ledger", "metrics",
    "notifier", "parser", "quota", "router", "scheduler", "storage", "telemetry", "uploads",
    "webhooks",
];

const SYMPTOMS: &[&str] = &[
    "Null dereference",
    "Panic on empty input",
    "Deadlock under load",
    "Off-by-one in pagination",
    "Stale cache entry served",
    "Integer overflow",
    "Race during shutdown",
    "Crash on malformed header",
];

fn component(index: usize) -> &'static str {
    COMPONENTS[index % COMPONENTS.len()]
}

fn make_bug(index: usize, triage: Triage) -> BugReport {
    let id = format!("bug-{index:03}");
    let component = component(index);
    let symptom = SYMPTOMS[index % SYMPTOMS.len()];
    let category = match index % 4 {
        0 => BugCategory::Npe,
        1 => BugCategory::Human,
        2 => BugCategory::Sanitizer,
        _ => BugCategory::Other,
    };
    let repro_test = match category {
        // Sanitizer findings always ship with a reproduction test.
        BugCategory::Sanitizer | BugCategory::Npe => Some(format!("//{component}:repro_{index}")),
        _ => None,
    };
    let mut metadata = BTreeMap::new();
    metadata.insert("component".to_string(), component.to_string());
    // The known-correct fix rides along as metadata only; prompts must never
    // leak it.
    metadata.insert(
        "oracle_patch".to_string(),
        format!(
            "--- a/src/{component}/handler.rs\n+++ b/src/{component}/handler.rs\n\
             @@ -8,1 +8,1 @@\n-{ORACLE_PATCH_SENTINEL} faulty\n+{ORACLE_PATCH_SENTINEL} fixed\n"
        ),
    );
    BugReport {
        id: id.clone(),
        title: format!("{symptom} in {component} worker ({})", triage.marker()),
        description: format!(
            "Requests passing through the {component} service intermittently fail with \
             \"{symptom}\". The fault was first seen after the 2024-11 release and is \
             tracked as {id}. Logs point at handler.rs but the owning team could not \
             reproduce it locally."
        ),
        category,
        metadata,
        repro_test,
    }
}

fn source_for(component: &str) -> String {
    format!(
        "fn handle(request: &Request) -> Response {{\n    let value = {component}_table.lookup(request.key);\n    respond(value)\n}}\n"
    )
}

fn attempted_trajectory(
    bug: &BugReport,
    run_index: usize,
    signal: Signal,
    passes: bool,
) -> Trajectory {
    let component = &bug.metadata["component"];
    let path = format!("src/{component}/handler.rs");
    let id = format!("t-{}-{run_index}", bug.id);
    let mut steps = vec![
        TrajectoryStep {
            index: 0,
            thought: "Read the crashing handler to understand the failure.".into(),
            action: Action {
                tool: Tool::Cat,
                args: path.clone(),
            },
            observation: format!("{}// {}", source_for(component), signal.marker()),
            test_result: None,
        },
        TrajectoryStep {
            index: 1,
            thought: "Guard the lookup against missing keys.".into(),
            action: Action {
                tool: Tool::FindAndReplaceText,
                args: format!("{path}: lookup(request.key) -> lookup(request.key)?"),
            },
            observation: "Replaced 1 occurrence.".into(),
            test_result: None,
        },
    ];
    // Strong attempts also re-ran the unit suite and saw it pass, so their
    // judge prompts carry test evidence; the rest rely on the reviewer.
    if signal == Signal::Strong {
        steps.push(TrajectoryStep {
            index: 2,
            thought: "Re-run the unit suite for the touched package.".into(),
            action: Action {
                tool: Tool::Test,
                args: format!("//{component}:unit_tests"),
            },
            observation: "42 tests passed, 0 failed.".into(),
            test_result: Some(TestResult {
                target: format!("//{component}:unit_tests"),
                attempt: 1,
                status: TestStatus::Pass,
                log_excerpt: "42 tests passed, 0 failed".into(),
            }),
        });
    }
    let patch = format!(
        "--- a/{path}\n+++ b/{path}\n@@ -1,4 +1,5 @@\n fn handle(request: &Request) -> Response {{\n\
         -    let value = {component}_table.lookup(request.key);\n\
         +    let value = {component}_table.lookup(request.key)?; // {id}\n\
         +    audit_log(request.key);\n     respond(value)\n }}\n"
    );
    Trajectory {
        id,
        bug_id: bug.id.clone(),
        run_index: run_index as u32,
        steps,
        patch,
        edited_files: BTreeMap::from([(path, source_for(component))]),
        recorded_regressions: vec![TestResult {
            target: format!("//{component}:dependents"),
            attempt: 1,
            status: TestStatus::Pass,
            log_excerpt: "all dependent targets built and passed".into(),
        }],
        ground_truth: Some(if passes {
            GroundTruth::Pass
        } else {
            GroundTruth::Fail
        }),
    }
}

fn skipped_trajectory(bug: &BugReport, run_index: usize) -> Trajectory {
    let component = &bug.metadata["component"];
    Trajectory {
        id: format!("t-{}-{run_index}", bug.id),
        bug_id: bug.id.clone(),
        run_index: run_index as u32,
        steps: vec![TrajectoryStep {
            index: 0,
            thought: "Look for the reported crash site.".into(),
            action: Action {
                tool: Tool::CodeSearch,
                args: format!("lookup {component}"),
            },
            observation: "No obviously faulty call site found.".into(),
            test_result: None,
        }],
        patch: String::new(),
        edited_files: BTreeMap::new(),
        recorded_regressions: vec![],
        ground_truth: Some(GroundTruth::Fail),
    }
}

fn judge_body(fixed: bool, explanation: &str) -> String {
    serde_json::json!({
        "is_bug_fixed": fixed,
        "explanation": explanation,
    })
    .to_string()
}

/// A judge response whose single response token carries `ln(confidence)`.
fn judge_rule(marker: &str, fixed: bool, confidence: f64, explanation: &str) -> ScriptedRule {
    let body = judge_body(fixed, explanation);
    ScriptedRule {
        matcher: RuleMatch::Substring(marker.to_string()),
        response: ChatResponse {
            token_logprobs: vec![TokenLogprob::new(&body, confidence.ln())],
            text: body,
            first_token_alternatives: None,
        },
    }
}

/// Largest-magnitude logprob whose `exp` still reaches `p`, so thresholding
/// at exactly `p` keeps the bug regardless of how `ln`/`exp` round.
fn logprob_reaching(p: f64) -> f64 {
    let mut logprob = p.ln();
    while logprob.exp() < p {
        // Negative values: decrementing the bit pattern moves toward zero,
        // nudging exp upward one ULP at a time.
        logprob = f64::from_bits(logprob.to_bits() - 1);
    }
    logprob
}

fn abstention_rule(triage: Triage) -> ScriptedRule {
    let (p_success, lp_success): (f64, f64) = match triage {
        Triage::Borderline => (0.5, logprob_reaching(0.5)),
        Triage::Likely => (0.75, 0.75_f64.ln()),
        Triage::Unlikely => (0.2, 0.2_f64.ln()),
    };
    let lp_failure = (1.0 - p_success).ln();
    let answer = if p_success >= 0.5 { "success" } else { "failure" };
    let answer_lp = if p_success >= 0.5 { lp_success } else { lp_failure };
    ScriptedRule {
        matcher: RuleMatch::Substring(triage.marker().to_string()),
        response: ChatResponse {
            text: answer.to_string(),
            token_logprobs: vec![TokenLogprob::new(answer, answer_lp)],
            first_token_alternatives: Some(vec![
                TokenLogprob::new("success", lp_success),
                TokenLogprob::new("failure", lp_failure),
            ]),
        },
    }
}

pub struct Fixture {
    pub bugs: Vec<BugReport>,
    pub trajectories: Vec<Trajectory>,
    pub rules: Vec<ScriptedRule>,
}

pub fn corpus_fixture() -> Fixture {
    let mut bugs = Vec::with_capacity(TOTAL_BUGS);
    let mut trajectories = Vec::with_capacity(TOTAL_BUGS * RUNS_PER_BUG);
    let mut index = 0;
    for class in layout() {
        for position in 0..class.count {
            index += 1;
            // Exactly one bug sits on the abstention threshold; its
            // classmates are ordinary confident predictions.
            let triage = match (class.triage, position) {
                (Triage::Borderline, 0) => Triage::Borderline,
                (Triage::Borderline, _) => Triage::Likely,
                (other, _) => other,
            };
            let bug = make_bug(index, triage);
            match &class.runs {
                Some(runs) => {
                    for (run_index, (signal, passes)) in runs.iter().enumerate() {
                        trajectories.push(attempted_trajectory(&bug, run_index, *signal, *passes));
                    }
                }
                None => {
                    for run_index in 0..RUNS_PER_BUG {
                        trajectories.push(skipped_trajectory(&bug, run_index));
                    }
                }
            }
            bugs.push(bug);
        }
    }
    assert_eq!(bugs.len(), TOTAL_BUGS);
    assert_eq!(trajectories.len(), TOTAL_BUGS * RUNS_PER_BUG);

    // Judge rules first: judge prompts contain both marker families and the
    // backend serves the first substring match.
    let rules = vec![
        judge_rule(
            Signal::Strong.marker(),
            true,
            0.9,
            "The guard removes the crash and the re-run unit suite passes; the change is \
             scoped to the faulty handler.",
        ),
        judge_rule(
            Signal::Weak.marker(),
            true,
            0.6,
            "The patch plausibly addresses the crash, but no test exercises the repaired \
             path, so the fix is only weakly supported.",
        ),
        judge_rule(
            Signal::None.marker(),
            false,
            0.8,
            "The patch edits an unrelated code path; the reported crash can still occur.",
        ),
        abstention_rule(Triage::Borderline),
        abstention_rule(Triage::Likely),
        abstention_rule(Triage::Unlikely),
    ];
    Fixture {
        bugs,
        trajectories,
        rules,
    }
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/stub")
}

pub fn bugs_path() -> PathBuf {
    fixtures_dir().join("bugs.jsonl")
}

pub fn trajectories_path() -> PathBuf {
    fixtures_dir().join("trajectories.jsonl")
}

pub fn rules_path() -> PathBuf {
    fixtures_dir().join("rules.jsonl")
}

/// Writes the three fixture files for `fixture` under `dir`.
pub fn write_fixture_files(fixture: &Fixture, dir: &Path) {
    let bugs: Vec<Record> = fixture.bugs.iter().cloned().map(Record::Bug).collect();
    let trajectories: Vec<Record> = fixture
        .trajectories
        .iter()
        .cloned()
        .map(Record::Trajectory)
        .collect();
    let rules: Vec<Record> = fixture.rules.iter().cloned().map(Record::Rule).collect();
    corpus::write_records(dir.join("bugs.jsonl"), &bugs).expect("write bugs");
    corpus::write_records(dir.join("trajectories.jsonl"), &trajectories).expect("write trajectories");
    corpus::write_records(dir.join("rules.jsonl"), &rules).expect("write rules");
}
