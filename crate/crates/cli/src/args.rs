//! Command-line surface: subcommands, flags, and the parsers that turn flag
//! text into core policy types.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use patchfunnel::abstention::Representation;
use patchfunnel::validation::{DecisionRule, RegressionMode, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "patchfunnel",
    version,
    about = "Noise reduction for agentic program repair: abstention, patch validation, and filtered metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict repair success per bug and decide attempt/abstain.
    Abstain(AbstainArgs),
    /// Validate recorded trajectories and write accept/reject verdicts.
    Validate(ValidateArgs),
    /// Run abstention then validation and write the full funnel report.
    Compose(ComposeArgs),
    /// Compute success@k-style metrics from a compose report.
    Eval(EvalArgs),
    /// Derive precision/recall curves or distribution distances from a
    /// compose report's score records.
    Report(ReportArgs),
}

/// Model-backend selection, shared by every command that calls a model.
#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Which backend answers model requests.
    #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
    pub backend: BackendKind,
    /// Rules file (JSONL rule records) for the scripted backend.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Endpoint URL for the remote backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name for the remote backend.
    #[arg(long)]
    pub model: Option<String>,
    /// Directory for the on-disk response cache (omit to disable caching).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Maximum concurrent backend calls.
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Seed for randomized subsampling in future report modes; all current
    /// outputs are exact and ignore it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Debug, Args)]
pub struct AbstainArgs {
    /// Bug reports file (JSONL bug records).
    #[arg(long)]
    pub bugs: PathBuf,
    /// Bug representation fed to the model.
    #[arg(long, value_parser = parse_representation, default_value = "r2")]
    pub rep: Representation,
    /// Attempt threshold: attempt iff p_success ≥ tau.
    #[arg(long, default_value_t = patchfunnel::abstention::DEFAULT_TAU)]
    pub tau: f64,
    /// Rescale p_success/p_failure to sum to one before thresholding.
    #[arg(long)]
    pub normalize: bool,
    /// Output file (JSONL prediction + decision records).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Bug reports file (JSONL bug records).
    #[arg(long)]
    pub bugs: PathBuf,
    /// Trajectories file (JSONL trajectory records).
    #[arg(long)]
    pub trajectories: PathBuf,
    /// Judge variant.
    #[arg(long, value_parser = parse_variant, default_value = "spec")]
    pub variant: Variant,
    /// Regression gate: recorded, repro, cmd:<template>, or none.
    #[arg(long, value_parser = parse_regression, default_value = "recorded")]
    pub regression: RegressionMode,
    /// Decision rule: binary, p75, p90, or p:<n>.
    #[arg(long, value_parser = parse_decision, default_value = "binary")]
    pub decision: DecisionArg,
    /// Output file (JSONL verdict records).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Bug reports file (JSONL bug records).
    #[arg(long)]
    pub bugs: PathBuf,
    /// Trajectories file (JSONL trajectory records).
    #[arg(long)]
    pub trajectories: PathBuf,
    /// Attempt threshold: attempt iff p_success ≥ tau.
    #[arg(long, default_value_t = patchfunnel::abstention::DEFAULT_TAU)]
    pub tau: f64,
    /// Bug representation fed to the abstention model.
    #[arg(long, value_parser = parse_representation, default_value = "r2")]
    pub rep: Representation,
    /// Rescale p_success/p_failure to sum to one before thresholding.
    #[arg(long)]
    pub normalize: bool,
    /// Judge variant.
    #[arg(long, value_parser = parse_variant, default_value = "spec")]
    pub variant: Variant,
    /// Regression gate: recorded, repro, cmd:<template>, or none.
    #[arg(long, value_parser = parse_regression, default_value = "recorded")]
    pub regression: RegressionMode,
    /// Decision rule: binary, p75, p90, or p:<n>.
    #[arg(long, value_parser = parse_decision, default_value = "binary")]
    pub decision: DecisionArg,
    /// Majority-vote one patch per bug after validation.
    #[arg(long)]
    pub select_one: bool,
    /// Output file (JSONL: funnel report, predictions, decisions, verdicts,
    /// summaries, scores).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Compose report file to evaluate.
    #[arg(long)]
    pub report: PathBuf,
    /// k values to evaluate, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10,20")]
    pub k: Vec<u64>,
    /// Output CSV (metric,k,value,bugs_in_B_prime).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Compose report file to read score records from.
    #[arg(long)]
    pub report: PathBuf,
    /// Which score population to analyze.
    #[arg(long, value_enum, default_value_t = PopulationArg::Validation)]
    pub population: PopulationArg,
    /// Write the precision/recall sweep (threshold,precision,recall CSV)
    /// to --out.
    #[arg(long)]
    pub pr: bool,
    /// Print the 1-D Wasserstein distance between the scores of passing and
    /// failing items to stdout.
    #[arg(long)]
    pub wasserstein: bool,
    /// Output CSV path (required with --pr).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PopulationArg {
    Abstention,
    Validation,
}

/// A decision rule plus its percentile, parsed from one flag value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionArg {
    pub rule: DecisionRule,
    pub percentile: Option<u32>,
}

fn parse_representation(text: &str) -> Result<Representation, String> {
    match text {
        "r1" => Ok(Representation::R1),
        "r2" => Ok(Representation::R2),
        other => Err(format!("expected r1 or r2, got {other:?}")),
    }
}

fn parse_variant(text: &str) -> Result<Variant, String> {
    match text {
        "spec" => Ok(Variant::Spec),
        "no-spec" => Ok(Variant::NoSpec),
        other => Err(format!("expected spec or no-spec, got {other:?}")),
    }
}

fn parse_regression(text: &str) -> Result<RegressionMode, String> {
    match text {
        "recorded" => Ok(RegressionMode::RecordedBuildTest),
        "repro" => Ok(RegressionMode::ReproTest),
        "none" => Ok(RegressionMode::Disabled),
        other => match other.strip_prefix("cmd:") {
            Some(command) if !command.trim().is_empty() => Ok(RegressionMode::ExternalCommand {
                command: command.to_string(),
            }),
            Some(_) => Err("cmd: requires a non-empty command template".to_string()),
            None => Err(format!(
                "expected recorded, repro, cmd:<template>, or none, got {other:?}"
            )),
        },
    }
}

fn parse_decision(text: &str) -> Result<DecisionArg, String> {
    match text {
        "binary" => Ok(DecisionArg {
            rule: DecisionRule::Binary,
            percentile: None,
        }),
        "p75" => Ok(DecisionArg {
            rule: DecisionRule::Percentile,
            percentile: Some(75),
        }),
        "p90" => Ok(DecisionArg {
            rule: DecisionRule::Percentile,
            percentile: Some(90),
        }),
        other => {
            let digits = other.strip_prefix("p:").ok_or_else(|| {
                format!("expected binary, p75, p90, or p:<n>, got {other:?}")
            })?;
            let percentile: u32 = digits
                .parse()
                .map_err(|e| format!("bad percentile {digits:?}: {e}"))?;
            if !(1..=100).contains(&percentile) {
                return Err(format!("percentile must lie in 1..=100, got {percentile}"));
            }
            Ok(DecisionArg {
                rule: DecisionRule::Percentile,
                percentile: Some(percentile),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn decision_flag_accepts_all_forms() {
        assert_eq!(
            parse_decision("binary").unwrap(),
            DecisionArg {
                rule: DecisionRule::Binary,
                percentile: None
            }
        );
        assert_eq!(parse_decision("p75").unwrap().percentile, Some(75));
        assert_eq!(parse_decision("p90").unwrap().percentile, Some(90));
        assert_eq!(parse_decision("p:42").unwrap().percentile, Some(42));
        assert!(parse_decision("p:0").is_err());
        assert!(parse_decision("p:101").is_err());
        assert!(parse_decision("p:").is_err());
        assert!(parse_decision("percentile").is_err());
    }

    #[test]
    fn regression_flag_accepts_all_modes() {
        assert_eq!(
            parse_regression("recorded").unwrap(),
            RegressionMode::RecordedBuildTest
        );
        assert_eq!(parse_regression("repro").unwrap(), RegressionMode::ReproTest);
        assert_eq!(parse_regression("none").unwrap(), RegressionMode::Disabled);
        assert_eq!(
            parse_regression("cmd:run {target}").unwrap(),
            RegressionMode::ExternalCommand {
                command: "run {target}".into()
            }
        );
        assert!(parse_regression("cmd:").is_err());
        assert!(parse_regression("sometimes").is_err());
    }

    #[test]
    fn representation_and_variant_flags() {
        assert_eq!(parse_representation("r1").unwrap(), Representation::R1);
        assert_eq!(parse_representation("r2").unwrap(), Representation::R2);
        assert!(parse_representation("r3").is_err());
        assert_eq!(parse_variant("spec").unwrap(), Variant::Spec);
        assert_eq!(parse_variant("no-spec").unwrap(), Variant::NoSpec);
        assert!(parse_variant("nospec").is_err());
    }

    #[test]
    fn defaults_cover_every_knob() {
        let cli = Cli::try_parse_from([
            "patchfunnel",
            "compose",
            "--bugs",
            "b.jsonl",
            "--trajectories",
            "t.jsonl",
            "--rules",
            "r.jsonl",
            "--out",
            "o.jsonl",
        ])
        .unwrap();
        let Command::Compose(args) = cli.command else {
            panic!("expected compose");
        };
        assert_eq!(args.tau, 0.5);
        assert_eq!(args.rep, Representation::R2);
        assert_eq!(args.variant, Variant::Spec);
        assert_eq!(args.regression, RegressionMode::RecordedBuildTest);
        assert_eq!(args.decision.rule, DecisionRule::Binary);
        assert!(!args.select_one);
        assert!(!args.normalize);
        assert_eq!(args.backend.parallelism, 4);
        assert_eq!(args.backend.seed, 0);
        assert_eq!(args.backend.backend, BackendKind::Scripted);
    }

    #[test]
    fn eval_k_list_parses_comma_separated() {
        let cli = Cli::try_parse_from([
            "patchfunnel",
            "eval",
            "--report",
            "rep.jsonl",
            "--k",
            "1,3,5",
            "--out",
            "m.csv",
        ])
        .unwrap();
        let Command::Eval(args) = cli.command else {
            panic!("expected eval");
        };
        assert_eq!(args.k, vec![1, 3, 5]);
    }
}
