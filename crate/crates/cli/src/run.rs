//! Implementations of the five subcommands: load inputs, call into the
//! policy/metric modules, write outputs atomically, and stamp every output
//! with a run-manifest sidecar tying it to exact input digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use patchfunnel::abstention::{self, AbstentionPrediction, Representation};
use patchfunnel::corpus::{
    self, BugReport, Corpus, Record, RunManifest, ScorePopulation, VerdictRecord,
};
use patchfunnel::funnel::{self, FunnelConfig};
use patchfunnel::fsutil;
use patchfunnel::gateway::{
    Backend, CachedBackend, RemoteBackend, RemoteConfig, ResponseCache, ScriptedBackend,
};
use patchfunnel::metrics::{self, LabeledScore};
use patchfunnel::parallel::ordered_par_map;
use patchfunnel::validation::{self, ValidationConfig, ValidationVerdict, Variant};
use patchfunnel::Error;

use crate::args::{
    AbstainArgs, BackendArgs, BackendKind, Cli, Command, ComposeArgs, EvalArgs, PopulationArg,
    ReportArgs, ValidateArgs,
};

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Abstain(args) => abstain(args),
        Command::Validate(args) => validate(args),
        Command::Compose(args) => compose(args),
        Command::Eval(args) => eval(args),
        Command::Report(args) => report(args),
    }
}

/// A constructed backend plus the manifest bookkeeping it contributes.
struct BuiltBackend {
    backend: Box<dyn Backend>,
    /// Input files that shape backend behavior, path → content digest.
    inputs: BTreeMap<String, String>,
    /// Effective backend settings, for the config digest.
    config: serde_json::Value,
}

fn build_backend(args: &BackendArgs) -> Result<BuiltBackend> {
    if args.parallelism == 0 {
        return Err(Error::Config("--parallelism must be at least 1".into()).into());
    }
    let (inner, inputs, mut config): (Box<dyn Backend>, _, _) = match args.backend {
        BackendKind::Scripted => {
            let rules = args.rules.as_ref().ok_or_else(|| {
                Error::Config("the scripted backend requires --rules".into())
            })?;
            let backend = ScriptedBackend::load(rules)?;
            let mut inputs = BTreeMap::new();
            inputs.insert(rules.display().to_string(), fsutil::sha256_file(rules)?);
            let config = serde_json::json!({
                "backend": "scripted",
                "rules": rules.display().to_string(),
            });
            (Box::new(backend), inputs, config)
        }
        BackendKind::Remote => {
            let endpoint = args.endpoint.clone().ok_or_else(|| {
                Error::Config("the remote backend requires --endpoint".into())
            })?;
            let model = args.model.clone().ok_or_else(|| {
                Error::Config("the remote backend requires --model".into())
            })?;
            let backend = RemoteBackend::new(RemoteConfig::new(&endpoint, &model))?;
            let config = serde_json::json!({
                "backend": "remote",
                "endpoint": endpoint,
                "model": model,
            });
            (Box::new(backend), BTreeMap::new(), config)
        }
    };
    let backend: Box<dyn Backend> = match &args.cache {
        Some(dir) => {
            config["cache"] = serde_json::Value::String(dir.display().to_string());
            Box::new(CachedBackend::new(inner, ResponseCache::new(dir)?))
        }
        None => inner,
    };
    config["parallelism"] = args.parallelism.into();
    config["seed"] = args.seed.into();
    Ok(BuiltBackend {
        backend,
        inputs,
        config,
    })
}

/// `<out>.manifest`, alongside the output file.
fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

/// Writes the run-manifest sidecar: the invoking command line, a digest of
/// the effective configuration, and a digest per input file. The manifest is
/// a sidecar so the output file itself stays byte-identical across re-runs.
fn write_manifest(
    out: &Path,
    config: &serde_json::Value,
    inputs: BTreeMap<String, String>,
) -> Result<()> {
    let config_bytes = serde_json::to_vec(config)
        .map_err(|e| Error::InvalidInput(format!("unserializable config: {e}")))?;
    let manifest = RunManifest::new(
        std::env::args().collect::<Vec<_>>().join(" "),
        fsutil::sha256_hex(&config_bytes),
        inputs,
    );
    corpus::write_records(manifest_path(out), &[Record::Manifest(manifest)])?;
    Ok(())
}

fn digest_input(inputs: &mut BTreeMap<String, String>, path: &Path) -> Result<()> {
    inputs.insert(path.display().to_string(), fsutil::sha256_file(path)?);
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::Config(format!("--tau must lie in [0,1], got {tau}")).into())
    }
}

/// The abstention layer demotes per-bug backend failures to warnings so long
/// runs survive sporadic faults, but a run in which *no* bug produced a
/// prediction almost always means the backend itself is broken (a rules file
/// that matches nothing, a dead endpoint). Re-running a single prediction
/// recovers the underlying error so the process can exit with it.
fn escalate_total_prediction_failure(
    bugs: &[BugReport],
    predictions: &[AbstentionPrediction],
    representation: Representation,
    normalize: bool,
    backend: &dyn Backend,
) -> Result<()> {
    if predictions.is_empty() {
        if let Some(bug) = bugs.first() {
            abstention::predict(bug, representation, normalize, backend)?;
        }
    }
    Ok(())
}

/// Same escalation for the judge: when every trajectory that cleared the
/// stage filters came back without a judgment, re-run the judge once on the
/// first of them and surface its error.
fn escalate_total_judge_failure<'a>(
    corpus: &Corpus,
    verdicts: impl Iterator<Item = &'a ValidationVerdict>,
    variant: Variant,
    backend: &dyn Backend,
) -> Result<()> {
    let reached: Vec<&ValidationVerdict> =
        verdicts.filter(|v| v.accepted_by_stage_filters).collect();
    let Some(first) = reached.first() else {
        return Ok(());
    };
    if reached.iter().any(|v| v.judgment.is_some()) {
        return Ok(());
    }
    let bug = corpus
        .bugs
        .iter()
        .find(|b| b.id == first.bug_id)
        .expect("verdict references a loaded bug");
    let trajectory = corpus
        .trajectories
        .iter()
        .find(|t| t.id == first.trajectory_id)
        .expect("verdict references a loaded trajectory");
    match variant {
        Variant::Spec => {
            let spec = validation::generate_fix_spec(bug, trajectory, backend)?;
            validation::judge_with_spec(bug, trajectory, &spec, backend)?;
        }
        Variant::NoSpec => {
            validation::judge_no_spec(bug, trajectory, backend)?;
        }
    }
    Ok(())
}

fn abstain(args: AbstainArgs) -> Result<()> {
    check_tau(args.tau)?;
    let bugs = corpus::load_bugs(&args.bugs)?;
    let built = build_backend(&args.backend)?;

    let (predictions, decisions) = abstention::predict_all(
        &bugs,
        args.rep,
        args.tau,
        args.normalize,
        &built.backend,
        args.backend.parallelism,
    );
    escalate_total_prediction_failure(
        &bugs,
        &predictions,
        args.rep,
        args.normalize,
        &built.backend,
    )?;
    // One prediction line (when the model answered) then the decision line,
    // per bug, in corpus order.
    let mut records = Vec::with_capacity(predictions.len() + decisions.len());
    for decision in &decisions {
        if let Some(prediction) = predictions.iter().find(|p| p.bug_id == decision.bug_id) {
            records.push(Record::Prediction(prediction.clone()));
        }
        records.push(Record::Decision(decision.clone()));
    }
    corpus::write_records(&args.out, &records)?;

    let mut inputs = built.inputs;
    digest_input(&mut inputs, &args.bugs)?;
    let config = serde_json::json!({
        "command": "abstain",
        "rep": args.rep.to_string(),
        "tau": args.tau,
        "normalize": args.normalize,
        "backend": built.config,
    });
    write_manifest(&args.out, &config, inputs)
}

fn validate(args: ValidateArgs) -> Result<()> {
    let corpus = Corpus::load(&args.bugs, &args.trajectories)?;
    let built = build_backend(&args.backend)?;
    let config = ValidationConfig {
        regression_mode: args.regression.clone(),
        variant: args.variant,
        decision: args.decision.rule,
        percentile: args.decision.percentile,
    };
    config.validate()?;

    let items: Vec<usize> = (0..corpus.trajectories.len()).collect();
    let outcomes = ordered_par_map(items, args.backend.parallelism, |&index| {
        let trajectory = &corpus.trajectories[index];
        let bug = corpus
            .bugs
            .iter()
            .find(|b| b.id == trajectory.bug_id)
            .expect("loader verified bug references");
        validation::validate(bug, trajectory, &config, &built.backend)
    });
    let mut verdicts = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        verdicts.push(outcome?);
    }
    escalate_total_judge_failure(&corpus, verdicts.iter(), config.variant, &built.backend)?;
    let records: Vec<Record> = validation::decide_verdicts(verdicts, &config)?
        .into_iter()
        .map(|(verdict, accepted)| Record::Verdict(VerdictRecord { verdict, accepted }))
        .collect();
    corpus::write_records(&args.out, &records)?;

    let mut inputs = built.inputs;
    digest_input(&mut inputs, &args.bugs)?;
    digest_input(&mut inputs, &args.trajectories)?;
    let manifest_config = serde_json::json!({
        "command": "validate",
        "validation": config,
        "backend": built.config,
    });
    write_manifest(&args.out, &manifest_config, inputs)
}

fn compose(args: ComposeArgs) -> Result<()> {
    check_tau(args.tau)?;
    let corpus = Corpus::load(&args.bugs, &args.trajectories)?;
    let built = build_backend(&args.backend)?;
    let config = FunnelConfig {
        representation: args.rep,
        tau: args.tau,
        normalize_probabilities: args.normalize,
        validation: ValidationConfig {
            regression_mode: args.regression.clone(),
            variant: args.variant,
            decision: args.decision.rule,
            percentile: args.decision.percentile,
        },
        select_one: args.select_one,
        parallelism: args.backend.parallelism,
    };

    let outcome = funnel::run_funnel(&corpus, &config, &built.backend)?;
    escalate_total_prediction_failure(
        &corpus.bugs,
        &outcome.predictions,
        config.representation,
        config.normalize_probabilities,
        &built.backend,
    )?;
    escalate_total_judge_failure(
        &corpus,
        outcome.verdicts.iter().map(|record| &record.verdict),
        config.validation.variant,
        &built.backend,
    )?;
    let mut records = Vec::new();
    records.push(Record::FunnelReport(outcome.report));
    records.extend(outcome.predictions.into_iter().map(Record::Prediction));
    records.extend(outcome.decisions.into_iter().map(Record::Decision));
    records.extend(outcome.verdicts.into_iter().map(Record::Verdict));
    records.extend(outcome.summaries.into_iter().map(Record::Summary));
    records.extend(outcome.scores.into_iter().map(Record::Score));
    corpus::write_records(&args.out, &records)?;

    let mut inputs = built.inputs;
    digest_input(&mut inputs, &args.bugs)?;
    digest_input(&mut inputs, &args.trajectories)?;
    let manifest_config = serde_json::json!({
        "command": "compose",
        "funnel": config,
        "backend": built.config,
    });
    write_manifest(&args.out, &manifest_config, inputs)
}

/// Formats a metric value for the CSV; undefined rates print as `NA`.
fn csv_value(value: Option<f64>) -> String {
    value.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn eval(args: EvalArgs) -> Result<()> {
    if args.k.is_empty() {
        return Err(Error::Config("--k needs at least one value".into()).into());
    }
    if args.k.contains(&0) {
        return Err(Error::Config("k values must be at least 1".into()).into());
    }
    let parts = corpus::partition(corpus::read_records(&args.report)?);
    if parts.summaries.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} contains no summary records; generate it with `compose`",
            args.report.display()
        ))
        .into());
    }
    let bugs_in_b_prime = parts.summaries.iter().filter(|s| s.n_prime >= 1).count();

    let mut csv = String::from("metric,k,value,bugs_in_B_prime\n");
    for &k in &args.k {
        let pass = metrics::pass_at_k(&parts.summaries, k)?;
        let filtered = metrics::filtered_success_at_k(&parts.summaries, k)?;
        let joint = metrics::pass_and_validation_at_k(&parts.summaries, k)?;
        let recall = metrics::validation_recall_at_k(&parts.summaries, k)?;
        let lift = metrics::lift(filtered, pass);
        for (metric, value) in [
            ("pass", pass),
            ("filtered_success", filtered),
            ("pass_and_validation", joint),
            ("validation_recall", recall),
            ("lift", lift),
        ] {
            csv.push_str(&format!(
                "{metric},{k},{},{bugs_in_b_prime}\n",
                csv_value(value)
            ));
        }
    }
    fsutil::atomic_write(&args.out, csv.as_bytes())?;

    let mut inputs = BTreeMap::new();
    digest_input(&mut inputs, &args.report)?;
    let config = serde_json::json!({
        "command": "eval",
        "k": args.k,
    });
    write_manifest(&args.out, &config, inputs)
}

fn report(args: ReportArgs) -> Result<()> {
    if !args.pr && !args.wasserstein {
        return Err(Error::Config(
            "nothing to do: pass --pr and/or --wasserstein".into(),
        )
        .into());
    }
    let parts = corpus::partition(corpus::read_records(&args.report)?);
    let wanted = match args.population {
        PopulationArg::Abstention => ScorePopulation::Abstention,
        PopulationArg::Validation => ScorePopulation::Validation,
    };
    let scores: Vec<LabeledScore> = parts
        .scores
        .iter()
        .filter(|s| s.population == wanted)
        .map(|s| LabeledScore {
            label: s.label,
            score: s.score,
        })
        .collect();
    if scores.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} contains no {} score records",
            args.report.display(),
            wanted
        ))
        .into());
    }

    if args.pr {
        let out = args.out.as_ref().ok_or_else(|| {
            Error::Config("--pr requires --out for the curve CSV".into())
        })?;
        let (curve, average_precision) = metrics::pr_curve(&scores)?;
        let mut csv = String::from("threshold,precision,recall\n");
        for point in curve {
            csv.push_str(&format!(
                "{},{},{}\n",
                point.threshold, point.precision, point.recall
            ));
        }
        fsutil::atomic_write(out, csv.as_bytes())?;
        let mut inputs = BTreeMap::new();
        digest_input(&mut inputs, &args.report)?;
        let config = serde_json::json!({
            "command": "report",
            "population": format!("{wanted}"),
            "pr": true,
        });
        write_manifest(out, &config, inputs)?;
        println!("average_precision,{average_precision}");
    }
    if args.wasserstein {
        let passing: Vec<f64> = scores.iter().filter(|s| s.label).map(|s| s.score).collect();
        let failing: Vec<f64> = scores
            .iter()
            .filter(|s| !s.label)
            .map(|s| s.score)
            .collect();
        let distance = metrics::wasserstein_1d(&passing, &failing)?;
        println!("wasserstein,{distance}");
    }
    Ok(())
}
