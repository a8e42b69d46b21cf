//! `scangrade`: run the grading pipeline one stage at a time.

mod error;

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use scangrade::analytics::{
    deviation_stats, kappa_csv, kappa_report, pairs_csv, parse_timings, positioning,
    timing_analysis, ScoreDataset,
};
use scangrade::bubble::generate_codebook;
use scangrade::fixture::{write_batch, BatchSpec};
use scangrade::job::{
    digest_files, run_aggregate, run_export, run_grade, run_ingest, ExportOptions, JobConfig,
    JobDir, Manifest, Stage, StageStatus,
};
use scangrade::keybank::{load_key_bank, KeyError};
use scangrade::ledger::{AggregationRule, DecisionAction, UndecidedPolicy, MAP_PASSPHRASE_ENV};
use scangrade::sheet::SheetTemplate;
use scangrade_review::{
    build_review_report, serve, DecisionPayload, ReviewState, ServeOptions, DEFAULT_BIND,
};

use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "scangrade",
    version,
    about = "Grade scanned handwritten answers with multi-pass model scoring and human review"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct JobArgs {
    /// Job configuration file.
    #[arg(short, long, default_value = "job.toml")]
    config: PathBuf,
    /// Override the configured job directory.
    #[arg(long)]
    job_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Align scanned pages, read IDs and write anonymised crops.
    Ingest(JobArgs),
    /// Grade every crop with the configured provider (resumable).
    Grade(JobArgs),
    /// Aggregate passes into provisional scores and consistency flags.
    Aggregate(JobArgs),
    /// Write the static HTML review report.
    Report {
        #[command(flatten)]
        job: JobArgs,
        /// Output directory; defaults to `<job>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the review service and UI.
    Serve {
        #[command(flatten)]
        job: JobArgs,
        #[arg(long, default_value = DEFAULT_BIND)]
        bind: SocketAddr,
        /// Allow binding to a non-loopback address.
        #[arg(long)]
        lan: bool,
        /// Serve UI assets from this directory instead of the built-in page.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Record a review decision without the UI.
    Decide {
        #[command(flatten)]
        job: JobArgs,
        /// Submission reference, `<pseudonym>_<question>`.
        #[arg(required_unless_present = "accept_all")]
        submission_ref: Option<String>,
        /// Accept the provisional score.
        #[arg(long, conflicts_with = "override_score")]
        accept: bool,
        /// Replace the provisional score (a note is required).
        #[arg(long = "override", value_name = "SCORE")]
        override_score: Option<u8>,
        /// Accept the provisional score of every undecided submission.
        #[arg(long, conflicts_with_all = ["accept", "override_score", "submission_ref"])]
        accept_all: bool,
        #[arg(long, default_value = "")]
        note: String,
        #[arg(long, default_value = scangrade_review::DEFAULT_REVIEWER)]
        reviewer: String,
    },
    /// Write final grades, bonus totals and the decision log.
    Export {
        #[command(flatten)]
        job: JobArgs,
        /// Further job directories (other tests) to include.
        #[arg(long = "include", value_name = "JOB_DIR")]
        include: Vec<PathBuf>,
        /// Leave undecided submissions out instead of failing.
        #[arg(long)]
        allow_undecided: bool,
    },
    /// Agreement and timing statistics.
    Analyze {
        #[command(subcommand)]
        analysis: Analysis,
    },
    /// Error-correcting ID codebooks.
    Codebook {
        #[command(subcommand)]
        action: CodebookCommand,
    },
    /// Lint every grading key in a question bank.
    LintKeys {
        /// Bank root (holding `questions/`); defaults to the configured one.
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(short, long, default_value = "job.toml")]
        config: PathBuf,
    },
    /// Write a synthetic batch (template, bank, roster, scans, job.toml).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        sheets: usize,
        #[arg(long, default_value_t = 1)]
        absent: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
enum Analysis {
    /// Digital-to-manual grading time ratios.
    Timing {
        /// CSV of grading times.
        #[arg(long)]
        input: PathBuf,
        /// Also write the per-pair ratios here.
        #[arg(long)]
        pairs_out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Quadratically weighted kappa per question.
    Kappa(ScoreArgs),
    /// Absolute score deviations per question.
    Deviation(ScoreArgs),
    /// Where the model score falls relative to the two annotators.
    Positioning(ScoreArgs),
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// CSV `question,submission,grader,score`.
    #[arg(long)]
    scores: PathBuf,
    /// How passes are combined into the model score.
    #[arg(long, default_value = "MEDIAN")]
    rule: AggregationRule,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum CodebookCommand {
    /// Generate a codebook with a guaranteed minimum Hamming distance.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        min_distance: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Give up after this many proposals.
        #[arg(long, default_value_t = 10_000_000)]
        budget: u64,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("summary serialises");
    out!("{text}");
}

fn load_config(stage: &'static str, args: &JobArgs) -> Result<JobConfig, CliError> {
    let mut config = JobConfig::load(&args.config).map_err(|e| CliError::job(stage, e))?;
    if let Some(dir) = &args.job_dir {
        let dir = if dir.is_absolute() {
            dir.clone()
        } else {
            std::env::current_dir()
                .map_err(|e| CliError::new(stage, "IO", e.to_string()))?
                .join(dir)
        };
        config.set_job_dir(dir);
    }
    Ok(config)
}

fn open_review(stage: &'static str, job: &JobDir) -> Result<ReviewState, CliError> {
    ReviewState::open(job.clone()).map_err(|e| CliError::review(stage, e))
}

fn record_report_stage(
    config: &JobConfig,
    job: &JobDir,
    out: &Path,
    items: usize,
    started: DateTime<Utc>,
) -> Result<(), CliError> {
    let stage = "report";
    let template = SheetTemplate::load_file(config.resolve(&config.template))
        .map_err(|e| CliError::job(stage, e.into()))?;
    let mut manifest = Manifest::open(job, config, &template.template_id, &template.digest())
        .map_err(|e| CliError::job(stage, e))?;
    let index = digest_files(&[out.join("index.html")]).map_err(|e| CliError::job(stage, e))?;
    let summaries = digest_files(&[job.summaries_path()]).map_err(|e| CliError::job(stage, e))?;
    manifest.record_stage(
        Stage::Report,
        StageStatus::Complete,
        started,
        BTreeMap::from([("summaries.json".to_string(), summaries)]),
        BTreeMap::from([("index.html".to_string(), index)]),
        Some(format!("{items} items")),
    );
    manifest.save(job).map_err(|e| CliError::job(stage, e))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(args) => {
            let config = load_config("ingest", &args)?;
            let passphrase = std::env::var(MAP_PASSPHRASE_ENV)
                .ok()
                .filter(|p| !p.is_empty())
                .ok_or_else(|| {
                    CliError::new(
                        "ingest",
                        "MISSING_ENV",
                        format!("{MAP_PASSPHRASE_ENV} must hold the pseudonym-map passphrase"),
                    )
                })?;
            let summary =
                run_ingest(&config, &passphrase).map_err(|e| CliError::job("ingest", e))?;
            print_json(&json!({
                "stage": "ingest",
                "job_dir": config.job_dir(),
                "ids_csv": JobDir::new(config.job_dir()).ids_csv(),
                "summary": summary,
            }));
        }
        Command::Grade(args) => {
            let config = load_config("grade", &args)?;
            let summary = run_grade(&config).map_err(|e| CliError::job("grade", e))?;
            print_json(&json!({ "stage": "grade", "summary": summary }));
        }
        Command::Aggregate(args) => {
            let config = load_config("aggregate", &args)?;
            let summaries = run_aggregate(&config).map_err(|e| CliError::job("aggregate", e))?;
            let flagged = summaries.iter().filter(|s| s.summary.flagged).count();
            print_json(&json!({
                "stage": "aggregate",
                "submissions": summaries.len(),
                "flagged": flagged,
                "rule": config.aggregation.rule,
            }));
        }
        Command::Report { job, out } => {
            let started = Utc::now();
            let config = load_config("report", &job)?;
            let dir = JobDir::new(config.job_dir());
            let state = open_review("report", &dir)?;
            let out = out.unwrap_or_else(|| dir.report_dir());
            let summary =
                build_review_report(&state, &out).map_err(|e| CliError::review("report", e))?;
            record_report_stage(&config, &dir, &out, summary.items, started)?;
            print_json(&json!({ "stage": "report", "summary": summary }));
        }
        Command::Serve {
            job,
            bind,
            lan,
            ui_dir,
        } => {
            let config = load_config("serve", &job)?;
            let state = Arc::new(open_review("serve", &JobDir::new(config.job_dir()))?);
            if bind.ip().is_loopback() || lan {
                eprintln!("serving {} items on http://{bind}", state.len());
            }
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| CliError::new("serve", "IO", e.to_string()))?;
            runtime
                .block_on(serve(
                    state,
                    ServeOptions {
                        bind,
                        allow_lan: lan,
                        ui_dir,
                    },
                ))
                .map_err(|e| CliError::review("serve", e))?;
        }
        Command::Decide {
            job,
            submission_ref,
            accept,
            override_score,
            accept_all,
            note,
            reviewer,
        } => {
            let config = load_config("decide", &job)?;
            let state = open_review("decide", &JobDir::new(config.job_dir()))?;
            let targets: Vec<(String, DecisionPayload)> = if accept_all {
                state
                    .items()
                    .into_iter()
                    .filter(|i| !i.decided())
                    .map(|i| {
                        let payload = DecisionPayload {
                            action: DecisionAction::Accept,
                            final_score: Some(i.provisional_score),
                            reviewer_id: Some(reviewer.clone()),
                            note: note.clone(),
                        };
                        (i.submission_ref, payload)
                    })
                    .collect()
            } else {
                let action = match (accept, override_score) {
                    (true, None) => DecisionAction::Accept,
                    (false, Some(_)) => DecisionAction::Override,
                    _ => {
                        return Err(CliError::new(
                            "decide",
                            "USAGE",
                            "pass exactly one of --accept or --override",
                        ))
                    }
                };
                let payload = DecisionPayload {
                    action,
                    final_score: override_score,
                    reviewer_id: Some(reviewer.clone()),
                    note: note.clone(),
                };
                vec![(submission_ref.unwrap_or_default(), payload)]
            };
            let mut decided = Vec::new();
            for (id, payload) in targets {
                let item = state
                    .apply_decision(&id, payload)
                    .map_err(|e| CliError::review("decide", e))?;
                let d = item.decision.expect("just decided");
                decided.push(json!({
                    "submission_ref": item.submission_ref,
                    "action": d.action,
                    "provisional": item.provisional_score,
                    "final": d.final_score,
                }));
            }
            print_json(&json!({ "stage": "decide", "decided": decided }));
        }
        Command::Export {
            job,
            include,
            allow_undecided,
        } => {
            let config = load_config("export", &job)?;
            let policy = if allow_undecided || !config.export.strict {
                UndecidedPolicy::Exclude
            } else {
                UndecidedPolicy::Strict
            };
            let options = ExportOptions {
                extra_jobs: include.into_iter().map(JobDir::new).collect(),
                policy,
            };
            let summary = run_export(&config, &options).map_err(|e| CliError::job("export", e))?;
            print_json(&json!({ "stage": "export", "summary": summary }));
        }
        Command::Analyze { analysis } => analyze(analysis)?,
        Command::Codebook {
            action:
                CodebookCommand::Gen {
                    n,
                    length,
                    min_distance,
                    seed,
                    budget,
                    out,
                },
        } => {
            let book = generate_codebook(n, length, min_distance, seed, budget)
                .map_err(|e| CliError::new("codebook", "CODEBOOK", e.to_string()))?;
            match out {
                Some(path) => {
                    std::fs::write(&path, book.to_text())
                        .map_err(|e| CliError::new("codebook", "IO", e.to_string()))?;
                    print_json(&json!({
                        "stage": "codebook",
                        "codes": book.codes().len(),
                        "length": book.length(),
                        "min_distance": book.min_distance(),
                        "correction_radius": book.correction_radius(),
                        "seed": book.seed(),
                        "out": path,
                    }));
                }
                None => emit(&book.to_text()),
            }
        }
        Command::LintKeys { bank, config } => lint_keys(bank, &config)?,
        Command::Synth {
            out,
            sheets,
            absent,
            seed,
        } => {
            let batch = write_batch(
                &out,
                BatchSpec {
                    sheets,
                    absent,
                    seed,
                },
            )
            .map_err(|e| CliError::job("synth", e))?;
            print_json(&json!({
                "stage": "synth",
                "root": batch.root,
                "config": batch.config_path,
                "sheets": batch.sheets.len(),
                "roster": batch.roster.len(),
            }));
        }
    }
    Ok(())
}

fn lint_keys(bank: Option<PathBuf>, config: &Path) -> Result<(), CliError> {
    let root = match bank {
        Some(b) => b,
        None => {
            let c = JobConfig::load(config).map_err(|e| CliError::job("lint-keys", e))?;
            c.resolve(&c.key_bank)
        }
    };
    match load_key_bank(&root) {
        Ok(bank) => {
            let report: Vec<_> = bank
                .entries()
                .map(|e| {
                    json!({
                        "test_id": e.question.test_id,
                        "question_id": e.question.question_id,
                        "findings": e.findings,
                    })
                })
                .collect();
            print_json(&json!({ "stage": "lint-keys", "questions": report, "errors": 0 }));
            Ok(())
        }
        Err(KeyError::LintFailed {
            question_id,
            findings,
        }) => {
            print_json(&json!({
                "stage": "lint-keys",
                "questions": [{ "question_id": question_id, "findings": findings }],
            }));
            Err(CliError::new(
                "lint-keys",
                "KEY_LINT",
                format!("grading key for {question_id} has lint errors"),
            ))
        }
        Err(e) => Err(CliError::job("lint-keys", e.into())),
    }
}

fn read_input(stage: &'static str, path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::new(stage, "IO", format!("{}: {e}", path.display())))
}

fn analyze(analysis: Analysis) -> Result<(), CliError> {
    let stage = "analyze";
    match analysis {
        Analysis::Timing {
            input,
            pairs_out,
            json,
        } => {
            let records = parse_timings(&read_input(stage, &input)?)
                .map_err(|e| CliError::input(stage, e))?;
            let a = timing_analysis(&records).map_err(|e| CliError::input(stage, e))?;
            if let Some(path) = pairs_out {
                std::fs::write(&path, pairs_csv(&a))
                    .map_err(|e| CliError::new(stage, "IO", e.to_string()))?;
            }
            if json {
                print_json(&a);
                return Ok(());
            }
            out!(
                "{:<8} {:<9} {:<9} {:<5} {:>7}",
                "test",
                "question",
                "annotator",
                "order",
                "D/M"
            );
            for p in &a.per_pair_ratios {
                out!(
                    "{:<8} {:<9} {:<9} {:<5} {:>7.3}",
                    p.test_id,
                    p.question_id,
                    p.annotator,
                    p.order.label(),
                    p.ratio
                );
            }
            out!("");
            out!(
                "questions: {}, pairs: {}",
                a.per_question_log_means.len(),
                a.per_pair_ratios.len()
            );
            out!("geometric-mean D/M ratio: {:.3}", a.geomean);
            out!(
                "95% CI: [{:.3}, {:.3}] (t = {:.3}, df = {})",
                a.ci.0,
                a.ci.1,
                a.t_critical,
                a.df
            );
            out!(
                "time reduction: {:.1}% (95% CI {:.1}% to {:.1}%)",
                a.reduction_pct,
                a.reduction_ci_pct.0,
                a.reduction_ci_pct.1
            );
        }
        Analysis::Kappa(args) => {
            let data = ScoreDataset::parse_csv(&read_input(stage, &args.scores)?)
                .map_err(|e| CliError::input(stage, e))?;
            let rows = kappa_report(&data, args.rule).map_err(|e| CliError::input(stage, e))?;
            if args.json {
                print_json(&rows);
            } else {
                emit(&kappa_csv(&rows));
            }
        }
        Analysis::Deviation(args) => {
            let data = ScoreDataset::parse_csv(&read_input(stage, &args.scores)?)
                .map_err(|e| CliError::input(stage, e))?;
            let mut out = BTreeMap::new();
            for q in data.questions.keys() {
                let v = data.vectors(q).map_err(|e| CliError::input(stage, e))?;
                let llm = v.llm(args.rule);
                let d = |a: &[u8], b: &[u8]| {
                    deviation_stats(a, b).map_err(|e| CliError::input(stage, e))
                };
                out.insert(
                    q.clone(),
                    json!({
                        "a1_vs_a2": d(&v.a1, &v.a2)?,
                        "a1_vs_llm": d(&v.a1, &llm)?,
                        "a2_vs_llm": d(&v.a2, &llm)?,
                    }),
                );
            }
            print_json(&json!({ "rule": args.rule, "questions": out }));
        }
        Analysis::Positioning(args) => {
            let data = ScoreDataset::parse_csv(&read_input(stage, &args.scores)?)
                .map_err(|e| CliError::input(stage, e))?;
            let mut out = BTreeMap::new();
            for q in data.questions.keys() {
                let v = data.vectors(q).map_err(|e| CliError::input(stage, e))?;
                let b = positioning(&v.llm(args.rule), &v.a1, &v.a2)
                    .map_err(|e| CliError::input(stage, e))?;
                out.insert(q.clone(), b);
            }
            print_json(&json!({ "rule": args.rule, "questions": out }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_status())
        }
    }
}
