use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use envy_harness::analysis::{emit_report, CorrelationBasis, ReportOptions};
use envy_harness::manifest::{load_manifest, parse_manifest, validate, ValidatedManifest};
use envy_harness::protocol_point::{PairMode, Turn3Mapping};
use envy_harness::protocol_workplace::Metric;
use envy_harness::runner::{execute, plan, Progress, RunOptions};
use envy_harness::scoring::{AttributionPolicy, TermId};
use envy_harness::store::{load_run, run_dir, ConversationRecord, Payload, Rescored};
use envy_harness::Error;

#[derive(Parser)]
#[command(name = "envy-harness", version, about = "Run envy-preference experiments and report on them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a manifest without running anything.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Execute (or resume) the run a manifest describes.
    Run(RunArgs),
    /// Write heatmaps, correlations and summaries for a stored run.
    Report {
        #[arg(long)]
        run_id: String,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        /// Output directory [default: reports/<run_id>].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "turns", value_parser = ["turns", "pair_means"])]
        correlation_basis: String,
    },
    /// Print one stored conversation and check its scores.
    Replay {
        #[arg(long)]
        run_id: String,
        #[arg(long)]
        conversation: String,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
    /// Parent directory for run directories; overrides the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["turn_aligned", "all_turns"])]
    attribution: Option<String>,
    #[arg(long, value_parser = ["ordered", "unordered"])]
    pair_mode: Option<String>,
    #[arg(long, value_parser = ["mirrored", "literal"])]
    turn3_mapping: Option<String>,
    /// Stop after persisting this many new conversations.
    #[arg(long)]
    stop_after: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { manifest } => cmd_validate(&manifest),
        Command::Run(args) => cmd_run(args),
        Command::Report { run_id, runs_dir, out, correlation_basis } => {
            cmd_report(&runs_dir, &run_id, out, &correlation_basis)
        }
        Command::Replay { run_id, conversation, runs_dir } => cmd_replay(&runs_dir, &run_id, &conversation),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_validate(path: &Path) -> anyhow::Result<()> {
    let v = load_manifest(path)?;
    println!(
        "ok: {} run, {} agent(s), {} conversation(s) planned",
        v.manifest.experiment,
        v.manifest.pool.len(),
        plan(&v).len()
    );
    Ok(())
}

fn load_with_overrides(args: &RunArgs) -> anyhow::Result<ValidatedManifest> {
    let text = std::fs::read_to_string(&args.manifest)
        .with_context(|| format!("reading manifest {}", args.manifest.display()))?;
    let mut manifest = parse_manifest(&text).map_err(Error::InvalidManifest)?;
    if let Some(out) = &args.out {
        manifest.output_dir = out.clone();
    }
    if let Some(c) = args.concurrency {
        manifest.concurrency = c;
    }
    if let Some(s) = args.seed {
        manifest.seed = s;
    }
    if let Some(a) = &args.attribution {
        manifest.attribution = a.parse::<AttributionPolicy>()?;
    }
    if let Some(p) = &args.pair_mode {
        manifest.pair_mode = p.parse::<PairMode>()?;
    }
    if let Some(t) = &args.turn3_mapping {
        manifest.turn3_mapping = t.parse::<Turn3Mapping>()?;
    }
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    Ok(validate(manifest, base).map_err(Error::InvalidManifest)?)
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let validated = load_with_overrides(&args)?;
    let step = (plan(&validated).len() / 50).max(1);
    let progress = |p: &Progress| {
        if p.persisted.is_multiple_of(step) || p.persisted == p.planned {
            eprintln!(
                "[{}/{}] parse failures: {}, agent errors: {}",
                p.persisted, p.planned, p.parse_failures, p.agent_errors
            );
        }
    };
    let outcome = execute(
        &validated,
        RunOptions { run_id: args.run_id.clone(), stop_after: args.stop_after, progress: Some(&progress) },
    )?;
    let summary = serde_json::json!({
        "run_id": outcome.run_id,
        "dir": outcome.dir,
        "planned": outcome.planned,
        "resumed": outcome.resumed,
        "executed": outcome.executed,
        "complete": outcome.complete,
        "counts": outcome.counts,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn open_run(runs_dir: &Path, run_id: &str) -> anyhow::Result<envy_harness::store::LoadedRun> {
    let dir = run_dir(runs_dir, run_id);
    let run = load_run(&dir)?;
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    Ok(run)
}

fn cmd_report(runs_dir: &Path, run_id: &str, out: Option<PathBuf>, basis: &str) -> anyhow::Result<()> {
    let run = open_run(runs_dir, run_id)?;
    let out = out.unwrap_or_else(|| Path::new("reports").join(run_id));
    let options = ReportOptions { correlation_basis: basis.parse::<CorrelationBasis>()? };
    for path in emit_report(&run, &out, options)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn label<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn fmt_term(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "excluded".into())
}

fn cmd_replay(runs_dir: &Path, run_id: &str, conversation: &str) -> anyhow::Result<()> {
    let run = open_run(runs_dir, run_id)?;
    let Some(record) = run.record(conversation) else {
        bail!("conversation `{conversation}` not found in run `{run_id}`");
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    render(&mut out, record)?;
    record.verify()?;
    writeln!(out, "integrity: recomputed scores equal stored scores")?;
    Ok(())
}

fn render(out: &mut impl Write, record: &ConversationRecord) -> anyhow::Result<()> {
    writeln!(out, "conversation {}", record.conversation_id)?;
    match &record.payload {
        Payload::PointAllocation(p) => {
            let t = &p.transcript;
            writeln!(
                out,
                "focal {}  peer {}  matrix {}  cue {}  peer move {}  attribution {}",
                t.focal_agent,
                t.peer_agent,
                t.scenario.matrix_id,
                t.scenario.cue,
                t.scenario.peer_move,
                label(&p.attribution)
            )?;
            for turn in &t.turns {
                writeln!(out, "\n--- turn {} ---\n{}", turn.turn, turn.prompt)?;
                writeln!(out, "\n> {}", turn.response.as_deref().unwrap_or("(no response)"))?;
                let choice = turn.choice.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
                writeln!(out, "choice: {choice}  status: {}", label(&turn.parse_status))?;
                if !turn.diagnostics.is_empty() {
                    writeln!(out, "diagnostics: {}", turn.diagnostics)?;
                }
            }
            let choices: Vec<String> =
                t.choices().iter().map(|c| c.map(|c| c.to_string()).unwrap_or_else(|| "-".into())).collect();
            writeln!(out, "\nchoices: ({})", choices.join(", "))?;
            if let Some(f) = &t.failure {
                writeln!(out, "failure: {f}")?;
            }
            match &p.scores {
                Some(s) => {
                    writeln!(out, "stored:     T1={} T2={} T3={}", fmt_term(s.t1), fmt_term(s.t2), fmt_term(s.t3))?;
                    for turn in &s.excluded_turns {
                        let dropped: Vec<String> = TermId::ALL
                            .iter()
                            .filter(|term| term.aligned_turn() == *turn && s.get(**term).is_none())
                            .map(|term| term.to_string())
                            .collect();
                        if dropped.is_empty() {
                            writeln!(out, "note: turn {turn} did not parse and is excluded")?;
                        } else {
                            writeln!(out, "note: turn {turn} did not parse; {} excluded", dropped.join(", "))?;
                        }
                    }
                }
                None => writeln!(out, "stored:     unscored ({})", p.score_error.as_deref().unwrap_or("?"))?,
            }
            if let Rescored::Point(Ok(s)) = record.rescore() {
                writeln!(out, "recomputed: T1={} T2={} T3={}", fmt_term(s.t1), fmt_term(s.t2), fmt_term(s.t3))?;
            }
        }
        Payload::Workplace(w) => {
            let t = &w.transcript;
            writeln!(out, "focal {}  competitor {}", t.focal_agent, t.competitor_agent)?;
            for turn in &t.turns {
                writeln!(out, "\n--- scenario {} ---\n{}", turn.scenario, turn.prompt)?;
                writeln!(out, "\n> {}", turn.response.as_deref().unwrap_or("(no response)"))?;
                let ratings = match &turn.ratings {
                    Some(r) => Metric::ALL.iter().map(|m| format!("{m}={}", r.get(*m))).collect::<Vec<_>>().join(" "),
                    None => "-".into(),
                };
                writeln!(out, "ratings: {ratings}  status: {}", label(&turn.parse_status))?;
                if !turn.diagnostics.is_empty() {
                    writeln!(out, "diagnostics: {}", turn.diagnostics)?;
                }
            }
            if let Some(f) = &t.failure {
                writeln!(out, "failure: {f}")?;
            }
            let line = |s: &envy_harness::scoring::WorkplaceScore| {
                Metric::ALL.iter().map(|m| format!("{m}={:.4}", s.mean(*m))).collect::<Vec<_>>().join(" ")
            };
            match &w.scores {
                Some(s) => writeln!(out, "\nstored means:     {}  (turns {})", line(s), s.turns_counted)?,
                None => writeln!(out, "\nstored means:     unscored")?,
            }
            if let Rescored::Workplace(Ok(s)) = record.rescore() {
                writeln!(out, "recomputed means: {}", line(&s))?;
            }
        }
    }
    Ok(())
}
