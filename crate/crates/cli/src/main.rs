use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use slicelens::pipeline::report::write_report;
use slicelens::pipeline::{
    build_report, collect_audit, BackendOverride, ConfigLayers, Pipeline, RunConfig, RunDir, CONFIG_FILE,
};
use slicelens::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(
    name = "slicelens",
    version,
    about = "Find, describe and repair systematic classifier errors"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run directory (config key `run_dir`).
    #[arg(long, global = true, value_name = "PATH")]
    run_dir: Option<PathBuf>,
    /// Global seed (config key `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the mock explainer, evaluator and generator (config key `llm.mock`).
    #[arg(long, global = true)]
    mock_backends: bool,
    /// Answer chat requests from the audit logs of an earlier run.
    #[arg(long, global = true, value_name = "RUN_DIR")]
    replay_from: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Every stage for every configured round, then the report.
    Run,
    /// Load, validate and split the dataset.
    Ingest,
    /// Embed every split.
    Embed,
    /// Train the classifier and evaluate it.
    Train(RoundArg),
    /// Cluster the embeddings and rank clusters by error rate.
    Cluster(RoundArg),
    /// Describe and refine the high-error clusters.
    Explain(RoundArg),
    /// Generate synthetic examples from the descriptions.
    Augment(RoundArg),
    /// Pick pool examples with the configured active-learning strategy.
    Select(RoundArg),
    /// Retrain on the augmented set and re-evaluate.
    Retrain(RoundArg),
    /// Rebuild and print the report of an existing run.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct RoundArg {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    round: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Leave out wall-clock fields (creation time, stage timings).
    #[arg(long)]
    canonical: bool,
}

fn resolve_config(common: &Common) -> Result<RunConfig, Error> {
    let stored = common.run_dir.as_ref().map(|d| d.join(CONFIG_FILE));
    let file = match (&common.config, stored) {
        (Some(f), _) => Some(f.clone()),
        (None, Some(s)) if s.is_file() => Some(s),
        _ => None,
    };
    RunConfig::resolve(&ConfigLayers {
        file,
        sets: common.sets.clone(),
        seed: common.seed,
        mock_backends: common.mock_backends,
    })
}

fn backends(common: &Common) -> Result<BackendOverride, Error> {
    match &common.replay_from {
        None => Ok(BackendOverride::FromConfig),
        Some(dir) => {
            if !dir.join(CONFIG_FILE).is_file() {
                return Err(Error::Validation(format!("{} is not a run directory", dir.display())));
            }
            Ok(BackendOverride::Replay(collect_audit(&RunDir::create(dir)?)?))
        }
    }
}

fn stage_run_dir(common: &Common, config: &RunConfig) -> Result<PathBuf, Error> {
    common
        .run_dir
        .clone()
        .or_else(|| config.run_dir.clone())
        .ok_or_else(|| Error::Validation("stage commands need --run-dir (or run_dir in the config)".into()))
}

fn print_report(dir: &Path, config: &RunConfig, args: &ReportArgs) -> Result<(), Error> {
    let run = RunDir::create(dir)?;
    let report = build_report(&run, config)?;
    write_report(&run, &report)?;
    run.write_manifest()?;
    let report = if args.canonical { report.canonical() } else { report };
    emit(&match args.format {
        Format::Json => report.to_json()?,
        Format::Text => report.to_text(),
        Format::Csv => format!(
            "{}\n{}\n{}\n{}",
            report.accuracy_csv(),
            report.medians_csv(),
            report.rounds_csv(),
            report.clusters_csv()
        ),
    });
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    let common = &cli.common;
    let config = resolve_config(common)?;
    if let Command::Report(args) = &cli.command {
        return print_report(&stage_run_dir(common, &config)?, &config, args);
    }
    let run_dir = match cli.command {
        Command::Run => common.run_dir.clone(),
        _ => Some(stage_run_dir(common, &config)?),
    };
    let pipeline = Pipeline::new(config, run_dir, backends(common)?)?;
    let root = pipeline.dir().root().display().to_string();
    let round = |r: &RoundArg| r.round as usize;
    let text = match &cli.command {
        Command::Run => format!("{}run directory: {root}\n", pipeline.run()?.to_text()),
        Command::Ingest => {
            pipeline.ingest()?;
            format!("ingest: done ({root})\n")
        }
        Command::Embed => {
            pipeline.embed()?;
            format!("embed: done ({root})\n")
        }
        Command::Train(r) => {
            let m = pipeline.train(round(r))?;
            format!(
                "train round {}: accuracy {:.4} on {} training examples\n",
                m.round, m.accuracy, m.train_size
            )
        }
        Command::Cluster(r) => {
            let selected = pipeline.cluster(round(r))?;
            format!(
                "cluster round {}: {} error clusters selected\n",
                round(r),
                selected.len()
            )
        }
        Command::Explain(r) => {
            let traces = pipeline.explain(round(r))?;
            let accepted = traces.iter().filter(|t| t.accepted()).count();
            format!(
                "explain round {}: {accepted} of {} traces accepted\n",
                round(r),
                traces.len()
            )
        }
        Command::Augment(r) => {
            let out = pipeline.augment(round(r))?;
            format!(
                "augment round {}: {} synthetic examples kept\n",
                round(r),
                out.examples.len()
            )
        }
        Command::Select(r) => {
            let sel = pipeline.select(round(r))?;
            format!(
                "select round {}: {} pool examples selected\n",
                round(r),
                sel.selected_ids.len()
            )
        }
        Command::Retrain(r) => {
            let m = pipeline.retrain(round(r))?;
            format!(
                "retrain round {}: accuracy {:.4} -> {:.4} with {} additions\n",
                m.round,
                m.accuracy_before,
                m.accuracy_after,
                m.synthetic + m.annotated
            )
        }
        Command::Report(_) => unreachable!("handled above"),
    };
    emit(&text);
    Ok(())
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|()| out.flush());
}

fn fail(code: &str, status: u8, message: &str) -> ExitCode {
    let message = message.trim_start_matches("error: ");
    let line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error[{code}]: {line}");
    ExitCode::from(status)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("validation", 1, &e.to_string()),
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.kind() {
            ErrorKind::Validation => fail("validation", 1, &e.to_string()),
            ErrorKind::Backend => fail("backend", 2, &e.to_string()),
            ErrorKind::Internal => fail("internal", 3, &e.to_string()),
        },
    }
}
