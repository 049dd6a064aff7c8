//! The `scholarag` command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use scholarag_core::corpus::IngestMode;
use scholarag_core::evalkit::{
    self, evaluate_citations, evaluate_labels, evaluate_summaries, load_dataset, run_benchmark,
    BenchMode, MetricReport,
};
use scholarag_core::pipeline::Overrides;
use scholarag_core::TaskLabel;
use serde::Serialize;

use crate::app::{self, AppError};
use crate::config::{Config, ConfigError, Sources};
use crate::http;
use crate::render;

#[derive(Debug, Parser)]
#[command(
    name = "scholarag",
    version,
    about = "Task-routed retrieval-augmented answers over a paper corpus"
)]
pub struct Cli {
    /// TOML config file (default: $SCHOLARAG_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set retrieval.k=5`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        /// Build and save the index when index.path does not exist yet.
        #[arg(long)]
        build_index: bool,
    },
    /// Answer one query.
    Ask {
        query: String,
        /// Print the answer record as JSON.
        #[arg(long)]
        json: bool,
        /// Skip routing and use this task.
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskLabel>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Show the routing decision for a query.
    Route {
        query: String,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Chunk and embed a corpus and write the index file.
    Ingest {
        /// Corpus file or directory (default: corpus.path).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output index file (default: index.path).
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        min_chars: Option<usize>,
        /// Skip unparsable files instead of failing.
        #[arg(long)]
        lenient: bool,
        #[arg(long)]
        json: bool,
    },
    /// List the KG query templates.
    Templates {
        #[arg(long)]
        json: bool,
    },
    /// Score predictions or run a benchmark.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Citation precision, recall and F1 from `{id, predicted, gold}` records.
    Citations {
        input: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Accuracy and macro-F1 from `{id, predicted, gold}` yes/maybe/no records.
    Labels {
        input: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// ROUGE, compression ratio and SMOG from `{id, source, generated, references}` records.
    Summaries {
        input: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Run a dataset through the pipeline.
    Run {
        #[arg(long, value_parser = parse_mode)]
        mode: BenchMode,
        #[arg(long)]
        dataset: PathBuf,
        /// Write per-example traces (one JSON record per line).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
        #[command(flatten)]
        report: ReportArgs,
    },
}

fn parse_task(s: &str) -> Result<TaskLabel, String> {
    TaskLabel::parse(s).ok_or_else(|| format!("unknown task {s:?}"))
}

fn parse_mode(s: &str) -> Result<BenchMode, String> {
    s.parse()
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    App(#[from] AppError),
    #[error("{0}")]
    Pipeline(#[from] scholarag_core::PipelineError),
    #[error("eval: {0}")]
    Eval(#[from] evalkit::EvalError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))
}

fn emit_report(report: &MetricReport, args: &ReportArgs) -> Result<(), CliError> {
    if let Some(out) = &args.out {
        let s = serde_json::to_string_pretty(report).map_err(|e| CliError::Other(e.to_string()))?;
        write_file(out, &s)?;
    }
    if args.json {
        print_json(report)
    } else {
        println!("{}", report.render_table());
        Ok(())
    }
}

fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Other(format!("cannot read {}: {e}", path.display())))
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let config = Sources::from_env(cli.config.clone(), cli.set.clone()).resolve()?;
    match cli.command {
        Command::Serve { build_index } => serve(&config, build_index).await,
        Command::Ask {
            query,
            json,
            task,
            k,
            threshold,
        } => {
            let pipeline = app::build_pipeline(&config, false).await?;
            let overrides = Overrides {
                k,
                threshold,
                task,
                ..Default::default()
            };
            let answer = pipeline.answer_with(&query, &overrides).await?;
            if json {
                print_json(&answer)
            } else {
                println!("{}", render::answer(&answer));
                Ok(())
            }
        }
        Command::Route {
            query,
            json,
            threshold,
        } => {
            // Routing needs no corpus or index.
            let mut config = config;
            config.corpus.path = None;
            config.index.path = None;
            let pipeline = app::build_pipeline(&config, false).await?;
            let (decision, warning) = pipeline.route(&query, threshold).await;
            if let Some(w) = warning {
                eprintln!("warning: {w}");
            }
            if json {
                print_json(&decision)
            } else {
                println!("{}", render::routing(&decision));
                Ok(())
            }
        }
        Command::Ingest {
            corpus,
            index,
            min_chars,
            lenient,
            json,
        } => {
            let mut config = config;
            if let Some(c) = corpus {
                config.corpus.path = Some(c);
            }
            if lenient {
                config.corpus.mode = IngestMode::Lenient;
            }
            let path = config.corpus.path.clone().ok_or_else(|| {
                CliError::Other("no corpus: pass --corpus or set corpus.path".into())
            })?;
            let corpus = scholarag_core::corpus::load_corpus(&path, config.corpus.mode)
                .map_err(AppError::from)?;
            let embedder = app::embedder(&config)?;
            let out = index.or(config.index.path.clone());
            let min_chars = min_chars.unwrap_or(config.corpus.min_chars);
            let (_, report) = app::ingest(
                &corpus,
                embedder.as_ref(),
                min_chars,
                config.embedding.embed_heading,
                out.as_deref(),
            )
            .await?;
            if json {
                print_json(&report)
            } else {
                println!("{}", report.render());
                Ok(())
            }
        }
        Command::Templates { json } => {
            let catalog = app::catalog(&config)?;
            if json {
                print_json(&catalog.templates())
            } else {
                println!("{}", render::templates(&catalog));
                Ok(())
            }
        }
        Command::Eval(cmd) => eval(&config, cmd).await,
    }
}

async fn eval(config: &Config, cmd: EvalCommand) -> Result<(), CliError> {
    match cmd {
        EvalCommand::Citations { input, report } => {
            let records = evalkit::parse_citation_records(&read_input(&input)?)?;
            emit_report(&evaluate_citations(&records)?, &report)
        }
        EvalCommand::Labels { input, report } => {
            let records = evalkit::parse_label_records(&read_input(&input)?)?;
            emit_report(&evaluate_labels(&records)?, &report)
        }
        EvalCommand::Summaries { input, report } => {
            let records = evalkit::parse_summary_records(&read_input(&input)?)?;
            emit_report(&evaluate_summaries(&records)?, &report)
        }
        EvalCommand::Run {
            mode,
            dataset,
            trace,
            parallelism,
            report,
        } => {
            let examples = load_dataset(&dataset)?;
            let pipeline = app::build_pipeline(config, false).await?;
            let outcome = run_benchmark(&pipeline, &examples, mode, parallelism).await?;
            if let Some(path) = &trace {
                let mut lines = String::new();
                for t in &outcome.traces {
                    lines.push_str(
                        &serde_json::to_string(t).map_err(|e| CliError::Other(e.to_string()))?,
                    );
                    lines.push('\n');
                }
                write_file(path, &lines)?;
            }
            emit_report(&outcome.report, &report)
        }
    }
}

async fn serve(config: &Config, build_index: bool) -> Result<(), CliError> {
    let pipeline = app::build_pipeline(config, build_index).await?;
    let state = http::AppState::new(pipeline, config.server.max_concurrency);
    let listener = tokio::net::TcpListener::bind(&config.server.listen)
        .await
        .map_err(|e| CliError::Other(format!("cannot bind {}: {e}", config.server.listen)))?;
    let addr = listener
        .local_addr()
        .map_err(|e| CliError::Other(e.to_string()))?;
    let p = state.pipeline();
    tracing::info!(%addr, documents = p.corpus().len(), chunks = p.index().len(), "ready");
    eprintln!("listening on http://{addr}");
    let router = http::app(state, &config.server.cors_origins);
    http::serve(
        listener,
        router,
        Duration::from_millis(config.server.shutdown_grace_ms),
        http::shutdown_signal(),
    )
    .await
    .map_err(|e| CliError::Other(format!("server: {e}")))
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| "warn,scholarag=info".into());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let runtime = match tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
    {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
