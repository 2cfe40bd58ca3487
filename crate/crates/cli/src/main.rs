mod output;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tcfd_core::config::{LlmKind, Settings, ENV_VARS};
use tcfd_core::engine::{Engine, EngineError, ErrorKind};
use tcfd_core::ingestion::{chunks_to_jsonl, DocumentFormat};
use tcfd_core::traceability::{
    evaluation_run, read_jsonl, AnnotationRecord, AnswerRecord, DEFAULT_SEAM_WINDOW,
};

/// Exit statuses, also listed in `--help`.
mod exit {
    pub const GENERAL: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const NOT_FOUND: u8 = 3;
    pub const BACKEND: u8 = 4;
    pub const DATA: u8 = 5;
}

#[derive(Debug, Parser)]
#[command(
    name = "tcfd",
    version,
    about = "Score climate reports against the TCFD recommendations and query them with cited pages"
)]
struct Cli {
    /// Workspace directory (overrides config and TCFD_WORKSPACE)
    #[arg(long, global = true, value_name = "DIR")]
    workspace: Option<PathBuf>,

    /// TOML config file
    #[arg(long, global = true, value_name = "FILE", env = "TCFD_CONFIG")]
    config: Option<PathBuf>,

    /// Print machine-readable JSON instead of text
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Http,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, chunk and index a report; prints its doc_id
    Ingest {
        path: PathBuf,
        /// plain_text, page_delimited_text or pdf (default: by extension)
        #[arg(long)]
        format: Option<String>,
    },
    /// Answer and score the eleven recommended disclosures
    Analyze {
        doc_id: String,
        /// Chat backend; mock is used when no API token is set
        #[arg(long, value_enum)]
        backend: Option<Backend>,
        /// Also write the analysis JSON to this file
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Ask a free-form question about an ingested report
    Ask {
        doc_id: String,
        question: String,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
    },
    /// Hallucination rates, ROUGE precision and agreement for annotated answers
    Evaluate {
        answers: PathBuf,
        annotations: PathBuf,
        /// Answer tokens per window checked by the seam lint
        #[arg(long, default_value_t = DEFAULT_SEAM_WINDOW)]
        seam_window: usize,
    },
    /// Run the HTTP service
    Serve {
        /// Listen address (default from config or TCFD_ADDR)
        #[arg(long)]
        addr: Option<String>,
    },
    /// Print a report's chunks as JSON lines
    Chunks { doc_id: String },
    /// Find a text fragment in a report's chunks
    Evidence { doc_id: String, fragment: String },
    /// Verify workspace checksums and look for missing or stray files
    Check,
    /// Record reviewer feedback on an answer
    Feedback {
        answer_id: String,
        text: String,
        #[arg(long, default_value = "cli")]
        expert: String,
    },
    /// Inspect and evolve prompt guidelines
    #[command(subcommand)]
    Guidelines(GuidelineCommand),
}

#[derive(Debug, Subcommand)]
enum GuidelineCommand {
    /// List versions
    List,
    /// Turn pending feedback into a draft version
    Transform { feedback_id: String },
    /// Make a version active
    Promote { version: u32 },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = match e.kind {
            ErrorKind::NotFound => exit::NOT_FOUND,
            ErrorKind::Backend => exit::BACKEND,
            ErrorKind::Data => exit::DATA,
            ErrorKind::Invalid if e.stage == "ingest" => exit::DATA,
            ErrorKind::Invalid => exit::USAGE,
            ErrorKind::Conflict => exit::GENERAL,
        };
        Failure::new(code, format!("{} ({}): {}", e.stage, e.code, e.message))
    }
}

impl From<tcfd_core::config::ConfigError> for Failure {
    fn from(e: tcfd_core::config::ConfigError) -> Self {
        EngineError::from(e).into()
    }
}

fn after_help() -> String {
    let mut s = String::from("Environment:\n");
    let extra = [
        ("TCFD_CONFIG", "config file, same as --config"),
        (
            "OPENAI_API_KEY",
            "chat API token (name set by TCFD_LLM_API_KEY_ENV)",
        ),
        ("TCFD_SERVICE_KEY", "API key required by `serve` when set"),
        ("TCFD_LOG", "log filter, e.g. info or tcfd_core=debug"),
    ];
    for (name, desc) in ENV_VARS.iter().chain(extra.iter()) {
        s.push_str(&format!("  {name:<24} {desc}\n"));
    }
    s.push_str(
        "\nExit status:\n  0  success\n  1  general failure\n  2  usage error\n  3  not found\n  4  model or embedding backend failure\n  5  invalid or corrupt data\n",
    );
    s
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(after_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    init_logging(matches!(cli.command, Command::Serve { .. }));
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn init_logging(serving: bool) {
    let default = if serving { "info" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_env("TCFD_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn settings(cli: &Cli, backend: Option<Backend>) -> Result<Settings, Failure> {
    let mut s = Settings::load(cli.config.as_deref())?;
    if let Some(w) = &cli.workspace {
        s.workspace = w.clone();
    }
    match backend {
        Some(Backend::Mock) => s.llm.backend = LlmKind::Mock,
        Some(Backend::Http) => s.llm.backend = LlmKind::Http,
        None => {}
    }
    Ok(s)
}

fn engine(cli: &Cli, backend: Option<Backend>) -> Result<Engine, Failure> {
    Ok(Engine::open(settings(cli, backend)?)?)
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string(value).expect("output serializes")
    );
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest { path, format } => {
            let format = match format {
                Some(f) => f
                    .parse::<DocumentFormat>()
                    .map_err(|e| Failure::new(exit::USAGE, e.to_string()))?,
                None => format_for(path),
            };
            let raw = read_file(path)?;
            let mut metadata = BTreeMap::new();
            if let Some(name) = path.file_name() {
                metadata.insert("name".into(), name.to_string_lossy().into_owned());
            }
            metadata.insert("format".into(), format.to_string());
            let done = engine(&cli, None)?.ingest(&raw, format, metadata)?;
            if cli.json {
                print_json(&done);
            } else {
                println!("{}", done.doc_id);
            }
        }
        Command::Analyze {
            doc_id,
            backend,
            out,
        } => {
            let e = engine(&cli, *backend)?;
            let analysis = e.analyze(doc_id, &|_| {})?;
            if let Some(path) = out {
                std::fs::write(path, analysis.to_json()).map_err(|err| {
                    Failure::new(
                        exit::GENERAL,
                        format!("cannot write {}: {err}", path.display()),
                    )
                })?;
            }
            for err in &analysis.errors {
                let q = err
                    .question_index
                    .map(|q| format!("q{q} "))
                    .unwrap_or_default();
                eprintln!(
                    "warning: {q}{} failed ({}): {}",
                    err.stage, err.code, err.message
                );
            }
            if cli.json {
                print_json(&analysis);
            } else {
                print!(
                    "{}",
                    output::analysis_table(&analysis, e.pipeline().catalog())
                );
            }
        }
        Command::Ask {
            doc_id,
            question,
            backend,
        } => {
            if question.trim().is_empty() {
                return Err(Failure::new(exit::USAGE, "question is empty"));
            }
            let answer = engine(&cli, *backend)?.ask(doc_id, question)?;
            if cli.json {
                print_json(&output::AnswerOut::from(answer));
            } else {
                print!("{}", output::answer_text(&answer));
            }
        }
        Command::Evaluate {
            answers,
            annotations,
            seam_window,
        } => {
            let answers: Vec<AnswerRecord> = read_records(answers)?;
            let annotations: Vec<AnnotationRecord> = read_records(annotations)?;
            let summary = evaluation_run(&answers, &annotations, *seam_window)
                .map_err(|e| Failure::new(exit::DATA, e.to_string()))?;
            if cli.json {
                print_json(&summary);
            } else {
                print!("{}", output::evaluation_text(&summary));
            }
        }
        Command::Serve { addr } => serve(&cli, addr.clone())?,
        Command::Chunks { doc_id } => {
            let chunks = engine(&cli, None)?.chunks(doc_id)?;
            if cli.json {
                print_json(&chunks);
            } else {
                print!("{}", chunks_to_jsonl(&chunks));
            }
        }
        Command::Evidence { doc_id, fragment } => {
            let hits = engine(&cli, None)?.evidence(doc_id, fragment)?;
            if cli.json {
                print_json(&hits);
            } else {
                for h in &hits {
                    println!(
                        "source {} page {} [{}..{}]: {}",
                        h.source_number,
                        h.page_number,
                        h.matched_span.0,
                        h.matched_span.1,
                        h.matched_text
                    );
                }
                if hits.is_empty() {
                    println!("no match");
                }
            }
        }
        Command::Check => {
            let s = settings(&cli, None)?;
            let ws = tcfd_core::persistence::Workspace::open(&s.workspace)
                .map_err(|e| Failure::new(exit::DATA, e.to_string()))?;
            let issues = ws
                .check()
                .map_err(|e| Failure::new(exit::DATA, e.to_string()))?;
            if cli.json {
                print_json(&issues);
            } else if issues.is_empty() {
                println!("ok");
            } else {
                for i in &issues {
                    println!("{:?}: {}", i.problem, i.path);
                }
            }
            if !issues.is_empty() {
                return Err(Failure::new(
                    exit::DATA,
                    format!("{} workspace problem(s)", issues.len()),
                ));
            }
        }
        Command::Feedback {
            answer_id,
            text,
            expert,
        } => {
            let rec = engine(&cli, None)?.submit_feedback(answer_id, expert, text)?;
            if cli.json {
                print_json(&rec);
            } else {
                println!("{}", rec.feedback_id);
            }
        }
        Command::Guidelines(cmd) => {
            let e = engine(&cli, None)?;
            match cmd {
                GuidelineCommand::List => {
                    let versions = e.guidelines().versions();
                    if cli.json {
                        print_json(&versions);
                    } else {
                        for v in versions {
                            let mark = if v.active { "*" } else { " " };
                            let state = if v.promoted { "promoted" } else { "draft" };
                            println!(
                                "{mark} v{} {state} ({} general)",
                                v.version, v.general_count
                            );
                        }
                    }
                }
                GuidelineCommand::Transform { feedback_id } => {
                    let out = e.transform_feedback(feedback_id)?;
                    if cli.json {
                        print_json(&out);
                    } else {
                        println!("draft v{}: {}", out.draft.version, out.guideline);
                    }
                }
                GuidelineCommand::Promote { version } => {
                    let list = e.promote(*version)?;
                    if cli.json {
                        print_json(&list);
                    } else {
                        println!("active: v{}", list.version);
                    }
                }
            }
        }
    }
    Ok(())
}

fn format_for(path: &Path) -> DocumentFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("pdf") => DocumentFormat::Pdf,
        _ => DocumentFormat::PageDelimitedText,
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| {
        let code = if e.kind() == std::io::ErrorKind::NotFound {
            exit::NOT_FOUND
        } else {
            exit::GENERAL
        };
        Failure::new(code, format!("cannot read {}: {e}", path.display()))
    })
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let raw = read_file(path)?;
    let text = String::from_utf8(raw)
        .map_err(|_| Failure::new(exit::DATA, format!("{} is not UTF-8", path.display())))?;
    read_jsonl(&text).map_err(|(line, msg)| {
        Failure::new(exit::DATA, format!("{}:{line}: {msg}", path.display()))
    })
}

fn serve(cli: &Cli, addr: Option<String>) -> Result<(), Failure> {
    let settings = settings(cli, None)?;
    let addr = addr.unwrap_or_else(|| settings.service.addr.clone());
    let state = tcfd_service::AppState::new(Engine::open(settings)?);
    let rt = tokio::runtime::Runtime::new()
        .map_err(|e| Failure::new(exit::GENERAL, format!("cannot start runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Failure::new(exit::GENERAL, format!("cannot bind {addr}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| Failure::new(exit::GENERAL, e.to_string()))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        tcfd_service::serve(listener, state, shutdown)
            .await
            .map_err(|e| Failure::new(exit::GENERAL, e.to_string()))
    })
}
