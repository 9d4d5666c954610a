use std::fs::File;
use std::io::{BufReader, IsTerminal, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tutorlens_core::analytics::{class_overview, ReportFilter};
use tutorlens_core::config::AppConfig;
use tutorlens_core::ingest::{parse_transcript, IngestError, ParsedTranscript};
use tutorlens_core::pipeline::{
    analyze_events, assemble_sessions, persist_batch, write_batch, write_jsonl, PipelineConfig, DEV_SALT,
};
use tutorlens_core::privacy::{salt_from_env, SALT_ENV};
use tutorlens_core::store::{Requester, Store};
use tutorlens_core::synth::{generate, read_roster, write_corpus, SyntheticScenario};
use tutorlens_core::Role;
use tutorlens_service::{
    router, AppState, EchoTutor, OfflineTutor, ScriptedTutor, ServiceSettings, SystemClock, TutorBackend,
};

const TOKEN_SECRET_ENV: &str = "TUTORLENS_TOKEN_SECRET";

#[derive(Parser)]
#[command(name = "tutorlens", version, about = "Learning analytics over tutor chat transcripts")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic transcript corpus with ground truth.
    Gen(GenArgs),
    /// Filter and sessionize a transcript into the record store.
    Ingest(IngestArgs),
    /// Build session reports, class overviews and student signals.
    Analyze(AnalyzeArgs),
    /// Print a stored class overview or session report.
    Report(ReportArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Scenario TOML; missing fields take the defaults.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    students: Option<usize>,
    #[arg(long)]
    sessions: Option<usize>,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Transcript in JSON Lines, one raw event per line.
    #[arg(long)]
    input: PathBuf,
    /// Roster file with one student name per line, masked in all text.
    #[arg(long)]
    roster: Option<PathBuf>,
    #[arg(long)]
    idle_gap_minutes: Option<i64>,
    /// Fail when more than this share of lines is malformed.
    #[arg(long)]
    max_reject_rate: Option<f64>,
    #[arg(long)]
    copy_overlap_info: Option<f64>,
    #[arg(long)]
    copy_overlap_warn: Option<f64>,
    #[arg(long)]
    answer_ratio_info: Option<f64>,
    #[arg(long)]
    answer_ratio_warn: Option<f64>,
    #[arg(long)]
    repeat_min_sessions: Option<usize>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    store: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Output directory for the report tree.
    #[arg(long)]
    out: PathBuf,
    /// Also persist sessions and reports into this store.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("target").required(true).args(["class", "session"]))]
struct ReportArgs {
    #[arg(long)]
    store: PathBuf,
    /// Course id for a class overview.
    #[arg(long)]
    class: Option<String>,
    /// Session id for a single report.
    #[arg(long)]
    session: Option<String>,
    #[arg(long)]
    week: Option<String>,
    #[arg(long)]
    topic: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TutorKind {
    Echo,
    Scripted,
    Offline,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, value_enum, default_value = "echo")]
    tutor: TutorKind,
    /// Allow built-in development secrets when the environment has none.
    #[arg(long)]
    insecure_dev_secrets: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = match &cli.config {
        Some(p) => AppConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => AppConfig::default(),
    };
    match cli.command {
        Command::Gen(args) => gen(args),
        Command::Ingest(args) => ingest(args, &config),
        Command::Analyze(args) => analyze(args, &config),
        Command::Report(args) => report(args, &config),
        Command::Serve(args) => serve(args, &config),
    }
}

fn gen(args: GenArgs) -> Result<ExitCode> {
    let mut scenario = match &args.scenario {
        Some(p) => SyntheticScenario::parse(&std::fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => SyntheticScenario::default(),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(n) = args.students {
        scenario.student_count = n;
    }
    if let Some(n) = args.sessions {
        scenario.session_count = n;
    }
    let corpus = generate(&scenario)?;
    write_corpus(&args.out, &corpus)?;
    println!(
        "generated {} events, {} sessions, {} students into {}",
        corpus.events.len(),
        scenario.session_count,
        scenario.student_count,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn master_salt() -> Vec<u8> {
    salt_from_env().unwrap_or_else(|| {
        tracing::warn!("{SALT_ENV} is not set; using the development salt");
        DEV_SALT.to_vec()
    })
}

fn pipeline_config(args: &PipelineArgs, config: &AppConfig) -> Result<PipelineConfig> {
    let mut config = config.clone();
    if let Some(p) = &args.roster {
        config.privacy.roster_names.extend(read_roster(p)?);
    }
    if let Some(m) = args.idle_gap_minutes {
        if m <= 0 {
            bail!("--idle-gap-minutes must be positive");
        }
        config.ingest.idle_gap_minutes = m;
    }
    let mut th = config.risk.thresholds.clone().unwrap_or_default();
    let overrides = [
        (args.copy_overlap_info, &mut th.copy_overlap_info),
        (args.copy_overlap_warn, &mut th.copy_overlap_warn),
        (args.answer_ratio_info, &mut th.answer_ratio_info),
        (args.answer_ratio_warn, &mut th.answer_ratio_warn),
    ];
    for (value, slot) in overrides {
        if let Some(v) = value {
            if !(0.0..=1.0).contains(&v) {
                bail!("threshold {v} is outside [0, 1]");
            }
            *slot = v;
        }
    }
    if let Some(k) = args.repeat_min_sessions {
        th.repeat_min_sessions = k;
    }
    config.risk.thresholds = Some(th);
    Ok(PipelineConfig::from_app_config(&config, master_salt())?)
}

fn read_transcript(path: &Path, max_reject_rate: f64) -> Result<Result<ParsedTranscript, ParsedTranscript>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let parsed = match parse_transcript(BufReader::new(file)) {
        Ok(p) => p,
        Err(IngestError::CorpusCorrupt { total, rejects }) => {
            bail!("{} of {total} lines are malformed; refusing to continue", rejects.len())
        }
        Err(e) => return Err(e.into()),
    };
    for r in &parsed.rejects {
        tracing::warn!(line = r.line, reason = %r.reason, "rejected line");
    }
    if parsed.reject_rate() > max_reject_rate {
        return Ok(Err(parsed));
    }
    Ok(Ok(parsed))
}

fn ingest(args: IngestArgs, config: &AppConfig) -> Result<ExitCode> {
    let cfg = pipeline_config(&args.pipeline, config)?;
    let limit = args.pipeline.max_reject_rate.unwrap_or(config.analyze.max_reject_rate);
    let parsed = match read_transcript(&args.pipeline.input, limit)? {
        Ok(p) => p,
        Err(p) => {
            eprintln!("reject rate {:.3} exceeds {limit}", p.reject_rate());
            return Ok(ExitCode::from(2));
        }
    };
    let sessions = assemble_sessions(parsed.events, &cfg)?;
    let mut store = Store::open(&args.store)?;
    let mut added = 0;
    for s in sessions {
        if store.session(&s.session_id).is_none() {
            store.append_session(s)?;
            added += 1;
        }
    }
    println!("stored {added} new sessions ({} lines rejected)", parsed.rejects.len());
    Ok(ExitCode::SUCCESS)
}

fn analyze(args: AnalyzeArgs, config: &AppConfig) -> Result<ExitCode> {
    let started = Instant::now();
    let cfg = pipeline_config(&args.pipeline, config)?;
    let limit = args.pipeline.max_reject_rate.unwrap_or(config.analyze.max_reject_rate);
    let (parsed, too_many) = match read_transcript(&args.pipeline.input, limit)? {
        Ok(p) => (p, false),
        Err(p) => (p, true),
    };
    let rejects = parsed.rejects.clone();
    let out = analyze_events(parsed.events, &cfg)?;
    write_batch(&args.out, &out, &rejects)?;
    if let Some(dir) = &args.store {
        let mut store = Store::open(dir)?;
        let (s, r) = persist_batch(&mut store, &out)?;
        tracing::info!(sessions = s, reports = r, "persisted batch");
    }
    let students: std::collections::BTreeSet<_> = out.sessions.iter().map(|s| &s.student_ref).collect();
    println!(
        "{} reports for {} students, {} student signals, {} rejected lines in {:.2}s",
        out.reports.len(),
        students.len(),
        out.student_signals.len(),
        rejects.len(),
        started.elapsed().as_secs_f64()
    );
    if too_many {
        write_jsonl(&args.out.join("rejects.jsonl"), &rejects)?;
        eprintln!("reject rate exceeds {limit}; see rejects.jsonl");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn report(args: ReportArgs, config: &AppConfig) -> Result<ExitCode> {
    let cfg = PipelineConfig::from_app_config(config, master_salt())?;
    let store = Store::open(&args.store)?;
    let body = if let Some(course) = &args.class {
        let filter = ReportFilter {
            week: args.week.clone(),
            topic: args.topic.clone(),
            ..Default::default()
        };
        let reports: Vec<_> = store
            .reports_for_course(course)
            .into_iter()
            .filter(|r| filter.matches(r))
            .collect();
        let ov = class_overview(course, &reports, &filter.window, &cfg.taxonomy, &cfg.overview);
        serde_json::to_string_pretty(&ov)?
    } else {
        let sid = args.session.as_deref().expect("clap enforces one target");
        let report = store
            .latest_report(sid)
            .with_context(|| format!("no report for session {sid}"))?;
        // Local operator access counts as admin; it reads the same view.
        let admin = Requester {
            subject: "cli".into(),
            role: Role::Admin,
            course_id: report.session.course_id.clone(),
        };
        let view = store.get_report(sid, &admin, &store.sharing_policy(&report.session.student_ref))?;
        serde_json::to_string_pretty(&view)?
    };
    emit(&body)?;
    Ok(ExitCode::SUCCESS)
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(body: &str) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{body}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn serve(args: ServeArgs, config: &AppConfig) -> Result<ExitCode> {
    let token_secret = match std::env::var(TOKEN_SECRET_ENV) {
        Ok(s) if !s.is_empty() => s.into_bytes(),
        _ if args.insecure_dev_secrets => {
            tracing::warn!("{TOKEN_SECRET_ENV} is not set; using a development token secret");
            b"tutorlens-development-token-secret".to_vec()
        }
        _ => bail!("{TOKEN_SECRET_ENV} must be set (or pass --insecure-dev-secrets)"),
    };
    if salt_from_env().is_none() && !args.insecure_dev_secrets {
        bail!("{SALT_ENV} must be set (or pass --insecure-dev-secrets)");
    }
    if config.service.courses.is_empty() {
        tracing::warn!("no [[service.courses]] configured; every launch will be rejected");
    }
    let pipeline = PipelineConfig::from_app_config(config, master_salt())?;
    let settings = ServiceSettings::from_section(&config.service, token_secret, config.privacy.policy);
    let tutor: Arc<dyn TutorBackend> = match args.tutor {
        TutorKind::Echo => Arc::new(EchoTutor),
        TutorKind::Scripted => Arc::new(ScriptedTutor::new(vec![
            "Let's look at this step by step. What do you expect the first step to produce?".into(),
            "Good. Now try it on a small example and tell me what you observe.".into(),
        ])),
        TutorKind::Offline => Arc::new(OfflineTutor),
    };
    let store = Store::open(&args.store)?;
    let state = Arc::new(AppState::new(store, settings, pipeline, Arc::new(SystemClock), tutor));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        tracing::info!(addr = %args.addr, "listening");
        axum_serve(listener, state).await
    })?;
    Ok(ExitCode::SUCCESS)
}

async fn axum_serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
