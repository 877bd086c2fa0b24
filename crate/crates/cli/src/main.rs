//! `nt`: run the acquisition pipeline stage by stage, once, or as a daemon.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use newstweet::analytics::{self, Dataset, Format, Table};
use newstweet::archive::{Archive, DirLock, RecordKind};
use newstweet::clock::{SharedClock, SimClock, SystemClock};
use newstweet::config::PipelineConfig;
use newstweet::par::Execution;
use newstweet::pipeline::{ensure_writable, Pipeline, PipelineError};
use newstweet::social::{MockBackend, MockServer};
use newstweet::testkit;
use serde::Serialize;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "nt", version, about = "News embed acquisition pipeline")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set scheduler.policy=priority`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run data-parallel work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Use a simulated clock starting at this RFC 3339 time; sleeps return
    /// instantly. For fixture replays and tests.
    #[arg(long, value_name = "TIME", global = true)]
    sim_clock: Option<chrono::DateTime<chrono::Utc>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Poll section feeds and queue new links.
    Poll(ReportArgs),
    /// Fetch queued links and archive the pages.
    Fetch(ReportArgs),
    /// Extract embeds from archived publisher pages.
    Extract(ReportArgs),
    /// Hydrate embedded tweets and record their authors.
    Hydrate(ReportArgs),
    /// Register authors for tracking and run their initial timeline fetch.
    Register(ReportArgs),
    /// Top off one scheduling window's batch of timelines.
    Topoff(ReportArgs),
    /// Print the descriptive tables.
    Stats {
        /// Table number (1 platforms, 2 sections, 3 users, 4 domains); all when omitted.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        table: Option<u8>,
        #[arg(long, value_enum, default_value_t = FormatArg::Tsv)]
        format: FormatArg,
    },
    /// Run every stage once, in order.
    Run(ReportArgs),
    /// Run stages continuously on their configured intervals until interrupted.
    Daemon {
        /// Stop after this many (clock) seconds.
        #[arg(long, value_name = "SECS")]
        duration: Option<u64>,
    },
    /// Write one record kind as NDJSON.
    Export {
        #[arg(long, value_parser = parse_kind)]
        kind: RecordKind,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rewrite record logs to one line per live record.
    Compact,
    /// Serve the mock social API over HTTP.
    MockServe {
        #[arg(long, default_value = "127.0.0.1:8089")]
        bind: String,
        /// Mock users file; defaults to the configured one.
        #[arg(long)]
        users: Option<PathBuf>,
    },
    /// Fixture utilities.
    Fixture {
        #[command(subcommand)]
        command: FixtureCommand,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Subcommand)]
enum FixtureCommand {
    /// Write the planted corpus (recorded HTTP, mock users, config).
    Generate {
        #[arg(long, default_value = "fixture")]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// Print a machine-readable report on stdout.
    #[arg(long, value_enum)]
    report: Option<ReportFormat>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Tsv,
    Json,
    Markdown,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tsv => Format::Tsv,
            FormatArg::Json => Format::Json,
            FormatArg::Markdown => Format::Markdown,
        }
    }
}

fn parse_kind(s: &str) -> Result<RecordKind, String> {
    RecordKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = RecordKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown kind {s:?} ({})", names.join("|"))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            eprintln!("nt: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}

/// A closed stdout (`nt export | head`) is not a failure.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<io::Error>().map(io::Error::kind) == Some(io::ErrorKind::BrokenPipe)
            || c.downcast_ref::<serde_json::Error>()
                .and_then(serde_json::Error::io_error_kind)
                == Some(io::ErrorKind::BrokenPipe)
    })
}

fn init_logging(level: &str) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .try_init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Fixture {
        command: FixtureCommand::Generate { dir },
    } = &cli.command
    {
        init_logging("info");
        let planted = testkit::write_corpus(dir).with_context(|| format!("writing corpus to {}", dir.display()))?;
        writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&planted)?)?;
        return Ok(());
    }

    let config = PipelineConfig::load(cli.config.as_deref(), &cli.overrides).map_err(PipelineError::from)?;
    let config = resolve_paths(config, cli.config.as_deref());
    init_logging(&config.log_level);
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let clock: SharedClock = match cli.sim_clock {
        Some(t) => Arc::new(SimClock::at(t)),
        None => Arc::new(SystemClock),
    };

    match cli.command {
        Command::Config => {
            io::stdout().lock().write_all(config.to_toml().as_bytes())?;
            Ok(())
        }
        Command::Stats { table, format } => {
            let archive = Archive::open_read_only(&config.data_dir).map_err(PipelineError::Archive)?;
            let report = analytics::compute(&Dataset::load(&archive), &config.analytics, exec);
            let tables = match table {
                Some(n) => vec![Table::from_number(n).expect("range checked")],
                None => vec![Table::Platforms, Table::Sections, Table::Users, Table::Domains],
            };
            let mut out = io::stdout().lock();
            for (i, t) in tables.iter().enumerate() {
                if i > 0 {
                    writeln!(out)?;
                }
                out.write_all(analytics::render(&report, *t, format.into()).as_bytes())?;
            }
            Ok(())
        }
        Command::Export { kind, out } => {
            let archive = Archive::open_read_only(&config.data_dir).map_err(PipelineError::Archive)?;
            let n = match out {
                Some(path) => {
                    let mut w =
                        BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
                    let n = archive.export_ndjson(kind, &mut w)?;
                    w.flush()?;
                    n
                }
                None => {
                    let mut w = BufWriter::new(io::stdout().lock());
                    let n = archive.export_ndjson(kind, &mut w)?;
                    w.flush()?;
                    n
                }
            };
            tracing::info!(kind = kind.name(), records = n, "export done");
            Ok(())
        }
        Command::MockServe { bind, users } => {
            let path = users.unwrap_or_else(|| config.mock_users_path());
            let backend =
                MockBackend::from_file(&path).with_context(|| format!("loading mock users from {}", path.display()))?;
            let server = MockServer::start(backend, &bind).with_context(|| format!("binding {bind}"))?;
            let stop = server.stop_flag();
            ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)).context("installing signal handler")?;
            writeln!(io::stdout().lock(), "{}", server.base_url())?;
            io::stdout().flush()?;
            server.wait();
            Ok(())
        }
        Command::Compact => {
            ensure_writable(&config.data_dir)?;
            let _lock = lock(&config.data_dir)?;
            let archive = Archive::open(&config.data_dir).map_err(PipelineError::Archive)?;
            let report = archive.compact()?;
            writeln!(io::stdout().lock(), "{}", serde_json::to_string(&report)?)?;
            Ok(())
        }
        Command::Fixture { .. } => unreachable!("handled above"),
        stage => {
            ensure_writable(&config.data_dir)?;
            let _lock = lock(&config.data_dir)?;
            let pipeline = Pipeline::open(config, clock.clone(), exec)?;
            run_stage(&pipeline, stage, clock)
        }
    }
}

/// Relative `data_dir`/`fixture_dir` in a config file are taken relative to
/// that file.
fn resolve_paths(mut config: PipelineConfig, file: Option<&Path>) -> PipelineConfig {
    let Some(base) = file.and_then(Path::parent) else {
        return config;
    };
    for p in [&mut config.data_dir, &mut config.fixture_dir] {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if let Some(m) = config.social.mock_users.as_mut() {
        if m.is_relative() {
            *m = base.join(&*m);
        }
    }
    config
}

fn lock(data_dir: &Path) -> anyhow::Result<DirLock> {
    DirLock::acquire(data_dir).map_err(|e| anyhow!(PipelineError::Archive(e)))
}

fn emit<T: Serialize>(report: &T, format: Option<ReportFormat>) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    match format {
        Some(ReportFormat::Json) => writeln!(io::stdout().lock(), "{json}")?,
        None => tracing::info!("{}", serde_json::to_string(report)?),
    }
    Ok(())
}

fn run_stage(p: &Pipeline, command: Command, clock: SharedClock) -> anyhow::Result<()> {
    let checkpoint = |p: &Pipeline| p.checkpoint().map_err(PipelineError::Archive);
    match command {
        Command::Poll(a) => {
            let r = p.poll()?;
            checkpoint(p)?;
            emit(&r, a.report)
        }
        Command::Fetch(a) => {
            let r = p.fetch()?;
            checkpoint(p)?;
            emit(&r, a.report)
        }
        Command::Extract(a) => {
            let r = p.extract()?;
            checkpoint(p)?;
            emit(&r, a.report)
        }
        Command::Hydrate(a) => {
            let r = p.hydrate()?;
            checkpoint(p)?;
            emit(&r, a.report)
        }
        Command::Register(a) => {
            let r = p.register()?;
            checkpoint(p)?;
            emit(&r, a.report)
        }
        Command::Topoff(a) => {
            let r = p.topoff()?;
            checkpoint(p)?;
            emit(&r, a.report)
        }
        Command::Run(a) => {
            let r = p.run_once()?;
            emit(&r, a.report)
        }
        Command::Daemon { duration } => {
            let stop = Arc::new(AtomicBool::new(false));
            let flag = stop.clone();
            ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).context("installing signal handler")?;
            let until = duration.map(|s| clock.now() + chrono::Duration::seconds(s as i64));
            let summary = p.run_daemon(&stop, until)?;
            tracing::info!(?summary, "daemon stopped");
            Ok(())
        }
        _ => bail!("not a pipeline stage"),
    }
}
