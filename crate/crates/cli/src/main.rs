mod seed;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use flipdeck_core::classroom::{rebuild, CourseAnalytics, EXPORTS};
use flipdeck_core::store::scan_log;
use flipdeck_core::{Classroom, EngineConfig, Timestamp};
use flipdeck_gateway::config::{ClockMode, StorageConfig};
use flipdeck_gateway::sim::{simulate, SimClient, SimOptions, SimReport};
use flipdeck_gateway::{AppState, Config};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "flipdeck", version, about = "Flipped-classroom question server")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP server. Settings come from the file, then FLIPDECK_* variables.
    Serve {
        #[arg(long, short)]
        config: Option<PathBuf>,
    },
    /// Register people, mint their tokens and queue a course's questions for review.
    Seed {
        fixture: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Event time in UTC seconds; defaults to now.
        #[arg(long)]
        at: Option<i64>,
    },
    /// Drive a synthetic class through the HTTP API.
    Simulate {
        #[arg(long, short = 'n', default_value_t = 30)]
        students: usize,
        #[arg(long, short = 'k', default_value_t = 2)]
        sessions: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Write the event log here. The file must not exist yet.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Call the router directly instead of over a loopback socket.
        #[arg(long)]
        in_process: bool,
        /// Also write each export as <dir>/<name>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one analytics table from an event log.
    Export {
        course: String,
        what: String,
        #[arg(long)]
        log: PathBuf,
    },
    /// Check an event log and report where damage starts, if anywhere.
    Verify { log: PathBuf },
}

#[tokio::main]
async fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Serve { config } => serve(config.as_deref()).await,
        Cmd::Seed { fixture, log, at } => run_seed(&fixture, &log, at),
        Cmd::Simulate {
            students,
            sessions,
            seed,
            log,
            in_process,
            out,
        } => {
            let opts = SimOptions {
                students,
                sessions,
                seed,
                ..SimOptions::default()
            };
            let report = run_simulation(&opts, log.as_deref(), in_process).await?;
            print_report(&report);
            if let Some(dir) = out {
                write_exports(&report, &dir)?;
            }
            Ok(())
        }
        Cmd::Export { course, what, log } => {
            print!("{}", export(&log, &course, &what)?);
            Ok(())
        }
        Cmd::Verify { log } => verify(&log),
    }
}

async fn serve(path: Option<&Path>) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let config = Config::load(path, std::env::vars())?;
    let state = AppState::from_config(&config).context("opening storage")?;
    flipdeck_gateway::serve(state, config.listen).await?;
    Ok(())
}

fn now() -> Timestamp {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    Timestamp(secs as i64)
}

fn run_seed(fixture: &Path, log: &Path, at: Option<i64>) -> Result<()> {
    let fixture = seed::load(fixture)?;
    let mut room =
        Classroom::open_file(log, EngineConfig::default()).with_context(|| format!("opening {}", log.display()))?;
    let seeded = seed::apply(&mut room, &fixture, at.map_or_else(now, Timestamp))?;
    println!("actor\trole\ttoken");
    for (id, role, token) in &seeded.tokens {
        println!("{id}\t{}\t{token}", serde_json::to_value(role)?.as_str().unwrap_or("?"));
    }
    println!();
    for (id, name) in &seeded.entries {
        println!("{id}\tpending\t{name}");
    }
    println!(
        "{} entries queued for review in {}",
        seeded.entries.len(),
        fixture.course.id
    );
    Ok(())
}

/// Runs the simulator against a fresh server on a logical clock.
async fn run_simulation(opts: &SimOptions, log: Option<&Path>, in_process: bool) -> Result<SimReport> {
    let storage = match log {
        Some(p) if p.exists() => bail!("{} already exists; simulate writes a fresh log", p.display()),
        Some(p) => StorageConfig::File(p.to_path_buf()),
        None => StorageConfig::Memory,
    };
    let config = Config {
        storage,
        fsync: false,
        clock: ClockMode::Logical,
        admin_token: Some(opts.admin_token.clone()),
        ..Config::default()
    };
    let state = AppState::from_config(&config).context("opening storage")?;
    let report = if in_process {
        simulate(&mut SimClient::in_process(state), opts).await?
    } else {
        let (addr, server) = flipdeck_gateway::spawn_loopback(state).await?;
        let report = simulate(&mut SimClient::loopback(format!("http://{addr}")), opts).await;
        server.abort();
        report?
    };
    Ok(report)
}

fn print_report(r: &SimReport) {
    println!("session\troutine\tpace\tcomprehension\tmode");
    for p in &r.trajectory {
        println!(
            "{}\t{}\t{}\t{:.4}\t{}",
            p.session, p.kind, p.pace, p.comprehension, p.mode
        );
    }
    println!();
    println!("recommendation: {}", r.recommendation);
    println!("bank entries: {}", r.bank_size);
    let c = &r.checks;
    println!(
        "votes accepted: {}, duplicates rejected: {}, late rejected: {}, submissions: {} ({} approved, {} rejected)",
        c.votes_accepted, c.duplicate_votes_rejected, c.late_votes_rejected, c.submissions, c.approved, c.rejected
    );
    println!("requests: {}", r.requests);
    for (name, csv) in &r.exports {
        println!();
        println!("# {name}");
        print!("{csv}");
    }
}

fn write_exports(r: &SimReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, csv) in &r.exports {
        std::fs::write(dir.join(format!("{name}.csv")), csv)?;
    }
    Ok(())
}

fn export(log: &Path, course: &str, what: &str) -> Result<String> {
    if !EXPORTS.contains(&what) {
        bail!("unknown export {what:?}; expected one of {}", EXPORTS.join(", "));
    }
    let bytes = std::fs::read(log).with_context(|| format!("reading {}", log.display()))?;
    let rebuilt = rebuild(&bytes)?;
    if let Some(why) = &rebuilt.halted {
        eprintln!("warning: replay stopped early: {why}");
    }
    Ok(CourseAnalytics { state: &rebuilt.state }.export(course, what)?)
}

fn verify(log: &Path) -> Result<()> {
    let bytes = std::fs::read(log).with_context(|| format!("reading {}", log.display()))?;
    let scan = scan_log(&bytes)?;
    println!("records: {}", scan.events.len());
    println!("valid bytes: {} of {}", scan.valid_len, bytes.len());
    match scan.corruption {
        None => println!("intact"),
        Some(why) if scan.torn_tail => println!("torn tail (recoverable): {why}"),
        Some(why) => bail!("damaged at byte {}: {why}", scan.valid_len),
    }
    Ok(())
}
