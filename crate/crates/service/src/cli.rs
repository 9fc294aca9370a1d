//! `mastery` command-line verbs.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mastery_core::ledger::{decode, replay};
use mastery_core::planning::{actual_burndown, cohort_burnup, derailment_check, CourseSchedule};
use mastery_core::{analytics, table, CourseCatalog, GradeLevel, StudentId, Timestamp};
use mastery_sim::{run_sim_traced, SimConfig};

use crate::config::ServiceConfig;

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

#[derive(Debug, Parser)]
#[command(name = "mastery", version, about = "Mastery-learning course queue and analytics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Where to find course files. Flags override the config file, which is
/// itself overridden by `MASTERY_LEDGER`.
#[derive(Debug, Clone, Default, Args)]
pub struct Sources {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

impl Sources {
    fn resolve(&self) -> Result<ServiceConfig, Box<dyn std::error::Error>> {
        let mut cfg = match &self.config {
            Some(p) => ServiceConfig::load(p)?,
            None => ServiceConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        if let Some(p) = &self.ledger {
            cfg.ledger = Some(p.clone());
        }
        if let Some(p) = &self.catalog {
            cfg.catalog = Some(p.clone());
        }
        if let Some(p) = &self.schedule {
            cfg.schedule = Some(p.clone());
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    /// Submit-to-grade and submit-to-claim waits.
    Waiting,
    /// Per-achievement attempt and pass counts.
    Achievements,
    /// Passed count, grade and attainable grades per student.
    Cohort,
    /// Cumulative passes over time per student.
    Burnup,
    /// Assignments still open past their hard deadline.
    Derailment,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a catalog file and list any problems.
    ValidateCatalog { path: PathBuf },
    /// Run the HTTP server.
    Serve {
        #[command(flatten)]
        sources: Sources,
        #[arg(long)]
        tokens: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        write_queue: Option<usize>,
        #[arg(long)]
        recheck_seed: Option<u64>,
    },
    /// Verify a ledger file and summarise the replayed state.
    Replay {
        ledger: PathBuf,
        /// Print the canonical state as JSON.
        #[arg(long)]
        state: bool,
    },
    /// Print an analytics table as CSV.
    Report {
        kind: ReportKind,
        #[command(flatten)]
        sources: Sources,
        /// Window start, epoch ms (waiting report).
        #[arg(long)]
        from: Option<i64>,
        /// Window end, epoch ms (waiting report).
        #[arg(long)]
        to: Option<i64>,
        /// Reference time, epoch ms (derailment report); defaults to now.
        #[arg(long)]
        now: Option<i64>,
    },
    /// Run a queue simulation and print its metrics as CSV.
    Simulate {
        config: PathBuf,
        /// Write one line per simulated event here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print a student's actual and ideal burndown as CSV.
    ExportBurndown {
        student: String,
        #[command(flatten)]
        sources: Sources,
        /// Target grade; defaults to the highest level.
        #[arg(long)]
        target: Option<String>,
    },
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::ValidateCatalog { path } => validate_catalog(&path, out),
        Command::Serve { sources, tokens, bind, port, write_queue, recheck_seed } => {
            let mut cfg = sources.resolve()?;
            cfg.tokens = tokens.or(cfg.tokens);
            cfg.bind = bind.unwrap_or(cfg.bind);
            cfg.port = port.unwrap_or(cfg.port);
            cfg.write_queue = write_queue.unwrap_or(cfg.write_queue);
            cfg.recheck_seed = recheck_seed.or(cfg.recheck_seed);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::serve(&cfg, async {
                let _ = tokio::signal::ctrl_c().await;
            }))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { ledger, state } => replay_ledger(&ledger, state, out),
        Command::Report { kind, sources, from, to, now } => report(kind, &sources, from, to, now, out),
        Command::Simulate { config, trace } => simulate(&config, trace, out),
        Command::ExportBurndown { student, sources, target } => export_burndown(&student, &sources, target, out),
    }
}

fn validate_catalog(path: &std::path::Path, out: &mut dyn Write) -> CliResult {
    let catalog = CourseCatalog::load(path)?;
    let report = catalog.validate();
    if report.is_ok() {
        writeln!(
            out,
            "ok: {} achievements in {} groups, levels {}",
            catalog.achievements.len(),
            catalog.groups.len(),
            catalog.levels.iter().map(ToString::to_string).collect::<Vec<_>>().join(" < ")
        )?;
        return Ok(ExitCode::SUCCESS);
    }
    for f in &report.findings {
        writeln!(out, "{f}")?;
    }
    Ok(ExitCode::FAILURE)
}

fn replay_ledger(path: &std::path::Path, print_state: bool, out: &mut dyn Write) -> CliResult {
    let entries = decode(&std::fs::read(path)?)?;
    let state = replay(&entries)?;
    if print_state {
        writeln!(out, "{}", state.canonical_json())?;
    } else {
        writeln!(out, "entries {}", entries.len())?;
        writeln!(out, "last_seq {}", state.last_seq)?;
        writeln!(out, "students {}", state.students.len())?;
        writeln!(out, "requests {}", state.requests.len())?;
        writeln!(out, "pending {}", state.pending().len())?;
        writeln!(out, "sessions {}", state.sessions.len())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn load_entries(cfg: &ServiceConfig) -> Result<Vec<mastery_core::LogEntry>, Box<dyn std::error::Error>> {
    Ok(decode(&std::fs::read(cfg.ledger_path()?)?)?)
}

fn load_schedule(cfg: &ServiceConfig) -> Result<CourseSchedule, Box<dyn std::error::Error>> {
    let path = cfg.schedule.as_deref().ok_or("a schedule is required (--schedule)")?;
    Ok(CourseSchedule::load(path)?)
}

fn report(
    kind: ReportKind,
    sources: &Sources,
    from: Option<i64>,
    to: Option<i64>,
    now: Option<i64>,
    out: &mut dyn Write,
) -> CliResult {
    let cfg = sources.resolve()?;
    let entries = load_entries(&cfg)?;
    let text = match kind {
        ReportKind::Waiting => {
            let window = (from.is_some() || to.is_some())
                .then(|| (Timestamp(from.unwrap_or(i64::MIN)), Timestamp(to.unwrap_or(i64::MAX))));
            analytics::waiting_times(&entries, window).to_table()
        }
        ReportKind::Achievements => {
            let catalog = CourseCatalog::load(cfg.catalog_path()?)?;
            analytics::achievement_table(&analytics::achievement_stats(&entries, &catalog))
        }
        ReportKind::Cohort => {
            let catalog = CourseCatalog::load(cfg.catalog_path()?)?;
            analytics::cohort_progress(&entries, &catalog, &cfg.policy)?.to_table()
        }
        ReportKind::Burnup => {
            let catalog = CourseCatalog::load(cfg.catalog_path()?)?;
            let rows = cohort_burnup(&entries, &catalog)?.into_iter().flat_map(|(student, points)| {
                points.into_iter().map(move |p| [student.to_string(), p.at.to_string(), p.value.to_string()])
            });
            table::to_string(&["series", "timestamp", "value"], rows)
        }
        ReportKind::Derailment => {
            let schedule = load_schedule(&cfg)?;
            let now = now.map(Timestamp).unwrap_or_else(|| (crate::system_clock())());
            let rows = derailment_check(&entries, &schedule, now)?
                .into_iter()
                .map(|d| [d.student.to_string(), d.sprint, d.assignment.to_string(), d.hard_deadline.to_string()]);
            table::to_string(&["student", "sprint", "assignment", "hard_deadline"], rows)
        }
    };
    out.write_all(text.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(config: &std::path::Path, trace: Option<PathBuf>, out: &mut dyn Write) -> CliResult {
    let cfg = SimConfig::load(config)?;
    let result = match trace {
        Some(path) => {
            let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
            let r = run_sim_traced(&cfg, Some(&mut file))?;
            file.flush()?;
            r
        }
        None => run_sim_traced(&cfg, None)?,
    };
    out.write_all(result.to_table().as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn export_burndown(student: &str, sources: &Sources, target: Option<String>, out: &mut dyn Write) -> CliResult {
    let cfg = sources.resolve()?;
    let entries = load_entries(&cfg)?;
    let catalog = CourseCatalog::load(cfg.catalog_path()?)?;
    let schedule = load_schedule(&cfg)?;
    let target = match target {
        Some(t) => GradeLevel::new(t),
        None => catalog.levels.last().cloned().ok_or("catalog has no levels")?,
    };
    let student = StudentId::new(student);
    let series = actual_burndown(&entries, &student, &target, &catalog, &schedule)?;
    out.write_all(series.to_table(student.as_str()).as_bytes())?;
    Ok(ExitCode::SUCCESS)
}
