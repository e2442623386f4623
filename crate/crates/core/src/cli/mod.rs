//! `fleet` command line: run scenarios, render reports, validate configs.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::driver::{run_scenario, ConfigError, RunReport, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ANOMALY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const CSV_HEADER: &str = "subscriber,app,proto,bytes_up,bytes_down,forwarded,verdict";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "fleet", version, about = "Simulated phone fleet behind a DPI gateway")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Run a scenario and print its report.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        devices: Option<u32>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 1 when any subscriber is flagged.
        #[arg(long)]
        fail_on_anomaly: bool,
    },
    /// Render a saved JSON report.
    Report {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Check a scenario and every file it references.
    Validate { scenario: PathBuf },
}

/// Reads and fully checks a scenario, including the files it names.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let scenario = Scenario::load(path)?;
    scenario.resolve()?;
    Ok(scenario)
}

pub fn render(report: &RunReport, format: Format) -> String {
    match format {
        Format::Json => report.to_json(),
        Format::Csv => render_csv(report),
        Format::Table => render_table(report),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per flow, in report order.
pub fn render_csv(report: &RunReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for f in &report.flows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            f.subscriber,
            csv_field(&f.app),
            f.proto,
            f.bytes_up,
            f.bytes_down,
            f.forwarded_bytes,
            csv_field(&f.verdict)
        );
    }
    out
}

/// Aligned columns per subscriber and app, then the totals.
pub fn render_table(report: &RunReport) -> String {
    let mut rows = vec![["SUBSCRIBER", "APP", "FLOWS", "PACKETS", "BYTES", "FLAGS"].map(String::from)];
    for s in &report.subscribers {
        let flags = match s.flags.is_empty() {
            true => "-".to_string(),
            false => s
                .flags
                .iter()
                .map(|f| serde_json::to_value(f).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
                .collect::<Vec<_>>()
                .join(","),
        };
        for (app, c) in &s.apps {
            rows.push([
                s.ip.to_string(),
                app.clone(),
                c.flows.to_string(),
                c.packets.to_string(),
                c.bytes.to_string(),
                flags.clone(),
            ]);
        }
    }
    let mut widths = [0usize; 6];
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for r in &rows {
        let mut line = String::new();
        for (i, (cell, w)) in r.iter().zip(widths).enumerate() {
            // Names left, numbers right.
            match i {
                2..=4 => {
                    let _ = write!(line, "{cell:>w$}  ");
                }
                _ => {
                    let _ = write!(line, "{cell:<w$}  ");
                }
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    let t = &report.totals;
    let _ = writeln!(
        out,
        "\ntotal: {} flows, {} bytes up, {} bytes down, {} forwarded, {} dropped",
        t.flows, t.bytes_up, t.bytes_down, t.forwarded_bytes, t.dropped_bytes
    );
    for (verdict, n) in &t.verdicts {
        let _ = writeln!(out, "  {verdict}: {n} flows");
    }
    for a in &report.anomalies {
        let flag = serde_json::to_value(a.flag).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let _ = writeln!(out, "anomaly: {} {} at {} ms", a.subscriber, flag, a.at_ms);
    }
    out
}

fn init_logging() {
    let level = match std::env::var("FLEET_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("trace") => log::LevelFilter::Trace,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).try_init();
}

/// Entry point behind the `fleet` binary; returns the exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = match e.use_stderr() {
                true => write!(stderr, "{e}"),
                false => write!(stdout, "{e}"),
            };
            return code;
        }
    };
    init_logging();
    match cli.command {
        CliCommand::Run { scenario, seed, devices, format, out, fail_on_anomaly } => {
            let mut s = match Scenario::load(&scenario) {
                Ok(s) => s,
                Err(e) => return config_error(stderr, &scenario, &e),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(n) = devices {
                s.device_count = n;
            }
            let report = match run_scenario(&s) {
                Ok(r) => r,
                Err(e) => return config_error(stderr, &scenario, &e),
            };
            let text = render(&report, format);
            if let Err(code) = emit(&text, out.as_deref(), stdout, stderr) {
                return code;
            }
            if fail_on_anomaly && report.has_anomalies() {
                let _ = writeln!(stderr, "fleet: {} anomaly flag(s) raised", report.anomalies.len());
                return EXIT_ANOMALY;
            }
            EXIT_OK
        }
        CliCommand::Report { path, format } => {
            let report = std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|t| RunReport::from_json(&t).map_err(|e| e.to_string()));
            match report {
                Ok(r) => match emit(&render(&r, format), None, stdout, stderr) {
                    Ok(()) => EXIT_OK,
                    Err(code) => code,
                },
                Err(e) => {
                    let _ = writeln!(stderr, "fleet: {}: {e}", path.display());
                    EXIT_CONFIG
                }
            }
        }
        CliCommand::Validate { scenario } => match parse_scenario(&scenario) {
            Ok(s) => {
                let _ = writeln!(
                    stdout,
                    "{}: ok ({} devices, {} apps, {} ms)",
                    scenario.display(),
                    s.device_count,
                    s.apps.len(),
                    s.duration_ms
                );
                EXIT_OK
            }
            Err(e) => config_error(stderr, &scenario, &e),
        },
    }
}

fn config_error(stderr: &mut dyn Write, path: &Path, e: &ConfigError) -> i32 {
    let _ = writeln!(stderr, "fleet: {}: {e}", path.display());
    EXIT_CONFIG
}

fn emit(text: &str, out: Option<&Path>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), i32> {
    let result = match out {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => stdout.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    };
    result.map_err(|e| {
        let _ = writeln!(stderr, "fleet: {e}");
        EXIT_CONFIG
    })
}
