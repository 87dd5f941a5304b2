//! Command-line entry point.
//!
//! Exit codes: 0 success (or a quiescent run), 1 run reached its horizon
//! with work left, 2 invalid input, 3 I/O failure. Results go to stdout,
//! diagnostics to stderr.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use tempfile::NamedTempFile;

use crate::expr::{self, AttrBag, Value};
use crate::model::{parse_config, ProvisionerConfig};
use crate::poolsim::{
    metrics_csv, parse_scenario, trace_jsonl, BackendKind, RunOutcome, ScenarioSpec, Simulation,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INCOMPLETE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "podprov",
    version,
    about = "Pilot pod provisioner and pool simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write metrics.csv, audit.jsonl and trace.jsonl.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Stop at this virtual time instead of the scenario horizon.
        #[arg(long, value_name = "SECONDS")]
        until: Option<u64>,
        #[arg(long)]
        seed_override: Option<u64>,
        #[arg(long, value_parser = ["simkube", "simlancium"])]
        backend_override: Option<String>,
    },
    /// Parse and validate a provisioner config; print it normalized.
    ValidateConfig { path: PathBuf },
    /// Evaluate an expression against attributes given as NAME=VALUE.
    EvalExpr {
        expression: String,
        #[arg(long = "attr", short = 'a', value_name = "NAME=VALUE")]
        attrs: Vec<String>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    let (mut out, mut err) = (stdout.lock(), stderr.lock());
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli.command, &mut out, &mut err),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match command {
        Command::ValidateConfig { path } => cmd_validate_config(&path, out, err),
        Command::EvalExpr { expression, attrs } => cmd_eval_expr(&expression, &attrs, out, err),
        Command::Run {
            config,
            scenario,
            out_dir,
            until,
            seed_override,
            backend_override,
        } => cmd_run(
            &RunArgs {
                config,
                scenario,
                out_dir,
                until,
                seed_override,
                backend_override,
            },
            out,
            err,
        ),
    }
}

fn read(path: &Path, err: &mut dyn Write) -> Result<String, i32> {
    fs::read_to_string(path).map_err(|e| {
        let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
        EXIT_IO
    })
}

fn load_config(path: &Path, err: &mut dyn Write) -> Result<ProvisionerConfig, i32> {
    let text = read(path, err)?;
    parse_config(&text).map_err(|e| {
        let _ = writeln!(err, "{}: {e}", path.display());
        EXIT_INVALID
    })
}

pub fn cmd_validate_config(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match load_config(path, err) {
        Ok(cfg) => {
            let _ = out.write_all(cfg.render().as_bytes());
            EXIT_OK
        }
        Err(code) => code,
    }
}

fn parse_assignment(raw: &str) -> Result<(&str, Value), String> {
    let (name, value) = raw
        .split_once('=')
        .ok_or_else(|| format!("`{raw}` is not NAME=VALUE"))?;
    let name = name.trim();
    if !expr::is_valid_attr_name(name) {
        return Err(format!("`{name}` is not a valid attribute name"));
    }
    let value = value.trim();
    Ok((
        name,
        expr::parse_literal(value).unwrap_or_else(|| Value::String(value.to_string())),
    ))
}

pub fn cmd_eval_expr(
    expression: &str,
    assignments: &[String],
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let mut attrs = AttrBag::new();
    for raw in assignments {
        match parse_assignment(raw) {
            Ok((name, value)) => {
                attrs.insert(name, value);
            }
            Err(msg) => {
                let _ = writeln!(err, "error: {msg}");
                return EXIT_INVALID;
            }
        }
    }
    let parsed = match expr::parse(expression) {
        Ok(e) => e,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            let _ = writeln!(err, "  {expression}");
            let _ = writeln!(err, "  {}^", " ".repeat(e.offset()));
            return EXIT_INVALID;
        }
    };
    let _ = writeln!(out, "{}", expr::eval(&parsed, &attrs).describe());
    EXIT_OK
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub config: PathBuf,
    pub scenario: PathBuf,
    pub out_dir: PathBuf,
    pub until: Option<u64>,
    pub seed_override: Option<u64>,
    pub backend_override: Option<String>,
}

fn load_scenario(args: &RunArgs, err: &mut dyn Write) -> Result<ScenarioSpec, i32> {
    let text = read(&args.scenario, err)?;
    let mut spec = parse_scenario(&text).map_err(|e| {
        let _ = writeln!(err, "{}: {e}", args.scenario.display());
        EXIT_INVALID
    })?;
    if let Some(until) = args.until {
        spec.horizon_s = until;
    }
    if let Some(seed) = args.seed_override {
        spec.seed = Some(seed);
    }
    if let Some(name) = &args.backend_override {
        let kind: BackendKind = name.parse().map_err(|e| {
            let _ = writeln!(err, "error: {e}");
            EXIT_INVALID
        })?;
        spec.backend = Some(kind);
    }
    Ok(spec)
}

/// Writes every file to a temp name first, then renames them all, so a
/// failure leaves none of the final paths half written.
fn write_atomically(dir: &Path, files: &[(&str, String)]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let mut tmp = NamedTempFile::new_in(dir)?;
        tmp.write_all(contents.as_bytes())?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| e.error)?;
    }
    Ok(())
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let config = match load_config(&args.config, err) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let spec = match load_scenario(args, err) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let sim = match Simulation::new(spec, config) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INVALID;
        }
    };
    let output = sim.run();
    let s = &output.summary;
    for w in &s.backend_warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    for v in s.transition_violations.iter().chain(&s.capacity_violations) {
        let _ = writeln!(err, "invariant violated: {v}");
    }
    let files = [
        ("metrics.csv", metrics_csv(&output.metrics)),
        ("audit.jsonl", output.audit.to_jsonl()),
        ("trace.jsonl", trace_jsonl(&output.trace)),
    ];
    if let Err(e) = write_atomically(&args.out_dir, &files) {
        let _ = writeln!(err, "error: writing to {}: {e}", args.out_dir.display());
        return EXIT_IO;
    }
    let outcome = match s.outcome {
        RunOutcome::Quiescent => "quiescent",
        RunOutcome::HorizonReached => "horizon",
    };
    let _ = writeln!(
        out,
        "{outcome} t={} backend={} jobs_completed={}/{} pods_submitted={} preemptions={} waste_s={}",
        s.end_time,
        s.backend,
        s.jobs_completed,
        s.jobs_total,
        s.pods_submitted,
        s.preemptions,
        s.wasted_worker_idle_seconds
    );
    match s.outcome {
        RunOutcome::Quiescent => EXIT_OK,
        RunOutcome::HorizonReached => EXIT_INCOMPLETE,
    }
}
