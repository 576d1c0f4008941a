mod args;
mod commands;
mod output;

use std::ffi::OsString;
use std::io::Write;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::Parser;
use serde_json::{json, Value as Json};

use args::{Cli, Command, Format};
use commands::UsageError;
use output::{manifest_path, write_file, Output, RunManifest};

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_OVER_BUDGET: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_IO: u8 = 5;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<biocap::Error>() {
            return match e {
                biocap::Error::Domain(_) => EXIT_USAGE,
                biocap::Error::OverBudget(_) => EXIT_OVER_BUDGET,
                biocap::Error::Infeasible(_) => EXIT_INFEASIBLE,
                biocap::Error::DegenerateFit(_) => EXIT_OTHER,
            };
        }
        if cause.is::<UsageError>() || cause.is::<clap::Error>() {
            return EXIT_USAGE;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            if e.is_io_error() {
                return EXIT_IO;
            }
        }
    }
    EXIT_OTHER
}

/// Arguments with `--out` removed, so a rerun can write elsewhere.
fn recorded_argv(raw: &[OsString]) -> Vec<String> {
    let mut argv = Vec::new();
    let mut skip = false;
    for a in raw {
        let a = a.to_string_lossy().into_owned();
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            argv.push(a);
        }
    }
    argv
}

fn params(cli: &Cli) -> Result<Json> {
    let args = match &cli.command {
        Command::Collision(a) => serde_json::to_value(a)?,
        Command::Accept(a) => serde_json::to_value(a)?,
        Command::Plan(a) => serde_json::to_value(a)?,
        Command::Sweep(a) => serde_json::to_value(a)?,
        Command::Fit(a) => serde_json::to_value(a)?,
        Command::Dbtable(a) => serde_json::to_value(a)?,
        Command::Simulate(a) => serde_json::to_value(a)?,
        Command::Rerun(_) => Json::Null,
    };
    Ok(json!({ "global": cli.global, "args": args }))
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Collision(_) => "collision",
        Command::Accept(_) => "accept",
        Command::Plan(_) => "plan",
        Command::Sweep(_) => "sweep",
        Command::Fit(_) => "fit",
        Command::Dbtable(_) => "dbtable",
        Command::Simulate(_) => "simulate",
        Command::Rerun(_) => "rerun",
    }
}

fn new_manifest(cli: &Cli, raw: &[OsString]) -> Result<RunManifest> {
    let seeds = match &cli.command {
        Command::Simulate(a) => vec![a.seed],
        _ => Vec::new(),
    };
    Ok(RunManifest {
        command: command_name(&cli.command).to_string(),
        argv: recorded_argv(raw),
        params: params(cli)?,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds,
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        generator: biocap::simulator::GENERATOR.to_string(),
    })
}

fn compute(cmd: &Command) -> Result<Output> {
    match cmd {
        Command::Collision(a) => commands::collision(a),
        Command::Accept(a) => {
            commands::check_noise(&a.noise)?;
            commands::accept(a)
        }
        Command::Plan(a) => {
            commands::check_noise(&a.noise)?;
            commands::plan(a)
        }
        Command::Sweep(a) => commands::sweep(a),
        Command::Fit(a) => commands::fit(a),
        Command::Dbtable(a) => commands::dbtable(a),
        Command::Simulate(a) => {
            commands::check_noise(&a.noise)?;
            commands::simulate(a)
        }
        Command::Rerun(_) => unreachable!("rerun is resolved before compute"),
    }
}

fn emit(cli: &Cli, out_override: Option<&std::path::Path>, manifest: &RunManifest) -> Result<()> {
    let output = compute(&cli.command)?;
    let rendered = output.render(cli.global.format, cli.global.log, manifest)?;
    match out_override.or(cli.global.out.as_deref()) {
        Some(path) => {
            write_file(path, &rendered)?;
            if cli.global.format != Format::Json {
                write_file(&manifest_path(path), &(serde_json::to_string_pretty(manifest)? + "\n"))?;
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(rendered.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn load_manifest(path: &std::path::Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let doc: Json = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    let m = doc.get("manifest").cloned().unwrap_or(doc);
    serde_json::from_value(m).with_context(|| format!("{} holds no run manifest", path.display()))
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(UsageError("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    Ok(())
}

fn run(raw: Vec<OsString>) -> Result<()> {
    let cli = Cli::try_parse_from(raw.iter())?;
    set_threads(cli.global.threads)?;
    if let Command::Rerun(r) = &cli.command {
        let manifest = load_manifest(&r.manifest)?;
        let mut argv: Vec<OsString> = vec!["biocap".into()];
        argv.extend(manifest.argv.iter().map(OsString::from));
        let replay = Cli::try_parse_from(argv)?;
        if matches!(replay.command, Command::Rerun(_)) {
            return Err(UsageError("a manifest cannot record a rerun".into()).into());
        }
        return emit(&replay, cli.global.out.as_deref(), &manifest);
    }
    let manifest = new_manifest(&cli, &raw[1..])?;
    emit(&cli, None, &manifest)
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(c) = e.downcast_ref::<clap::Error>() {
                let _ = c.print();
                return ExitCode::from(if c.use_stderr() { EXIT_USAGE } else { 0 });
            }
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
