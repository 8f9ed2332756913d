//! `fracap`: fractional capacities, asymmetries, deficits and stability
//! checks from the command line.
//!
//! Exit status: 0 when every assertion holds, 1 when an assertion fails,
//! 2 on usage, input or solver errors.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::{MethodArg, Needs, RunArgs, RunConfig};
use std::path::Path;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(
    name = "fracap",
    version,
    about = "Fractional capacities and isocapacitary stability diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print every closed-form constant at (n, s, γ).
    Constants(RunArgs),
    /// s-capacity (or Newtonian capacity with --method classical) of each shape.
    Capacity(RunArgs),
    /// Fraenkel asymmetry of each shape.
    Asymmetry(RunArgs),
    /// Isocapacitary deficit of each shape; fails if any is below −tolerance.
    Deficit(RunArgs),
    /// Full stability report of each shape.
    Verify(RunArgs),
    /// (1−s)·cap_s along an s-ladder, extrapolated to s = 1.
    Sweep(RunArgs),
    /// Empirical exponent of the deficit against the asymmetry over a family.
    Scan(RunArgs),
}

impl Command {
    fn parts(self) -> (&'static str, RunArgs, Needs) {
        let needs = |shapes, order, ladder, default_method| Needs {
            shapes,
            order,
            ladder,
            default_method,
        };
        match self {
            Command::Constants(a) => ("constants", a, needs(false, true, false, MethodArg::Direct)),
            Command::Capacity(a) => ("capacity", a, needs(true, false, false, MethodArg::Direct)),
            Command::Asymmetry(a) => ("asymmetry", a, needs(true, false, false, MethodArg::Direct)),
            Command::Deficit(a) => ("deficit", a, needs(true, true, false, MethodArg::Direct)),
            Command::Verify(a) => ("verify", a, needs(true, true, false, MethodArg::Both)),
            Command::Sweep(a) => ("sweep", a, needs(false, false, true, MethodArg::Direct)),
            Command::Scan(a) => ("scan", a, needs(true, true, false, MethodArg::Direct)),
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("FRACAP_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| format!("FRACAP_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn write_outputs(dir: &Path, files: &[(String, String)], manifest: &str) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let write = |name: &str, body: &str| {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))
    };
    for (name, body) in files {
        write(name, body)?;
    }
    write("manifest.json", manifest)
}

fn run(cli: Cli) -> Result<bool, String> {
    configure_threads()?;
    let (name, args, needs) = cli.command.parts();
    let cfg = RunConfig::build(args.resolve()?, needs)?;
    if cfg.method == MethodArg::Classical && name != "capacity" {
        return Err("--method classical is only available for `capacity`".into());
    }
    let outcome = match name {
        "constants" => commands::constants(&cfg),
        "capacity" => commands::capacity(&cfg),
        "asymmetry" => commands::asymmetry(&cfg),
        "deficit" => commands::deficit_cmd(&cfg),
        "verify" => commands::verify(&cfg),
        "sweep" => commands::sweep(&cfg),
        "scan" => commands::scan(&cfg),
        _ => unreachable!("every subcommand is dispatched"),
    }?;
    let status = if outcome.passed { 0 } else { 1 };
    if let Some(dir) = &cfg.out {
        write_outputs(
            dir,
            &outcome.files,
            &commands::manifest(name, &cfg, &outcome, status),
        )?;
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome.stdout).expect("output serialises")
    );
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("fracap: {msg}");
            ExitCode::from(2)
        }
    }
}
