//! `simulate`: runs one scenario and writes its outputs and manifest.
//!
//! Output directory precedence: `--out`, then `output.dir` in the config,
//! then `$SPINFRINGE_OUT/<scenario>`, then `runs/<scenario>`.

use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use spinfringe::{load_config, run_scenario, ConfigSources, Error, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "simulate", version, about = "Run a spin-resolved grating diffraction scenario")]
struct Args {
    /// TOML config file, or `-` for stdin. Omit to run a preset as-is.
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Scenario preset underneath the config: selffield, field_free,
    /// b1_sweep, b2_filter or husimi_sweep.
    #[arg(long)]
    preset: Option<String>,

    /// Dotted `key=value` applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,

    /// Default root for output directories.
    #[arg(long, env = "SPINFRINGE_OUT", hide = true)]
    out_root: Option<PathBuf>,
}

fn fail(kind: &str, message: String, path: Option<String>) -> ExitCode {
    let mut line = json!({ "status": "error", "kind": kind, "message": message });
    if let Some(p) = path {
        line["path"] = json!(p);
    }
    eprintln!("{line}");
    ExitCode::FAILURE
}

fn fail_with(e: Error) -> ExitCode {
    let path = match &e {
        Error::Parse { path, .. } => Some(path.clone()),
        Error::Io { path, .. } => Some(path.display().to_string()),
        _ => None,
    };
    fail(e.kind(), e.to_string(), path)
}

fn read_config(path: &Option<PathBuf>) -> Result<String, Error> {
    match path {
        None => Ok(String::new()),
        Some(p) if p.as_os_str() == "-" => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| Error::Io { path: "<stdin>".into(), source: e })?;
            Ok(s)
        }
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e }),
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string(), None),
    };
    if args.threads == Some(0) {
        return fail("usage", "--threads must be at least 1".into(), None);
    }
    let text = match read_config(&args.config) {
        Ok(t) => t,
        Err(e) => return fail_with(e),
    };
    let sources = ConfigSources {
        text,
        preset: args.preset.clone(),
        overrides: args.overrides.clone(),
    };
    let cfg = match load_config(&sources) {
        Ok(c) => c,
        Err(e) => return fail_with(e),
    };
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| {
            args.out_root
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(cfg.scenario.name())
        });
    let opts = RunOptions {
        out_dir,
        threads: args.threads,
    };
    match run_scenario(&cfg, &opts) {
        Ok(outcome) => {
            let m = &outcome.manifest;
            let line = json!({
                "status": "ok",
                "scenario": m.scenario,
                "variant": m.variant,
                "out_dir": outcome.out_dir.display().to_string(),
                "config_hash": m.config_hash,
                "outputs": m.outputs.len(),
                "wall_clock_s": m.wall_clock_s,
            });
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => fail_with(e),
    }
}
