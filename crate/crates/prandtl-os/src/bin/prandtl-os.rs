// SPDX-License-Identifier: Apache-2.0 OR MIT

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use prandtl_os::cli_runner::{error_record, run, ExperimentConfig, OUT_ENV};
use prandtl_os::Error;

/// Orr-Sommerfeld / semigroup experiments for boundary-layer shear flows.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config and the PRANDTL_OS_OUT variable.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Seed for random ensembles.
    #[arg(long)]
    seed: Option<u64>,
    /// Subcommand; overrides `run.subcommand`.
    subcommand: Option<String>,
}

fn load(args: &Args) -> Result<ExperimentConfig, Error> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(sub) = &args.subcommand {
        if !prandtl_os::cli_runner::config::SUBCOMMANDS.contains(&sub.as_str()) {
            return Err(Error::Config { line: 0, msg: format!("unknown subcommand `{sub}`") });
        }
        cfg.run.subcommand = sub.clone();
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.run.out = o.clone();
    } else if let Some(o) = std::env::var_os(OUT_ENV) {
        cfg.run.out = PathBuf::from(o);
    }
    Ok(cfg)
}

fn fail(e: &Error, out: Option<&PathBuf>) -> ExitCode {
    let rec = error_record(e);
    eprint!("error:\n{rec}");
    if let Some(dir) = out {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("error.txt"), &rec);
        }
    }
    ExitCode::from(if matches!(e, Error::Config { .. }) { 2 } else { 1 })
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(j) = args.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: cannot size worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let cfg = match load(&args) {
        Ok(c) => c,
        Err(e) => return fail(&e, args.out.as_ref()),
    };
    match run(&cfg) {
        Ok(o) => {
            println!("{}", o.summary);
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            if o.failed > 0 {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => fail(&e, Some(&cfg.run.out)),
    }
}
