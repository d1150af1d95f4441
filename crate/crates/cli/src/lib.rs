//! The `gmvpg` command-line tool: every pipeline stage as a subcommand, plus
//! a manifest-driven `pipeline` runner.
//!
//! Exit codes: 0 on success, 1 on a data or runtime error (reported as one
//! JSON line on stderr), 2 on a usage error.

pub mod args;
pub mod commands;
pub mod io;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde::Serialize;

use crate::args::{Cli, Command, PipelineArgs};
use crate::manifest::{validate_manifest, Manifest};

pub const THREADS_ENV: &str = "GMVPG_THREADS";

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let line = serde_json::json!({
                "error": format!("{e:#}"),
                "command": cli.command.name(),
            });
            eprintln!("{line}");
            1
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_ENV} must be a non-negative integer, got '{v}'"))?,
        Err(_) => 0,
    };
    Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let pool = thread_pool()?;
    pool.install(|| dispatch(&cli.command, &cli.report))
}

fn dispatch(cmd: &Command, report: &Option<PathBuf>) -> Result<()> {
    use crate::commands as c;
    match cmd {
        Command::Synth(a) => c::synth(a, report),
        Command::Dedup(a) => c::dedup(a, report),
        Command::Stats(a) => c::stats(a, report),
        Command::Adapt(a) => c::adapt(a, report),
        Command::Graph(a) => c::graph(a, report),
        Command::Cluster(a) => c::cluster(a, report),
        Command::Correct(a) => c::correct(a, report),
        Command::Centers(a) => c::centers(a, report),
        Command::Score(a) => c::score(a, report),
        Command::Asnorm(a) => c::asnorm(a, report),
        Command::Eval(a) => c::eval(a, report),
        Command::QmfTrain(a) => c::qmf_train(a, report),
        Command::QmfApply(a) => c::qmf_apply(a, report),
        Command::Fuse(a) => c::fuse_cmd(a, report),
        Command::GenTrials(a) => c::gen_trials(a, report),
        Command::Pipeline(a) => pipeline(a, report),
    }
}

#[derive(Serialize)]
struct StageRecord {
    name: String,
    argv: Vec<String>,
    wall_time_s: f64,
}

fn pipeline(a: &PipelineArgs, report: &Option<PathBuf>) -> Result<()> {
    let m: Manifest = crate::io::read_json(&a.manifest)?;
    let base = a
        .manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let plan = match validate_manifest(&m, &base) {
        Ok(p) => p,
        Err(errs) => {
            let msgs: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
            bail!("invalid manifest: {}", msgs.join("; "));
        }
    };
    if a.check {
        println!(
            "{}",
            serde_json::json!({"valid": true, "stages": plan.len()})
        );
        return Ok(());
    }
    let started = Instant::now();
    let mut records = Vec::new();
    for stage in &plan {
        log::info!("running stage '{}'", stage.name);
        let t = Instant::now();
        dispatch(&stage.cli.command, &stage.cli.report)
            .with_context(|| format!("stage '{}'", stage.name))?;
        records.push(StageRecord {
            name: stage.name.clone(),
            argv: stage
                .argv
                .iter()
                .map(|s| s.to_string_lossy().into_owned())
                .collect(),
            wall_time_s: t.elapsed().as_secs_f64(),
        });
    }
    let path = report
        .clone()
        .unwrap_or_else(|| base.join("pipeline.report.json"));
    crate::io::write_json(
        &path,
        &serde_json::json!({
            "command": "pipeline",
            "version": env!("CARGO_PKG_VERSION"),
            "manifest": a.manifest.display().to_string(),
            "manifest_sha256": crate::io::sha256_file(&a.manifest)?,
            "seed": m.seed,
            "stages": records,
            "wall_time_s": started.elapsed().as_secs_f64(),
        }),
    )
}
