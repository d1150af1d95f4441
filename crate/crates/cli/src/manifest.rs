//! Pipeline manifests: a JSON list of stages, each one subcommand with its
//! flags given as a parameter map.
//!
//! ```json
//! {"version": "1", "seed": 7, "stages": [
//!   {"name": "synth", "command": "synth", "params": {"out-dir": "data", "speakers": 20}}
//! ]}
//! ```
//!
//! Relative paths resolve against the manifest's directory. A stage whose
//! command takes `--seed` and does not set it gets a seed derived from the
//! manifest seed and the stage name.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt;
use std::path::{Component, Path, PathBuf};

use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::args::{Cli, Command};
use crate::commands::cluster_configs;

pub const MANIFEST_VERSION: &str = "1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub name: String,
    pub command: String,
    #[serde(default)]
    pub params: serde_json::Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestError {
    pub stage: Option<String>,
    pub message: String,
}

impl fmt::Display for ManifestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.stage {
            Some(s) => write!(f, "stage '{s}': {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Flags naming files read, files written and directories written.
struct IoFlags {
    inputs: &'static [&'static str],
    outputs: &'static [&'static str],
    out_dirs: &'static [&'static str],
    seeded: bool,
}

fn io_flags(command: &str) -> Option<IoFlags> {
    let f = |inputs, outputs, out_dirs, seeded| {
        Some(IoFlags {
            inputs,
            outputs,
            out_dirs,
            seeded,
        })
    };
    match command {
        "synth" => f(&["shift", "transform"], &[], &["out-dir"], true),
        "dedup" => f(&["views"], &[], &["out-dir"], false),
        "stats" => f(&["in"], &["out"], &[], false),
        "adapt" => f(
            &["in", "source-stats", "target-stats"],
            &["out"],
            &[],
            false,
        ),
        "graph" => f(&["views"], &["out"], &[], false),
        "cluster" => f(&["views"], &["out", "audit"], &[], true),
        "correct" => f(&["views", "labels"], &["out", "audit"], &[], false),
        "centers" => f(&["in", "labels"], &["out"], &[], false),
        "score" => f(&["trials", "enroll", "test"], &["out"], &[], false),
        "asnorm" => f(
            &["scores", "enroll", "test", "cohort"],
            &["out"],
            &[],
            false,
        ),
        "eval" => f(&["scores", "trials"], &["out"], &[], false),
        "qmf-train" => f(&["scores", "trials", "quality"], &["out"], &[], false),
        "qmf-apply" => f(&["scores", "quality", "model"], &["out"], &[], false),
        "fuse" => f(&["scores", "model"], &["out"], &[], false),
        "gen-trials" => f(
            &["labels", "purity", "truth", "labeled"],
            &["out"],
            &[],
            true,
        ),
        _ => None,
    }
}

/// First eight bytes of `sha256("<seed>:<stage name>")`, little endian.
pub fn stage_seed(seed: u64, name: &str) -> u64 {
    let d = Sha256::digest(format!("{seed}:{name}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Lexical normalization; the files need not exist yet.
fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other),
        }
    }
    out
}

fn resolve(base: &Path, s: &str) -> PathBuf {
    normalize(&base.join(s))
}

fn key(k: &str) -> String {
    k.replace('_', "-")
}

/// String values of a path flag (one or many).
fn path_values(v: &Value) -> Vec<&str> {
    match v {
        Value::String(s) => vec![s.as_str()],
        Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
        _ => Vec::new(),
    }
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

#[derive(Debug)]
pub struct PlannedStage {
    pub name: String,
    pub argv: Vec<OsString>,
    pub cli: Cli,
}

struct Produced {
    stage: usize,
    path: PathBuf,
    dir: bool,
}

impl Produced {
    fn covers(&self, p: &Path) -> bool {
        if self.dir {
            p.starts_with(&self.path)
        } else {
            p == self.path
        }
    }
}

/// Checks the whole manifest before anything runs and turns every stage into
/// a parsed command line.
pub fn validate_manifest(
    m: &Manifest,
    base: &Path,
) -> Result<Vec<PlannedStage>, Vec<ManifestError>> {
    let mut errors = Vec::new();
    let err = |stage: Option<&str>, message: String| ManifestError {
        stage: stage.map(String::from),
        message,
    };
    if m.version != MANIFEST_VERSION {
        errors.push(err(
            None,
            format!("unsupported manifest version '{}'", m.version),
        ));
    }
    let mut names = BTreeSet::new();
    for s in &m.stages {
        if s.name.is_empty() {
            errors.push(err(None, "stage with empty name".into()));
        } else if !names.insert(s.name.as_str()) {
            errors.push(err(Some(&s.name), "duplicate stage name".into()));
        }
    }

    // Everything each stage writes, for ordering checks.
    let mut produced: Vec<Produced> = Vec::new();
    for (i, s) in m.stages.iter().enumerate() {
        let Some(flags) = io_flags(&s.command) else {
            continue;
        };
        for (k, v) in &s.params {
            let k = key(k);
            let dir = flags.out_dirs.contains(&k.as_str());
            if dir || flags.outputs.contains(&k.as_str()) || k == "report" {
                for p in path_values(v) {
                    produced.push(Produced {
                        stage: i,
                        path: resolve(base, p),
                        dir,
                    });
                }
            }
        }
    }

    let mut planned = Vec::new();
    for (i, s) in m.stages.iter().enumerate() {
        let name = s.name.as_str();
        let Some(flags) = io_flags(&s.command) else {
            errors.push(err(Some(name), format!("unknown command '{}'", s.command)));
            continue;
        };
        let mut argv: Vec<OsString> = vec!["gmvpg".into(), s.command.clone().into()];
        let mut stage_ok = true;
        for (k, v) in &s.params {
            let k = key(k);
            let is_input = flags.inputs.contains(&k.as_str());
            let is_path = is_input
                || flags.outputs.contains(&k.as_str())
                || flags.out_dirs.contains(&k.as_str())
                || k == "report";
            if is_input {
                for p in path_values(v) {
                    let path = resolve(base, p);
                    let own = produced.iter().any(|o| o.stage == i && o.covers(&path));
                    let earlier = produced.iter().any(|o| o.stage < i && o.covers(&path));
                    let later = produced.iter().find(|o| o.stage > i && o.covers(&path));
                    if own {
                        errors.push(err(
                            Some(name),
                            format!("cycle: reads its own output {}", path.display()),
                        ));
                        stage_ok = false;
                    } else if earlier {
                    } else if let Some(o) = later {
                        errors.push(err(
                            Some(name),
                            format!(
                                "cycle: input {} is produced by later stage '{}'",
                                path.display(),
                                m.stages[o.stage].name
                            ),
                        ));
                        stage_ok = false;
                    } else if !path.exists() {
                        errors.push(err(Some(name), format!("missing input {}", path.display())));
                        stage_ok = false;
                    }
                }
            }
            match v {
                Value::Bool(true) => argv.push(format!("--{k}").into()),
                Value::Bool(false) | Value::Null => {}
                Value::Array(items) if items.iter().all(Value::is_number) => {
                    let joined: Vec<String> = items.iter().filter_map(scalar).collect();
                    argv.push(format!("--{k}").into());
                    argv.push(joined.join(",").into());
                }
                Value::Array(items) => {
                    argv.push(format!("--{k}").into());
                    for it in items {
                        match (scalar(it), is_path) {
                            (Some(x), true) => argv.push(resolve(base, &x).into()),
                            (Some(x), false) => argv.push(x.into()),
                            (None, _) => {
                                errors.push(err(
                                    Some(name),
                                    format!("parameter '{k}' has a nested value"),
                                ));
                                stage_ok = false;
                            }
                        }
                    }
                }
                other => match scalar(other) {
                    Some(x) => {
                        argv.push(format!("--{k}").into());
                        argv.push(if is_path {
                            resolve(base, &x).into()
                        } else {
                            x.into()
                        });
                    }
                    None => {
                        errors.push(err(
                            Some(name),
                            format!("parameter '{k}' must be a scalar or a list"),
                        ));
                        stage_ok = false;
                    }
                },
            }
        }
        if flags.seeded && !s.params.contains_key("seed") {
            argv.push("--seed".into());
            argv.push(stage_seed(m.seed, name).to_string().into());
        }
        let cli = match Cli::try_parse_from(&argv) {
            Ok(c) => c,
            Err(e) => {
                let msg = e.to_string();
                let first = msg
                    .lines()
                    .next()
                    .unwrap_or("invalid arguments")
                    .trim_start_matches("error: ");
                errors.push(err(Some(name), format!("bad parameters: {first}")));
                continue;
            }
        };
        if let Err(e) = check_ranges(&cli.command) {
            errors.push(err(Some(name), e));
            continue;
        }
        if stage_ok {
            planned.push(PlannedStage {
                name: name.to_string(),
                argv,
                cli,
            });
        }
    }
    if errors.is_empty() {
        Ok(planned)
    } else {
        Err(errors)
    }
}

/// Parameter range checks that need no input data.
fn check_ranges(c: &Command) -> Result<(), String> {
    use gmvpg_core::correction::{CenterMode, CorrectionConfig};
    let e = |x: gmvpg_core::Error| x.to_string();
    match c {
        Command::Cluster(a) => {
            let (g, k) = cluster_configs(a);
            g.validate().map_err(e)?;
            k.validate().map_err(e)?;
        }
        Command::Graph(a) => gmvpg_core::graph::GraphConfig {
            big_k: a.big_k,
            k_init: a.k,
            k_final: a.k,
            th_high: a.th_high,
            ..Default::default()
        }
        .validate()
        .map_err(e)?,
        Command::Correct(a) => CorrectionConfig {
            th_top1: a.th_top1,
            th_top2: a.th_top2,
            vote: a.vote.into(),
            min_support: a.min_support,
            low_fraction: a.low_fraction,
            centers: if a.raw_centers {
                CenterMode::Mean
            } else {
                CenterMode::Normalized
            },
            ..Default::default()
        }
        .validate()
        .map_err(e)?,
        Command::Synth(a) => gmvpg_core::synth::SynthConfig {
            speakers: a.speakers,
            utts_min: a.utts,
            utts_max: a.utts_max.unwrap_or(a.utts),
            extra_speakers: a.extra_speakers.clone(),
            dim: a.dim,
            views: a.views,
            intra_noise: a.noise,
            duplicate_fraction: a.duplicate_fraction,
            split_speaker_fraction: a.split_fraction,
            ..Default::default()
        }
        .validate()
        .map_err(e)?,
        Command::Eval(a) => gmvpg_core::backend::MetricParams {
            p_target: a.p_target,
            c_fa: a.c_fa,
            c_miss: a.c_miss,
            normalized: !a.raw_dcf,
        }
        .validate()
        .map_err(e)?,
        Command::GenTrials(a) => {
            if a.total == 0 || a.total % 2 != 0 {
                return Err("invalid parameter total: must be a positive even number".into());
            }
            if a.segments < 2 {
                return Err("invalid parameter segments: need at least 2".into());
            }
        }
        Command::Asnorm(a) if a.top_n == 0 => {
            return Err("invalid parameter top_n: must be positive".into())
        }
        Command::QmfTrain(a) if !(a.lr > 0.0 && a.l2 >= 0.0) => {
            return Err("invalid parameter lr/l2: lr must be positive and l2 non-negative".into())
        }
        Command::Pipeline(_) => return Err("pipelines cannot be nested".into()),
        _ => {}
    }
    Ok(())
}
