//! File helpers shared by the subcommands.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use gmvpg_core::model::{
    parse_labels, parse_scores, parse_trials, read_embeddings, write_embeddings, write_labels,
    write_scores, write_trials,
};
use gmvpg_core::{EmbeddingSet, Partition, ScoreSet, Trial, ViewBundle};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

/// Writes through a buffered file, creating parent directories.
pub fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_emb(path: &Path) -> Result<EmbeddingSet> {
    read_embeddings(open(path)?).with_context(|| format!("reading {}", path.display()))
}

pub fn write_emb(path: &Path, set: &EmbeddingSet) -> Result<()> {
    write_with(path, |w| Ok(write_embeddings(set, w)?))
}

pub fn read_bundle(paths: &[impl AsRef<Path>]) -> Result<ViewBundle> {
    if paths.is_empty() {
        bail!("at least one view file is required");
    }
    let views = paths
        .iter()
        .map(|p| read_emb(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewBundle::new(views)?)
}

pub fn read_labels(path: &Path) -> Result<Partition> {
    parse_labels(open(path)?).with_context(|| format!("reading {}", path.display()))
}

pub fn write_labels_file(path: &Path, labels: &Partition) -> Result<()> {
    write_with(path, |w| Ok(write_labels(labels, w)?))
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    parse_trials(open(path)?).with_context(|| format!("reading {}", path.display()))
}

pub fn write_trials_file(path: &Path, trials: &[Trial]) -> Result<()> {
    write_with(path, |w| Ok(write_trials(trials, w)?))
}

pub fn read_scores(path: &Path) -> Result<ScoreSet> {
    parse_scores(open(path)?).with_context(|| format!("reading {}", path.display()))
}

pub fn write_scores_file(path: &Path, scores: &ScoreSet) -> Result<()> {
    write_with(path, |w| Ok(write_scores(scores, w)?))
}

/// Whitespace-separated numeric rows, one per trial.
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}: bad number", path.display(), n + 1))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_with(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}
