//! Exact-content deduplication.
//!
//! Items are bucketed by SHA-256 digest; a digest match is confirmed by a
//! byte-for-byte comparison before an item is declared a duplicate, so hash
//! collisions can never merge distinct content.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{EmbeddingSet, ViewBundle};
use crate::Result;

type Digest32 = [u8; 32];

/// Indices into the input list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DedupOutcome {
    /// First occurrence of every distinct content, in input order.
    pub kept: Vec<usize>,
    /// `(dropped, representative)` pairs, in input order of `dropped`.
    pub duplicates: Vec<(usize, usize)>,
}

fn digest(bytes: &[u8]) -> Digest32 {
    Sha256::digest(bytes).into()
}

/// Shared decision pass: sequential in input order, first occurrence wins.
fn decide(
    digests: &[Digest32],
    mut same_content: impl FnMut(usize, usize) -> Result<bool>,
) -> Result<DedupOutcome> {
    let mut buckets: HashMap<Digest32, Vec<usize>> = HashMap::new();
    let mut out = DedupOutcome::default();
    for (i, d) in digests.iter().enumerate() {
        let reps = buckets.entry(*d).or_default();
        let mut found = None;
        for &r in reps.iter() {
            if same_content(r, i)? {
                found = Some(r);
                break;
            }
        }
        match found {
            Some(r) => out.duplicates.push((i, r)),
            None => {
                reps.push(i);
                out.kept.push(i);
            }
        }
    }
    Ok(out)
}

/// Deduplicates in-memory byte buffers.
pub fn dedup_by_content_hash<B: AsRef<[u8]> + Sync>(items: &[B]) -> Result<DedupOutcome> {
    let digests: Vec<Digest32> = items.par_iter().map(|b| digest(b.as_ref())).collect();
    decide(&digests, |a, b| Ok(items[a].as_ref() == items[b].as_ref()))
}

fn digest_file(path: &Path) -> Result<Digest32> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().into())
}

fn files_equal(a: &Path, b: &Path) -> Result<bool> {
    let mut ra = BufReader::new(File::open(a)?);
    let mut rb = BufReader::new(File::open(b)?);
    let mut ba = [0u8; 64 * 1024];
    let mut bb = [0u8; 64 * 1024];
    loop {
        let na = read_full(&mut ra, &mut ba)?;
        let nb = read_full(&mut rb, &mut bb)?;
        if na != nb || ba[..na] != bb[..nb] {
            return Ok(false);
        }
        if na == 0 {
            return Ok(true);
        }
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}

/// Deduplicates files by content. Hashing runs in parallel; an unreadable
/// file aborts with its I/O error.
pub fn dedup_files<P: AsRef<Path> + Sync>(paths: &[P]) -> Result<DedupOutcome> {
    let digests = paths
        .par_iter()
        .map(|p| digest_file(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let owned: Vec<PathBuf> = paths.iter().map(|p| p.as_ref().to_path_buf()).collect();
    decide(&digests, |a, b| files_equal(&owned[a], &owned[b]))
}

/// Drops utterances whose vectors are byte-identical to an earlier utterance
/// in every view. Returns the filtered bundle and the report over utterance
/// indices.
pub fn dedup_embeddings(bundle: &ViewBundle) -> Result<(ViewBundle, DedupOutcome)> {
    let records: Vec<Vec<u8>> = (0..bundle.len())
        .map(|i| {
            let mut b = Vec::new();
            for view in bundle.views() {
                for x in view.row(i) {
                    b.extend_from_slice(&x.to_le_bytes());
                }
            }
            b
        })
        .collect();
    let outcome = dedup_by_content_hash(&records)?;
    let views = bundle
        .views()
        .iter()
        .map(|v| v.select(&outcome.kept))
        .collect::<Result<Vec<EmbeddingSet>>>()?;
    Ok((ViewBundle::new(views)?, outcome))
}
