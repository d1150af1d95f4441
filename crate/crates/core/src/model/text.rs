//! Line-oriented text formats for labels, trials and scores.

use std::io::{BufRead, Write};

use super::{Partition, ScoreSet, Trial, TrialKey};
use crate::{Error, Result};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Iterates non-empty lines with their 1-based line numbers.
fn lines<R: BufRead>(src: R) -> impl Iterator<Item = Result<(usize, String)>> {
    src.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Ok((i + 1, l))),
        Err(e) => Some(Err(Error::Io(e))),
    })
}

/// `utt_id<TAB>label` per line.
pub fn parse_labels<R: BufRead>(src: R) -> Result<Partition> {
    let mut out = Partition::new();
    for item in lines(src) {
        let (n, line) = item?;
        let mut parts = line.split('\t');
        let (Some(id), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(n, "expected 'utt_id<TAB>label'"));
        };
        if id.is_empty() {
            return Err(parse_err(n, "empty utterance id"));
        }
        let label: i64 = label
            .trim()
            .parse()
            .map_err(|_| parse_err(n, format!("invalid label '{label}'")))?;
        if label < -1 {
            return Err(parse_err(n, format!("label {label} is below -1")));
        }
        if out.get(id).is_some() {
            return Err(parse_err(n, format!("duplicate utterance id '{id}'")));
        }
        out.insert(id, label)?;
    }
    Ok(out)
}

pub fn write_labels<W: Write>(labels: &Partition, mut out: W) -> Result<()> {
    for (id, label) in labels.iter() {
        writeln!(out, "{id}\t{label}")?;
    }
    out.flush()?;
    Ok(())
}

/// `enroll_id test_id key` per line, key one of target/nontarget/unknown.
pub fn parse_trials<R: BufRead>(src: R) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    for item in lines(src) {
        let (n, line) = item?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [enroll, test, key] = fields[..] else {
            return Err(parse_err(n, "expected 'enroll_id test_id key'"));
        };
        let key: TrialKey = key.parse().map_err(|e: String| parse_err(n, e))?;
        out.push(Trial::new(enroll, test, key));
    }
    Ok(out)
}

pub fn write_trials<W: Write>(trials: &[Trial], mut out: W) -> Result<()> {
    for t in trials {
        writeln!(out, "{} {} {}", t.enroll, t.test, t.key)?;
    }
    out.flush()?;
    Ok(())
}

/// `enroll_id test_id score` per line.
pub fn parse_scores<R: BufRead>(src: R) -> Result<ScoreSet> {
    let mut out = ScoreSet::new();
    for item in lines(src) {
        let (n, line) = item?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [enroll, test, score] = fields[..] else {
            return Err(parse_err(n, "expected 'enroll_id test_id score'"));
        };
        let score: f64 = score
            .parse()
            .map_err(|_| parse_err(n, format!("invalid score '{score}'")))?;
        if !score.is_finite() {
            return Err(parse_err(n, "score is not finite"));
        }
        out.push(enroll, test, score);
    }
    Ok(out)
}

/// Scores are printed with six decimal places.
pub fn write_scores<W: Write>(scores: &ScoreSet, mut out: W) -> Result<()> {
    for s in &scores.scores {
        writeln!(out, "{} {} {:.6}", s.enroll, s.test, s.score)?;
    }
    out.flush()?;
    Ok(())
}
