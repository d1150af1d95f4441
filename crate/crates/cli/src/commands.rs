//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gmvpg_core::adaptation::{compute_stats, coral_transform, mean_align, DomainStats};
use gmvpg_core::backend::{
    apply_qmf, as_norm, compute_eer, compute_mindcf, cosine_score, fuse, fuse_with_model,
    generate_dev_trials, split_by_key, stack_scores, train_logreg, AsNormConfig, LogRegConfig,
    LogRegModel, MetricParams, TrialGenConfig,
};
use gmvpg_core::cluster::{gmvpg_cluster, CombineConfig};
use gmvpg_core::correction::{class_centers, correct_bundle, CenterMode, CorrectionConfig};
use gmvpg_core::graph::{build_neighbor_tables, hub_filter, voting_edges, GraphConfig};
use gmvpg_core::model::dedup_embeddings;
use gmvpg_core::synth::{eval_partition, gen_corpus, SynthConfig};
use gmvpg_core::{EmbeddingSet, TrialKey};
use serde::Serialize;

use crate::args::*;
use crate::io::*;
use crate::report::{default_report_path, Recorder};

fn report_path(over: &Option<PathBuf>, primary: &Path) -> PathBuf {
    over.clone().unwrap_or_else(|| default_report_path(primary))
}

pub fn view_file_name(t: usize) -> String {
    format!("view{t}.emb")
}

pub fn synth(a: &SynthArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("synth", a);
    let mut cfg = SynthConfig {
        speakers: a.speakers,
        utts_min: a.utts,
        utts_max: a.utts_max.unwrap_or(a.utts),
        extra_speakers: a.extra_speakers.clone(),
        dim: a.dim,
        views: a.views,
        intra_noise: a.noise,
        duplicate_fraction: a.duplicate_fraction,
        split_speaker_fraction: a.split_fraction,
        max_prototype_cosine: a.max_prototype_cosine,
        seed: a.seed,
        ..SynthConfig::default()
    };
    if let Some(p) = &a.shift {
        cfg.domain_shift = Some(read_json(p)?);
        rec.input(p);
    }
    if let Some(p) = &a.transform {
        cfg.transform = Some(read_json(p)?);
        rec.input(p);
    }
    let corpus = gen_corpus(&cfg)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (t, view) in corpus.bundle.views().iter().enumerate() {
        let p = a.out_dir.join(view_file_name(t));
        write_emb(&p, view)?;
        rec.output(&p);
    }
    let truth = a.out_dir.join("truth.tsv");
    write_labels_file(&truth, &corpus.truth)?;
    rec.output(&truth);
    if !corpus.meta.split_speakers.is_empty() {
        let p = a.out_dir.join("split_labels.tsv");
        write_labels_file(&p, &corpus.meta.split_labels)?;
        rec.output(&p);
    }
    let meta = a.out_dir.join("meta.json");
    write_json(
        &meta,
        &serde_json::json!({
            "max_prototype_cosine": corpus.meta.max_prototype_cosine,
            "split_speakers": corpus.meta.split_speakers,
            "duplicates": corpus.meta.duplicates,
            "utterances": corpus.bundle.len(),
            "speakers": corpus.truth.num_classes(),
        }),
    )?;
    rec.output(&meta);
    rec.note("utterances", corpus.bundle.len());
    rec.finish(
        &report
            .clone()
            .unwrap_or_else(|| a.out_dir.join("synth.report.json")),
    )
}

pub fn dedup(a: &DedupArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("dedup", a);
    let bundle = read_bundle(&a.views)?;
    a.views.iter().for_each(|p| rec.input(p));
    let (out, outcome) = dedup_embeddings(&bundle)?;
    let mut names = BTreeSet::new();
    for (path, view) in a.views.iter().zip(out.views()) {
        let name = path.file_name().context("view path has no file name")?;
        if !names.insert(name.to_owned()) {
            bail!("two views share the file name {}", name.to_string_lossy());
        }
        let p = a.out_dir.join(name);
        write_emb(&p, view)?;
        rec.output(&p);
    }
    let dup_path = a.out_dir.join("duplicates.tsv");
    write_with(&dup_path, |w| {
        use std::io::Write;
        for &(d, k) in &outcome.duplicates {
            writeln!(w, "{}\t{}", bundle.ids()[d], bundle.ids()[k])?;
        }
        Ok(())
    })?;
    rec.output(&dup_path);
    rec.note("kept", outcome.kept.len());
    rec.note("removed", outcome.duplicates.len());
    rec.finish(
        &report
            .clone()
            .unwrap_or_else(|| a.out_dir.join("dedup.report.json")),
    )
}

pub fn stats(a: &StatsArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("stats", a);
    let set = read_emb(&a.input)?;
    rec.input(&a.input);
    write_json(&a.out, &compute_stats(&set)?)?;
    rec.output(&a.out);
    rec.finish(&report_path(report, &a.out))
}

pub fn adapt(a: &AdaptArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("adapt", a);
    let set = read_emb(&a.input)?;
    rec.input(&a.input);
    let source: DomainStats = read_json(&a.source_stats)?;
    rec.input(&a.source_stats);
    source.validate()?;
    let own = compute_stats(&set)?;
    let target = match &a.target_stats {
        Some(p) => {
            rec.input(p);
            let t: DomainStats = read_json(p)?;
            t.validate()?;
            Some(t)
        }
        None => None,
    };
    // (statistics of the input, statistics to move onto)
    let (from, to) = match a.direction {
        Direction::ToSource => (target.unwrap_or(own), source),
        Direction::ToTarget => {
            let t = target.context("--direction to-target needs --target-stats")?;
            (own, t)
        }
    };
    let out = match a.mode {
        AdaptMode::Mean => mean_align(&set, &from, &to)?,
        AdaptMode::Coral => coral_transform(&set, &from, &to, a.ridge)?,
    };
    write_emb(&a.out, &out)?;
    rec.output(&a.out);
    rec.finish(&report_path(report, &a.out))
}

pub fn graph(a: &GraphArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("graph", a);
    let bundle = read_bundle(&a.views)?;
    a.views.iter().for_each(|p| rec.input(p));
    let cfg = GraphConfig {
        big_k: a.big_k,
        k_init: a.k,
        k_final: a.k,
        th_high: a.th_high,
        rule: a.rule.into(),
        ..GraphConfig::default()
    };
    cfg.validate()?;
    let cfg = cfg.capped_for(bundle.len());
    let tables = build_neighbor_tables(&bundle, cfg.big_k)?;
    let survivors = hub_filter(&tables, cfg.th_high);
    let edges = voting_edges(&tables, cfg.k_init, &survivors, cfg.rule)?;
    let ids = bundle.ids();
    let mut lines: Vec<(&str, &str)> = edges
        .iter()
        .map(|&(i, j)| {
            let (x, y) = (ids[i].as_str(), ids[j].as_str());
            if x < y {
                (x, y)
            } else {
                (y, x)
            }
        })
        .collect();
    lines.sort_unstable();
    write_with(&a.out, |w| {
        use std::io::Write;
        for (x, y) in &lines {
            writeln!(w, "{x}\t{y}")?;
        }
        Ok(())
    })?;
    rec.output(&a.out);
    rec.note("edges", lines.len());
    rec.note("hub_filtered", survivors.iter().filter(|&&s| !s).count());
    rec.note("effective_config", &cfg);
    rec.finish(&report_path(report, &a.out))
}

pub fn cluster_configs(a: &ClusterArgs) -> (GraphConfig, CombineConfig) {
    (
        GraphConfig {
            big_k: a.big_k,
            k_init: a.k_init,
            k_step: a.k_step,
            k_final: a.k_final,
            th_high: a.th_high,
            min_class_size: a.min_class,
            rule: a.rule.into(),
        },
        CombineConfig {
            th_nm: a.th_nm,
            epsilon: a.eps,
            max_per_side: (a.max_per_class > 0).then_some(a.max_per_class),
            seed: a.seed,
        },
    )
}

pub fn cluster(a: &ClusterArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("cluster", a);
    let (gcfg, ccfg) = cluster_configs(a);
    gcfg.validate()?;
    ccfg.validate()?;
    let bundle = read_bundle(&a.views)?;
    a.views.iter().for_each(|p| rec.input(p));
    let out = gmvpg_cluster(&bundle, &gcfg, &ccfg)?;
    write_labels_file(&a.out, &out.partition)?;
    rec.output(&a.out);
    if let Some(p) = &a.audit {
        write_jsonl(p, &out.audit)?;
        rec.output(p);
    }
    rec.note("classes", out.partition.num_classes());
    rec.note("retained", out.partition.retained());
    rec.note("effective_config", &out.graph_cfg);
    rec.finish(&report_path(report, &a.out))
}

pub fn correct(a: &CorrectArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("correct", a);
    let cfg = CorrectionConfig {
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
        ..CorrectionConfig::default()
    };
    cfg.validate()?;
    let bundle = read_bundle(&a.views)?;
    a.views.iter().for_each(|p| rec.input(p));
    let labels = read_labels(&a.labels)?;
    rec.input(&a.labels);
    let out = correct_bundle(&bundle, &labels, &cfg)?;
    write_labels_file(&a.out, &out.partition)?;
    rec.output(&a.out);
    if let Some(p) = &a.audit {
        write_jsonl(p, &out.audit)?;
        rec.output(p);
    }
    rec.note("merges", &out.merges);
    rec.note("classes", out.partition.num_classes());
    rec.note("retained", out.partition.retained());
    rec.finish(&report_path(report, &a.out))
}

pub fn centers(a: &CentersArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("centers", a);
    let set = read_emb(&a.input)?;
    rec.input(&a.input);
    let labels = read_labels(&a.labels)?;
    rec.input(&a.labels);
    let mode = if a.raw_centers {
        CenterMode::Mean
    } else {
        CenterMode::Normalized
    };
    let c = class_centers(&set, &labels, mode)?;
    let mut out = EmbeddingSet::with_capacity(set.dim(), c.len())?;
    for (label, v) in &c {
        out.push_f64(format!("class{label}"), v)?;
    }
    write_emb(&a.out, &out)?;
    rec.output(&a.out);
    rec.note("classes", c.len());
    rec.finish(&report_path(report, &a.out))
}

pub fn score(a: &ScoreArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("score", a);
    let trials = read_trials(&a.trials)?;
    rec.input(&a.trials);
    let enroll = read_emb(&a.enroll)?;
    rec.input(&a.enroll);
    let test = match &a.test {
        Some(p) => {
            rec.input(p);
            Some(read_emb(p)?)
        }
        None => None,
    };
    let s = cosine_score(&trials, &enroll, test.as_ref().unwrap_or(&enroll))?;
    write_scores_file(&a.out, &s)?;
    rec.output(&a.out);
    rec.note("trials", s.len());
    rec.finish(&report_path(report, &a.out))
}

pub fn asnorm(a: &AsnormArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("asnorm", a);
    let scores = read_scores(&a.scores)?;
    rec.input(&a.scores);
    let enroll = read_emb(&a.enroll)?;
    rec.input(&a.enroll);
    let test = match &a.test {
        Some(p) => {
            rec.input(p);
            Some(read_emb(p)?)
        }
        None => None,
    };
    let cohort = read_emb(&a.cohort)?;
    rec.input(&a.cohort);
    let cfg = AsNormConfig {
        top_n: a.top_n,
        remove_variance: !a.standard,
    };
    let out = as_norm(
        &scores,
        &enroll,
        test.as_ref().unwrap_or(&enroll),
        &cohort,
        &cfg,
    )?;
    write_scores_file(&a.out, &out)?;
    rec.output(&a.out);
    rec.finish(&report_path(report, &a.out))
}

#[derive(Debug, Serialize)]
pub struct EvalResult {
    pub eer: f64,
    pub min_dcf: f64,
    pub targets: usize,
    pub nontargets: usize,
    pub params: MetricParams,
}

pub fn eval(a: &EvalArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("eval", a);
    let scores = read_scores(&a.scores)?;
    rec.input(&a.scores);
    let trials = read_trials(&a.trials)?;
    rec.input(&a.trials);
    let params = MetricParams {
        p_target: a.p_target,
        c_fa: a.c_fa,
        c_miss: a.c_miss,
        normalized: !a.raw_dcf,
    };
    let (tar, non) = split_by_key(&scores, &trials)?;
    let res = EvalResult {
        eer: compute_eer(&tar, &non)?,
        min_dcf: compute_mindcf(&tar, &non, &params)?,
        targets: tar.len(),
        nontargets: non.len(),
        params,
    };
    write_json(&a.out, &res)?;
    rec.output(&a.out);
    println!("{}", serde_json::to_string(&res)?);
    rec.note("eer", res.eer);
    rec.note("min_dcf", res.min_dcf);
    rec.finish(&report_path(report, &a.out))
}

fn keyed_labels(trials: &[gmvpg_core::Trial]) -> Result<Vec<bool>> {
    trials
        .iter()
        .map(|t| match t.key {
            TrialKey::Target => Ok(true),
            TrialKey::Nontarget => Ok(false),
            TrialKey::Unknown => bail!("trial ({}, {}) has no key", t.enroll, t.test),
        })
        .collect()
}

pub fn qmf_train(a: &QmfTrainArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("qmf-train", a);
    let trials = read_trials(&a.trials)?;
    rec.input(&a.trials);
    let mut sets = Vec::new();
    for p in &a.scores {
        let s = read_scores(p)?;
        s.check_aligned(&trials)
            .with_context(|| format!("{} does not match the trial list", p.display()))?;
        rec.input(p);
        sets.push(s);
    }
    let mut x = stack_scores(&sets)?;
    if let Some(q) = &a.quality {
        let rows = read_matrix(q)?;
        rec.input(q);
        if rows.len() != x.len() {
            bail!("{} quality rows for {} trials", rows.len(), x.len());
        }
        for (r, extra) in x.iter_mut().zip(rows) {
            r.extend(extra);
        }
    }
    let y = keyed_labels(&trials)?;
    let cfg = LogRegConfig {
        l2: a.l2,
        lr: a.lr,
        iters: a.iters,
    };
    let rep = train_logreg(&x, &y, &cfg)?;
    write_json(&a.out, &rep.model)?;
    rec.output(&a.out);
    rec.note("initial_loss", rep.loss_trace.first());
    rec.note("final_loss", rep.loss_trace.last());
    rec.note("iterations", rep.loss_trace.len() - 1);
    rec.note("warnings", &rep.warnings);
    rec.finish(&report_path(report, &a.out))
}

pub fn qmf_apply(a: &QmfApplyArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("qmf-apply", a);
    let scores = read_scores(&a.scores)?;
    rec.input(&a.scores);
    let model: LogRegModel = read_json(&a.model)?;
    rec.input(&a.model);
    let quality = match &a.quality {
        Some(q) => {
            rec.input(q);
            read_matrix(q)?
        }
        None => Vec::new(),
    };
    let out = apply_qmf(&scores, &quality, &model)?;
    write_scores_file(&a.out, &out)?;
    rec.output(&a.out);
    rec.finish(&report_path(report, &a.out))
}

pub fn fuse_cmd(a: &FuseArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("fuse", a);
    let mut sets = Vec::new();
    for p in &a.scores {
        sets.push(read_scores(p)?);
        rec.input(p);
    }
    let out = match &a.model {
        Some(m) => {
            rec.input(m);
            let model: LogRegModel = read_json(m)?;
            fuse_with_model(&sets, &model)?
        }
        None => fuse(&sets, &a.weights)?,
    };
    write_scores_file(&a.out, &out)?;
    rec.output(&a.out);
    rec.finish(&report_path(report, &a.out))
}

pub fn gen_trials(a: &GenTrialsArgs, report: &Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("gen-trials", a);
    let labels = read_labels(&a.labels)?;
    rec.input(&a.labels);
    let mut purity: BTreeMap<i64, f64> = BTreeMap::new();
    if let Some(p) = &a.purity {
        rec.input(p);
        for (n, line) in fs::read_to_string(p)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (l, v) = line
                .split_once('\t')
                .with_context(|| format!("{}:{}: expected label<TAB>purity", p.display(), n + 1))?;
            purity.insert(l.trim().parse()?, v.trim().parse()?);
        }
    }
    if let Some(t) = &a.truth {
        rec.input(t);
        let truth = read_labels(t)?;
        for (label, members) in labels.classes() {
            let class: gmvpg_core::Partition = members.iter().map(|m| (m.clone(), 0)).collect();
            let sub: gmvpg_core::Partition = members
                .iter()
                .map(|m| {
                    Ok((
                        m.clone(),
                        truth
                            .get(m)
                            .with_context(|| format!("{m} missing from truth"))?,
                    ))
                })
                .collect::<Result<_>>()?;
            purity.insert(label, eval_partition(&class, &sub)?.purity);
        }
    }
    let labeled: BTreeSet<String> = match &a.labeled {
        Some(p) => {
            rec.input(p);
            fs::read_to_string(p)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect()
        }
        None => BTreeSet::new(),
    };
    let cfg = TrialGenConfig {
        total: a.total,
        speakers: a.speakers,
        segments: a.segments,
        labeled_weight: a.labeled_weight,
        seed: a.seed,
    };
    let trials = generate_dev_trials(&labels, &purity, &labeled, &cfg)?;
    write_trials_file(&a.out, &trials)?;
    rec.output(&a.out);
    rec.note("trials", trials.len());
    rec.finish(&report_path(report, &a.out))
}
