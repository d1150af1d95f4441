//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use gmvpg_core::adaptation::{compute_stats, coral_transform, mean_align, DomainStats};
use gmvpg_core::backend::{
    adaptive_norm, circle_loss, compute_eer, compute_mindcf, split_by_key, stack_scores,
    train_logreg, AsNormConfig, CircleLossParams, LogRegConfig, MetricParams,
};
use gmvpg_core::cluster::{
    count_split_events, fit_two_gaussian_traced, gmvpg_cluster, AuditEvent, CombineConfig,
};
use gmvpg_core::correction::{class_centers, confidence_split, Band, CenterMode, CorrectionConfig};
use gmvpg_core::graph::GraphConfig;
use gmvpg_core::model::{
    parse_labels, parse_scores, parse_trials, read_embeddings, write_embeddings, write_labels,
    write_scores, write_trials, UNASSIGNED,
};
use gmvpg_core::synth::{eval_partition, gen_corpus, SynthConfig};
use gmvpg_core::{EmbeddingSet, Partition, ScoreSet, Trial, TrialKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

type Check = Result<String, String>;
type Criterion = (&'static str, fn(&Ctx) -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gmvpg")
}

fn gmvpg(args: &[&str]) -> Result<Output, String> {
    let out = Command::new(bin())
        .args(args)
        .env("GMVPG_THREADS", "1")
        .output()
        .map_err(|e| format!("spawning gmvpg: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "gmvpg {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn labels_file(p: &Path) -> Result<Partition, String> {
    let f = File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
    parse_labels(BufReader::new(f)).map_err(|e| format!("{}: {e}", p.display()))
}

fn views(dir: &Path, n: usize) -> Vec<String> {
    (0..n)
        .map(|t| s(&dir.join(format!("view{t}.emb"))).to_string())
        .collect()
}

fn synth_and_cluster(dir: &Path, extra: &[&str]) -> Result<f64, String> {
    let mut args = vec!["synth", "--seed", "7", "--out-dir", s(dir)];
    args.extend_from_slice(extra);
    gmvpg(&args)?;
    let v = views(dir, 3);
    let labels = dir.join("labels.tsv");
    let audit = dir.join("audit.jsonl");
    let mut args = vec!["cluster", "--views"];
    args.extend(v.iter().map(String::as_str));
    args.extend(["--out", s(&labels), "--audit", s(&audit)]);
    let t = Instant::now();
    gmvpg(&args)?;
    Ok(t.elapsed().as_secs_f64())
}

struct Ctx {
    root: PathBuf,
}

impl Ctx {
    fn base(&self) -> PathBuf {
        self.root.join("base")
    }
}

fn separable_recovery(ctx: &Ctx) -> Check {
    let dir = ctx.base();
    let secs = synth_and_cluster(&dir, &[])?;
    let m = eval_partition(
        &labels_file(&dir.join("labels.tsv"))?,
        &labels_file(&dir.join("truth.tsv"))?,
    )
    .map_err(|e| e.to_string())?;
    ensure!(m.ari == 1.0, "ARI {}", m.ari);
    ensure!(
        m.retained_fraction >= 0.95,
        "retained {}",
        m.retained_fraction
    );
    ensure!(secs < 60.0, "cluster took {secs:.1} s");
    Ok(format!(
        "ARI {}, retained {:.3}, cluster {secs:.1} s on one thread",
        m.ari, m.retained_fraction
    ))
}

fn coarsening(ctx: &Ctx) -> Check {
    let text = fs::read_to_string(ctx.base().join("audit.jsonl")).map_err(|e| e.to_string())?;
    let mut steps = 0;
    for line in text.lines() {
        let ev: AuditEvent = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if let AuditEvent::Step {
            k_from,
            k_to,
            split_events,
            ..
        } = ev
        {
            ensure!(
                split_events == 0,
                "step {k_from}->{k_to} logged {split_events} splits"
            );
            steps += 1;
        }
    }
    ensure!(
        steps == 8,
        "expected 8 k steps in the audit log, found {steps}"
    );

    // Recompute from the per-step labels without trusting the logged counts.
    let corpus = gen_corpus(&SynthConfig {
        seed: 7,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let out = gmvpg_cluster(
        &corpus.bundle,
        &GraphConfig::default(),
        &CombineConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        out.snapshots.len() == 9,
        "{} snapshots",
        out.snapshots.len()
    );
    for pair in out.snapshots.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let mut image: BTreeMap<i64, i64> = BTreeMap::new();
        for (i, &la) in a.labels.iter().enumerate() {
            if la == UNASSIGNED {
                continue;
            }
            let lb = b.labels[i];
            ensure!(
                lb != UNASSIGNED,
                "utterance {i} placed at k={} lost at k={}",
                a.k,
                b.k
            );
            let prev = *image.entry(la).or_insert(lb);
            ensure!(prev == lb, "class {la} at k={} split at k={}", a.k, b.k);
        }
        ensure!(
            count_split_events(&a.labels, &b.labels) == 0,
            "library split count disagrees"
        );
    }
    Ok(format!(
        "{steps} steps, zero splits in audit and in recomputed snapshots"
    ))
}

fn small_class_discard(ctx: &Ctx) -> Check {
    let dir = ctx.root.join("extra");
    synth_and_cluster(&dir, &["--extra-speakers", "5"])?;
    let labels = labels_file(&dir.join("labels.tsv"))?;
    let dropped: Vec<&str> = labels
        .iter()
        .filter(|&(_, l)| l == UNASSIGNED)
        .map(|(id, _)| id)
        .collect();
    let injected: Vec<&str> = labels
        .ids()
        .filter(|id| id.starts_with("spk0100-"))
        .collect();
    ensure!(
        injected.len() == 5,
        "corpus has {} injected utterances",
        injected.len()
    );
    ensure!(dropped == injected, "dropped {dropped:?}");
    Ok("exactly the 5 injected utterances are -1".into())
}

fn em_fit(_: &Ctx) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let hi = Normal::new(0.8, 0.05).unwrap();
    let lo = Normal::new(0.1, 0.05).unwrap();
    let xs: Vec<f64> = (0..10_000)
        .map(|_| {
            if rng.random_bool(0.5) {
                hi.sample(&mut rng)
            } else {
                lo.sample(&mut rng)
            }
        })
        .collect();
    let mut trace = Vec::new();
    let t = Instant::now();
    let fit = fit_two_gaussian_traced(&xs, &mut trace).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    ensure!(
        (fit.mu1 - 0.8).abs() <= 0.02 && (fit.mu2 - 0.1).abs() <= 0.02,
        "means {fit:?}"
    );
    ensure!(
        (fit.sigma1 - 0.05).abs() <= 0.02 && (fit.sigma2 - 0.05).abs() <= 0.02,
        "sigmas {fit:?}"
    );
    ensure!(
        (fit.w1 - 0.5).abs() <= 0.05 && (fit.w2 - 0.5).abs() <= 0.05,
        "weights {fit:?}"
    );
    ensure!(trace.len() >= 2, "trace has {} entries", trace.len());
    for w in trace.windows(2) {
        ensure!(
            w[1] >= w[0],
            "log-likelihood fell from {} to {}",
            w[0],
            w[1]
        );
    }
    ensure!(secs < 1.0, "fit took {secs:.3} s");
    Ok(format!(
        "mu {:.4}/{:.4}, sigma {:.4}/{:.4}, w {:.3}/{:.3}, {} iterations, {:.1} ms",
        fit.mu1,
        fit.mu2,
        fit.sigma1,
        fit.sigma2,
        fit.w1,
        fit.w2,
        fit.iterations,
        secs * 1e3
    ))
}

/// Brute-force sweep: every distinct score plus one threshold above all.
fn sweep(tar: &[f64], non: &[f64]) -> Vec<(f64, f64)> {
    let mut th: Vec<f64> = tar.iter().chain(non).copied().collect();
    th.sort_by(f64::total_cmp);
    th.dedup();
    th.push(f64::INFINITY);
    th.iter()
        .map(|&t| {
            let miss = tar.iter().filter(|&&x| x < t).count();
            let fa = non.iter().filter(|&&x| x >= t).count();
            (miss as f64 / tar.len() as f64, fa as f64 / non.len() as f64)
        })
        .collect()
}

fn oracle_eer(points: &[(f64, f64)]) -> f64 {
    for i in 0..points.len() {
        let (pm, pf) = points[i];
        if pm >= pf {
            if pm == pf {
                return pm;
            }
            let (qm, qf) = if i == 0 { points[0] } else { points[i - 1] };
            let d0 = qf - qm;
            let d1 = pf - pm;
            return qm + d0 / (d0 - d1) * (pm - qm);
        }
    }
    panic!("sweep never reached P_miss = 1");
}

fn oracle_mindcf(points: &[(f64, f64)], p: &MetricParams) -> f64 {
    let (wm, wf) = (p.c_miss * p.p_target, p.c_fa * (1.0 - p.p_target));
    let mut best = f64::INFINITY;
    for &(pm, pf) in points {
        best = best.min(wm * pm + wf * pf);
    }
    best / wm.min(wf)
}

fn random_trials(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Trial>, ScoreSet) {
    let target_rate = rng.random_range(0.05..0.5);
    let gap = rng.random_range(0.0..3.0);
    let grid = [10.0, 100.0, 1000.0][rng.random_range(0..3)];
    let mut trials = Vec::with_capacity(n);
    let mut scores = ScoreSet::new();
    for i in 0..n {
        // Force at least one trial of each kind.
        let target = i == 0 || (i != 1 && rng.random_bool(target_rate));
        let z: f64 = StandardNormal.sample(rng);
        let x = ((z + if target { gap } else { 0.0 }) * grid).round() / grid;
        let (e, t) = (format!("e{i}"), format!("t{i}"));
        let key = if target {
            TrialKey::Target
        } else {
            TrialKey::Nontarget
        };
        trials.push(Trial::new(e.clone(), t.clone(), key));
        scores.push(e, t, x);
    }
    (trials, scores)
}

fn metric_oracles(_: &Ctx) -> Check {
    let params = MetricParams {
        c_fa: 1.0,
        c_miss: 1.0,
        p_target: 0.05,
        normalized: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tied = 0;
    for case in 0..100 {
        let (trials, scores) = random_trials(&mut rng, 1000);
        let (tar, non) = split_by_key(&scores, &trials).map_err(|e| e.to_string())?;
        let mut all: Vec<f64> = scores.values();
        all.sort_by(f64::total_cmp);
        all.dedup();
        if all.len() < 1000 {
            tied += 1;
        }
        let pts = sweep(&tar, &non);
        let eer = compute_eer(&tar, &non).map_err(|e| e.to_string())?;
        let dcf = compute_mindcf(&tar, &non, &params).map_err(|e| e.to_string())?;
        let (oe, od) = (oracle_eer(&pts), oracle_mindcf(&pts, &params));
        ensure!(
            eer.to_bits() == oe.to_bits(),
            "case {case}: EER {eer} vs oracle {oe}"
        );
        ensure!(
            dcf.to_bits() == od.to_bits(),
            "case {case}: minDCF {dcf} vs oracle {od}"
        );
    }
    ensure!(tied > 50, "only {tied} sets had tied scores");
    Ok(format!(
        "100 sets bit-equal to the sweep oracle ({tied} with ties)"
    ))
}

fn invariances(_: &Ctx) -> Check {
    let params = MetricParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..20 {
        let (trials, scores) = random_trials(&mut rng, 1000);
        let base = {
            let (t, n) = split_by_key(&scores, &trials).map_err(|e| e.to_string())?;
            (
                compute_eer(&t, &n).unwrap(),
                compute_mindcf(&t, &n, &params).unwrap(),
            )
        };
        for (name, f) in [
            ("2x+3", (|x: f64| 2.0 * x + 3.0) as fn(f64) -> f64),
            ("tanh", f64::tanh),
        ] {
            let mapped = scores.map(f);
            let (t, n) = split_by_key(&mapped, &trials).map_err(|e| e.to_string())?;
            let got = (
                compute_eer(&t, &n).unwrap(),
                compute_mindcf(&t, &n, &params).unwrap(),
            );
            ensure!(got == base, "case {case}, {name}: {got:?} vs {base:?}");
        }
    }
    let cfg = AsNormConfig {
        top_n: 50,
        remove_variance: true,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let score: f64 = rng.random_range(-1.0..1.0);
        let ce: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ct: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: f64 = rng.random_range(-5.0..5.0);
        let a = adaptive_norm(score, &ce, &ct, &cfg).map_err(|e| e.to_string())?;
        let sh = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let b = adaptive_norm(score + c, &sh(&ce), &sh(&ct), &cfg).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).abs());
    }
    ensure!(worst <= 1e-9, "AS-norm moved by {worst:e} under a shift");
    Ok(format!(
        "metrics exact under 2x+3 and tanh; AS-norm shift error {worst:.1e}"
    ))
}

/// Central-difference gradient of the loss in `s_p` and every `s_n`.
fn circle_fd(sp: f64, sn: &[f64], params: &CircleLossParams, h: f64) -> (f64, Vec<f64>) {
    let loss = |sp: f64, sn: &[f64]| circle_loss(sp, sn, params).unwrap().loss;
    let dp = (loss(sp + h, sn) - loss(sp - h, sn)) / (2.0 * h);
    let dn = (0..sn.len())
        .map(|j| {
            let (mut up, mut dn) = (sn.to_vec(), sn.to_vec());
            up[j] += h;
            dn[j] -= h;
            (loss(sp, &up) - loss(sp, &dn)) / (2.0 * h)
        })
        .collect();
    (dp, dn)
}

fn circle_gradients(_: &Ctx) -> Check {
    let params = CircleLossParams { m: 0.35, s: 60.0 };
    let h = 1e-5;
    let rel = |a: f64, n: f64, floor: f64| {
        let d = a.abs().max(n.abs()).max(floor);
        if d == 0.0 {
            0.0
        } else {
            (a - n).abs() / d
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let sp: f64 = rng.random_range(-1.0..1.0);
        let sn: f64 = rng.random_range(-1.0..1.0);
        let g = circle_loss(sp, &[sn], &params).map_err(|e| e.to_string())?;
        let (dp, dn) = circle_fd(sp, &[sn], &params, h);
        for (what, a, n) in [("s_p", g.grad_sp, dp), ("s_n", g.grad_sn[0], dn[0])] {
            let e = rel(a, n, 0.0);
            ensure!(
                e <= 1e-4,
                "d/d{what} at ({sp}, {sn}): {a} vs {n} (rel {e:e})"
            );
            worst = worst.max(e);
        }
    }
    // Several negatives: a dominated negative has a gradient far below the
    // difference quotient's rounding noise, so errors are scaled by at least 1.
    let mut worst_multi: f64 = 0.0;
    for _ in 0..100 {
        let sp: f64 = rng.random_range(-1.0..1.0);
        let len = rng.random_range(2..=5);
        let sn: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = circle_loss(sp, &sn, &params).map_err(|e| e.to_string())?;
        let (dp, dn) = circle_fd(sp, &sn, &params, h);
        let pairs = std::iter::once((g.grad_sp, dp)).chain(g.grad_sn.iter().copied().zip(dn));
        for (a, n) in pairs {
            let e = rel(a, n, 1.0);
            ensure!(
                e <= 1e-4,
                "at ({sp}, {sn:?}): {a} vs {n} (scaled error {e:e})"
            );
            worst_multi = worst_multi.max(e);
        }
    }
    let empty = circle_loss(0.3, &[], &params).map_err(|e| e.to_string())?;
    ensure!(
        empty.loss == 0.0,
        "empty negatives gave loss {}",
        empty.loss
    );
    Ok(format!(
        "100 points, worst relative error {worst:.1e}; multi-negative sets {worst_multi:.1e}; empty s_n gives 0"
    ))
}

fn correction_rescue(ctx: &Ctx) -> Check {
    let dir = ctx.root.join("split");
    gmvpg(&[
        "synth",
        "--seed",
        "7",
        "--split-fraction",
        "0.1",
        "--out-dir",
        s(&dir),
    ])?;
    let truth = labels_file(&dir.join("truth.tsv"))?;
    let split = labels_file(&dir.join("split_labels.tsv"))?;
    ensure!(
        split.num_classes() > truth.num_classes(),
        "no speaker was split"
    );

    let mut noisy = Partition::new();
    let mut injected = Vec::new();
    for (i, (id, l)) in split.iter().enumerate() {
        if i % 10 == 0 {
            injected.push(id.to_string());
            noisy.insert(id, UNASSIGNED).unwrap();
        } else {
            noisy.insert(id, l).unwrap();
        }
    }
    let input = dir.join("noisy.tsv");
    let mut buf = Vec::new();
    write_labels(&noisy, &mut buf).unwrap();
    fs::write(&input, buf).map_err(|e| e.to_string())?;

    let v = views(&dir, 3);
    let out = dir.join("corrected.tsv");
    let mut args = vec!["correct", "--vote", "unanimous", "--views"];
    args.extend(v.iter().map(String::as_str));
    args.extend(["--labels", s(&input), "--out", s(&out)]);
    gmvpg(&args)?;
    let corrected = labels_file(&out)?;
    let m = eval_partition(&corrected, &truth).map_err(|e| e.to_string())?;
    ensure!(m.ari == 1.0, "post-correction ARI {}", m.ari);

    // High band in every view, judged against the centers of the noisy labels.
    let cfg = CorrectionConfig::default();
    let mut high: BTreeMap<String, usize> = BTreeMap::new();
    for p in &v {
        let set = read_embeddings(File::open(p).unwrap()).map_err(|e| e.to_string())?;
        let centers =
            class_centers(&set, &noisy, CenterMode::Normalized).map_err(|e| e.to_string())?;
        for r in confidence_split(&set, &centers, &cfg)
            .map_err(|e| e.to_string())?
            .records
        {
            if r.band == Band::High {
                *high.entry(r.utt_id).or_default() += 1;
            }
        }
    }
    let high_injected: Vec<&String> = injected
        .iter()
        .filter(|id| high.get(*id) == Some(&3))
        .collect();
    ensure!(
        !high_injected.is_empty(),
        "no injected utterance is in the high band"
    );
    for id in &high_injected {
        let got = corrected.get(id).unwrap_or(UNASSIGNED);
        ensure!(got != UNASSIGNED, "{id} stayed unassigned");
    }
    Ok(format!(
        "{} split pseudo-classes merged, ARI 1, {}/{} high-band injected utterances re-admitted",
        split.num_classes() - truth.num_classes(),
        high_injected.len(),
        injected.len()
    ))
}

fn gaussian_set(rng: &mut ChaCha8Rng, n: usize, d: usize, mean_scale: f64) -> EmbeddingSet {
    let mean: Vec<f64> = (0..d)
        .map(|_| rng.random_range(-mean_scale..mean_scale))
        .collect();
    let mix: Vec<Vec<f64>> = (0..d)
        .map(|_| {
            (0..d)
                .map(|_| StandardNormal.sample(rng))
                .map(|x: f64| x * 0.3)
                .collect()
        })
        .collect();
    let mut set = EmbeddingSet::with_capacity(d, n).unwrap();
    for i in 0..n {
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let row: Vec<f64> = (0..d)
            .map(|r| mean[r] + mix[r].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        set.push_f64(format!("u{i:05}"), &row).unwrap();
    }
    set
}

fn frob(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn adaptation_exact(_: &Ctx) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let source = gaussian_set(&mut rng, 3000, 32, 1.0);
    let target = gaussian_set(&mut rng, 2000, 32, 2.0);
    let st = |x: &EmbeddingSet| -> Result<DomainStats, String> {
        compute_stats(x).map_err(|e| e.to_string())
    };
    let (ss, ts) = (st(&source)?, st(&target)?);

    let aligned = st(&mean_align(&target, &ts, &ss).map_err(|e| e.to_string())?)?;
    let mean_err = aligned
        .mean
        .iter()
        .zip(&ss.mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure!(mean_err <= 1e-6, "mean_align off by {mean_err:e}");

    let coral = st(&coral_transform(&target, &ts, &ss, 0.0).map_err(|e| e.to_string())?)?;
    let diff: Vec<f64> = coral
        .covariance
        .iter()
        .zip(&ss.covariance)
        .map(|(a, b)| a - b)
        .collect();
    let cov_err = frob(&diff) / frob(&ss.covariance);
    ensure!(
        cov_err <= 1e-6,
        "CORAL covariance relative error {cov_err:e}"
    );
    Ok(format!(
        "mean error {mean_err:.1e}, covariance relative error {cov_err:.1e}"
    ))
}

/// System A carries the label plus a nuisance term; system B sees only a
/// scaled copy of that nuisance.
fn two_systems(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Trial>, ScoreSet, ScoreSet) {
    let mut trials = Vec::with_capacity(n);
    let (mut a, mut b) = (ScoreSet::new(), ScoreSet::new());
    for i in 0..n {
        let target = rng.random_bool(0.5);
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        let (e, t) = (format!("e{i}"), format!("t{i}"));
        let key = if target {
            TrialKey::Target
        } else {
            TrialKey::Nontarget
        };
        trials.push(Trial::new(e.clone(), t.clone(), key));
        a.push(
            e.clone(),
            t.clone(),
            if target { 1.5 } else { 0.0 } + 0.5 * e1 + e2,
        );
        b.push(e, t, 3.0 * e2);
    }
    (trials, a, b)
}

fn calibration_gain(_: &Ctx) -> Check {
    let params = MetricParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (train_trials, ta, tb) = two_systems(&mut rng, 4000);
    let (test_trials, ea, eb) = two_systems(&mut rng, 4000);
    let x = stack_scores(&[ta, tb]).map_err(|e| e.to_string())?;
    let y: Vec<bool> = train_trials
        .iter()
        .map(|t| t.key == TrialKey::Target)
        .collect();
    let model = train_logreg(&x, &y, &LogRegConfig::default())
        .map_err(|e| e.to_string())?
        .model;
    let (wa, wb) = (model.weights[0], model.weights[1]);
    ensure!(
        wa.abs() > wb.abs(),
        "weights {wa} (informative) vs {wb} (noise)"
    );

    let dcf = |set: &ScoreSet| -> Result<f64, String> {
        let (t, n) = split_by_key(set, &test_trials).map_err(|e| e.to_string())?;
        compute_mindcf(&t, &n, &params).map_err(|e| e.to_string())
    };
    let mut fused = ScoreSet::new();
    for (sa, sb) in ea.scores.iter().zip(&eb.scores) {
        fused.push(
            sa.enroll.clone(),
            sa.test.clone(),
            model.logit(&[sa.score, sb.score]),
        );
    }
    let (da, db, df) = (dcf(&ea)?, dcf(&eb)?, dcf(&fused)?);
    let best = da.min(db);
    ensure!(df <= best, "fused minDCF {df} vs best single {best}");
    Ok(format!(
        "weights {wa:.3} vs {wb:.3}; held-out minDCF fused {df:.4}, A {da:.4}, B {db:.4}"
    ))
}

fn trial_generation(ctx: &Ctx) -> Check {
    let dir = ctx.base();
    let labels = dir.join("labels.tsv");
    let truth = dir.join("truth.tsv");
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = dir.join(name);
        gmvpg(&[
            "gen-trials",
            "--labels",
            s(&labels),
            "--truth",
            s(&truth),
            "--out",
            s(&out),
        ])?;
        fs::read(&out).map_err(|e| e.to_string())
    };
    let (a, b) = (run("trials_a.txt")?, run("trials_b.txt")?);
    ensure!(a == b, "reruns differ");
    let trials = parse_trials(&a[..]).map_err(|e| e.to_string())?;
    let targets = trials.iter().filter(|t| t.key == TrialKey::Target).count();
    ensure!(trials.len() == 40_000, "{} trials", trials.len());
    ensure!(targets == 20_000, "{targets} targets");
    Ok("40000 trials, 20000 targets, identical reruns".into())
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn strip_wall_time(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("wall_time_s");
            m.values_mut().for_each(strip_wall_time);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_wall_time),
        _ => {}
    }
}

fn comparable(path: &Path, bytes: &[u8]) -> Vec<u8> {
    if path.to_string_lossy().ends_with(".report.json") {
        let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        strip_wall_time(&mut v);
        serde_json::to_vec(&v).unwrap()
    } else {
        bytes.to_vec()
    }
}

fn roundtrip_files(dir: &Path) -> Result<usize, String> {
    let mut n = 0;
    for (rel, bytes) in tree(dir) {
        let name = rel.to_string_lossy().to_string();
        let mut again = Vec::new();
        if name.ends_with(".emb") {
            write_embeddings(
                &read_embeddings(&bytes[..]).map_err(|e| e.to_string())?,
                &mut again,
            )
            .unwrap();
        } else if name.starts_with("labels/") && name.ends_with(".tsv")
            || name.ends_with("truth.tsv")
        {
            write_labels(
                &parse_labels(&bytes[..]).map_err(|e| e.to_string())?,
                &mut again,
            )
            .unwrap();
        } else if name.starts_with("trials/") && name.ends_with(".txt") {
            write_trials(
                &parse_trials(&bytes[..]).map_err(|e| e.to_string())?,
                &mut again,
            )
            .unwrap();
        } else if name.starts_with("scores/") && name.ends_with(".txt") {
            write_scores(
                &parse_scores(&bytes[..]).map_err(|e| e.to_string())?,
                &mut again,
            )
            .unwrap();
        } else if name.ends_with("stats0.json") {
            let st: DomainStats = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
            again = serde_json::to_vec_pretty(&st).unwrap();
            again.push(b'\n');
        } else {
            continue;
        }
        ensure!(again == bytes, "{name} does not round-trip");
        n += 1;
    }
    Ok(n)
}

fn dedup_check(dir: &Path) -> Result<String, String> {
    let original = read_embeddings(File::open(dir.join("target/view0.emb")).unwrap())
        .map_err(|e| e.to_string())?;
    let deduped = read_embeddings(File::open(dir.join("dedup/view0.emb")).unwrap())
        .map_err(|e| e.to_string())?;
    let dups: BTreeSet<&str> = original
        .ids()
        .iter()
        .map(String::as_str)
        .filter(|i| i.ends_with("-dup"))
        .collect();
    ensure!(!dups.is_empty(), "no duplicates were injected");
    ensure!(
        deduped.len() == original.len() - dups.len(),
        "{} kept of {}",
        deduped.len(),
        original.len()
    );
    ensure!(
        deduped.ids().iter().all(|i| !dups.contains(i.as_str())),
        "a duplicate survived"
    );

    let again = dir.join("dedup-again");
    let v = views(&dir.join("dedup"), 3);
    let mut args = vec!["dedup", "--views"];
    args.extend(v.iter().map(String::as_str));
    args.extend(["--out-dir", s(&again)]);
    gmvpg(&args)?;
    for t in 0..3 {
        let f = format!("view{t}.emb");
        ensure!(
            fs::read(dir.join("dedup").join(&f)).unwrap() == fs::read(again.join(&f)).unwrap(),
            "second dedup changed {f}"
        );
    }
    ensure!(
        fs::read(again.join("duplicates.tsv")).unwrap().is_empty(),
        "second dedup found duplicates"
    );
    fs::remove_dir_all(&again).unwrap();
    Ok(format!("{} duplicates removed, idempotent", dups.len()))
}

fn determinism(ctx: &Ctx) -> Check {
    let dir = ctx.root.join("pipeline");
    fs::create_dir_all(&dir).unwrap();
    let manifest = dir.join("pipeline.json");
    fs::copy(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/pipeline.json"),
        &manifest,
    )
    .map_err(|e| e.to_string())?;
    let shift: Vec<f64> = (0..128).map(|i| 0.1 * (i as f64).sin()).collect();
    fs::write(dir.join("shift.json"), serde_json::to_vec(&shift).unwrap()).unwrap();

    gmvpg(&["pipeline", "--manifest", s(&manifest)])?;
    let first = tree(&dir);
    gmvpg(&["pipeline", "--manifest", s(&manifest)])?;
    let second = tree(&dir);
    ensure!(first.len() == second.len(), "file sets differ");
    for (p, a) in &first {
        let b = second
            .get(p)
            .ok_or_else(|| format!("{} missing on rerun", p.display()))?;
        ensure!(
            comparable(p, a) == comparable(p, b),
            "{} differs on rerun",
            p.display()
        );
    }
    let eval: serde_json::Value =
        serde_json::from_slice(&first[Path::new("eval/fused.json")]).unwrap();
    ensure!(
        eval.get("eer").is_some() && eval.get("min_dcf").is_some(),
        "eval lacks metrics"
    );

    let n = roundtrip_files(&dir)?;
    let d = dedup_check(&dir)?;
    Ok(format!(
        "{} files identical on rerun, {n} data files round-trip, {d}",
        first.len()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let ctx = Ctx {
        root: tmp.path().to_path_buf(),
    };
    let criteria: [Criterion; 12] = [
        ("separable-corpus recovery", separable_recovery),
        ("coarsening across k steps", coarsening),
        ("small-class discard", small_class_discard),
        ("two-Gaussian EM", em_fit),
        ("metric oracles", metric_oracles),
        ("score invariances", invariances),
        ("circle-loss gradient", circle_gradients),
        ("label-correction rescue", correction_rescue),
        ("adaptation exactness", adaptation_exact),
        ("calibration gain", calibration_gain),
        ("trial generation", trial_generation),
        ("determinism and round-trips", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| f(&ctx))).unwrap_or_else(|p| {
            Err(format!(
                "panicked: {:?}",
                p.downcast_ref::<String>()
                    .map(String::as_str)
                    .or(p.downcast_ref::<&str>().copied())
            ))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!(
                "criterion {:>2}: PASS  {name}: {detail} [{secs:.1} s]",
                i + 1
            ),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2}: FAIL  {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
