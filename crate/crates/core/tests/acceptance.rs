//! One PASS/FAIL line per acceptance criterion.
//!
//! Runs the full default grid (about an hour on one core). Criteria that are
//! not met are reported as FAIL without failing the target; set
//! `SDDS_ACCEPTANCE_STRICT=1` to exit nonzero instead. Set
//! `SDDS_ACCEPTANCE_OUT=<dir>` to keep the grid artifacts.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::*;
use sdds_core::data::balance_undersample;
use sdds_core::harness::{
    median, prepare_corpora, report, run_grid, GridConfig, GridResult, InformationValue, ReportFormat, Scenario,
};
use sdds_core::models::{build_model, ModelSpec};
use sdds_core::training::{fit, EarlyStopping, EpochRecord};

const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 10;
const GRAD_SECONDS: f64 = 60.0;
const CONV_TOL: f64 = 1e-12;
const METRIC_INSTANCES: usize = 1000;
const THRESHOLD_INSTANCES: usize = 200;
const E2_MIN_F1: f64 = 0.90;
const E2_MAX_SECONDS: f64 = 15.0 * 60.0;
const TRANSFER_GAP: f64 = 0.05;
const SEGMENTATION_SLACK: f64 = 0.02;
const FOCUS_SHARE: f64 = 0.70;
const VAL_LOSS_RATIO: f64 = 1.2;

struct Outcome {
    lines: Vec<(usize, bool, String)>,
}

impl Outcome {
    fn record(&mut self, n: usize, pass: bool, text: String) {
        println!("{} [{n}] {text}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((n, pass, text));
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn f1s(r: &GridResult, id: &str) -> Vec<f64> {
    r.runs_of(id).map(|x| x.metrics.f1).collect()
}

fn stops(r: &GridResult, id: &str) -> Vec<f64> {
    r.runs_of(id).map(|x| x.history.stopped_epoch as f64).collect()
}

fn gradients(out: &mut Outcome) {
    let t = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut checks = 0;
    for seed in 0..GRAD_SEEDS {
        for (name, graph) in layer_cases() {
            let e = gradcheck(graph, 2, seed, weighted);
            if e > worst.0 {
                worst = (e, format!("{name} seed {seed}"));
            }
            checks += 1;
        }
        for (name, graph, kind) in loss_cases() {
            let e = gradcheck(graph, 3, seed, |shape, rng| Objective::Loss(kind, random_targets(shape, rng)));
            if e > worst.0 {
                worst = (e, format!("{name} seed {seed}"));
            }
            checks += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    out.record(
        1,
        worst.0 < GRAD_TOL && secs < GRAD_SECONDS,
        format!(
            "gradient suite: {checks} checks over {GRAD_SEEDS} seeds, worst rel err {:.2e} ({}), {secs:.1} s",
            worst.0, worst.1
        ),
    );
}

fn oracles(out: &mut Outcome) {
    let m = metrics_mismatches(METRIC_INSTANCES, 21);
    let t = threshold_mismatches(THRESHOLD_INSTANCES, 22);
    let c = conv_oracle_max_err(11).max(conv_oracle_max_err(12));
    out.record(
        2,
        m.is_empty() && t.is_empty() && c < CONV_TOL,
        format!(
            "oracles: metrics {}/{METRIC_INSTANCES} mismatches, threshold {}/{THRESHOLD_INSTANCES} mismatches, conv max err {c:.1e}",
            m.len(),
            t.len()
        ),
    );
}

fn balancer(out: &mut Outcome) {
    let keys = paper_scale_keys(17);
    let d = defective(&keys);
    let b = balance_undersample(&keys, 1).unwrap();
    let again = balance_undersample(&keys, 1).unwrap();
    let generated_ok = b.0.len() == 2 * d && defective(&b) == d && again == b;
    let exact = keys_with_defectives(640);
    let e = balance_undersample(&exact, 1).unwrap();
    let arithmetic_ok = exact.0.len() == 43_740 && e.0.len() == 1_280;
    out.record(
        3,
        generated_ok && arithmetic_ok && keys.0.len() == 43_740,
        format!(
            "balancer: generated {} segments, {d} defective ({:.2}%), balanced to {} (deterministic: {}); 640 defectives: {} -> {}",
            keys.0.len(),
            100.0 * d as f64 / keys.0.len() as f64,
            b.0.len(),
            again == b,
            exact.0.len(),
            e.0.len()
        ),
    );
}

fn early_stopping(out: &mut Outcome) {
    let losses = [1.0, 0.9, 0.91, 0.92];
    let rule = EarlyStopping { patience: 2, min_delta: 0.0, restore_best: true };
    let mut snapshots = Vec::new();
    let (m, h) = fit(build_model(&ModelSpec::binary(32), 1).unwrap(), 10, Some(&rule), |m, e| {
        for p in m.network_mut().params_mut() {
            p.tensor.data_mut()[0] = e as f64;
        }
        snapshots.push(m.to_bytes().unwrap());
        Ok(EpochRecord { epoch: e, train_loss: 0.0, val_loss: losses[e - 1], val_f1: 0.0 })
    })
    .unwrap();
    let restored = m.to_bytes().unwrap() == snapshots[1];
    out.record(
        10,
        h.stopped_epoch == 4 && h.best_epoch == 2 && restored,
        format!(
            "early stopping trace: stopped at {}, best {}, epoch-2 weights restored: {restored}",
            h.stopped_epoch, h.best_epoch
        ),
    );
}

fn grid_findings(out: &mut Outcome, cfg: &GridConfig, r: &GridResult) {
    let train_images = prepare_corpora(&cfg.corpora).map(|c| c.target.train.len()).unwrap_or(0);

    let e2 = f1s(r, "E2");
    let e2_secs = mean(&r.runs_of("E2").map(|x| x.seconds).collect::<Vec<_>>());
    let pretrain = r.setup_seconds.get("source_generic").copied().unwrap_or(f64::NAN);
    let e2_epochs = stops(r, "E2").iter().cloned().fold(0.0, f64::max);
    out.record(
        4,
        e2.len() == 3 && mean(&e2) >= E2_MIN_F1 && e2_epochs <= 60.0 && pretrain + e2_secs < E2_MAX_SECONDS,
        format!(
            "E2 test F1 {:.3} (seeds {e2:.3?}), {train_images} training images, at most {e2_epochs} epochs, {:.0} s pretraining + {:.0} s per run",
            mean(&e2),
            pretrain,
            e2_secs
        ),
    );

    let (e1, s1, s2) = (f1s(r, "E1"), stops(r, "E1"), stops(r, "E2"));
    out.record(
        5,
        e1.len() == 3 && mean(&e2) - mean(&e1) >= TRANSFER_GAP && mean(&s2) <= mean(&s1),
        format!(
            "transfer: F1 E2 {:.3} vs E1 {:.3} (gap {:+.3}); early-stop epoch E2 {:.1} vs E1 {:.1}",
            mean(&e2),
            mean(&e1),
            mean(&e2) - mean(&e1),
            mean(&s2),
            mean(&s1)
        ),
    );

    let (e6, e8) = (f1s(r, "E6"), f1s(r, "E8"));
    out.record(
        6,
        e6.len() == 3 && e8.len() == 3 && mean(&e8) >= mean(&e6) - SEGMENTATION_SLACK,
        format!("information value: F1 E8 {:.3} vs E6 {:.3} (seeds {e8:.3?} vs {e6:.3?})", mean(&e8), mean(&e6)),
    );

    let pooled = |id: &str| r.runs_of(id).flat_map(|x| x.focus_ratios.clone()).collect::<Vec<f64>>();
    let (f2, f1) = (pooled("E2"), pooled("E1"));
    let share = f2.iter().filter(|&&v| v > 1.0).count() as f64 / f2.len().max(1) as f64;
    let (m2, m1) = (median(&f2), median(&f1));
    // A scratch model with no true positives has no median; it did not learn.
    let beats = match (m2, m1) {
        (Some(a), Some(b)) => a > b,
        (Some(_), None) => true,
        _ => false,
    };
    let per_seed: Vec<String> = r
        .runs_of("E1")
        .map(|x| format!("seed {}: {}", x.seed, x.median_focus().map_or("no TP".into(), |m| format!("{m:.1}"))))
        .collect();
    out.record(
        7,
        !f2.is_empty() && share >= FOCUS_SHARE && beats,
        format!(
            "saliency: {:.1}% of {} E2 true positives focus > 1; median E2 {} vs E1 {} (E1 {})",
            100.0 * share,
            f2.len(),
            m2.map_or("-".into(), |v| format!("{v:.2}")),
            m1.map_or("-".into(), |v| format!("{v:.2}")),
            per_seed.join(", ")
        ),
    );

    let mut worst = (0.0, String::new());
    let mut over = Vec::new();
    for run in r.runs.iter() {
        let s = Scenario::paper(&run.id, vec![run.seed]).unwrap();
        if !s.features.has(10) {
            continue;
        }
        let min = run.history.best_val_loss();
        let ratio = run.history.final_val_loss().unwrap() / min;
        if ratio > worst.0 {
            worst = (ratio, format!("{} seed {}", run.id, run.seed));
        }
        if ratio > VAL_LOSS_RATIO {
            over.push(format!("{} seed {} {ratio:.3}", run.id, run.seed));
        }
    }
    out.record(
        8,
        over.is_empty(),
        format!(
            "last-epoch val loss / run minimum: worst {:.3} ({}); over {VAL_LOSS_RATIO}: [{}]",
            worst.0,
            worst.1,
            over.join(", ")
        ),
    );
}

fn strip_timing(mut r: GridResult) -> GridResult {
    r.setup_seconds.clear();
    for run in &mut r.runs {
        run.seconds = 0.0;
    }
    r
}

/// Reruns the binary group at the first seed, sources included, and the
/// tiny all-head grid twice; every number must match bit for bit.
fn determinism(out: &mut Outcome, cfg: &GridConfig, full: &GridResult) {
    let mut sub = cfg.clone().restrict(InformationValue::Binary).unwrap();
    sub.seeds = vec![cfg.seeds[0]];
    let again = strip_timing(run_grid(&sub, None).unwrap());
    let mut mismatched: Vec<String> = again
        .runs
        .iter()
        .filter(|run| full.runs.iter().find(|f| f.id == run.id && f.seed == run.seed) != Some(*run))
        .map(|run| format!("{} seed {}", run.id, run.seed))
        .collect();
    if again.source_histories != full.source_histories {
        mismatched.push("source histories".into());
    }
    let tiny = tiny_grid();
    let a = strip_timing(run_grid(&tiny, None).unwrap());
    let b = strip_timing(run_grid(&tiny, None).unwrap());
    let reports_equal = report(&a, ReportFormat::Csv).unwrap() == report(&b, ReportFormat::Csv).unwrap();
    if a != b || !reports_equal {
        mismatched.push("tiny grid".into());
    }
    out.record(
        9,
        mismatched.is_empty() && !again.runs.is_empty(),
        format!(
            "determinism: {} rerun runs of the full grid plus a tiny all-scenario grid; mismatches: [{}]",
            again.runs.len(),
            mismatched.join(", ")
        ),
    );
}

fn main() {
    let strict = std::env::var("SDDS_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut out = Outcome { lines: Vec::new() };

    gradients(&mut out);
    oracles(&mut out);
    balancer(&mut out);
    early_stopping(&mut out);

    let cfg = GridConfig::desk_default();
    let keep = std::env::var_os("SDDS_ACCEPTANCE_OUT").map(PathBuf::from);
    let tmp = tempfile::tempdir().unwrap();
    let dir = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    let t = Instant::now();
    let result = run_grid(&cfg, Some(&dir)).unwrap();
    println!("grid finished in {:.0} s; failures: {:?}", t.elapsed().as_secs_f64(), result.failures);
    print!("{}", report(&result, ReportFormat::Table).unwrap());
    grid_findings(&mut out, &cfg, &result);
    determinism(&mut out, &cfg, &strip_timing(result));

    out.lines.sort_by_key(|l| l.0);
    println!("\nsummary");
    for (n, pass, text) in &out.lines {
        println!("{} [{n}] {text}", if *pass { "PASS" } else { "FAIL" });
    }
    let failed: Vec<usize> = out.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    println!("{} of {} criteria pass", out.lines.len() - failed.len(), out.lines.len());
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
