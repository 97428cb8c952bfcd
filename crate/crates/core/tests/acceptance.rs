//! One PASS/FAIL line per acceptance criterion, written straight to stdout.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use effgcn::arch::{check_scaling_constraint, count_flops, receptive_sweep, ArchPlan};
use effgcn::graph::SkeletonGraph;
use effgcn::nn::probe::{run_probe, ProbeTarget};
use effgcn::nn::Network;
use effgcn::tensor::GradCheckOptions;
use effgcn::train::{evaluate, split_holdout, synth_dataset, train, PreparedSet, TrainConfig, CHECKPOINT_FILE, LOG_FILE};

const PLAN_BUDGET: Duration = Duration::from_secs(1);
const PARAM_TOLERANCE: f64 = 0.05;
const PARAM_BUDGET: Duration = Duration::from_secs(10);
const FLOPS_B0_REFERENCE: f64 = 2.73e9;
const FLOPS_B2_REFERENCE: f64 = 4.05e9;
const FLOPS_B4_REFERENCE: f64 = 8.36e9;
const FLOPS_TOLERANCE: f64 = 0.20;
const FLOPS_RATIO_TOLERANCE: f64 = 0.10;
const GRAD_TOLERANCE: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(300);
const GRAPH_CONV_TOLERANCE: f64 = 1e-10;
const PREPROCESS_BUDGET: Duration = Duration::from_secs(10);
const TRAIN_ACC_TARGET: f64 = 0.95;
const HELDOUT_ACC_TARGET: f64 = 0.90;
const TRAIN_BUDGET: Duration = Duration::from_secs(600);
const CONSTRAINT_PRODUCT: f64 = 1.944;

fn report(n: usize, pass: bool, detail: String) -> bool {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = out.flush();
    pass
}

fn criterion_1() -> (bool, String) {
    let t = Instant::now();
    let expected = [
        (0, [48, 16, 64, 128], [0, 0, 1, 1]),
        (2, [64, 32, 96, 192], [1, 1, 2, 2]),
        (4, [96, 48, 128, 272], [2, 2, 3, 3]),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (phi, ch, depth) in expected {
        let plan = ArchPlan::efficient(phi, 60).unwrap();
        ok &= plan.stage_channels == ch && plan.stage_depths == depth;
        parts.push(format!("B{phi} {:?}/{:?}", plan.stage_channels, plan.stage_depths));
    }
    let elapsed = t.elapsed();
    (ok && elapsed < PLAN_BUDGET, format!("{} in {elapsed:.2?}", parts.join(", ")))
}

fn criterion_2() -> (bool, String) {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, plan, millions) in common::parameter_targets() {
        let (analytic, registry) = common::count_pair(&plan, 25);
        let rel = (analytic as f64 / 1e6 - millions) / millions;
        ok &= analytic == registry && rel.abs() <= PARAM_TOLERANCE;
        parts.push(format!("{label} {analytic} ({:+.1}%)", 100.0 * rel));
    }
    let elapsed = t.elapsed();
    (ok && elapsed < PARAM_BUDGET, format!("{}; registry = analytic; {elapsed:.2?}", parts.join(", ")))
}

fn criterion_3() -> (bool, String) {
    let flops = |phi| count_flops(&ArchPlan::efficient(phi, 60).unwrap(), 300, 25, 2).unwrap() as f64;
    let (b0, b2, b4) = (flops(0), flops(2), flops(4));
    let rel0 = (b0 - FLOPS_B0_REFERENCE) / FLOPS_B0_REFERENCE;
    let r2 = (b2 / b0) / (FLOPS_B2_REFERENCE / FLOPS_B0_REFERENCE) - 1.0;
    let r4 = (b4 / b0) / (FLOPS_B4_REFERENCE / FLOPS_B0_REFERENCE) - 1.0;
    let ok = rel0.abs() <= FLOPS_TOLERANCE && r2.abs() <= FLOPS_RATIO_TOLERANCE && r4.abs() <= FLOPS_RATIO_TOLERANCE;
    (
        ok,
        format!(
            "B0 {:.3}G ({:+.1}%), B2:B0 {:.3} ({:+.1}%), B4:B0 {:.3} ({:+.1}%), 2 bodies",
            b0 / 1e9,
            100.0 * rel0,
            b2 / b0,
            100.0 * r2,
            b4 / b0,
            100.0 * r4
        ),
    )
}

fn criterion_4() -> (bool, String) {
    let t = Instant::now();
    let opts = GradCheckOptions {
        tolerance: GRAD_TOLERANCE,
        ..GradCheckOptions::default()
    };
    let mut ok = true;
    let mut worst = (0.0f64, String::new());
    let mut failed = Vec::new();
    for target in ProbeTarget::all() {
        match run_probe::<f64>(target, &opts) {
            Ok(r) => {
                if !r.passed() {
                    failed.push(target.to_string());
                }
                if r.max_rel_error() > worst.0 {
                    worst = (r.max_rel_error(), target.to_string());
                }
                ok &= r.passed();
            }
            Err(e) => {
                ok = false;
                failed.push(format!("{target} ({e})"));
            }
        }
    }
    let elapsed = t.elapsed();
    let detail = format!(
        "{} probes, worst {:.2e} ({}), failed [{}], {elapsed:.1?}",
        ProbeTarget::all().len(),
        worst.0,
        worst.1,
        failed.join(", ")
    );
    (ok && elapsed < GRAD_BUDGET, detail)
}

fn criterion_5() -> (bool, String) {
    let gap = common::graph_conv_max_gap(50, 7);
    (gap < GRAPH_CONV_TOLERANCE, format!("50 graphs, max gap {gap:.2e}"))
}

fn criterion_6() -> (bool, String) {
    let t = Instant::now();
    let result = common::preprocessing_properties(100, 11);
    let elapsed = t.elapsed();
    match result {
        Ok(()) => (elapsed < PREPROCESS_BUDGET, format!("100 sequences in {elapsed:.2?}")),
        Err(e) => (false, e),
    }
}

struct TrainRun {
    train_acc: f64,
    heldout_acc: f64,
    checkpoint: Vec<u8>,
    log: String,
    losses: Vec<f64>,
    elapsed: Duration,
}

fn desk_run(dir: &std::path::Path) -> TrainRun {
    let t = Instant::now();
    let graph = SkeletonGraph::ntu25();
    let config = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let (train_seqs, held_seqs) = split_holdout(synth_dataset(4, 100, 60, 25, config.seed).unwrap(), 0.2).unwrap();
    let train_set = PreparedSet::new(&train_seqs, &graph).unwrap();
    let held_set = PreparedSet::new(&held_seqs, &graph).unwrap();
    let plan = ArchPlan::mini(4).unwrap();
    let mut net = Network::<f32>::new(&plan, &graph, config.seed).unwrap();
    let log = train(&mut net, &train_set, None, &config, Some(dir), |_| {}).unwrap();
    let held = evaluate(&mut net, &held_set, config.batch_size, 1).unwrap();
    TrainRun {
        train_acc: log.last().unwrap().train_acc,
        heldout_acc: held.top1_accuracy,
        checkpoint: std::fs::read(dir.join(CHECKPOINT_FILE)).unwrap(),
        log: std::fs::read_to_string(dir.join(LOG_FILE)).unwrap(),
        losses: log.iter().map(|r| r.train_loss).collect(),
        elapsed: t.elapsed(),
    }
}

/// Largest increase of the 5-epoch moving average of the loss, with the epoch it ends on.
fn largest_smoothed_rise(losses: &[f64]) -> (f64, usize) {
    let smooth: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    smooth
        .windows(2)
        .enumerate()
        .map(|(i, w)| (w[1] - w[0], i + 5))
        .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
}

fn criterion_7() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let a = desk_run(&dir.path().join("first"));
    let b = desk_run(&dir.path().join("second"));
    let same = a.checkpoint == b.checkpoint && a.log == b.log;
    let rise = largest_smoothed_rise(&a.losses);
    let ok = a.train_acc >= TRAIN_ACC_TARGET
        && a.heldout_acc >= HELDOUT_ACC_TARGET
        && same
        && a.elapsed < TRAIN_BUDGET
        && b.elapsed < TRAIN_BUDGET;
    (
        ok,
        format!(
            "train {:.3}, held-out {:.3}, bitwise identical reruns: {same}, runs {:.0?} and {:.0?}; \
             loss {:.3} -> {:.4}, largest 5-epoch smoothed rise {:.4} at epoch {}",
            a.train_acc,
            a.heldout_acc,
            a.elapsed,
            b.elapsed,
            a.losses[0],
            a.losses[a.losses.len() - 1],
            rise.0,
            rise.1
        ),
    )
}

fn criterion_8() -> (bool, String) {
    let template = ArchPlan::efficient(0, 60).unwrap();
    let ds = [1, 2, 3, 4, 5];
    let ls = [3, 5, 7, 9, 11];
    let cells = receptive_sweep(&template, &ds, &ls, 300, 25, 2).unwrap();
    let p = |i: usize, j: usize| cells[i * ls.len() + j].report.total_params as i64;
    let mut ok = true;
    for i in 0..ds.len() {
        for j in 0..ls.len() {
            if i + 1 < ds.len() {
                ok &= p(i + 1, j) > p(i, j);
                if i + 2 < ds.len() {
                    ok &= p(i + 2, j) - p(i + 1, j) == p(i + 1, j) - p(i, j);
                }
            }
            if j + 1 < ls.len() {
                ok &= p(i, j + 1) > p(i, j);
            }
        }
    }
    let c = check_scaling_constraint(1.2, 1.35);
    ok &= (c.product - CONSTRAINT_PRODUCT).abs() < 1e-9 && c.passed;
    (
        ok,
        format!("25 cells, D step +{} params, alpha^2 beta = {:.4}", p(1, 0) - p(0, 0), c.product),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [fn() -> (bool, String); 8] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
    ];
    let mut failed = Vec::new();
    for (i, c) in criteria.iter().enumerate() {
        let (pass, detail) = c();
        if !report(i + 1, pass, detail) {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
