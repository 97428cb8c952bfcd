use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use effgcn::arch::{
    check_scaling_constraint, make_arch, profile, receptive_sweep, sweep_csv, ArchPlan, LayerKind, ScalingConfig,
};
use effgcn::graph::SkeletonGraph;
use effgcn::io::save_tensor;
use effgcn::nn::probe::{run_probe, ProbeTarget};
use effgcn::nn::Network;
use effgcn::preprocess::{assemble_branches, load_sequence, sidecar_path, BranchInput, BranchKind, RawSequence};
use effgcn::tensor::{DType, Element, GradCheckOptions, GradCheckReport};
use effgcn::train::{
    class_activation_map, evaluate, load_split, save_split, split_holdout, synth_dataset, train, EpochLog, Metrics,
    PreparedSet, TrainConfig, CHECKPOINT_FILE,
};
use ndarray::{s, Array5};
use serde_json::{json, Value};

use crate::{ModelArgs, PlanArgs, Verb};

/// Classes assumed by plan, profile and sweep when `--classes` is absent.
const DEFAULT_CLASSES: usize = 60;
const PLAN_FILE: &str = "plan.json";
const METRICS_FILE: &str = "metrics.json";
const THREADS_VAR: &str = "EFFGCN_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] effgcn::Error),
    #[error("{0}")]
    Usage(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl CliError {
    /// 1 for rejected input, 2 for failures while doing the work.
    pub fn code(&self) -> u8 {
        use effgcn::Error as E;
        match self {
            CliError::Usage(_) | CliError::GradCheck(_) => 1,
            CliError::Core(E::Argument(_) | E::Config(_) | E::Structural(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(verb: Verb) -> Result<()> {
    match verb {
        Verb::Plan { plan, out, json } => cmd_plan(&plan, out.as_deref(), json),
        Verb::Profile {
            plan,
            frames,
            joints,
            bodies,
            graph,
            out,
            json,
        } => cmd_profile(&plan, frames, joints, bodies, graph.as_deref(), out.as_deref(), json),
        Verb::Gradcheck {
            layer,
            probe,
            dtype,
            tolerance,
            seed,
            json,
        } => cmd_gradcheck(layer, probe, &dtype, tolerance, seed, json),
        Verb::Preprocess {
            data,
            out,
            graph,
            frames,
            dtype,
            json,
        } => cmd_preprocess(&data, &out, graph.as_deref(), frames, &dtype, json),
        Verb::Synth {
            classes,
            per_class,
            frames,
            joints,
            holdout,
            seed,
            dtype,
            out,
            json,
        } => cmd_synth(classes, per_class, frames, joints, holdout, seed, &dtype, &out, json),
        Verb::Train {
            plan,
            data,
            out,
            graph,
            epochs,
            warmup_epochs,
            batch,
            lr,
            seed,
            dtype,
            json,
        } => {
            let config = TrainConfig {
                epochs,
                warmup_epochs,
                batch_size: batch,
                base_lr: lr,
                seed,
                ..TrainConfig::default()
            };
            let args = TrainArgs {
                plan: &plan,
                data: &data,
                out: &out,
                graph: graph.as_deref(),
                config,
                json,
            };
            match parse_dtype(&dtype)? {
                DType::F32 => cmd_train::<f32>(args),
                DType::F64 => cmd_train::<f64>(args),
            }
        }
        Verb::Eval {
            model,
            split,
            batch,
            out,
            json,
        } => match parse_dtype(&model.dtype)? {
            DType::F32 => cmd_eval::<f32>(&model, &split, batch, out.as_deref(), json),
            DType::F64 => cmd_eval::<f64>(&model, &split, batch, out.as_deref(), json),
        },
        Verb::Cam {
            model,
            split,
            index,
            class,
            out,
            json,
        } => match parse_dtype(&model.dtype)? {
            DType::F32 => cmd_cam::<f32>(&model, &split, index, class, &out, json),
            DType::F64 => cmd_cam::<f64>(&model, &split, index, class, &out, json),
        },
        Verb::Sweep {
            plan,
            distances,
            kernels,
            frames,
            joints,
            bodies,
            out,
            json,
        } => cmd_sweep(&plan, &distances, &kernels, frames, joints, bodies, out.as_deref(), json),
    }
}

fn parse_dtype(s: &str) -> Result<DType> {
    Ok(s.parse()?)
}

fn build_plan(args: &PlanArgs, default_classes: usize) -> Result<ArchPlan> {
    let kind: LayerKind = args.layer.parse()?;
    let config = ScalingConfig {
        alpha: args.alpha,
        beta: args.beta,
        phi: args.phi,
        ..ScalingConfig::default()
    };
    let plan = make_arch(
        &config,
        kind,
        args.ratio,
        args.max_distance,
        args.kernel,
        args.classes.unwrap_or(default_classes),
        args.allow_unconstrained,
    )?;
    Ok(if args.mini { plan.halved()? } else { plan })
}

fn load_graph(path: Option<&Path>) -> Result<SkeletonGraph> {
    Ok(match path {
        Some(p) => SkeletonGraph::load(p)?,
        None => SkeletonGraph::ntu25(),
    })
}

fn eval_threads() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))),
        },
    }
}

fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn plan_table(plan: &ArchPlan) -> String {
    let c = check_scaling_constraint(plan.alpha, plan.beta);
    let mut s = format!(
        "B{} {} ratio {} D={} L={} classes {} (alpha^2 beta = {:.4})\n",
        plan.phi,
        plan.layer_kind.name(),
        plan.ratio,
        plan.max_distance,
        plan.kernel,
        plan.num_classes,
        c.product
    );
    let _ = writeln!(s, "{:<6} {:<8} {:>8} {:>6} {:>6}", "stage", "location", "channels", "depth", "stride");
    let _ = writeln!(s, "{:<6} {:<8} {:>8} {:>6} {:>6}", "init", "branch", plan.init_channels, 1, 1);
    for (i, block) in plan.branch_blocks().iter().chain(plan.main_blocks().iter()).enumerate() {
        let location = if i < 2 { "branch" } else { "main" };
        let _ = writeln!(
            s,
            "{:<6} {:<8} {:>8} {:>6} {:>6}",
            i + 1,
            location,
            block.channels_out,
            block.depth,
            block.stride
        );
    }
    s
}

fn cmd_plan(args: &PlanArgs, out: Option<&Path>, json: bool) -> Result<()> {
    let plan = build_plan(args, DEFAULT_CLASSES)?;
    if let Some(dir) = out {
        write_file(dir, PLAN_FILE, plan.to_json()?)?;
    }
    if json {
        let c = check_scaling_constraint(plan.alpha, plan.beta);
        print_json(&json!({
            "plan": serde_json::to_value(&plan)?,
            "constraint_product": c.product,
            "constraint_residual": c.residual,
        }))
    } else {
        print!("{}", plan_table(&plan));
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_profile(
    args: &PlanArgs,
    frames: usize,
    joints: Option<usize>,
    bodies: usize,
    graph: Option<&Path>,
    out: Option<&Path>,
    json: bool,
) -> Result<()> {
    let plan = build_plan(args, DEFAULT_CLASSES)?;
    let joints = match joints {
        Some(v) => v,
        None => load_graph(graph)?.num_joints(),
    };
    let report = profile(&plan, frames, joints, bodies)?;
    if let Some(dir) = out {
        write_file(dir, "profile.csv", report.to_csv())?;
    }
    if json {
        return print_json(&serde_json::to_value(&report)?);
    }
    println!("{}", report.header());
    println!("{:<24} {:>12} {:>16}", "block", "params", "flops");
    for b in &report.blocks {
        println!("{:<24} {:>12} {:>16}", b.name, b.params, b.flops);
    }
    println!("{:<24} {:>12} {:>16}", "total", report.total_params, report.total_flops);
    println!(
        "{:.3}M params, {:.3}G FLOPs",
        report.total_params as f64 / 1e6,
        report.total_flops as f64 / 1e9
    );
    Ok(())
}

fn cmd_gradcheck(
    layer: Option<String>,
    probe: Option<String>,
    dtype: &str,
    tolerance: f64,
    seed: u64,
    json: bool,
) -> Result<()> {
    let targets = match (layer, probe) {
        (Some(l), _) => vec![ProbeTarget::Temporal(l.parse()?)],
        (None, Some(p)) => vec![p.parse()?],
        (None, None) => ProbeTarget::all(),
    };
    let opts = GradCheckOptions {
        tolerance,
        seed,
        ..GradCheckOptions::default()
    };
    let dtype = parse_dtype(dtype)?;
    let mut reports: Vec<(ProbeTarget, GradCheckReport)> = Vec::new();
    for target in targets {
        let report = match dtype {
            DType::F32 => run_probe::<f32>(target, &opts)?,
            DType::F64 => run_probe::<f64>(target, &opts)?,
        };
        if !json {
            for e in &report.entries {
                println!(
                    "{} {} {} max_rel {:.3e} ({} coords)",
                    if e.passed { "PASS" } else { "FAIL" },
                    target,
                    e.name,
                    e.max_rel_error,
                    e.checked
                );
            }
        }
        reports.push((target, report));
    }
    let failed: Vec<String> = reports
        .iter()
        .filter(|(_, r)| !r.passed())
        .map(|(t, _)| t.to_string())
        .collect();
    if json {
        let probes: Vec<Value> = reports
            .iter()
            .map(|(t, r)| {
                json!({
                    "probe": t.to_string(),
                    "passed": r.passed(),
                    "max_rel_error": r.max_rel_error(),
                    "params": r.entries.iter().map(|e| json!({
                        "name": e.name,
                        "checked": e.checked,
                        "max_rel_error": e.max_rel_error,
                        "passed": e.passed,
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        print_json(&json!({ "tolerance": tolerance, "passed": failed.is_empty(), "probes": probes }))?;
    } else {
        println!(
            "{} of {} probes passed at tolerance {tolerance:e}",
            reports.len() - failed.len(),
            reports.len()
        );
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}

fn sktn_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "sktn"));
    paths.sort();
    Ok(paths)
}

/// `[3 branches, 6, T, V, M]` for one sequence.
fn branch_tensor(bodies: &[BranchInput]) -> Array5<f64> {
    let (t, v) = (bodies[0].frames(), bodies[0].joints());
    let mut out = Array5::zeros((BranchKind::ALL.len(), 6, t, v, bodies.len()));
    for (m, body) in bodies.iter().enumerate() {
        for (b, kind) in BranchKind::ALL.into_iter().enumerate() {
            out.slice_mut(s![b, .., .., .., m]).assign(body.branch(kind));
        }
    }
    out
}

fn cmd_preprocess(
    data: &Path,
    out: &Path,
    graph: Option<&Path>,
    frames: Option<usize>,
    dtype: &str,
    json: bool,
) -> Result<()> {
    let graph = load_graph(graph)?;
    let dtype = parse_dtype(dtype)?;
    // Either a flat directory of sequences or one subdirectory per split.
    let mut jobs: Vec<(PathBuf, PathBuf)> = vec![(data.to_path_buf(), out.to_path_buf())];
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(data)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    subdirs.retain(|p| p.is_dir());
    subdirs.sort();
    for d in subdirs {
        let name = d.file_name().map(PathBuf::from).unwrap_or_default();
        jobs.push((d, out.join(name)));
    }
    let mut written = Vec::new();
    for (src, dst) in jobs {
        for path in sktn_files(&src)? {
            let mut seq: RawSequence = load_sequence(&path)?;
            if let Some(t) = frames {
                seq = seq.pad_to(t)?;
            }
            let tensor = branch_tensor(&assemble_branches(&seq, &graph)?).into_dyn();
            std::fs::create_dir_all(&dst)?;
            let target = dst.join(path.file_name().unwrap_or_default());
            match dtype {
                DType::F32 => save_tensor(&target, &tensor.mapv(|x| x as f32))?,
                DType::F64 => save_tensor(&target, &tensor)?,
            }
            std::fs::write(sidecar_path(&target), serde_json::to_string(&seq.meta())?)?;
            written.push((target, tensor.shape().to_vec()));
        }
    }
    if written.is_empty() {
        return Err(effgcn::Error::Data(format!("no .sktn files under {}", data.display())).into());
    }
    if json {
        let files: Vec<Value> = written
            .iter()
            .map(|(p, shape)| json!({ "path": p.display().to_string(), "shape": shape }))
            .collect();
        print_json(&json!({ "count": written.len(), "files": files }))
    } else {
        for (p, shape) in &written {
            println!("{} {:?}", p.display(), shape);
        }
        println!("{} sequences preprocessed", written.len());
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    classes: usize,
    per_class: usize,
    frames: usize,
    joints: usize,
    holdout: f64,
    seed: u64,
    dtype: &str,
    out: &Path,
    json: bool,
) -> Result<()> {
    let dtype = parse_dtype(dtype)?;
    let (train_seqs, eval_seqs) = split_holdout(synth_dataset(classes, per_class, frames, joints, seed)?, holdout)?;
    save_split(out, "train", &train_seqs, dtype)?;
    if !eval_seqs.is_empty() {
        save_split(out, "eval", &eval_seqs, dtype)?;
    }
    if json {
        print_json(&json!({
            "classes": classes,
            "frames": frames,
            "joints": joints,
            "train": train_seqs.len(),
            "eval": eval_seqs.len(),
        }))
    } else {
        println!(
            "{} train and {} eval sequences, {classes} classes, T={frames}, V={joints} in {}",
            train_seqs.len(),
            eval_seqs.len(),
            out.display()
        );
        Ok(())
    }
}

struct TrainArgs<'a> {
    plan: &'a PlanArgs,
    data: &'a Path,
    out: &'a Path,
    graph: Option<&'a Path>,
    config: TrainConfig,
    json: bool,
}

fn cmd_train<F: Element>(args: TrainArgs<'_>) -> Result<()> {
    let graph = load_graph(args.graph)?;
    let train_seqs = load_split(args.data, "train")?;
    let eval_seqs = if args.data.join("eval").is_dir() {
        Some(load_split(args.data, "eval")?)
    } else {
        None
    };
    let classes = train_seqs
        .iter()
        .chain(eval_seqs.iter().flatten())
        .filter_map(|s| s.label())
        .max()
        .map_or(0, |m| m + 1);
    let plan = build_plan(args.plan, classes)?;
    let train_set = PreparedSet::new(&train_seqs, &graph)?;
    let eval_set = eval_seqs.as_deref().map(|s| PreparedSet::new(s, &graph)).transpose()?;
    let mut net = Network::<F>::new(&plan, &graph, args.config.seed)?;
    write_file(args.out, PLAN_FILE, plan.to_json()?)?;
    let json = args.json;
    let log = train(
        &mut net,
        &train_set,
        eval_set.as_ref(),
        &args.config,
        Some(args.out),
        |row: &EpochLog| {
            if !json {
                let eval = row.eval_acc.map_or(String::new(), |a| format!(" eval_acc {a:.4}"));
                println!(
                    "epoch {:>3} lr {:.5} loss {:.4} train_acc {:.4}{eval}",
                    row.epoch, row.lr, row.train_loss, row.train_acc
                );
            }
        },
    )?;
    let eval_metrics = match &eval_set {
        Some(set) => Some(evaluate(&mut net, set, args.config.batch_size, eval_threads()?)?),
        None => None,
    };
    let last = log.last().cloned();
    let summary = json!({
        "params": net.num_params(),
        "epochs": log.len(),
        "final_train_loss": last.as_ref().map(|r| r.train_loss),
        "final_train_acc": last.as_ref().map(|r| r.train_acc),
        "eval": eval_metrics.as_ref().map(serde_json::to_value).transpose()?,
    });
    write_file(args.out, METRICS_FILE, serde_json::to_string_pretty(&summary)?)?;
    if json {
        print_json(&json!({ "summary": summary, "log": serde_json::to_value(&log)? }))
    } else {
        if let Some(m) = &eval_metrics {
            println!("eval top1 {:.4} loss {:.4}", m.top1_accuracy, m.loss);
        }
        println!("wrote {}", args.out.join(CHECKPOINT_FILE).display());
        Ok(())
    }
}

fn load_model<F: Element>(model: &ModelArgs) -> Result<(Network<F>, SkeletonGraph)> {
    let plan_path = match &model.plan {
        Some(p) => p.clone(),
        None => model
            .checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(PLAN_FILE),
    };
    let plan = ArchPlan::from_json(&std::fs::read_to_string(&plan_path)?)?;
    let graph = load_graph(model.graph.as_deref())?;
    let mut net = Network::<F>::new(&plan, &graph, 0)?;
    net.load_checkpoint(&model.checkpoint)?;
    Ok((net, graph))
}

fn print_metrics(m: &Metrics) {
    println!("top1 {:.4} loss {:.4}", m.top1_accuracy, m.loss);
    print!("{}", m.confusion_csv());
}

fn cmd_eval<F: Element>(model: &ModelArgs, split: &str, batch: usize, out: Option<&Path>, json: bool) -> Result<()> {
    let (mut net, graph) = load_model::<F>(model)?;
    let seqs = load_split(&model.data, split)?;
    let set = PreparedSet::new(&seqs, &graph)?;
    let metrics = evaluate(&mut net, &set, batch, eval_threads()?)?;
    if let Some(dir) = out {
        write_file(dir, "confusion.csv", metrics.confusion_csv())?;
        write_file(dir, METRICS_FILE, serde_json::to_string_pretty(&metrics)?)?;
    }
    if json {
        print_json(&serde_json::to_value(&metrics)?)
    } else {
        print_metrics(&metrics);
        Ok(())
    }
}

fn cmd_cam<F: Element>(
    model: &ModelArgs,
    split: &str,
    index: usize,
    class: Option<usize>,
    out: &Path,
    json: bool,
) -> Result<()> {
    let (mut net, graph) = load_model::<F>(model)?;
    let seqs = load_split(&model.data, split)?;
    let seq = seqs
        .get(index)
        .ok_or_else(|| CliError::Usage(format!("index {index} is past the {} sequences of `{split}`", seqs.len())))?;
    let class = class
        .or(seq.label())
        .ok_or_else(|| CliError::Usage("sequence has no label; pass --class".into()))?;
    let bodies: Vec<BranchInput> = assemble_branches(seq, &graph)?
        .into_iter()
        .enumerate()
        .filter(|(m, _)| *m == 0 || seq.body_has_content(*m))
        .map(|(_, b)| b)
        .collect();
    let map = class_activation_map(&mut net, &bodies, class)?;
    let (frames, joints) = map.dim();
    let mut csv = String::from("frame");
    for j in 0..joints {
        let _ = write!(csv, ",j{j}");
    }
    csv.push('\n');
    for (t, row) in map.rows().into_iter().enumerate() {
        let _ = write!(csv, "{t}");
        for x in row {
            let _ = write!(csv, ",{x}");
        }
        csv.push('\n');
    }
    let path = write_file(out, "cam.csv", &csv)?;
    if json {
        let rows: Vec<Vec<f64>> = map.rows().into_iter().map(|r| r.to_vec()).collect();
        print_json(&json!({ "class": class, "frames": frames, "joints": joints, "map": rows }))
    } else {
        println!("class {class}, {frames} x {joints} map written to {}", path.display());
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    args: &PlanArgs,
    distances: &[usize],
    kernels: &[usize],
    frames: usize,
    joints: usize,
    bodies: usize,
    out: Option<&Path>,
    json: bool,
) -> Result<()> {
    let template = build_plan(args, DEFAULT_CLASSES)?;
    let cells = receptive_sweep(&template, distances, kernels, frames, joints, bodies)?;
    if let Some(dir) = out {
        write_file(dir, "sweep.csv", sweep_csv(&cells))?;
    }
    if json {
        let rows: Vec<Value> = cells
            .iter()
            .map(|c| {
                json!({
                    "D": c.max_distance,
                    "L": c.kernel,
                    "params": c.report.total_params,
                    "flops": c.report.total_flops,
                })
            })
            .collect();
        print_json(&json!({ "frames": frames, "joints": joints, "bodies": bodies, "cells": rows }))
    } else {
        println!("{:>3} {:>3} {:>10} {:>14}", "D", "L", "params", "flops");
        for c in &cells {
            println!(
                "{:>3} {:>3} {:>10} {:>14}",
                c.max_distance, c.kernel, c.report.total_params, c.report.total_flops
            );
        }
        Ok(())
    }
}
