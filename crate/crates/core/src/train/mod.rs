//! Loss, optimizer, schedule, training loop, evaluation and class activation maps.

mod data;
mod optim;
mod synth;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayD, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{batch_branches, Network};
use crate::preprocess::BranchInput;
use crate::tensor::{Element, Graph};

pub use data::{load_split, save_split, PreparedSet};
pub use optim::{sgd_nesterov_step, Sgd};
pub use synth::{split_holdout, synth_dataset, SYNTH_JITTER};

pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.skck";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    /// Nesterov momentum.
    pub momentum: f64,
    pub weight_decay: f64,
    /// Skip weight decay on batch-norm affine parameters, biases and edge masks.
    pub exclude_norm_and_bias_decay: bool,
    pub dropout: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 70,
            base_lr: 0.1,
            warmup_epochs: 10,
            momentum: 0.9,
            weight_decay: 1e-4,
            exclude_norm_and_bias_decay: true,
            dropout: 0.25,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup epochs ({}) must be fewer than epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("base learning rate must be positive, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("momentum must be in [0, 1) and weight decay non-negative".into()));
        }
        Ok(())
    }
}

/// Linear warmup from 0, then cosine decay to 0 over the remaining epochs.
pub fn lr_at_epoch(epoch: usize, config: &TrainConfig) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::arg(format!("epoch {epoch} outside 0..{}", config.epochs)));
    }
    let (w, e) = (config.warmup_epochs, config.epochs);
    Ok(if epoch < w {
        config.base_lr * epoch as f64 / w as f64
    } else {
        config.base_lr * 0.5 * (1.0 + (PI * (epoch - w) as f64 / (e - w) as f64).cos())
    })
}

/// Loss `-log softmax(z)[target]` and its gradient `softmax(z) - onehot(target)`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::arg(format!("target {target} out of range for {} classes", logits.len())));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let loss = denom.ln() - (logits[target] - max);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| e / denom - if i == target { 1.0 } else { 0.0 })
        .collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean cross-entropy per sequence.
    pub loss: f64,
    pub top1_accuracy: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

impl Metrics {
    pub fn from_confusion(loss: f64, confusion: Vec<Vec<u64>>) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let hits: u64 = confusion.iter().enumerate().map(|(i, r)| r[i]).sum();
        let top1_accuracy = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
        Self {
            loss,
            top1_accuracy,
            confusion,
        }
    }

    pub fn confusion_csv(&self) -> String {
        let q = self.confusion.len();
        let mut s = String::from("truth");
        for j in 0..q {
            let _ = write!(s, ",pred{j}");
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{i}");
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }
}

fn argmax(col: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, z) in col.enumerate() {
        if z > best.1 {
            best = (i, z);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,train_loss,train_acc,eval_acc\n");
    for e in log {
        let eval = e.eval_acc.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{eval}", e.epoch, e.lr, e.train_loss, e.train_acc);
    }
    s
}

fn check_labels(set: &PreparedSet, q: usize) -> Result<()> {
    match set.labels.iter().find(|&&l| l >= q) {
        Some(l) => Err(Error::Data(format!("label {l} out of range for {q} classes"))),
        None => Ok(()),
    }
}

/// Sequence-level logits `[Q, S]` for the sequences `idx` of `set`.
fn run_batch<F: Element>(
    net: &mut Network<F>,
    graph: &mut Graph<F>,
    set: &PreparedSet,
    idx: &[usize],
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<crate::tensor::Var> {
    let (bodies, owner) = set.batch(idx);
    let inputs = batch_branches::<F>(&bodies, &net.plan().branches)?;
    let out = net.forward(graph, &inputs, train, rng)?;
    Network::sequence_logits(graph, out.logits, &owner)
}

/// Trains `net` in place and returns one log row per epoch.
///
/// With `out` set, the CSV log and a checkpoint are rewritten after every epoch.
/// `on_epoch` sees each row as soon as it is complete.
pub fn train<F: Element>(
    net: &mut Network<F>,
    train_set: &PreparedSet,
    eval_set: Option<&PreparedSet>,
    config: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    let q = net.plan().num_classes;
    check_labels(train_set, q)?;
    if let Some(e) = eval_set {
        check_labels(e, q)?;
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    net.dropout = config.dropout;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);
    let mut opt = Sgd::new(
        net.store(),
        config.momentum,
        config.weight_decay,
        config.exclude_norm_and_bias_decay,
    );
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(epoch, config)?;
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let mut graph = Graph::new();
            let logits = run_batch(net, &mut graph, train_set, idx, true, &mut dropout_rng)?;
            let targets: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let loss = graph.softmax_cross_entropy(logits, &targets)?;
            let value = graph.scalar(loss).as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite { epoch, batch, lr });
            }
            loss_sum += value * idx.len() as f64;
            let z = graph.value(logits);
            for (k, &t) in targets.iter().enumerate() {
                if argmax(z.index_axis(Axis(1), k).iter().map(|v| v.as_f64())) == t {
                    hits += 1;
                }
            }
            net.store_mut().zero_grad();
            graph.backward(loss, net.store_mut())?;
            opt.step(net.store_mut(), lr)?;
        }
        let n = train_set.len() as f64;
        let eval_acc = match eval_set {
            Some(e) => Some(evaluate(net, e, config.batch_size, 1)?.top1_accuracy),
            None => None,
        };
        let row = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_acc: hits as f64 / n,
            eval_acc,
        };
        on_epoch(&row);
        log.push(row);
        if let Some(dir) = out {
            std::fs::write(dir.join(LOG_FILE), log_csv(&log))?;
            net.save_checkpoint(dir.join(CHECKPOINT_FILE))?;
        }
    }
    Ok(log)
}

fn evaluate_chunk<F: Element>(net: &mut Network<F>, set: &PreparedSet, batches: &[Vec<usize>]) -> Result<Vec<(f64, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::new();
    for idx in batches {
        let mut graph = Graph::inference();
        let logits = run_batch(net, &mut graph, set, idx, false, &mut rng)?;
        let z = graph.value(logits);
        for (k, &i) in idx.iter().enumerate() {
            let col: Vec<f64> = z.index_axis(Axis(1), k).iter().map(|v| v.as_f64()).collect();
            let (loss, _) = softmax_cross_entropy(&col, set.labels[i])?;
            out.push((loss, argmax(col.into_iter())));
        }
    }
    Ok(out)
}

/// Eval-mode metrics over `set`, split across up to `threads` workers.
///
/// Batches are fixed by `batch_size` alone, so results do not depend on `threads`.
pub fn evaluate<F: Element>(net: &mut Network<F>, set: &PreparedSet, batch_size: usize, threads: usize) -> Result<Metrics> {
    let q = net.plan().num_classes;
    check_labels(set, q)?;
    if batch_size == 0 {
        return Err(Error::arg("batch size must be positive"));
    }
    let batches: Vec<Vec<usize>> = (0..set.len())
        .collect::<Vec<_>>()
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect();
    let threads = threads.clamp(1, batches.len().max(1));
    let results: Vec<(f64, usize)> = if threads == 1 {
        evaluate_chunk(net, set, &batches)?
    } else {
        let per = batches.len().div_ceil(threads);
        let shared: &Network<F> = net;
        let parts: Vec<Result<Vec<(f64, usize)>>> = std::thread::scope(|s| {
            let handles: Vec<_> = batches
                .chunks(per)
                .map(|chunk| {
                    let mut local = shared.clone();
                    s.spawn(move || evaluate_chunk(&mut local, set, chunk))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(set.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let mut confusion = vec![vec![0u64; q]; q];
    let mut loss = 0.0;
    for (&truth, &(l, pred)) in set.labels.iter().zip(&results) {
        confusion[truth][pred] += 1;
        loss += l;
    }
    Ok(Metrics::from_confusion(loss / set.len().max(1) as f64, confusion))
}

/// `ReLU(sum_c w[c] * features[c, t, v])` normalized by its maximum.
///
/// `features` is `[C, T', V]`; an all-zero map stays zero.
pub fn cam_from_features(features: &ArrayD<f64>, weights: &[f64]) -> Result<Array2<f64>> {
    let s = features.shape();
    if s.len() != 3 || s[0] != weights.len() {
        return Err(Error::arg(format!(
            "features {s:?} do not match {} class weights",
            weights.len()
        )));
    }
    let mut map = Array2::<f64>::zeros((s[1], s[2]));
    for (c, &w) in weights.iter().enumerate() {
        map.scaled_add(w, &features.index_axis(Axis(0), c));
    }
    map.mapv_inplace(|x| x.max(0.0));
    let max = map.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        map.mapv_inplace(|x| x / max);
    }
    Ok(map)
}

/// Eval-mode class scores of one sequence, averaged over its bodies.
pub fn predict<F: Element>(net: &mut Network<F>, bodies: &[BranchInput]) -> Result<Vec<f64>> {
    if bodies.is_empty() {
        return Err(Error::arg("a sequence needs at least one body"));
    }
    let refs: Vec<&BranchInput> = bodies.iter().collect();
    let inputs = batch_branches::<F>(&refs, &net.plan().branches)?;
    let mut graph = Graph::inference();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = net.forward(&mut graph, &inputs, false, &mut rng)?;
    let logits = Network::sequence_logits(&mut graph, out.logits, &vec![0; bodies.len()])?;
    Ok(graph.value(logits).iter().map(|v| v.as_f64()).collect())
}

/// Class activation map `[T', V]` of one sequence, averaged over its bodies.
pub fn class_activation_map<F: Element>(net: &mut Network<F>, bodies: &[BranchInput], class: usize) -> Result<Array2<f64>> {
    let q = net.plan().num_classes;
    if class >= q {
        return Err(Error::arg(format!("class {class} out of range for {q} classes")));
    }
    let refs: Vec<&BranchInput> = bodies.iter().collect();
    let inputs = batch_branches::<F>(&refs, &net.plan().branches)?;
    let mut graph = Graph::inference();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = net.forward(&mut graph, &inputs, false, &mut rng)?;
    let features = graph.value(out.features).mapv(|v| v.as_f64());
    let mean = features.mean_axis(Axis(1)).expect("at least one body");
    let w = &net.store().param(net.fc_weight()).value;
    let row: Vec<f64> = w.index_axis(Axis(0), class).iter().map(|v| v.as_f64()).collect();
    cam_from_features(&mean, &row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn schedule_points() {
        let c = TrainConfig::default();
        assert_eq!(lr_at_epoch(0, &c).unwrap(), 0.0);
        assert_eq!(lr_at_epoch(10, &c).unwrap(), 0.1);
        assert!((lr_at_epoch(40, &c).unwrap() - 0.05).abs() < 1e-15);
        let end = 0.1 * 0.5 * (1.0 + (59.0 * PI / 60.0).cos());
        assert!((lr_at_epoch(69, &c).unwrap() - end).abs() < 1e-18);
        assert!((end - 6.852e-5).abs() < 1e-8);
        assert!(lr_at_epoch(70, &c).is_err());
    }

    #[test]
    fn config_rules() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.warmup_epochs = 70;
        assert!(c.validate().is_err());
        c = TrainConfig { dropout: 1.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        c = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, _) = softmax_cross_entropy(&[20.0, 0.0, 0.0, 0.0], 0).unwrap();
        assert!(l < 1e-8);
        let (l, g) = softmax_cross_entropy(&[0.3; 4], 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert!(softmax_cross_entropy(&[0.0; 4], 4).is_err());
    }

    #[test]
    fn metrics_from_confusion() {
        let m = Metrics::from_confusion(0.0, vec![vec![3, 1], vec![0, 4]]);
        assert_eq!(m.top1_accuracy, 7.0 / 8.0);
        assert!(m.confusion_csv().starts_with("truth,pred0,pred1\n0,3,1\n"));
    }

    #[test]
    fn cam_zero_and_normalized() {
        let f = ArrayD::from_shape_fn(IxDyn(&[2, 3, 4]), |i| i[1] as f64 - i[2] as f64 + i[0] as f64);
        let z = cam_from_features(&f, &[0.0, 0.0]).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
        let m = cam_from_features(&f, &[1.0, 0.5]).unwrap();
        assert_eq!(m.iter().copied().fold(0.0, f64::max), 1.0);
        assert!(m.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(cam_from_features(&f, &[1.0]).is_err());
    }

    #[test]
    fn log_format() {
        let rows = [EpochLog {
            epoch: 0,
            lr: 0.0,
            train_loss: 1.5,
            train_acc: 0.25,
            eval_acc: None,
        }];
        assert_eq!(log_csv(&rows), "epoch,lr,train_loss,train_acc,eval_acc\n0,0,1.5,0.25,\n");
    }
}
