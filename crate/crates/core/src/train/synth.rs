use std::f64::consts::TAU;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::preprocess::RawSequence;

/// Per-coordinate Gaussian noise added to every frame.
pub const SYNTH_JITTER: f64 = 0.01;

#[derive(Debug, Clone)]
struct Motion {
    joints: Vec<usize>,
    axis: usize,
    /// Full cycles over the sequence.
    cycles: f64,
    amplitude: f64,
}

/// Single-body sequences where class `k` oscillates its own joint subset.
///
/// Samples are ordered by class, `samples_per_class` each.
pub fn synth_dataset(
    num_classes: usize,
    samples_per_class: usize,
    frames: usize,
    joints: usize,
    seed: u64,
) -> Result<Vec<RawSequence>> {
    if num_classes < 2 {
        return Err(Error::arg(format!("need at least 2 classes, got {num_classes}")));
    }
    if frames == 0 || joints == 0 {
        return Err(Error::arg("frames and joints must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest: Vec<[f64; 3]> = (0..joints)
        .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.8..0.8), rng.random_range(2.5..3.5)])
        .collect();
    let mut order: Vec<usize> = (0..joints).collect();
    order.shuffle(&mut rng);
    let per = (joints / num_classes).clamp(1, 5);
    let motions: Vec<Motion> = (0..num_classes)
        .map(|k| Motion {
            joints: (0..per).map(|i| order[(k * per + i) % joints]).collect(),
            axis: k % 3,
            cycles: 1.0 + k as f64 * 0.5,
            amplitude: 0.12 * (1.0 + 0.25 * (k % 4) as f64),
        })
        .collect();
    let jitter = Normal::new(0.0, SYNTH_JITTER).expect("positive std");
    let offset = Normal::new(0.0, 0.05).expect("positive std");
    let mut out = Vec::with_capacity(num_classes * samples_per_class);
    for (label, m) in motions.iter().enumerate() {
        for _ in 0..samples_per_class {
            let phase = rng.random_range(-0.2..0.2);
            let gain = rng.random_range(0.9..1.1);
            let shift = [offset.sample(&mut rng), offset.sample(&mut rng), offset.sample(&mut rng)];
            let mut coords = Array4::<f64>::zeros((3, frames, joints, 1));
            for t in 0..frames {
                let wave = (TAU * m.cycles * t as f64 / frames as f64 + phase).sin();
                for (v, pos) in rest.iter().enumerate() {
                    for c in 0..3 {
                        coords[[c, t, v, 0]] = pos[c] + shift[c] + jitter.sample(&mut rng);
                    }
                }
                for (i, &v) in m.joints.iter().enumerate() {
                    let lag = (TAU * m.cycles * t as f64 / frames as f64 + phase + 0.5 * i as f64).sin();
                    coords[[m.axis, t, v, 0]] += gain * m.amplitude * 0.5 * (wave + lag);
                }
            }
            out.push(RawSequence::new(coords, Some(label))?);
        }
    }
    Ok(out)
}

/// Moves the last `fraction` of every class into a second, held-out set.
pub fn split_holdout(seqs: Vec<RawSequence>, fraction: f64) -> Result<(Vec<RawSequence>, Vec<RawSequence>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::arg(format!("held-out fraction must be in [0, 1), got {fraction}")));
    }
    let mut counts = std::collections::BTreeMap::new();
    for s in &seqs {
        *counts.entry(s.label()).or_insert(0usize) += 1;
    }
    let mut seen = std::collections::BTreeMap::new();
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for s in seqs {
        let n = counts[&s.label()];
        let k = seen.entry(s.label()).or_insert(0usize);
        let keep = n - (n as f64 * fraction).round() as usize;
        if *k < keep {
            train.push(s);
        } else {
            held.push(s);
        }
        *k += 1;
    }
    Ok((train, held))
}
