//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use effgcn::arch::{profile, ArchPlan, AttentionKind, LayerKind};
use effgcn::graph::{mean_normalize_partition, SkeletonGraph};
use effgcn::nn::{sgc_forward, Network};
use effgcn::preprocess::{assemble_branches, RawSequence};
use effgcn::tensor::Graph;
use ndarray::{Array2, Array4, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random connected graph: a random spanning tree plus a few chords.
pub fn random_edges(v: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..v).map(|j| (rng.random_range(0..j), j)).collect();
    for _ in 0..rng.random_range(0..=v / 2) {
        let (a, b) = (rng.random_range(0..v), rng.random_range(0..v));
        if a != b && !edges.contains(&(a, b)) && !edges.contains(&(b, a)) {
            edges.push((a, b));
        }
    }
    edges
}

/// Hop distances by breadth-first search from every joint.
pub fn bfs_hops(v: usize, edges: &[(usize, usize)]) -> Vec<Vec<Option<usize>>> {
    let mut nbrs = vec![Vec::new(); v];
    for &(a, b) in edges {
        nbrs[a].push(b);
        nbrs[b].push(a);
    }
    (0..v)
        .map(|s| {
            let mut d = vec![None; v];
            d[s] = Some(0);
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &w in &nbrs[u] {
                    if d[w].is_none() {
                        d[w] = Some(d[u].unwrap() + 1);
                        q.push_back(w);
                    }
                }
            }
            d
        })
        .collect()
}

/// Per-joint graph convolution: each joint averages `W_d x_j + b_d` over the
/// joints `j` exactly `d` hops away, summed over `d`.
pub fn per_joint_conv(
    x: &Array4<f64>,
    weights: &[Array2<f64>],
    biases: &[Vec<f64>],
    hops: &[Vec<Option<usize>>],
) -> Array4<f64> {
    let (c, n, t, v) = x.dim();
    let co = weights[0].nrows();
    let mut y = Array4::zeros((co, n, t, v));
    for (d, (w, b)) in weights.iter().zip(biases).enumerate() {
        for i in 0..v {
            let members: Vec<usize> = (0..v).filter(|&j| hops[i][j] == Some(d)).collect();
            if members.is_empty() {
                continue;
            }
            let z = members.len() as f64;
            for nn in 0..n {
                for tt in 0..t {
                    for o in 0..co {
                        let mut acc = 0.0;
                        for &j in &members {
                            acc += b[o];
                            for ci in 0..c {
                                acc += w[[o, ci]] * x[[ci, nn, tt, j]];
                            }
                        }
                        y[[o, nn, tt, i]] += acc / z;
                    }
                }
            }
        }
    }
    y
}

/// Largest gap between the per-joint form and the matrix form over `graphs` random graphs.
pub fn graph_conv_max_gap(graphs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..graphs {
        let v = rng.random_range(1..=8);
        let dmax = rng.random_range(0..=2);
        let edges = random_edges(v, &mut rng);
        let graph = SkeletonGraph::from_edges(v, edges.clone(), 0).unwrap();
        let parts = graph.partitions(dmax).unwrap();
        let adjacency: Vec<Array2<f64>> = parts
            .partitions()
            .iter()
            .map(|a| mean_normalize_partition(a).unwrap())
            .collect();
        let (c, co, n, t) = (rng.random_range(1..=4), rng.random_range(1..=4), 2, 3);
        let x = Array4::from_shape_simple_fn((c, n, t, v), || rng.random_range(-1.0..1.0));
        let weights: Vec<Array2<f64>> = (0..=dmax)
            .map(|_| Array2::from_shape_simple_fn((co, c), || rng.random_range(-1.0..1.0)))
            .collect();
        let biases: Vec<Vec<f64>> = (0..=dmax)
            .map(|_| (0..co).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let expect = per_joint_conv(&x, &weights, &biases, &bfs_hops(v, &edges));

        let mut g = Graph::<f64>::inference();
        let xv = g.input(x.into_dyn());
        let wb: Vec<_> = weights
            .iter()
            .zip(&biases)
            .map(|(w, b)| {
                let wv = g.input(w.clone().into_dyn());
                let bv = g.input(ArrayD::from_shape_vec(IxDyn(&[co]), b.clone()).unwrap());
                (wv, Some(bv))
            })
            .collect();
        let masks: Vec<_> = (0..=dmax).map(|_| g.input(ArrayD::ones(IxDyn(&[v, v])))).collect();
        let y = sgc_forward(&mut g, xv, &wb, &masks, &adjacency, None).unwrap();
        for (a, b) in g.value(y).iter().zip(expect.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Random single-body sequence on the NTU skeleton.
pub fn random_sequence(rng: &mut ChaCha8Rng, frames: usize) -> RawSequence {
    let v = SkeletonGraph::ntu25().num_joints();
    let coords = Array4::from_shape_simple_fn((3, frames, v, 1), || rng.random_range(-1.5..1.5));
    RawSequence::new(coords, Some(0)).unwrap()
}

/// Checks the preprocessing identities on `count` random sequences; returns the first failure.
pub fn preprocessing_properties(count: usize, seed: u64) -> Result<(), String> {
    let graph = SkeletonGraph::ntu25();
    let center = graph.center();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in 0..count {
        let frames = rng.random_range(3..=40);
        let seq = random_sequence(&mut rng, frames);
        let b = &assemble_branches(&seq, &graph).map_err(|e| e.to_string())?[0];
        let v = seq.joints();
        for t in 0..frames {
            for w in 0..3 {
                if b.joint[[3 + w, t, center]] != 0.0 {
                    return Err(format!("sequence {s}: relative center coordinate is nonzero"));
                }
            }
        }
        for w in 0..3 {
            for t in 0..frames - 2 {
                for j in 0..v {
                    let f = b.velocity[[w, t, j]];
                    let sum = b.velocity[[3 + w, t, j]] + b.velocity[[3 + w, t + 1, j]];
                    if (f - sum).abs() > 1e-12 {
                        return Err(format!("sequence {s}: fast velocity is not the sum of slow ones"));
                    }
                }
            }
        }
        for t in 0..frames {
            for j in 0..v {
                let l = [0, 1, 2].map(|w| b.bone[[w, t, j]]);
                let norm = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
                if norm < 1e-8 {
                    continue;
                }
                let cos2: f64 = (0..3).map(|w| b.bone[[3 + w, t, j]].cos().powi(2)).sum();
                if (cos2 - 1.0).abs() > 1e-10 {
                    return Err(format!("sequence {s}: direction cosines square-sum to {cos2}"));
                }
                for w in 0..3 {
                    if (b.bone[[3 + w, t, j]] - (l[w] / norm).acos()).abs() > 1e-10 {
                        return Err(format!("sequence {s}: angle differs from arccos of the direction cosine"));
                    }
                }
            }
        }
        let shift = [0, 1, 2].map(|_| rng.random_range(-10.0..10.0));
        let mut moved = seq.coords().clone();
        for (w, mut plane) in moved.outer_iter_mut().enumerate() {
            plane += shift[w];
        }
        let moved = RawSequence::new(moved, seq.label()).unwrap();
        let m = &assemble_branches(&moved, &graph).map_err(|e| e.to_string())?[0];
        let close = |a: ndarray::ArrayView3<f64>, b: ndarray::ArrayView3<f64>| {
            a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-9)
        };
        use ndarray::s;
        if !close(b.joint.slice(s![3.., .., ..]), m.joint.slice(s![3.., .., ..]))
            || !close(b.velocity.view(), m.velocity.view())
            || !close(b.bone.slice(s![..3, .., ..]), m.bone.slice(s![..3, .., ..]))
        {
            return Err(format!("sequence {s}: translation changed an invariant channel"));
        }
    }
    Ok(())
}

/// One cell of the parameter-count matrix: (label, analytic, registry).
pub fn count_pair(plan: &ArchPlan, joints: usize) -> (u64, u64) {
    let analytic = profile(plan, 300, joints, 2).unwrap().total_params;
    let graph = SkeletonGraph::ntu25();
    let net = Network::<f32>::new(plan, &graph, 0).unwrap();
    (analytic, net.num_params())
}

/// Plans for the parameter-count targets, with the expected millions.
pub fn parameter_targets() -> Vec<(String, ArchPlan, f64)> {
    let b0 = |kind: LayerKind, ratio: Option<f64>| {
        effgcn::arch::make_arch(
            &effgcn::arch::ScalingConfig::default(),
            kind,
            ratio,
            2,
            5,
            60,
            false,
        )
        .unwrap()
    };
    let mut out = vec![
        ("B0 sg r=2".to_string(), b0(LayerKind::Sg, Some(2.0)), 0.29),
        ("B0 basic".to_string(), b0(LayerKind::Basic, None), 0.34),
        ("B0 bottle r=4".to_string(), b0(LayerKind::Bottle, Some(4.0)), 0.26),
        ("B0 sep".to_string(), b0(LayerKind::Sep, None), 0.26),
    ];
    for (r, m) in [(1.0, 0.28), (2.0, 0.32), (4.0, 0.41)] {
        out.push((format!("B0 epsep r={r}"), b0(LayerKind::EpSep, Some(r)), m));
    }
    let mut one = ArchPlan::efficient(0, 60).unwrap();
    one.branches.truncate(1);
    out.push(("single branch (joint)".to_string(), one, 0.17));
    let mut two = ArchPlan::efficient(0, 60).unwrap();
    two.branches.truncate(2);
    out.push(("two branches".to_string(), two, 0.23));
    out
}

pub fn attention_kinds() -> [AttentionKind; 2] {
    [AttentionKind::StJoint, AttentionKind::None]
}
