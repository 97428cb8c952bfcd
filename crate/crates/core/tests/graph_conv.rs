mod common;

use effgcn::graph::SkeletonGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matrix_form_matches_per_joint_form() {
    let gap = common::graph_conv_max_gap(50, 7);
    assert!(gap < 1e-10, "max gap {gap:e}");
}

#[test]
fn hop_distances_match_bfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..40 {
        let v = rng.random_range(1..=12);
        let edges = common::random_edges(v, &mut rng);
        let graph = SkeletonGraph::from_edges(v, edges.clone(), rng.random_range(0..v)).unwrap();
        let d = graph.hop_distances().unwrap();
        let bfs = common::bfs_hops(v, &edges);
        for i in 0..v {
            for j in 0..v {
                assert_eq!(Some(d[[i, j]]), bfs[i][j]);
            }
        }
        for (i, &p) in graph.parents().iter().enumerate() {
            if i != graph.center() {
                assert_eq!(bfs[p][graph.center()].unwrap() + 1, bfs[i][graph.center()].unwrap());
            }
        }
    }
}

#[test]
fn partitions_cover_each_distance_once() {
    let graph = SkeletonGraph::ntu25();
    let parts = graph.partitions(2).unwrap();
    let d = graph.hop_distances().unwrap();
    for (k, a) in parts.partitions().iter().enumerate() {
        for ((i, j), &x) in a.indexed_iter() {
            assert_eq!(x == 1.0, d[[i, j]] == k);
        }
        assert_eq!(a, &a.t());
    }
}
