//! Skeleton graph, hop distances and distance-partitioned adjacency.

use std::collections::VecDeque;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to every degree before the inverse square root so empty rows stay finite.
pub const DEGREE_EPS: f64 = 1e-6;

const NTU25_JSON: &str = include_str!("../data/ntu25.json");

/// On-disk form of a skeleton graph. All indices are 0-based.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub num_joints: usize,
    pub edges: Vec<[usize; 2]>,
    pub center: usize,
    pub parents: Vec<usize>,
}

/// Joint connectivity of a skeleton with a designated center joint.
///
/// `parents[i]` is the joint adjacent to `i` on the way to `center`; the
/// center is its own parent. Construction validates every invariant, so a
/// `SkeletonGraph` is always connected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonGraph {
    num_joints: usize,
    edges: Vec<(usize, usize)>,
    center: usize,
    parents: Vec<usize>,
}

impl SkeletonGraph {
    pub fn new(
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        center: usize,
        parents: Vec<usize>,
    ) -> Result<Self> {
        if num_joints == 0 {
            return Err(Error::Structural("graph has no joints".into()));
        }
        for &(a, b) in &edges {
            if a >= num_joints || b >= num_joints {
                return Err(Error::Structural(format!(
                    "edge ({a}, {b}) out of range for {num_joints} joints"
                )));
            }
        }
        if center >= num_joints {
            return Err(Error::Structural(format!(
                "center {center} out of range for {num_joints} joints"
            )));
        }
        if parents.len() != num_joints {
            return Err(Error::Structural(format!(
                "parent map has {} entries, expected {num_joints}",
                parents.len()
            )));
        }
        if parents[center] != center {
            return Err(Error::Structural("center must be its own parent".into()));
        }
        let adj = adjacency_lists(num_joints, &edges);
        for (i, &p) in parents.iter().enumerate() {
            if i == center {
                continue;
            }
            if p >= num_joints || !adj[i].contains(&p) {
                return Err(Error::Structural(format!(
                    "parent of joint {i} is {p}, which is not an adjacent joint"
                )));
            }
        }
        // Parent chains must terminate at the center.
        for start in 0..num_joints {
            let mut j = start;
            let mut steps = 0;
            while j != center {
                j = parents[j];
                steps += 1;
                if steps > num_joints {
                    return Err(Error::Structural(format!(
                        "parent chain from joint {start} never reaches the center"
                    )));
                }
            }
        }
        Ok(Self {
            num_joints,
            edges,
            center,
            parents,
        })
    }

    /// Builds a graph from edges alone, deriving parents by breadth-first
    /// search from `center`.
    pub fn from_edges(num_joints: usize, edges: Vec<(usize, usize)>, center: usize) -> Result<Self> {
        let dist = hop_distance_matrix(num_joints, &edges)?;
        if center >= num_joints {
            return Err(Error::Structural(format!(
                "center {center} out of range for {num_joints} joints"
            )));
        }
        let adj = adjacency_lists(num_joints, &edges);
        let parents = (0..num_joints)
            .map(|i| {
                if i == center {
                    i
                } else {
                    *adj[i]
                        .iter()
                        .filter(|&&n| dist[[n, center]] + 1 == dist[[i, center]])
                        .min()
                        .expect("connected graph has a neighbour closer to the center")
                }
            })
            .collect();
        Self::new(num_joints, edges, center, parents)
    }

    /// The 25-joint Kinect v2 skeleton used by NTU RGB+D, centered on the
    /// middle of the spine.
    pub fn ntu25() -> Self {
        let file: GraphFile = serde_json::from_str(NTU25_JSON).expect("bundled graph file parses");
        Self::try_from(file).expect("bundled graph file is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: GraphFile = serde_json::from_str(&text)?;
        Self::try_from(file)
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            num_joints: self.num_joints,
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
            center: self.center,
            parents: self.parents.clone(),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn hop_distances(&self) -> Result<Array2<usize>> {
        hop_distance_matrix(self.num_joints, &self.edges)
    }

    pub fn partitions(&self, max_distance: usize) -> Result<PartitionedAdjacency> {
        build_partitions(self, max_distance)
    }
}

impl TryFrom<GraphFile> for SkeletonGraph {
    type Error = Error;

    fn try_from(f: GraphFile) -> Result<Self> {
        let edges = f.edges.into_iter().map(|[a, b]| (a, b)).collect();
        Self::new(f.num_joints, edges, f.center, f.parents)
    }
}

fn adjacency_lists(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    adj
}

/// All-pairs shortest path lengths over an undirected edge list.
pub fn hop_distance_matrix(num_joints: usize, edges: &[(usize, usize)]) -> Result<Array2<usize>> {
    for &(a, b) in edges {
        if a >= num_joints || b >= num_joints {
            return Err(Error::Structural(format!(
                "edge ({a}, {b}) out of range for {num_joints} joints"
            )));
        }
    }
    let adj = adjacency_lists(num_joints, edges);
    let mut dist = Array2::from_elem((num_joints, num_joints), usize::MAX);
    let mut queue = VecDeque::new();
    for src in 0..num_joints {
        dist[[src, src]] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = dist[[src, u]];
            for &w in &adj[u] {
                if dist[[src, w]] == usize::MAX {
                    dist[[src, w]] = du + 1;
                    queue.push_back(w);
                }
            }
        }
        if let Some(j) = (0..num_joints).find(|&j| dist[[src, j]] == usize::MAX) {
            return Err(Error::Structural(format!(
                "joints {src} and {j} are not connected"
            )));
        }
    }
    Ok(dist)
}

/// Binary adjacency per hop distance together with its symmetric normalization.
#[derive(Debug, Clone)]
pub struct PartitionedAdjacency {
    max_distance: usize,
    partitions: Vec<Array2<f64>>,
    normalized: Vec<Array2<f64>>,
}

impl PartitionedAdjacency {
    pub fn max_distance(&self) -> usize {
        self.max_distance
    }

    pub fn num_partitions(&self) -> usize {
        self.partitions.len()
    }

    pub fn num_joints(&self) -> usize {
        self.partitions[0].nrows()
    }

    /// `A_d`: 1 where the hop distance is exactly `d`.
    pub fn partitions(&self) -> &[Array2<f64>] {
        &self.partitions
    }

    /// `Λ_d^{-1/2} A_d Λ_d^{-1/2}` for each partition.
    pub fn normalized(&self) -> &[Array2<f64>] {
        &self.normalized
    }
}

/// Splits joint pairs by exact hop distance `0..=max_distance`.
pub fn build_partitions(graph: &SkeletonGraph, max_distance: usize) -> Result<PartitionedAdjacency> {
    let dist = graph.hop_distances()?;
    let v = graph.num_joints();
    let partitions: Vec<Array2<f64>> = (0..=max_distance)
        .map(|d| Array2::from_shape_fn((v, v), |(i, j)| if dist[[i, j]] == d { 1.0 } else { 0.0 }))
        .collect();
    let normalized = partitions
        .iter()
        .map(normalize_partition)
        .collect::<Result<Vec<_>>>()?;
    Ok(PartitionedAdjacency {
        max_distance,
        partitions,
        normalized,
    })
}

/// Symmetric degree normalization with the degree regularizer [`DEGREE_EPS`].
pub fn normalize_partition(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::arg(format!("adjacency must be square, got {r}x{c}")));
    }
    let inv_sqrt: Vec<f64> = a
        .rows()
        .into_iter()
        .map(|row| (row.sum() + DEGREE_EPS).powf(-0.5))
        .collect();
    Ok(Array2::from_shape_fn((r, c), |(i, j)| {
        inv_sqrt[i] * a[[i, j]] * inv_sqrt[j]
    }))
}

/// Neighbor-averaging form of a partition: column `i` is divided by the
/// degree of joint `i`, so mixing with it averages each joint's neighbors.
/// Columns of isolated joints stay zero.
pub fn mean_normalize_partition(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::arg(format!("adjacency must be square, got {r}x{c}")));
    }
    let deg: Vec<f64> = a.columns().into_iter().map(|col| col.sum()).collect();
    Ok(Array2::from_shape_fn((r, c), |(j, i)| {
        if deg[i] == 0.0 {
            0.0
        } else {
            a[[j, i]] / deg[i]
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> SkeletonGraph {
        SkeletonGraph::from_edges(3, vec![(0, 1), (1, 2)], 1).unwrap()
    }

    #[test]
    fn path_graph_distances() {
        let d = path3().hop_distances().unwrap();
        assert_eq!(d[[0, 2]], 2);
        assert_eq!(d[[0, 1]], 1);
        for i in 0..3 {
            assert_eq!(d[[i, i]], 0);
        }
        assert_eq!(d, d.t());
    }

    #[test]
    fn single_joint() {
        let g = SkeletonGraph::new(1, vec![], 0, vec![0]).unwrap();
        assert_eq!(g.hop_distances().unwrap(), Array2::<usize>::zeros((1, 1)));
    }

    #[test]
    fn disconnected_pair_is_named() {
        let err = hop_distance_matrix(4, &[(0, 1), (2, 3)]).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Structural(_)));
        assert!(msg.contains("0 and 2"), "{msg}");
    }

    #[test]
    fn rejects_bad_parent() {
        let e = SkeletonGraph::new(3, vec![(0, 1), (1, 2)], 1, vec![2, 1, 1]);
        assert!(matches!(e, Err(Error::Structural(_))));
        let e = SkeletonGraph::new(3, vec![(0, 1), (1, 5)], 1, vec![1, 1, 1]);
        assert!(e.is_err());
    }

    #[test]
    fn ntu_graph_loads() {
        let g = SkeletonGraph::ntu25();
        assert_eq!(g.num_joints(), 25);
        assert_eq!(g.center(), 1);
        assert_eq!(g.edges().len(), 24);
    }

    #[test]
    fn zero_distance_is_identity() {
        let p = path3().partitions(0).unwrap();
        assert_eq!(p.num_partitions(), 1);
        assert_eq!(p.partitions()[0], Array2::<f64>::eye(3));
    }

    #[test]
    fn path_partitions() {
        let p = path3().partitions(2).unwrap();
        let a1 = &p.partitions()[1];
        let ones: Vec<_> = a1.indexed_iter().filter(|(_, &x)| x == 1.0).map(|(ij, _)| ij).collect();
        assert_eq!(ones, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
        let a2 = &p.partitions()[2];
        let ones: Vec<_> = a2.indexed_iter().filter(|(_, &x)| x == 1.0).map(|(ij, _)| ij).collect();
        assert_eq!(ones, vec![(0, 2), (2, 0)]);
    }

    #[test]
    fn normalization_examples() {
        let eye = normalize_partition(&Array2::eye(4)).unwrap();
        for ((i, j), &x) in eye.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((x - want).abs() < 1e-6);
        }
        let p = path3().partitions(1).unwrap();
        let n1 = &p.normalized()[1];
        assert!((n1[[0, 1]] - 1.0 / 2f64.sqrt()).abs() < 1e-5);
        let z = normalize_partition(&Array2::zeros((3, 3))).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
        assert!(normalize_partition(&Array2::zeros((2, 3))).is_err());
    }
}
