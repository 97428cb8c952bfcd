use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::SkeletonGraph;
use crate::preprocess::{assemble_branches, load_sequence, save_sequence, BranchInput, RawSequence};
use crate::tensor::DType;

/// Labelled sequences turned into per-body branch inputs.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub bodies: Vec<BranchInput>,
    /// Body range of each sequence within `bodies`.
    pub spans: Vec<Range<usize>>,
    pub labels: Vec<usize>,
    pub frames: usize,
    pub joints: usize,
}

impl PreparedSet {
    /// Empty bodies are dropped unless a sequence has nothing else.
    pub fn new(seqs: &[RawSequence], graph: &SkeletonGraph) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::arg("dataset is empty"))?;
        let (frames, joints) = (first.frames(), first.joints());
        let mut set = Self {
            bodies: Vec::new(),
            spans: Vec::with_capacity(seqs.len()),
            labels: Vec::with_capacity(seqs.len()),
            frames,
            joints,
        };
        for (i, s) in seqs.iter().enumerate() {
            if s.frames() != frames || s.joints() != joints {
                return Err(Error::Data(format!(
                    "sequence {i} is {}x{} frames x joints, expected {frames}x{joints}",
                    s.frames(),
                    s.joints()
                )));
            }
            let label = s.label().ok_or_else(|| Error::Data(format!("sequence {i} has no label")))?;
            let mut bodies = assemble_branches(s, graph)?;
            let filled: Vec<usize> = (0..s.bodies()).filter(|&m| s.body_has_content(m)).collect();
            if filled.is_empty() {
                bodies.truncate(1);
            } else if filled.len() < bodies.len() {
                bodies = filled.into_iter().map(|m| bodies[m].clone()).collect();
            }
            let start = set.bodies.len();
            set.bodies.extend(bodies);
            set.spans.push(start..set.bodies.len());
            set.labels.push(label);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Bodies of the given sequences and the batch-local owner of each body.
    pub fn batch(&self, seqs: &[usize]) -> (Vec<&BranchInput>, Vec<usize>) {
        let mut bodies = Vec::new();
        let mut owner = Vec::new();
        for (k, &i) in seqs.iter().enumerate() {
            for b in &self.bodies[self.spans[i].clone()] {
                bodies.push(b);
                owner.push(k);
            }
        }
        (bodies, owner)
    }
}

/// Writes `<root>/<split>/<id>.sktn` plus sidecars, ids zero-padded in order.
pub fn save_split(root: &Path, split: &str, seqs: &[RawSequence], dtype: DType) -> Result<Vec<PathBuf>> {
    let dir = root.join(split);
    std::fs::create_dir_all(&dir)?;
    seqs.iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(format!("{i:06}.sktn"));
            save_sequence(&path, s, dtype)?;
            Ok(path)
        })
        .collect()
}

/// Reads every `.sktn` file of `<root>/<split>` in file-name order.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<RawSequence>> {
    let dir = root.join(split);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "sktn"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no .sktn files in {}", dir.display())));
    }
    paths.iter().map(load_sequence).collect()
}
