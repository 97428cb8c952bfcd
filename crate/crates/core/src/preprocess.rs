//! Skeleton sequences and their joint / velocity / bone input branches.

use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SkeletonGraph;
use crate::io::{self, AnyTensor};
use crate::tensor::DType;

/// Bones shorter than this have undefined direction; their cosines are taken as 0.
pub const DEGENERATE_BONE: f64 = 1e-8;

/// 3-D joint coordinates `[3, T, V, M]` for `M` bodies.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSequence {
    coords: Array4<f64>,
    label: Option<usize>,
    valid_frames: usize,
}

/// JSON sidecar stored next to a sequence tensor.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SequenceMeta {
    pub label: Option<usize>,
    pub valid_frames: usize,
}

impl RawSequence {
    pub fn new(coords: Array4<f64>, label: Option<usize>) -> Result<Self> {
        let shape = coords.shape();
        if shape[0] != 3 {
            return Err(Error::arg(format!("expected 3 coordinate channels, got {}", shape[0])));
        }
        if shape[3] == 0 || shape[1] == 0 || shape[2] == 0 {
            return Err(Error::arg(format!("empty sequence shape {shape:?}")));
        }
        let valid_frames = last_nonzero_frame(&coords);
        Ok(Self {
            coords,
            label,
            valid_frames,
        })
    }

    pub fn coords(&self) -> &Array4<f64> {
        &self.coords
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn valid_frames(&self) -> usize {
        self.valid_frames
    }

    pub fn frames(&self) -> usize {
        self.coords.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.coords.shape()[2]
    }

    pub fn bodies(&self) -> usize {
        self.coords.shape()[3]
    }

    /// Coordinates `[3, T, V]` of one body.
    pub fn body(&self, m: usize) -> ArrayView3<'_, f64> {
        self.coords.index_axis(Axis(3), m)
    }

    pub fn body_has_content(&self, m: usize) -> bool {
        self.body(m).iter().any(|&x| x != 0.0)
    }

    /// Zero-pads to `frames` at the end; longer sequences are rejected.
    pub fn pad_to(&self, frames: usize) -> Result<Self> {
        let t = self.frames();
        if t > frames {
            return Err(Error::arg(format!("sequence has {t} frames, more than the configured {frames}")));
        }
        let mut coords = Array4::zeros((3, frames, self.joints(), self.bodies()));
        coords.slice_mut(s![.., ..t, .., ..]).assign(&self.coords);
        Ok(Self {
            coords,
            label: self.label,
            valid_frames: self.valid_frames,
        })
    }

    pub fn meta(&self) -> SequenceMeta {
        SequenceMeta {
            label: self.label,
            valid_frames: self.valid_frames,
        }
    }
}

fn last_nonzero_frame(coords: &Array4<f64>) -> usize {
    (0..coords.shape()[1])
        .rev()
        .find(|&t| coords.slice(s![.., t, .., ..]).iter().any(|&x| x != 0.0))
        .map_or(0, |t| t + 1)
}

/// Preprocessed inputs `[6, T, V]` for one body.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchInput {
    /// Absolute xyz followed by xyz relative to the center joint.
    pub joint: Array3<f64>,
    /// Two-frame (fast) then one-frame (slow) displacements.
    pub velocity: Array3<f64>,
    /// Bone vectors followed by their direction angles in radians.
    pub bone: Array3<f64>,
}

impl BranchInput {
    pub fn frames(&self) -> usize {
        self.joint.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.joint.shape()[2]
    }

    pub fn branch(&self, kind: BranchKind) -> &Array3<f64> {
        match kind {
            BranchKind::Joint => &self.joint,
            BranchKind::Velocity => &self.velocity,
            BranchKind::Bone => &self.bone,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Joint,
    Velocity,
    Bone,
}

impl BranchKind {
    pub const ALL: [BranchKind; 3] = [BranchKind::Joint, BranchKind::Velocity, BranchKind::Bone];

    pub fn name(self) -> &'static str {
        match self {
            BranchKind::Joint => "joint",
            BranchKind::Velocity => "velocity",
            BranchKind::Bone => "bone",
        }
    }
}

fn check_body(body: &ArrayView3<'_, f64>) -> Result<()> {
    if body.shape()[0] != 3 {
        return Err(Error::arg(format!("body must have 3 coordinate channels, got {}", body.shape()[0])));
    }
    Ok(())
}

/// Coordinates relative to the center joint, `[3, T, V]`.
pub fn relative_positions(body: ArrayView3<'_, f64>, center: usize) -> Result<Array3<f64>> {
    check_body(&body)?;
    let v = body.shape()[2];
    if center >= v {
        return Err(Error::arg(format!("center joint {center} out of range for {v} joints")));
    }
    let c = body.slice(s![.., .., center..center + 1]).to_owned();
    Ok(&body - &c)
}

/// Fast (`x[t+2] - x[t]`) and slow (`x[t+1] - x[t]`) displacements, `[6, T, V]`.
///
/// Frames without a successor are zero-filled so the output keeps length `T`.
pub fn motion_velocities(body: ArrayView3<'_, f64>) -> Result<Array3<f64>> {
    check_body(&body)?;
    let (t, v) = (body.shape()[1], body.shape()[2]);
    if t < 3 {
        return Err(Error::arg(format!("velocities need at least 3 frames, got {t}")));
    }
    let mut out = Array3::zeros((6, t, v));
    let fast = &body.slice(s![.., 2.., ..]) - &body.slice(s![.., ..t - 2, ..]);
    let slow = &body.slice(s![.., 1.., ..]) - &body.slice(s![.., ..t - 1, ..]);
    out.slice_mut(s![0..3, ..t - 2, ..]).assign(&fast);
    out.slice_mut(s![3..6, ..t - 1, ..]).assign(&slow);
    Ok(out)
}

/// Direction angles of a bone vector; degenerate bones give `π/2` on every axis.
pub fn bone_angles(l: [f64; 3]) -> [f64; 3] {
    let norm = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
    if norm < DEGENERATE_BONE {
        return [std::f64::consts::FRAC_PI_2; 3];
    }
    l.map(|w| (w / norm).clamp(-1.0, 1.0).acos())
}

/// Bone vectors `x[i] - x[parent(i)]` and their direction angles, `[6, T, V]`.
pub fn bone_features(body: ArrayView3<'_, f64>, graph: &SkeletonGraph) -> Result<Array3<f64>> {
    check_body(&body)?;
    let (t, v) = (body.shape()[1], body.shape()[2]);
    if graph.num_joints() != v {
        return Err(Error::arg(format!(
            "graph has {} joints but the sequence has {v}",
            graph.num_joints()
        )));
    }
    let mut out = Array3::zeros((6, t, v));
    for (i, &p) in graph.parents().iter().enumerate() {
        for f in 0..t {
            let l = [0, 1, 2].map(|w| body[[w, f, i]] - body[[w, f, p]]);
            let a = bone_angles(l);
            for w in 0..3 {
                out[[w, f, i]] = l[w];
                out[[3 + w, f, i]] = a[w];
            }
        }
    }
    Ok(out)
}

/// Builds the three input branches for every body of `seq`.
pub fn assemble_branches(seq: &RawSequence, graph: &SkeletonGraph) -> Result<Vec<BranchInput>> {
    if graph.num_joints() != seq.joints() {
        return Err(Error::arg(format!(
            "graph has {} joints but the sequence has {}",
            graph.num_joints(),
            seq.joints()
        )));
    }
    (0..seq.bodies())
        .map(|m| {
            let body = seq.body(m);
            let rel = relative_positions(body, graph.center())?;
            let joint = ndarray::concatenate(Axis(0), &[body, rel.view()]).expect("matching shapes");
            Ok(BranchInput {
                joint,
                velocity: motion_velocities(body)?,
                bone: bone_features(body, graph)?,
            })
        })
        .collect()
}

/// Path of the JSON sidecar for a tensor file (`x.sktn` → `x.meta.json`).
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn save_sequence(path: impl AsRef<Path>, seq: &RawSequence, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    match dtype {
        DType::F32 => io::save_tensor(path, &seq.coords.mapv(|x| x as f32).into_dyn())?,
        DType::F64 => io::save_tensor(path, &seq.coords.clone().into_dyn())?,
    }
    std::fs::write(sidecar_path(path), serde_json::to_string(&seq.meta())?)?;
    Ok(())
}

/// Reads a `[3, T, V, M]` sequence tensor and its optional sidecar.
pub fn load_sequence(path: impl AsRef<Path>) -> Result<RawSequence> {
    let path = path.as_ref();
    let tensor = io::load_tensor(path)?;
    let shape = tensor.shape().to_vec();
    // Dimension fields start after magic, version, dtype and ndim.
    if shape.len() != 4 {
        return Err(Error::format(9, format!("sequence tensor must have 4 dimensions, got {}", shape.len())));
    }
    if shape[0] != 3 {
        return Err(Error::format(10, format!("sequence tensor must have 3 coordinate channels, got {}", shape[0])));
    }
    let coords = match &tensor {
        AnyTensor::F64(a) => a.clone(),
        other => other.cast::<f64>(),
    }
    .into_dimensionality()
    .expect("4-d tensor");
    let sidecar = sidecar_path(path);
    let label = if sidecar.exists() {
        let meta: SequenceMeta = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)?;
        meta.label
    } else {
        None
    };
    RawSequence::new(coords, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn seq_from(f: impl Fn(usize, usize, usize) -> f64, t: usize, v: usize) -> RawSequence {
        let c = Array4::from_shape_fn((3, t, v, 1), |(w, f_, j, _)| f(w, f_, j));
        RawSequence::new(c, Some(0)).unwrap()
    }

    #[test]
    fn relative_subtracts_center() {
        let mut c = Array4::zeros((3, 1, 2, 1));
        for w in 0..3 {
            c[[w, 0, 0, 0]] = 0.5;
            c[[w, 0, 1, 0]] = (w + 1) as f64;
        }
        let s = RawSequence::new(c, None).unwrap();
        let r = relative_positions(s.body(0), 0).unwrap();
        assert_eq!(r.slice(s![.., 0, 1]).to_vec(), vec![0.5, 1.5, 2.5]);
        assert!(r.slice(s![.., .., 0]).iter().all(|&x| x == 0.0));
        assert!(relative_positions(s.body(0), 2).is_err());
    }

    #[test]
    fn linear_motion_velocities() {
        let s = seq_from(|w, t, _| if w == 0 { t as f64 } else { 0.0 }, 6, 2);
        let m = motion_velocities(s.body(0)).unwrap();
        for t in 0..4 {
            assert_eq!(m[[0, t, 1]], 2.0);
            assert_eq!(m[[3, t, 1]], 1.0);
        }
        assert_eq!(m[[0, 4, 0]], 0.0);
        assert_eq!(m[[0, 5, 0]], 0.0);
        assert_eq!(m[[3, 5, 0]], 0.0);
        assert_eq!(m[[3, 4, 0]], 1.0);
    }

    #[test]
    fn constant_sequence_has_no_motion() {
        let s = seq_from(|w, _, j| (w + j) as f64 + 0.3, 5, 3);
        assert!(motion_velocities(s.body(0)).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn short_sequence_rejected() {
        let s = seq_from(|_, _, _| 1.0, 2, 3);
        assert!(matches!(motion_velocities(s.body(0)), Err(Error::Argument(_))));
    }

    #[test]
    fn axis_aligned_and_degenerate_bones() {
        let a = bone_angles([1.0, 0.0, 0.0]);
        assert_eq!(a[0], 0.0);
        assert!((a[1] - FRAC_PI_2).abs() < 1e-15 && (a[2] - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(bone_angles([0.0; 3]), [FRAC_PI_2; 3]);
    }

    #[test]
    fn zero_sequence_branches() {
        let g = SkeletonGraph::ntu25();
        let s = RawSequence::new(Array4::zeros((3, 4, 25, 2)), None).unwrap();
        let b = assemble_branches(&s, &g).unwrap();
        assert_eq!(b.len(), 2);
        for body in &b {
            assert_eq!(body.joint.shape(), &[6, 4, 25]);
            assert!(body.joint.iter().chain(body.velocity.iter()).all(|&x| x == 0.0));
            assert!(body.bone.slice(s![0..3, .., ..]).iter().all(|&x| x == 0.0));
            assert!(body.bone.slice(s![3..6, .., ..]).iter().all(|&x| x == FRAC_PI_2));
        }
    }

    #[test]
    fn valid_frames_and_padding() {
        let s = seq_from(|_, t, _| if t < 3 { 1.0 } else { 0.0 }, 5, 2);
        assert_eq!(s.valid_frames(), 3);
        let p = s.pad_to(8).unwrap();
        assert_eq!(p.frames(), 8);
        assert_eq!(p.valid_frames(), 3);
        assert!(s.pad_to(4).is_err());
    }

    #[test]
    fn bone_graph_mismatch() {
        let s = seq_from(|_, _, _| 1.0, 4, 3);
        assert!(bone_features(s.body(0), &SkeletonGraph::ntu25()).is_err());
    }

    #[test]
    fn file_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let s = seq_from(|w, t, j| (w * 7 + t * 3 + j) as f64 * 0.25 - 1.0, 5, 4);
        let path = dir.path().join("a.sktn");
        save_sequence(&path, &s, DType::F64).unwrap();
        assert_eq!(load_sequence(&path).unwrap(), s);

        let bad = dir.path().join("b.sktn");
        io::save_tensor(&bad, &ndarray::ArrayD::<f32>::zeros(ndarray::IxDyn(&[2, 3, 4, 1]))).unwrap();
        assert!(matches!(load_sequence(&bad), Err(Error::Format { .. })));

        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("c.sktn");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_sequence(&cut), Err(Error::Format { .. })));
    }
}
