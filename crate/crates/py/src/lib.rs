//! Python bindings: plans, complexity reports, skeleton graphs, preprocessing,
//! gradient checks and desk-scale training.

use std::path::{Path, PathBuf};

use effgcn::arch::{check_scaling_constraint, make_arch, profile, receptive_sweep, ArchPlan, ScalingConfig};
use effgcn::graph::SkeletonGraph;
use effgcn::nn::probe::{run_probe, ProbeTarget};
use effgcn::nn::Network;
use effgcn::preprocess::{assemble_branches, BranchInput, RawSequence};
use effgcn::tensor::GradCheckOptions;
use effgcn::train::{
    class_activation_map, evaluate, load_split, predict, save_split, split_holdout, synth_dataset, train,
    PreparedSet, TrainConfig,
};
use ndarray::{Array3, Array4};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

type Coords = Vec<Vec<Vec<Vec<f64>>>>;

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for effgcn::Result<T> {
    fn py(self) -> PyResult<T> {
        use effgcn::Error as E;
        self.map_err(|e| match e {
            E::Argument(_) | E::Config(_) | E::Structural(_) | E::Data(_) => PyValueError::new_err(e.to_string()),
            E::Io(_) => PyIOError::new_err(e.to_string()),
            _ => PyRuntimeError::new_err(e.to_string()),
        })
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_pyobject(py)?.into_any(),
            (None, Some(i)) => i.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for x in items {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, x) in map {
                dict.set_item(k, to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(value).map_err(json_err)?)
}

/// `[3, T, V, M]` nested lists into a sequence.
fn sequence(coords: Coords, label: Option<usize>) -> PyResult<RawSequence> {
    let dims = [
        coords.len(),
        coords.first().map_or(0, Vec::len),
        coords.first().and_then(|c| c.first()).map_or(0, Vec::len),
        coords.first().and_then(|c| c.first()).and_then(|t| t.first()).map_or(0, Vec::len),
    ];
    let flat: Vec<f64> = coords.into_iter().flatten().flatten().flatten().collect();
    let array = Array4::from_shape_vec(dims, flat)
        .map_err(|_| PyValueError::new_err("coordinates must be a rectangular [3, T, V, M] nested list"))?;
    RawSequence::new(array, label).py()
}

fn nested3(a: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    a.outer_iter()
        .map(|plane| plane.outer_iter().map(|row| row.to_vec()).collect())
        .collect()
}

fn bodies(coords: Coords, graph: &SkeletonGraph) -> PyResult<Vec<BranchInput>> {
    let seq = sequence(coords, None)?;
    Ok(assemble_branches(&seq, graph)
        .py()?
        .into_iter()
        .enumerate()
        .filter(|(m, _)| *m == 0 || seq.body_has_content(*m))
        .map(|(_, b)| b)
        .collect())
}

#[pyclass(name = "ArchPlan", module = "effgcn_py")]
struct PyArchPlan {
    inner: ArchPlan,
}

#[pymethods]
impl PyArchPlan {
    #[staticmethod]
    #[pyo3(signature = (phi=0, num_classes=60))]
    fn efficient(phi: u32, num_classes: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ArchPlan::efficient(phi, num_classes).py()?,
        })
    }

    /// B0 with every stage width halved.
    #[staticmethod]
    fn mini(num_classes: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ArchPlan::mini(num_classes).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (phi=0, layer="sg", ratio=None, max_distance=2, kernel=5, num_classes=60, alpha=1.2, beta=1.35, allow_unconstrained=false))]
    #[allow(clippy::too_many_arguments)]
    fn scaled(
        phi: u32,
        layer: &str,
        ratio: Option<f64>,
        max_distance: usize,
        kernel: usize,
        num_classes: usize,
        alpha: f64,
        beta: f64,
        allow_unconstrained: bool,
    ) -> PyResult<Self> {
        let config = ScalingConfig {
            alpha,
            beta,
            phi,
            ..ScalingConfig::default()
        };
        let kind = layer.parse().py()?;
        Ok(Self {
            inner: make_arch(&config, kind, ratio, max_distance, kernel, num_classes, allow_unconstrained).py()?,
        })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ArchPlan::from_json(s).py()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }

    #[getter]
    fn phi(&self) -> u32 {
        self.inner.phi
    }

    #[getter]
    fn layer(&self) -> &'static str {
        self.inner.layer_kind.name()
    }

    #[getter]
    fn ratio(&self) -> f64 {
        self.inner.ratio
    }

    #[getter]
    fn max_distance(&self) -> usize {
        self.inner.max_distance
    }

    #[getter]
    fn kernel(&self) -> usize {
        self.inner.kernel
    }

    #[getter]
    fn stage_channels(&self) -> Vec<usize> {
        self.inner.stage_channels.to_vec()
    }

    #[getter]
    fn stage_depths(&self) -> Vec<usize> {
        self.inner.stage_depths.to_vec()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    /// Per-block parameters and FLOPs as a dict.
    #[pyo3(signature = (frames=300, joints=25, bodies=2))]
    fn profile<'py>(&self, py: Python<'py>, frames: usize, joints: usize, bodies: usize) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, &profile(&self.inner, frames, joints, bodies).py()?)
    }

    /// One `(D, L, params, flops)` tuple per grid cell.
    #[pyo3(signature = (distances, kernels, frames=300, joints=25, bodies=2))]
    fn sweep(
        &self,
        distances: Vec<usize>,
        kernels: Vec<usize>,
        frames: usize,
        joints: usize,
        bodies: usize,
    ) -> PyResult<Vec<(usize, usize, u64, u64)>> {
        Ok(receptive_sweep(&self.inner, &distances, &kernels, frames, joints, bodies)
            .py()?
            .into_iter()
            .map(|c| (c.max_distance, c.kernel, c.report.total_params, c.report.total_flops))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "ArchPlan(phi={}, layer={}, channels={:?}, depths={:?}, classes={})",
            self.inner.phi,
            self.inner.layer_kind.name(),
            self.inner.stage_channels,
            self.inner.stage_depths,
            self.inner.num_classes
        )
    }
}

#[pyclass(name = "SkeletonGraph", module = "effgcn_py")]
struct PySkeletonGraph {
    inner: SkeletonGraph,
}

#[pymethods]
impl PySkeletonGraph {
    #[new]
    #[pyo3(signature = (num_joints, edges, center=0))]
    fn new(num_joints: usize, edges: Vec<(usize, usize)>, center: usize) -> PyResult<Self> {
        Ok(Self {
            inner: SkeletonGraph::from_edges(num_joints, edges, center).py()?,
        })
    }

    #[staticmethod]
    fn ntu25() -> Self {
        Self {
            inner: SkeletonGraph::ntu25(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: SkeletonGraph::load(path).py()?,
        })
    }

    #[getter]
    fn num_joints(&self) -> usize {
        self.inner.num_joints()
    }

    #[getter]
    fn center(&self) -> usize {
        self.inner.center()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    fn hop_distances(&self) -> PyResult<Vec<Vec<usize>>> {
        Ok(self.inner.hop_distances().py()?.outer_iter().map(|r| r.to_vec()).collect())
    }

    /// Partition matrices `A_0..A_D`, symmetric-normalized unless `normalized` is false.
    #[pyo3(signature = (max_distance, normalized=true))]
    fn partitions(&self, max_distance: usize, normalized: bool) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let parts = self.inner.partitions(max_distance).py()?;
        let mats = if normalized { parts.normalized() } else { parts.partitions() };
        Ok(mats
            .iter()
            .map(|a| a.outer_iter().map(|r| r.to_vec()).collect())
            .collect())
    }
}

#[pyclass(name = "Network", module = "effgcn_py")]
struct PyNetwork {
    inner: Network<f32>,
    graph: SkeletonGraph,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (plan, graph, seed=0))]
    fn new(plan: &PyArchPlan, graph: &PySkeletonGraph, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: Network::new(&plan.inner, &graph.inner, seed).py()?,
            graph: graph.inner.clone(),
        })
    }

    #[getter]
    fn num_params(&self) -> u64 {
        self.inner.num_params()
    }

    #[getter]
    fn plan(&self) -> PyArchPlan {
        PyArchPlan {
            inner: self.inner.plan().clone(),
        }
    }

    /// Class scores for one `[3, T, V, M]` sequence.
    fn predict(&mut self, coords: Coords) -> PyResult<Vec<f64>> {
        let b = bodies(coords, &self.graph)?;
        predict(&mut self.inner, &b).py()
    }

    /// `[T', V]` activation map of one sequence for `class`.
    fn class_activation_map(&mut self, coords: Coords, class: usize) -> PyResult<Vec<Vec<f64>>> {
        let b = bodies(coords, &self.graph)?;
        let map = class_activation_map(&mut self.inner, &b, class).py()?;
        Ok(map.outer_iter().map(|r| r.to_vec()).collect())
    }

    /// Trains on `<data>/train`, also scoring `<data>/eval` each epoch when it exists.
    #[pyo3(signature = (data, epochs=70, warmup_epochs=10, batch_size=16, lr=0.1, seed=0, out=None))]
    #[allow(clippy::too_many_arguments)]
    fn fit<'py>(
        &mut self,
        py: Python<'py>,
        data: PathBuf,
        epochs: usize,
        warmup_epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
        out: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let config = TrainConfig {
            epochs,
            warmup_epochs,
            batch_size,
            base_lr: lr,
            seed,
            ..TrainConfig::default()
        };
        let train_set = PreparedSet::new(&load_split(&data, "train").py()?, &self.graph).py()?;
        let eval_set = if data.join("eval").is_dir() {
            Some(PreparedSet::new(&load_split(&data, "eval").py()?, &self.graph).py()?)
        } else {
            None
        };
        let log = train(
            &mut self.inner,
            &train_set,
            eval_set.as_ref(),
            &config,
            out.as_deref(),
            |_| {},
        )
        .py()?;
        serialize(py, &log)
    }

    #[pyo3(signature = (data, split="eval", batch_size=16))]
    fn evaluate<'py>(&mut self, py: Python<'py>, data: PathBuf, split: &str, batch_size: usize) -> PyResult<Bound<'py, PyAny>> {
        let set = PreparedSet::new(&load_split(&data, split).py()?, &self.graph).py()?;
        serialize(py, &evaluate(&mut self.inner, &set, batch_size, 1).py()?)
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_checkpoint(path).py()
    }

    fn load_checkpoint(&mut self, path: PathBuf) -> PyResult<()> {
        self.inner.load_checkpoint(path).py()
    }
}

/// Joint, velocity and bone inputs, one dict of `[6, T, V]` lists per body.
#[pyfunction]
#[pyo3(signature = (coords, graph=None))]
fn preprocess<'py>(
    py: Python<'py>,
    coords: Coords,
    graph: Option<&PySkeletonGraph>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let ntu;
    let graph = match graph {
        Some(g) => &g.inner,
        None => {
            ntu = SkeletonGraph::ntu25();
            &ntu
        }
    };
    let seq = sequence(coords, None)?;
    assemble_branches(&seq, graph)
        .py()?
        .iter()
        .map(|b| {
            let d = PyDict::new(py);
            d.set_item("joint", nested3(&b.joint))?;
            d.set_item("velocity", nested3(&b.velocity))?;
            d.set_item("bone", nested3(&b.bone))?;
            Ok(d)
        })
        .collect()
}

/// Writes `<out>/train` and `<out>/eval`; returns their sizes.
#[pyfunction]
#[pyo3(signature = (out, classes=4, per_class=100, frames=60, joints=25, holdout=0.2, seed=0))]
fn synth(
    out: PathBuf,
    classes: usize,
    per_class: usize,
    frames: usize,
    joints: usize,
    holdout: f64,
    seed: u64,
) -> PyResult<(usize, usize)> {
    let (tr, ev) = split_holdout(synth_dataset(classes, per_class, frames, joints, seed).py()?, holdout).py()?;
    let root: &Path = &out;
    save_split(root, "train", &tr, effgcn::tensor::DType::F64).py()?;
    if !ev.is_empty() {
        save_split(root, "eval", &ev, effgcn::tensor::DType::F64).py()?;
    }
    Ok((tr.len(), ev.len()))
}

/// Finite-difference check of one probe; returns `(passed, max_rel_error)`.
#[pyfunction]
#[pyo3(signature = (probe, tolerance=1e-5, seed=0))]
fn gradcheck(probe: &str, tolerance: f64, seed: u64) -> PyResult<(bool, f64)> {
    let target: ProbeTarget = probe.parse().py()?;
    let opts = GradCheckOptions {
        tolerance,
        seed,
        ..GradCheckOptions::default()
    };
    let report = run_probe::<f64>(target, &opts).py()?;
    Ok((report.passed(), report.max_rel_error()))
}

#[pyfunction]
fn probes() -> Vec<String> {
    ProbeTarget::all().iter().map(ToString::to_string).collect()
}

/// `(alpha^2 beta, |alpha^2 beta - 2|, passed)`.
#[pyfunction]
fn scaling_constraint(alpha: f64, beta: f64) -> (f64, f64, bool) {
    let c = check_scaling_constraint(alpha, beta);
    (c.product, c.residual, c.passed)
}

#[pymodule]
fn effgcn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArchPlan>()?;
    m.add_class::<PySkeletonGraph>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(probes, m)?)?;
    m.add_function(wrap_pyfunction!(scaling_constraint, m)?)?;
    Ok(())
}
