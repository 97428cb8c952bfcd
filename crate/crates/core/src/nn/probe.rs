//! Small self-contained modules for finite-difference gradient checks.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fully_connected, Attention, BatchNorm, Builder, Ctx, Network, SgcLayer, TcLayer};
use crate::arch::{ArchPlan, AttentionKind, LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::graph::SkeletonGraph;
use crate::tensor::{grad_check, Element, GradCheckOptions, GradCheckReport, GradCheckable, Graph, ParamId, ParamKind, ParamStore, Var};

/// Input shape `[C, N, T, V]` shared by the layer probes.
const PROBE_SHAPE: [usize; 4] = [8, 2, 12, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTarget {
    /// A stride-2 layer followed by a stride-1 layer of one kind.
    Temporal(LayerKind),
    Sgc,
    StJointAtt,
    /// Channel, frame or joint squeeze-excitation.
    Se(AttentionKind),
    BatchNorm,
    FullyConnected,
    /// The mini plan on a 7-joint skeleton with 20 frames and 4 classes.
    MiniNetwork,
}

impl ProbeTarget {
    pub fn all() -> Vec<Self> {
        let mut v: Vec<Self> = LayerKind::ALL.iter().map(|&k| ProbeTarget::Temporal(k)).collect();
        v.extend([ProbeTarget::Sgc, ProbeTarget::StJointAtt]);
        v.extend([AttentionKind::Channel, AttentionKind::Frame, AttentionKind::Joint].map(ProbeTarget::Se));
        v.extend([ProbeTarget::BatchNorm, ProbeTarget::FullyConnected, ProbeTarget::MiniNetwork]);
        v
    }
}

impl fmt::Display for ProbeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeTarget::Temporal(k) => write!(f, "tc-{}", k.name()),
            ProbeTarget::Sgc => f.write_str("sgc"),
            ProbeTarget::StJointAtt => f.write_str("st-joint-att"),
            ProbeTarget::Se(k) => write!(f, "se-{}", k.name()),
            ProbeTarget::BatchNorm => f.write_str("batch-norm"),
            ProbeTarget::FullyConnected => f.write_str("fc"),
            ProbeTarget::MiniNetwork => f.write_str("mini-network"),
        }
    }
}

impl FromStr for ProbeTarget {
    type Err = Error;

    /// Accepts probe names and bare layer kinds (`sep` means `tc-sep`).
    fn from_str(s: &str) -> Result<Self> {
        if let Ok(k) = s.parse::<LayerKind>() {
            return Ok(ProbeTarget::Temporal(k));
        }
        ProbeTarget::all()
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::arg(format!("unknown gradcheck probe `{s}`")))
    }
}

/// Skeleton used by the graph probes: a center with three short limbs.
pub fn probe_skeleton(joints: usize) -> Result<SkeletonGraph> {
    let edges: Vec<(usize, usize)> = (1..joints).map(|j| (if j <= 3 { 0 } else { j - 3 }, j)).collect();
    SkeletonGraph::from_edges(joints, edges, 0)
}

enum Module<F: Element> {
    Temporal(Vec<TcLayer>),
    Sgc(SgcLayer),
    Attention(Attention),
    Bn(BatchNorm),
    Fc(ParamId, ParamId),
    Net(Box<Network<F>>, Vec<ArrayD<F>>),
}

/// Loss `sum(y * R)` of one module on a fixed random input and projection `R`.
///
/// Layer inputs are registered as parameters so their gradients are checked too.
pub struct Probe<F: Element> {
    pub target: ProbeTarget,
    store: ParamStore<F>,
    input: Option<ParamId>,
    module: Module<F>,
    projection: ArrayD<F>,
    seed: u64,
}

fn random<F: Element>(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<F> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || F::of(rng.random_range(-1.0..1.0)))
}

/// Moves every parameter off its initial value so that no gradient is trivially zero.
fn perturb<F: Element>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng) {
    for p in store.params_mut() {
        let kind = p.kind;
        p.value.mapv_inplace(|v| {
            let r = rng.random_range(-0.2..0.2);
            match kind {
                ParamKind::Weight => v,
                ParamKind::BnScale | ParamKind::EdgeImportance => v + F::of(r),
                ParamKind::Bias | ParamKind::BnShift => F::of(r),
            }
        });
    }
}

impl<F: Element> Probe<F> {
    pub fn new(target: ProbeTarget, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let [c, n, t, v] = PROBE_SHAPE;
        let (module, input_shape): (Module<F>, Vec<usize>) = {
            let mut b = Builder::new(&mut store, &mut rng);
            match target {
                ProbeTarget::Temporal(kind) => {
                    let layers = [2, 1]
                        .iter()
                        .enumerate()
                        .map(|(i, &stride)| {
                            let spec = LayerSpec {
                                kind,
                                channels_in: c,
                                channels_out: c,
                                kernel: 5,
                                stride,
                                ratio: kind.default_ratio(),
                            };
                            TcLayer::new(&mut b.scope(&format!("tcn{i}")), spec)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (Module::Temporal(layers), vec![c, n, t, v])
                }
                ProbeTarget::Sgc => {
                    let adj = probe_skeleton(v)?.partitions(2)?;
                    let layer = SgcLayer::new(&mut b.scope("sgc"), 6, c, adj.normalized())?;
                    (Module::Sgc(layer), vec![6, n, t, v])
                }
                ProbeTarget::StJointAtt | ProbeTarget::Se(_) => {
                    let kind = match target {
                        ProbeTarget::Se(k) => k,
                        _ => AttentionKind::StJoint,
                    };
                    let att = Attention::new(&mut b.scope("att"), kind, c, 4.0)?
                        .ok_or_else(|| Error::arg("probe needs an attention kind"))?;
                    (Module::Attention(att), vec![c, n, t, v])
                }
                ProbeTarget::BatchNorm => (Module::Bn(BatchNorm::new(&mut b.scope("bn"), 4)?), vec![4, 3, 5, 2]),
                ProbeTarget::FullyConnected => {
                    let w = b.weight("fc.weight", &[4, c], c, 4)?;
                    let bias = b.constant("fc.bias", ParamKind::Bias, &[4], 0.0)?;
                    (Module::Fc(w, bias), vec![c, 3])
                }
                ProbeTarget::MiniNetwork => {
                    let plan = ArchPlan::mini(4)?;
                    let net = Network::new(&plan, &probe_skeleton(7)?, seed)?;
                    let mut data_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
                    let inputs = (0..plan.branches.len()).map(|_| random(&[6, 2, 20, 7], &mut data_rng)).collect();
                    (Module::Net(Box::new(net), inputs), Vec::new())
                }
            }
        };
        let input = if input_shape.is_empty() {
            None
        } else {
            let x = random(&input_shape, &mut rng);
            Some(store.add_param("input", ParamKind::Weight, x)?)
        };
        let mut probe = Self {
            target,
            store,
            input,
            module,
            projection: ArrayD::zeros(IxDyn(&[])),
            seed,
        };
        perturb(probe.store(), &mut rng);
        let mut g = Graph::inference();
        let y = probe.output(&mut g)?;
        probe.projection = random(g.shape(y), &mut rng);
        Ok(probe)
    }

    fn output(&mut self, graph: &mut Graph<F>) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        if let Module::Net(net, inputs) = &mut self.module {
            net.dropout = 0.25;
            return Ok(net.forward(graph, inputs, true, &mut rng)?.logits);
        }
        let x = self.input.map(|id| graph.param(&self.store, id)).expect("layer probes own an input");
        let mut ctx = Ctx {
            graph,
            store: &mut self.store,
            train: true,
            rng: &mut rng,
        };
        match &self.module {
            Module::Temporal(layers) => {
                let mut h = x;
                for l in layers {
                    h = l.forward(&mut ctx, h)?;
                }
                Ok(h)
            }
            Module::Sgc(l) => l.forward(&mut ctx, x),
            Module::Attention(a) => a.forward(&mut ctx, x),
            Module::Bn(bn) => bn.forward(&mut ctx, x),
            Module::Fc(w, b) => {
                let (w, b) = (ctx.p(*w), ctx.p(*b));
                fully_connected(ctx.graph, x, w, b)
            }
            Module::Net(..) => unreachable!("handled above"),
        }
    }
}

impl<F: Element> GradCheckable<F> for Probe<F> {
    fn store(&mut self) -> &mut ParamStore<F> {
        match &mut self.module {
            Module::Net(net, _) => net.store_mut(),
            _ => &mut self.store,
        }
    }

    fn loss(&mut self, graph: &mut Graph<F>) -> Result<Var> {
        let y = self.output(graph)?;
        let r = graph.input(self.projection.clone());
        let yr = graph.mul(y, r)?;
        Ok(graph.sum(yr))
    }
}

/// Builds the probe for `target` and checks all of its gradients.
pub fn run_probe<F: Element>(target: ProbeTarget, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut probe = Probe::<F>::new(target, opts.seed)?;
    grad_check(&mut probe, opts)
}
