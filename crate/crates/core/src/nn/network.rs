use std::collections::HashMap;
use std::path::Path;

use ndarray::{s, Array2, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{dropout, fully_connected, BatchNorm, Builder, Ctx, GcnBlock, DROPOUT};
use crate::arch::ArchPlan;
use crate::error::{Error, Result};
use crate::graph::{PartitionedAdjacency, SkeletonGraph};
use crate::io;
use crate::preprocess::{BranchInput, BranchKind};
use crate::tensor::{Element, Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone)]
struct Branch {
    kind: BranchKind,
    bn: BatchNorm,
    init: GcnBlock,
    stages: [GcnBlock; 2],
}

/// Handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct NetOutput {
    /// `[Q, N]` class scores, one column per body.
    pub logits: Var,
    /// Last feature map `[C, N, T', V]` before pooling.
    pub features: Var,
}

/// Multi-branch EfficientGCN network owning its parameters.
#[derive(Debug, Clone)]
pub struct Network<F: Element> {
    plan: ArchPlan,
    joints: usize,
    store: ParamStore<F>,
    branches: Vec<Branch>,
    main: [GcnBlock; 2],
    fc_weight: ParamId,
    fc_bias: ParamId,
    pub dropout: f64,
}

impl<F: Element> Network<F> {
    /// Builds the network with the symmetric-normalized adjacency of `graph`.
    pub fn new(plan: &ArchPlan, graph: &SkeletonGraph, seed: u64) -> Result<Self> {
        let adjacency = graph.partitions(plan.max_distance)?;
        Self::with_adjacency(plan, &adjacency, seed)
    }

    pub fn with_adjacency(plan: &ArchPlan, adjacency: &PartitionedAdjacency, seed: u64) -> Result<Self> {
        plan.validate()?;
        if plan.branches.is_empty() {
            return Err(Error::arg("a network needs at least one input branch"));
        }
        if adjacency.max_distance() != plan.max_distance {
            return Err(Error::arg(format!(
                "adjacency has D = {} but the plan asks for D = {}",
                adjacency.max_distance(),
                plan.max_distance
            )));
        }
        let a = adjacency.normalized();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let [s1, s2] = plan.branch_blocks();
        let mut branches = Vec::with_capacity(plan.branches.len());
        for &kind in &plan.branches {
            let mut bb = b.scope(kind.name());
            branches.push(Branch {
                kind,
                bn: BatchNorm::new(&mut bb.scope("bn"), plan.input_channels)?,
                init: GcnBlock::new(&mut bb.scope("init"), plan.init_block(), a)?,
                stages: [
                    GcnBlock::new(&mut bb.scope("stage1"), s1, a)?,
                    GcnBlock::new(&mut bb.scope("stage2"), s2, a)?,
                ],
            });
        }
        let [m3, m4] = plan.main_blocks();
        let main = [
            GcnBlock::new(&mut b.scope("main.stage3"), m3, a)?,
            GcnBlock::new(&mut b.scope("main.stage4"), m4, a)?,
        ];
        let (c, q) = (plan.feature_channels(), plan.num_classes);
        let mut head = b.scope("head.fc");
        let fc_weight = head.weight("weight", &[q, c], c, q)?;
        let fc_bias = head.constant("bias", crate::tensor::ParamKind::Bias, &[q], 0.0)?;
        Ok(Self {
            plan: plan.clone(),
            joints: adjacency.num_joints(),
            store,
            branches,
            main,
            fc_weight,
            fc_bias,
            dropout: DROPOUT,
        })
    }

    pub fn plan(&self) -> &ArchPlan {
        &self.plan
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    pub fn num_params(&self) -> u64 {
        self.store.num_scalars() as u64
    }

    pub fn fc_weight(&self) -> ParamId {
        self.fc_weight
    }

    /// Runs all branches on `inputs` (one `[6, N, T, V]` tensor per plan branch, in order).
    pub fn forward(
        &mut self,
        graph: &mut Graph<F>,
        inputs: &[ArrayD<F>],
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NetOutput> {
        if inputs.len() != self.branches.len() {
            return Err(Error::arg(format!(
                "expected {} branch inputs, got {}",
                self.branches.len(),
                inputs.len()
            )));
        }
        let shape = inputs[0].shape().to_vec();
        for (x, br) in inputs.iter().zip(&self.branches) {
            let s = x.shape();
            if s.len() != 4 || s[0] != self.plan.input_channels || s[3] != self.joints || s != shape.as_slice() {
                return Err(Error::arg(format!(
                    "{} branch input must be [{}, N, T, {}] like the others, got {s:?}",
                    br.kind.name(),
                    self.plan.input_channels,
                    self.joints
                )));
            }
        }
        let Network {
            store,
            branches,
            main,
            fc_weight,
            fc_bias,
            dropout: p,
            ..
        } = self;
        let mut ctx = Ctx {
            graph,
            store,
            train,
            rng,
        };
        let mut outs = Vec::with_capacity(branches.len());
        for (x, br) in inputs.iter().zip(branches.iter()) {
            let h = ctx.graph.input(x.clone());
            let h = br.bn.forward(&mut ctx, h)?;
            let h = br.init.forward(&mut ctx, h)?;
            let h = br.stages[0].forward(&mut ctx, h)?;
            outs.push(br.stages[1].forward(&mut ctx, h)?);
        }
        let mut h = if outs.len() == 1 { outs[0] } else { ctx.graph.concat(&outs, 0)? };
        for blk in main.iter() {
            h = blk.forward(&mut ctx, h)?;
        }
        let features = h;
        let pooled = ctx.graph.mean_axes(features, &[2, 3], false)?;
        let pooled = dropout(ctx.graph, pooled, *p, train, ctx.rng)?;
        let (w, b) = (ctx.p(*fc_weight), ctx.p(*fc_bias));
        let logits = fully_connected(ctx.graph, pooled, w, b)?;
        Ok(NetOutput { logits, features })
    }

    /// Averages body columns of `[Q, N_bodies]` logits into one column per
    /// sequence; `owner[k]` is the sequence of body column `k`.
    pub fn sequence_logits(graph: &mut Graph<F>, logits: Var, owner: &[usize]) -> Result<Var> {
        let nb = graph.shape(logits)[1];
        if owner.len() != nb {
            return Err(Error::arg(format!("{} owners for {nb} body columns", owner.len())));
        }
        let ns = owner.iter().max().map_or(0, |&m| m + 1);
        let mut counts = vec![0usize; ns];
        for &o in owner {
            counts[o] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::arg("every sequence needs at least one body"));
        }
        let mut avg = Array2::<F>::zeros((nb, ns));
        for (k, &o) in owner.iter().enumerate() {
            avg[[k, o]] = F::of(1.0 / counts[o] as f64);
        }
        let a = graph.input(avg.into_dyn());
        graph.matmul(logits, a)
    }

    /// All parameters then all buffers, by name.
    pub fn named_tensors(&self) -> Vec<(String, &ArrayD<F>)> {
        self.store
            .params()
            .iter()
            .map(|p| (p.name.clone(), &p.value))
            .chain(self.store.buffers().iter().map(|b| (b.name.clone(), &b.value)))
            .collect()
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        io::save_checkpoint(path, &self.named_tensors())
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        io::encode_checkpoint(&self.named_tensors())
    }

    /// Loads every parameter and buffer by name; names and shapes must match exactly.
    pub fn load_checkpoint(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let entries = io::load_checkpoint(path)?;
        let mut by_name: HashMap<String, io::AnyTensor> = entries.into_iter().collect();
        let mut take = |name: &str, target: &mut ArrayD<F>| -> Result<()> {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Data(format!("checkpoint has no tensor `{name}`")))?;
            if t.shape() != target.shape() {
                return Err(Error::Data(format!(
                    "checkpoint tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    target.shape()
                )));
            }
            *target = t.cast::<F>();
            Ok(())
        };
        for p in self.store.params_mut() {
            take(&p.name, &mut p.value)?;
        }
        for b in self.store.buffers_mut() {
            take(&b.name, &mut b.value)?;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Data(format!("checkpoint tensor `{extra}` does not belong to this network")));
        }
        Ok(())
    }
}

/// Stacks per-body branch inputs into one `[6, N, T, V]` tensor per branch kind.
pub fn batch_branches<F: Element>(bodies: &[&BranchInput], kinds: &[BranchKind]) -> Result<Vec<ArrayD<F>>> {
    let first = bodies.first().ok_or_else(|| Error::arg("empty batch"))?;
    let (t, v) = (first.frames(), first.joints());
    let c = first.joint.shape()[0];
    kinds
        .iter()
        .map(|&k| {
            let mut out = ndarray::Array4::<F>::zeros((c, bodies.len(), t, v));
            for (n, b) in bodies.iter().enumerate() {
                let src = b.branch(k);
                if src.shape() != [c, t, v] {
                    return Err(Error::arg(format!(
                        "body {n} has shape {:?}, expected {:?}",
                        src.shape(),
                        [c, t, v]
                    )));
                }
                out.slice_mut(s![.., n, .., ..]).assign(&src.mapv(F::of));
            }
            Ok(out.into_dyn())
        })
        .collect()
}
