//! Compound scaling, architecture plans and analytic complexity accounting.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::BranchKind;

/// Allowed deviation of `alpha^2 * beta` from 2.
pub const SCALING_TOLERANCE: f64 = 0.1;
pub const CHANNEL_STEP: usize = 16;
pub const INPUT_CHANNELS: usize = 6;
pub const INIT_CHANNELS: usize = 64;
/// Reduction used by attention modules unless the layer kind dictates otherwise.
pub const ATTENTION_REDUCTION: f64 = 4.0;
pub const FLOPS_CONVENTION: &str = "1 multiply-accumulate = 1 FLOP; conv, FC and adjacency products only";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Basic,
    Bottle,
    Sep,
    #[serde(rename = "epsep")]
    EpSep,
    Sg,
}

impl LayerKind {
    pub const ALL: [LayerKind; 5] = [
        LayerKind::Basic,
        LayerKind::Bottle,
        LayerKind::Sep,
        LayerKind::EpSep,
        LayerKind::Sg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Basic => "basic",
            LayerKind::Bottle => "bottle",
            LayerKind::Sep => "sep",
            LayerKind::EpSep => "epsep",
            LayerKind::Sg => "sg",
        }
    }

    /// Ratio used when none is given: reduction 2 for sg, 4 for bottle, expansion 2 for epsep.
    pub fn default_ratio(self) -> f64 {
        match self {
            LayerKind::Sg => 2.0,
            LayerKind::Bottle => 4.0,
            LayerKind::EpSep => 2.0,
            LayerKind::Basic | LayerKind::Sep => 1.0,
        }
    }

    /// Attention reduction paired with this layer kind.
    pub fn attention_ratio(self, ratio: f64) -> f64 {
        match self {
            LayerKind::Sg | LayerKind::Bottle => ratio,
            _ => ATTENTION_REDUCTION,
        }
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown layer kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    None,
    StJoint,
    Channel,
    Frame,
    Joint,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 5] = [
        AttentionKind::None,
        AttentionKind::StJoint,
        AttentionKind::Channel,
        AttentionKind::Frame,
        AttentionKind::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::None => "none",
            AttentionKind::StJoint => "st_joint",
            AttentionKind::Channel => "channel",
            AttentionKind::Frame => "frame",
            AttentionKind::Joint => "joint",
        }
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttentionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown attention kind `{s}`")))
    }
}

/// `floor(c / r)`, at least 1.
pub fn reduced(c: usize, r: f64) -> usize {
    ((c as f64 / r).floor() as usize).max(1)
}

/// `round(c * r)`, at least 1.
pub fn expanded(c: usize, r: f64) -> usize {
    ((c as f64 * r).round() as usize).max(1)
}

/// One temporal layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub ratio: f64,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels_in == 0 || self.channels_out == 0 {
            return Err(Error::arg("layer channels must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::arg(format!("temporal kernel {} must be odd", self.kernel)));
        }
        if !(self.stride == 1 || self.stride == 2) {
            return Err(Error::arg(format!("stride must be 1 or 2, got {}", self.stride)));
        }
        if !(self.ratio >= 1.0) {
            return Err(Error::arg(format!("ratio must be at least 1, got {}", self.ratio)));
        }
        Ok(())
    }

    /// Whether the residual link needs a projection.
    pub fn projects(&self) -> bool {
        self.stride != 1 || self.channels_in != self.channels_out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub channels_in: usize,
    pub channels_out: usize,
    pub depth: usize,
    pub stride: usize,
    pub kind: LayerKind,
    pub ratio: f64,
    pub kernel: usize,
    pub attention: AttentionKind,
    pub attention_ratio: f64,
}

impl BlockSpec {
    /// Temporal layers of the block; the first one carries the stride.
    pub fn layers(&self) -> Vec<LayerSpec> {
        (0..self.depth)
            .map(|i| LayerSpec {
                kind: self.kind,
                channels_in: self.channels_out,
                channels_out: self.channels_out,
                kernel: self.kernel,
                stride: if i == 0 { self.stride } else { 1 },
                ratio: self.ratio,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub alpha: f64,
    pub beta: f64,
    pub phi: u32,
    pub base_channels: [usize; 4],
    pub base_depths: [f64; 4],
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            alpha: 1.2,
            beta: 1.35,
            phi: 0,
            base_channels: [48, 24, 64, 128],
            base_depths: [0.5, 0.5, 1.0, 1.0],
        }
    }
}

impl ScalingConfig {
    pub fn with_phi(phi: u32) -> Self {
        Self { phi, ..Self::default() }
    }
}

/// Rounds to the nearest integer with exact halves going down.
pub fn step_round(x: f64) -> Result<usize> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::arg(format!("step_round needs a finite non-negative value, got {x}")));
    }
    let f = x.floor();
    Ok(if x - f > 0.5 { f as usize + 1 } else { f as usize })
}

pub fn scale_channels(base: usize, alpha: f64, phi: u32) -> Result<usize> {
    if base == 0 {
        return Err(Error::arg("base channels must be positive"));
    }
    let steps = step_round(base as f64 / CHANNEL_STEP as f64 * alpha.powi(phi as i32))?;
    Ok(steps.max(1) * CHANNEL_STEP)
}

pub fn scale_depth(base: f64, beta: f64, phi: u32) -> Result<usize> {
    step_round(base * beta.powi(phi as i32))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintCheck {
    pub product: f64,
    pub residual: f64,
    pub passed: bool,
}

pub fn check_scaling_constraint(alpha: f64, beta: f64) -> ConstraintCheck {
    let product = alpha * alpha * beta;
    let residual = (product - 2.0).abs();
    ConstraintCheck {
        product,
        residual,
        passed: alpha >= 1.0 && beta >= 1.0 && residual <= SCALING_TOLERANCE,
    }
}

fn default_branches() -> Vec<BranchKind> {
    BranchKind::ALL.to_vec()
}

fn default_attention() -> AttentionKind {
    AttentionKind::StJoint
}

fn default_init_channels() -> usize {
    INIT_CHANNELS
}

fn default_input_channels() -> usize {
    INPUT_CHANNELS
}

/// Stage widths and depths of one network, plus the layer family it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchPlan {
    pub phi: u32,
    pub alpha: f64,
    pub beta: f64,
    pub layer_kind: LayerKind,
    pub ratio: f64,
    #[serde(rename = "D")]
    pub max_distance: usize,
    #[serde(rename = "L")]
    pub kernel: usize,
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    pub num_classes: usize,
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
    #[serde(default = "default_init_channels")]
    pub init_channels: usize,
    #[serde(default = "default_branches")]
    pub branches: Vec<BranchKind>,
    #[serde(default = "default_attention")]
    pub attention: AttentionKind,
    /// Reduction inside attention modules; derived from the layer kind when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_ratio: Option<f64>,
}

/// Builds a plan by compound scaling. A failed `alpha^2 * beta` constraint is a
/// configuration error unless `allow_unconstrained` is set.
pub fn make_arch(
    config: &ScalingConfig,
    layer_kind: LayerKind,
    ratio: Option<f64>,
    max_distance: usize,
    kernel: usize,
    num_classes: usize,
    allow_unconstrained: bool,
) -> Result<ArchPlan> {
    if config.alpha < 1.0 || config.beta < 1.0 {
        return Err(Error::Config(format!(
            "alpha and beta must be at least 1, got {} and {}",
            config.alpha, config.beta
        )));
    }
    let check = check_scaling_constraint(config.alpha, config.beta);
    if !check.passed && !allow_unconstrained {
        return Err(Error::Config(format!(
            "alpha^2 * beta = {:.4} is {:.4} away from 2 (tolerance {SCALING_TOLERANCE})",
            check.product, check.residual
        )));
    }
    let mut stage_channels = [0; 4];
    let mut stage_depths = [0; 4];
    for i in 0..4 {
        stage_channels[i] = scale_channels(config.base_channels[i], config.alpha, config.phi)?;
        stage_depths[i] = scale_depth(config.base_depths[i], config.beta, config.phi)?;
    }
    let plan = ArchPlan {
        phi: config.phi,
        alpha: config.alpha,
        beta: config.beta,
        layer_kind,
        ratio: ratio.unwrap_or(layer_kind.default_ratio()),
        max_distance,
        kernel,
        stage_channels,
        stage_depths,
        num_classes,
        input_channels: INPUT_CHANNELS,
        init_channels: INIT_CHANNELS,
        branches: default_branches(),
        attention: AttentionKind::StJoint,
        attention_ratio: None,
    };
    plan.validate()?;
    Ok(plan)
}

impl ArchPlan {
    /// Default B-series plan (`sg`, ratio 2, D = 2, L = 5).
    pub fn efficient(phi: u32, num_classes: usize) -> Result<Self> {
        make_arch(&ScalingConfig::with_phi(phi), LayerKind::Sg, None, 2, 5, num_classes, false)
    }

    /// B0 with every stage width and the init block halved, for desk-scale runs.
    pub fn mini(num_classes: usize) -> Result<Self> {
        Self::efficient(0, num_classes)?.halved()
    }

    /// Same plan with every stage width and the init block halved.
    pub fn halved(mut self) -> Result<Self> {
        self.stage_channels = self.stage_channels.map(|c| (c / 2).max(1));
        self.init_channels = (self.init_channels / 2).max(1);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::arg(format!("temporal kernel {} must be odd", self.kernel)));
        }
        if !(self.ratio >= 1.0) {
            return Err(Error::arg(format!("ratio must be at least 1, got {}", self.ratio)));
        }
        if self.num_classes == 0 {
            return Err(Error::arg("num_classes must be positive"));
        }
        if self.stage_channels.contains(&0) || self.init_channels == 0 || self.input_channels == 0 {
            return Err(Error::arg("channel widths must be positive"));
        }
        if let Some(r) = self.attention_ratio {
            if !(r >= 1.0) {
                return Err(Error::arg(format!("attention ratio must be at least 1, got {r}")));
            }
        }
        for (i, b) in self.branches.iter().enumerate() {
            if self.branches[..i].contains(b) {
                return Err(Error::arg(format!("branch {} listed twice", b.name())));
            }
        }
        Ok(())
    }

    pub fn attention_ratio(&self) -> f64 {
        self.attention_ratio
            .unwrap_or_else(|| self.layer_kind.attention_ratio(self.ratio))
    }

    fn block(&self, cin: usize, cout: usize, depth: usize, stride: usize) -> BlockSpec {
        BlockSpec {
            channels_in: cin,
            channels_out: cout,
            depth,
            stride,
            kind: self.layer_kind,
            ratio: self.ratio,
            kernel: self.kernel,
            attention: self.attention,
            attention_ratio: self.attention_ratio(),
        }
    }

    /// Fixed first block of every input branch: basic layer, no attention.
    pub fn init_block(&self) -> BlockSpec {
        BlockSpec {
            kind: LayerKind::Basic,
            ratio: 1.0,
            attention: AttentionKind::None,
            ..self.block(self.input_channels, self.init_channels, 1, 1)
        }
    }

    /// The two stages run separately inside each branch.
    pub fn branch_blocks(&self) -> [BlockSpec; 2] {
        let c = self.stage_channels;
        let d = self.stage_depths;
        [
            self.block(self.init_channels, c[0], d[0], 1),
            self.block(c[0], c[1], d[1], 1),
        ]
    }

    /// The two stride-2 stages after branch fusion.
    pub fn main_blocks(&self) -> [BlockSpec; 2] {
        let c = self.stage_channels;
        let d = self.stage_depths;
        [
            self.block(self.branches.len() * c[1], c[2], d[2], 2),
            self.block(c[2], c[3], d[3], 2),
        ]
    }

    pub fn fusion_channels(&self) -> usize {
        self.branches.len() * self.stage_channels[1]
    }

    pub fn feature_channels(&self) -> usize {
        self.stage_channels[3]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: ArchPlan = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockComplexity {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub convention: String,
    pub frames: usize,
    pub joints: usize,
    pub bodies: usize,
    pub blocks: Vec<BlockComplexity>,
    pub total_params: u64,
    pub total_flops: u64,
}

impl ComplexityReport {
    fn from_blocks(blocks: Vec<BlockComplexity>, frames: usize, joints: usize, bodies: usize) -> Self {
        Self {
            convention: FLOPS_CONVENTION.to_string(),
            frames,
            joints,
            bodies,
            total_params: blocks.iter().map(|b| b.params).sum(),
            total_flops: blocks.iter().map(|b| b.flops).sum(),
            blocks,
        }
    }

    pub fn header(&self) -> String {
        format!(
            "# {}; T={}, V={}, bodies={}",
            self.convention, self.frames, self.joints, self.bodies
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("\nblock,params,flops\n");
        for b in &self.blocks {
            let _ = writeln!(s, "{},{},{}", b.name, b.params, b.flops);
        }
        let _ = writeln!(s, "total,{},{}", self.total_params, self.total_flops);
        s
    }
}

fn conv_params(cin: usize, cout: usize, kernel: usize, groups: usize) -> u64 {
    (cout * (cin / groups) * kernel + cout) as u64
}

fn bn_params(c: usize) -> u64 {
    2 * c as u64
}

/// Cost of one layer: parameters and MACs at input length `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Cost {
    params: u64,
    flops: u64,
}

impl std::ops::AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        self.params += o.params;
        self.flops += o.flops;
    }
}

/// Convolution cost at output length `t_out` over `v` joints.
fn conv_cost(cin: usize, cout: usize, kernel: usize, groups: usize, t_out: usize, v: usize) -> Cost {
    Cost {
        params: conv_params(cin, cout, kernel, groups) + bn_params(cout),
        flops: (cout * (cin / groups) * kernel * t_out * v) as u64,
    }
}

fn strided(t: usize, stride: usize) -> usize {
    (t - 1) / stride + 1
}

fn sgc_cost(cin: usize, cout: usize, parts: usize, t: usize, v: usize) -> Cost {
    let mut c = Cost {
        params: parts as u64 * (conv_params(cin, cout, 1, 1) + (v * v) as u64) + bn_params(cout),
        flops: (parts * (cin * cout * t * v + cout * t * v * v)) as u64,
    };
    if cin != cout {
        c += conv_cost(cin, cout, 1, 1, t, v);
    }
    c
}

fn tc_cost(spec: &LayerSpec, t: usize, v: usize) -> Cost {
    let (ci, co, l, s, r) = (spec.channels_in, spec.channels_out, spec.kernel, spec.stride, spec.ratio);
    let to = strided(t, s);
    let mut c = Cost::default();
    match spec.kind {
        LayerKind::Basic => c += conv_cost(ci, co, l, 1, to, v),
        LayerKind::Bottle => {
            let i = reduced(ci, r);
            c += conv_cost(ci, i, 1, 1, t, v);
            c += conv_cost(i, i, l, 1, to, v);
            c += conv_cost(i, co, 1, 1, to, v);
        }
        LayerKind::Sep => {
            c += conv_cost(ci, ci, l, ci, to, v);
            c += conv_cost(ci, co, 1, 1, to, v);
        }
        LayerKind::EpSep => {
            let i = expanded(ci, r);
            c += conv_cost(ci, i, 1, 1, t, v);
            c += conv_cost(i, i, l, i, to, v);
            c += conv_cost(i, co, 1, 1, to, v);
        }
        LayerKind::Sg => {
            let i = reduced(ci, r);
            c += conv_cost(ci, ci, l, ci, t, v);
            c += conv_cost(ci, i, 1, 1, t, v);
            c += conv_cost(i, co, 1, 1, t, v);
            c += conv_cost(co, co, l, co, to, v);
        }
    }
    if spec.projects() {
        c += conv_cost(ci, co, 1, 1, to, v);
    }
    c
}

fn attention_cost(kind: AttentionKind, c: usize, ratio: f64, t: usize, v: usize) -> Cost {
    let i = reduced(c, ratio);
    let fc = |a: usize, b: usize, positions: usize| Cost {
        params: conv_params(a, b, 1, 1),
        flops: (a * b * positions) as u64,
    };
    let mut cost = Cost::default();
    match kind {
        AttentionKind::None => {}
        AttentionKind::StJoint => {
            cost += fc(c, i, t + v);
            cost.params += bn_params(i);
            cost += fc(i, c, t);
            cost += fc(i, c, v);
        }
        AttentionKind::Channel => {
            cost += fc(c, i, 1);
            cost += fc(i, c, 1);
        }
        AttentionKind::Frame => {
            cost += fc(c, i, t);
            cost += fc(i, 1, t);
        }
        AttentionKind::Joint => {
            cost += fc(c, i, v);
            cost += fc(i, 1, v);
        }
    }
    cost
}

/// Cost of one block at input length `t`, with its output length.
fn block_cost(spec: &BlockSpec, parts: usize, t: usize, v: usize) -> (Cost, usize) {
    let mut cost = sgc_cost(spec.channels_in, spec.channels_out, parts, t, v);
    let mut t = t;
    for layer in spec.layers() {
        cost += tc_cost(&layer, t, v);
        t = strided(t, layer.stride);
    }
    cost += attention_cost(spec.attention, spec.channels_out, spec.attention_ratio, t, v);
    (cost, t)
}

/// Parameter count of a single temporal layer.
pub fn layer_params(spec: &LayerSpec) -> u64 {
    tc_cost(spec, 1, 1).params
}

/// MACs of a single temporal layer on a `T x V` input.
pub fn layer_flops(spec: &LayerSpec, t: usize, v: usize) -> u64 {
    tc_cost(spec, t, v).flops
}

/// Parameter count of a whole block with `parts = D + 1` partitions on `v` joints.
pub fn block_params(spec: &BlockSpec, parts: usize, v: usize) -> u64 {
    block_cost(spec, parts, 1, v).0.params
}

pub fn attention_params(kind: AttentionKind, c: usize, ratio: f64) -> u64 {
    attention_cost(kind, c, ratio, 1, 1).params
}

/// Per-block parameters and MACs for `bodies` skeletons of `t` frames and `v` joints.
pub fn profile(plan: &ArchPlan, t: usize, v: usize, bodies: usize) -> Result<ComplexityReport> {
    plan.validate()?;
    if t == 0 || v == 0 {
        return Err(Error::arg("frames and joints must be positive"));
    }
    let parts = plan.max_distance + 1;
    let m = bodies as u64;
    let mut blocks = Vec::new();
    let mut push = |name: String, cost: Cost| {
        blocks.push(BlockComplexity {
            name,
            params: cost.params,
            flops: cost.flops * m,
        })
    };
    if plan.branches.is_empty() {
        return Ok(ComplexityReport::from_blocks(blocks, t, v, bodies));
    }
    for b in &plan.branches {
        let name = b.name();
        push(
            format!("{name}.bn"),
            Cost {
                params: bn_params(plan.input_channels),
                flops: 0,
            },
        );
        let mut tb = t;
        let stages = std::iter::once(("init", plan.init_block()))
            .chain([("stage1", plan.branch_blocks()[0]), ("stage2", plan.branch_blocks()[1])]);
        for (stage, spec) in stages {
            let (cost, t2) = block_cost(&spec, parts, tb, v);
            tb = t2;
            push(format!("{name}.{stage}"), cost);
        }
    }
    let mut tm = t;
    for (stage, spec) in ["stage3", "stage4"].into_iter().zip(plan.main_blocks()) {
        let (cost, t2) = block_cost(&spec, parts, tm, v);
        tm = t2;
        push(format!("main.{stage}"), cost);
    }
    let (c, q) = (plan.feature_channels(), plan.num_classes);
    push(
        "head.fc".into(),
        Cost {
            params: conv_params(c, q, 1, 1),
            flops: (c * q) as u64,
        },
    );
    Ok(ComplexityReport::from_blocks(blocks, t, v, bodies))
}

/// Parameter side of [`profile`]; independent of sequence length.
pub fn count_params(plan: &ArchPlan, joints: usize) -> Result<u64> {
    Ok(profile(plan, 1, joints, 1)?.total_params)
}

pub fn count_flops(plan: &ArchPlan, frames: usize, joints: usize, bodies: usize) -> Result<u64> {
    Ok(profile(plan, frames, joints, bodies)?.total_flops)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub max_distance: usize,
    pub kernel: usize,
    pub report: ComplexityReport,
}

/// One complexity report per `(D, L)` pair over `template`.
pub fn receptive_sweep(
    template: &ArchPlan,
    distances: &[usize],
    kernels: &[usize],
    t: usize,
    v: usize,
    bodies: usize,
) -> Result<Vec<SweepCell>> {
    if distances.is_empty() || kernels.is_empty() {
        return Err(Error::arg("sweep ranges must be non-empty"));
    }
    let mut out = Vec::with_capacity(distances.len() * kernels.len());
    for &d in distances {
        for &l in kernels {
            let plan = ArchPlan {
                max_distance: d,
                kernel: l,
                ..template.clone()
            };
            out.push(SweepCell {
                max_distance: d,
                kernel: l,
                report: profile(&plan, t, v, bodies)?,
            });
        }
    }
    Ok(out)
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut s = String::new();
    if let Some(first) = cells.first() {
        s.push_str(&first.report.header());
        s.push('\n');
    }
    s.push_str("D,L,params,flops\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{},{}", c.max_distance, c.kernel, c.report.total_params, c.report.total_flops);
    }
    s
}
