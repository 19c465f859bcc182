use rand_distr::{Distribution, Normal};

use super::nasnet::scheduled_drop_path;
use crate::error::{Error, Result};
use crate::tensor::{
    add_backward, add_many, batchnorm_backward, batchnorm_forward, concat_backward, concat_many,
    conv2d_backward, conv2d_forward, crop_backward, crop_to, depthwise_backward,
    depthwise_forward, derive_seed, maxpool2x2_backward, maxpool2x2_forward, maxpool2x2_select,
    pad2d_backward,
    pad2d_forward, relu_backward, relu_forward, softmax_channel_backward,
    softmax_channel_forward, spatial_dropout_backward, spatial_dropout_forward, upconv2x_backward,
    upconv2x_forward, BatchNormCache, BatchNormState, ChannelMask, ConvParams, DepthwiseParams,
    Mode, Padding, PoolIndices, ReluCap, RngStream, Shape4, Tensor4, UpConvParams,
};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Input,
    Conv(ConvParams),
    Depthwise(DepthwiseParams),
    UpConv(UpConvParams),
    BatchNorm(BatchNormState),
    Relu(ReluCap),
    MaxPool,
    Pad(Padding),
    /// Pads one zero row/column at the bottom/right of odd extents.
    PadToEven,
    /// Center-crops input 0 to the spatial extent of input 1.
    CropTo,
    SpatialDropout { rate: f32 },
    DropPath { rate_final: f32 },
    Add,
    Concat,
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Input => "input",
            Layer::Conv(_) => "conv",
            Layer::Depthwise(_) => "depthwise_conv",
            Layer::UpConv(_) => "upconv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu(ReluCap::None) => "relu",
            Layer::Relu(ReluCap::Six) => "relu6",
            Layer::MaxPool => "maxpool",
            Layer::Pad(_) => "pad",
            Layer::PadToEven => "pad_to_even",
            Layer::CropTo => "crop",
            Layer::SpatialDropout { .. } => "spatial_dropout",
            Layer::DropPath { .. } => "drop_path",
            Layer::Add => "add",
            Layer::Concat => "concat",
            Layer::Softmax => "softmax",
        }
    }

    fn params(&self) -> Vec<&[f32]> {
        match self {
            Layer::Conv(p) => vec![p.weights.data(), &p.bias],
            Layer::Depthwise(p) => vec![p.weights.data()],
            Layer::UpConv(p) => vec![p.weights.data(), &p.bias],
            Layer::BatchNorm(s) => vec![&s.gamma, &s.beta],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f32]> {
        match self {
            Layer::Conv(ConvParams { weights, bias, .. })
            | Layer::UpConv(UpConvParams { weights, bias }) => {
                vec![weights.data_mut(), bias.as_mut_slice()]
            }
            Layer::Depthwise(p) => vec![p.weights.data_mut()],
            Layer::BatchNorm(s) => vec![s.gamma.as_mut_slice(), s.beta.as_mut_slice()],
            _ => Vec::new(),
        }
    }
}

/// Structural tag used by graph-level accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Concatenation feeding one layer of a dense block.
    DenseFeed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub layer: Layer,
    pub inputs: Vec<NodeId>,
    pub out_channels: usize,
    pub role: Option<Role>,
}

/// Per-call settings for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardCtx {
    pub mode: Mode,
    /// Seeds every stochastic node; each node derives its own stream from
    /// this value and its id.
    pub seed: u64,
    /// Fraction of training completed, drives scheduled drop-path.
    pub progress: f32,
}

impl ForwardCtx {
    pub fn infer() -> Self {
        ForwardCtx {
            mode: Mode::Infer,
            seed: 0,
            progress: 0.0,
        }
    }

    pub fn train(seed: u64, progress: f32) -> Self {
        ForwardCtx {
            mode: Mode::Train,
            seed,
            progress,
        }
    }
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    BatchNorm(BatchNormCache),
    Pool(PoolIndices),
    Pad(Padding),
    Dropout(ChannelMask),
    DropPath(Vec<f32>),
}

/// Every node output of one forward pass plus what backward needs.
#[derive(Debug, Clone)]
pub struct Activations {
    outputs: Vec<Tensor4>,
    caches: Vec<Cache>,
}

impl Activations {
    pub fn output(&self, id: NodeId) -> &Tensor4 {
        &self.outputs[id]
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// Parameter gradients in [`Graph::params`] slot order, plus the gradient
/// with respect to the graph input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Vec<f32>>,
    pub input: Option<Tensor4>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(|v| v.is_finite())
            && self.input.as_ref().is_none_or(Tensor4::is_finite)
    }
}

/// Directed acyclic graph of layers with a single input node at id 0.
/// Node inputs always refer to earlier ids, so insertion order is a
/// topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn one_input(chans: &[usize]) -> std::result::Result<usize, String> {
    match chans {
        [c] => Ok(*c),
        _ => Err(format!("expects exactly one input, got {}", chans.len())),
    }
}

fn node_rng(seed: u64, id: NodeId) -> RngStream {
    RngStream::new(derive_seed(seed, &[id as u64]))
}

fn accumulate(slot: &mut Option<Tensor4>, g: Tensor4) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn foreign() -> Error {
    Error::InvalidArgument("activations were not produced by this graph".into())
}

impl Graph {
    pub fn new(input_channels: usize) -> Self {
        Graph {
            nodes: vec![Node {
                name: "input".into(),
                layer: Layer::Input,
                inputs: Vec::new(),
                out_channels: input_channels,
                role: None,
            }],
        }
    }

    pub const INPUT: NodeId = 0;

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.nodes[id].out_channels
    }

    pub fn input_channels(&self) -> usize {
        self.nodes[0].out_channels
    }

    pub fn last(&self) -> NodeId {
        self.nodes.len() - 1
    }

    /// Appends a node after checking its channel contract.
    pub fn push(&mut self, name: impl Into<String>, layer: Layer, inputs: &[NodeId]) -> Result<NodeId> {
        self.push_with_role(name, layer, inputs, None)
    }

    pub fn push_with_role(
        &mut self,
        name: impl Into<String>,
        layer: Layer,
        inputs: &[NodeId],
        role: Option<Role>,
    ) -> Result<NodeId> {
        let name = name.into();
        let id = self.nodes.len();
        let bad = |msg: String| Error::InvalidBlock(format!("{name}: {msg}"));
        if let Some(&i) = inputs.iter().find(|&&i| i >= id) {
            return Err(bad(format!("input {i} does not precede node {id}")));
        }
        let chans: Vec<usize> = inputs.iter().map(|&i| self.nodes[i].out_channels).collect();
        let out = match &layer {
            Layer::Input => return Err(bad("only the graph root may be an input".into())),
            Layer::Conv(p) => {
                p.validate()?;
                let c = one_input(&chans).map_err(bad)?;
                if c != p.c_in() {
                    return Err(bad(format!("conv expects {} channels, input has {c}", p.c_in())));
                }
                p.c_out()
            }
            Layer::Depthwise(p) => {
                let c = one_input(&chans).map_err(bad)?;
                if c != p.channels() || p.weights.shape().c != 1 {
                    return Err(bad(format!("{} depthwise kernels for {c} channels", p.channels())));
                }
                c
            }
            Layer::UpConv(p) => {
                let c = one_input(&chans).map_err(bad)?;
                if c != p.c_in() {
                    return Err(bad(format!("upconv expects {} channels, input has {c}", p.c_in())));
                }
                p.c_out()
            }
            Layer::BatchNorm(s) => {
                let c = one_input(&chans).map_err(bad)?;
                s.validate(Shape4::new(1, c, 1, 1))?;
                c
            }
            Layer::SpatialDropout { rate } | Layer::DropPath { rate_final: rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(bad(format!("rate {rate} must lie in [0, 1)")));
                }
                one_input(&chans).map_err(bad)?
            }
            Layer::Softmax => {
                let c = one_input(&chans).map_err(bad)?;
                if c < 2 {
                    return Err(bad("softmax needs at least 2 channels".into()));
                }
                c
            }
            Layer::Relu(_) | Layer::MaxPool | Layer::Pad(_) | Layer::PadToEven => {
                one_input(&chans).map_err(bad)?
            }
            Layer::CropTo => {
                if chans.len() != 2 {
                    return Err(bad("crop takes the tensor and a reference".into()));
                }
                chans[0]
            }
            Layer::Add => {
                if chans.len() < 2 || chans.iter().any(|&c| c != chans[0]) {
                    return Err(bad(format!("add needs two or more equal channel counts, got {chans:?}")));
                }
                chans[0]
            }
            Layer::Concat => {
                if chans.is_empty() {
                    return Err(bad("concat of nothing".into()));
                }
                chans.iter().sum()
            }
        };
        self.nodes.push(Node {
            name,
            layer,
            inputs: inputs.to_vec(),
            out_channels: out,
            role,
        });
        Ok(id)
    }

    /// Trainable arrays in slot order: per node, conv weights then bias,
    /// batch-norm gamma then beta.
    pub fn params(&self) -> Vec<&[f32]> {
        self.nodes.iter().flat_map(|n| n.layer.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        self.nodes.iter_mut().flat_map(|n| n.layer.params_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Everything a checkpoint stores, in graph order: trainables plus the
    /// batch-norm running statistics.
    pub fn state_arrays(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for n in &self.nodes {
            out.extend(n.layer.params());
            if let Layer::BatchNorm(s) = &n.layer {
                out.push(&s.running_mean[..]);
                out.push(&s.running_var[..]);
            }
        }
        out
    }

    pub fn state_arrays_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for n in &mut self.nodes {
            match &mut n.layer {
                Layer::BatchNorm(s) => {
                    out.push(s.gamma.as_mut_slice());
                    out.push(s.beta.as_mut_slice());
                    out.push(s.running_mean.as_mut_slice());
                    out.push(s.running_var.as_mut_slice());
                }
                layer => out.extend(layer.params_mut()),
            }
        }
        out
    }

    fn param_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.nodes
            .iter()
            .map(|n| {
                let at = acc;
                acc += n.layer.params().len();
                at
            })
            .collect()
    }

    /// He-normal convolution weights (std `sqrt(2 / fan_in)`), zero biases,
    /// unit batch-norm scale. Each node draws from its own stream.
    pub fn initialize(&mut self, seed: u64) {
        for (id, node) in self.nodes.iter_mut().enumerate() {
            let mut rng = node_rng(seed, id);
            let (weights, bias, fan_in) = match &mut node.layer {
                Layer::Conv(p) => {
                    let (kh, kw) = p.kernel();
                    let fan_in = p.c_in() * kh * kw;
                    (&mut p.weights, Some(&mut p.bias), fan_in)
                }
                Layer::Depthwise(p) => {
                    let (kh, kw) = p.kernel();
                    (&mut p.weights, None, kh * kw)
                }
                Layer::UpConv(p) => {
                    let fan_in = p.c_in();
                    (&mut p.weights, Some(&mut p.bias), fan_in)
                }
                Layer::BatchNorm(s) => {
                    let (m, e) = (s.momentum, s.epsilon);
                    *s = BatchNormState::new(s.channels());
                    s.momentum = m;
                    s.epsilon = e;
                    continue;
                }
                _ => continue,
            };
            let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
            weights.data_mut().iter_mut().for_each(|w| *w = normal.sample(&mut rng));
            if let Some(b) = bias {
                b.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn set_dropout_rate(&mut self, rate: f32) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} must lie in [0, 1)")));
        }
        for n in &mut self.nodes {
            if let Layer::SpatialDropout { rate: r } = &mut n.layer {
                *r = rate;
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor4) -> Result<()> {
        let c = self.input_channels();
        if input.shape().c != c {
            return Err(Error::ShapeMismatch {
                op: "graph_input",
                left: format!("input {}", input.shape()),
                right: format!("{c} expected channels"),
            });
        }
        Ok(())
    }

    fn eval(
        &self,
        id: NodeId,
        ins: &[&Tensor4],
        ctx: &ForwardCtx,
        frozen: Option<&Decision>,
    ) -> Result<(Tensor4, Cache)> {
        let node = &self.nodes[id];
        let x = ins[0];
        Ok(match &node.layer {
            Layer::Relu(_) if frozen.is_some() => {
                let Some(Decision::Relu(regions)) = frozen else { return Err(foreign_pattern()) };
                (replay_relu(x, regions)?, Cache::None)
            }
            Layer::MaxPool if frozen.is_some() => {
                let Some(Decision::Pool(idx)) = frozen else { return Err(foreign_pattern()) };
                (maxpool2x2_select(x, idx)?, Cache::Pool(idx.clone()))
            }
            Layer::Input => (x.clone(), Cache::None),
            Layer::Conv(p) => (conv2d_forward(x, p)?, Cache::None),
            Layer::Depthwise(p) => (depthwise_forward(x, p)?, Cache::None),
            Layer::UpConv(p) => (upconv2x_forward(x, p)?, Cache::None),
            Layer::BatchNorm(s) => {
                let (y, c) = batchnorm_forward(x, s, ctx.mode)?;
                (y, Cache::BatchNorm(c))
            }
            Layer::Relu(cap) => (relu_forward(x, *cap), Cache::None),
            Layer::MaxPool => {
                let (y, idx) = maxpool2x2_forward(x)?;
                (y, Cache::Pool(idx))
            }
            Layer::Pad(p) => (pad2d_forward(x, *p), Cache::Pad(*p)),
            Layer::PadToEven => {
                let s = x.shape();
                let p = Padding {
                    bottom: s.h % 2,
                    right: s.w % 2,
                    ..Padding::default()
                };
                let y = if p == Padding::default() { x.clone() } else { pad2d_forward(x, p) };
                (y, Cache::Pad(p))
            }
            Layer::CropTo => {
                let r = ins[1].shape();
                (crop_to(x, r.h, r.w)?, Cache::None)
            }
            Layer::SpatialDropout { rate } => {
                let (y, mask) = spatial_dropout_forward(x, *rate, &mut node_rng(ctx.seed, id), ctx.mode)?;
                (y, Cache::Dropout(mask))
            }
            Layer::DropPath { rate_final } => {
                let mut rng = node_rng(ctx.seed, id);
                let (y, keep) = scheduled_drop_path(x, *rate_final, ctx.progress, &mut rng, ctx.mode)?;
                (y, Cache::DropPath(keep))
            }
            Layer::Add => (add_many(ins)?, Cache::None),
            Layer::Concat => (concat_many(ins)?, Cache::None),
            Layer::Softmax => (softmax_channel_forward(x)?, Cache::None),
        })
    }

    /// Full forward pass keeping every intermediate for [`Graph::backward`].
    pub fn forward(&self, input: &Tensor4, ctx: &ForwardCtx) -> Result<Activations> {
        self.run(input, ctx, None)
    }

    /// Forward pass that replays the ReLU regions and pooling winners of
    /// `pattern` instead of deciding them from the data. The result is the
    /// network restricted to one linear piece of its piecewise-linear
    /// layers, which is what finite differences need near a kink.
    pub fn forward_with_pattern(
        &self,
        input: &Tensor4,
        ctx: &ForwardCtx,
        pattern: &ActivationPattern,
    ) -> Result<Activations> {
        if pattern.nodes.len() != self.nodes.len() {
            return Err(foreign_pattern());
        }
        self.run(input, ctx, Some(pattern))
    }

    fn run(&self, input: &Tensor4, ctx: &ForwardCtx, pattern: Option<&ActivationPattern>) -> Result<Activations> {
        self.check_input(input)?;
        let mut outputs = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        outputs.push(input.clone());
        caches.push(Cache::None);
        for id in 1..self.nodes.len() {
            let ins: Vec<&Tensor4> = self.nodes[id].inputs.iter().map(|&i| &outputs[i]).collect();
            let frozen = pattern.and_then(|p| p.nodes[id].as_ref());
            let (y, cache) = self.eval(id, &ins, ctx, frozen)?;
            outputs.push(y);
            caches.push(cache);
        }
        Ok(Activations { outputs, caches })
    }

    /// Infer-mode evaluation of `target`, releasing each intermediate after
    /// its last consumer.
    pub fn infer(&self, input: &Tensor4, target: NodeId) -> Result<Tensor4> {
        self.check_input(input)?;
        if target >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!("no node {target}")));
        }
        let mut last_use = vec![0usize; target + 1];
        for (id, node) in self.nodes.iter().enumerate().take(target + 1) {
            for &i in &node.inputs {
                last_use[i] = id;
            }
        }
        let ctx = ForwardCtx::infer();
        let mut live: Vec<Option<Tensor4>> = vec![None; target + 1];
        live[0] = Some(input.clone());
        for id in 1..=target {
            let ins: Vec<&Tensor4> = self.nodes[id]
                .inputs
                .iter()
                .map(|&i| live[i].as_ref().expect("input still live"))
                .collect();
            let (y, _) = self.eval(id, &ins, &ctx, None)?;
            live[id] = Some(y);
            for &i in &self.nodes[id].inputs {
                if last_use[i] == id {
                    live[i] = None;
                }
            }
        }
        live[target].take().ok_or_else(|| Error::InvalidArgument("empty graph".into()))
    }

    /// Reverse-mode pass. `seeds` are upstream gradients for chosen nodes,
    /// typically the loss gradient at the logits.
    pub fn backward(&self, acts: &Activations, seeds: Vec<(NodeId, Tensor4)>) -> Result<Gradients> {
        let n = self.nodes.len();
        if acts.outputs.len() != n {
            return Err(foreign());
        }
        let mut grads: Vec<Option<Tensor4>> = vec![None; n];
        for (id, g) in seeds {
            let expected = acts.outputs.get(id).ok_or_else(foreign)?.shape();
            if g.shape() != expected {
                return Err(Error::shapes("backward_seed", g.shape(), expected));
            }
            accumulate(&mut grads[id], g)?;
        }
        let mut params: Vec<Vec<f32>> =
            self.params().iter().map(|p| vec![0.0; p.len()]).collect();
        let offsets = self.param_offsets();

        for id in (1..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let x = &acts.outputs[node.inputs[0]];
            let slot = offsets[id];
            let cache = &acts.caches[id];
            let upstream: Vec<Option<Tensor4>> = match &node.layer {
                Layer::Input => Vec::new(),
                Layer::Conv(p) => {
                    let r = conv2d_backward(x, p, &g)?;
                    params[slot] = r.weights.into_vec();
                    params[slot + 1] = r.bias;
                    vec![Some(r.input)]
                }
                Layer::Depthwise(p) => {
                    let r = depthwise_backward(x, p, &g)?;
                    params[slot] = r.weights.into_vec();
                    vec![Some(r.input)]
                }
                Layer::UpConv(p) => {
                    let r = upconv2x_backward(x, p, &g)?;
                    params[slot] = r.weights.into_vec();
                    params[slot + 1] = r.bias;
                    vec![Some(r.input)]
                }
                Layer::BatchNorm(s) => {
                    let Cache::BatchNorm(c) = cache else { return Err(foreign()) };
                    let r = batchnorm_backward(c, s, &g)?;
                    params[slot] = r.gamma;
                    params[slot + 1] = r.beta;
                    vec![Some(r.input)]
                }
                Layer::Relu(cap) => vec![Some(relu_backward(x, *cap, &g)?)],
                Layer::MaxPool => {
                    let Cache::Pool(idx) = cache else { return Err(foreign()) };
                    vec![Some(maxpool2x2_backward(idx, &g)?)]
                }
                Layer::Pad(_) | Layer::PadToEven => {
                    let Cache::Pad(p) = cache else { return Err(foreign()) };
                    if *p == Padding::default() {
                        vec![Some(g)]
                    } else {
                        vec![Some(pad2d_backward(&g, *p)?)]
                    }
                }
                Layer::CropTo => vec![Some(crop_backward(&g, x.shape())?), None],
                Layer::SpatialDropout { .. } => {
                    let Cache::Dropout(mask) = cache else { return Err(foreign()) };
                    vec![Some(spatial_dropout_backward(mask, &g)?)]
                }
                Layer::DropPath { .. } => {
                    let Cache::DropPath(keep) = cache else { return Err(foreign()) };
                    vec![Some(scale_items(&g, keep))]
                }
                Layer::Add => add_backward(&g, node.inputs.len()).into_iter().map(Some).collect(),
                Layer::Concat => {
                    let chans: Vec<usize> =
                        node.inputs.iter().map(|&i| acts.outputs[i].shape().c).collect();
                    concat_backward(&g, &chans)?.into_iter().map(Some).collect()
                }
                Layer::Softmax => vec![Some(softmax_channel_backward(&acts.outputs[id], &g)?)],
            };
            for (&src, gi) in node.inputs.iter().zip(upstream) {
                if let Some(gi) = gi {
                    accumulate(&mut grads[src], gi)?;
                }
            }
        }
        Ok(Gradients {
            params,
            input: grads[0].take(),
        })
    }

    /// Folds train-mode batch statistics into every batch-norm node's
    /// running averages.
    pub fn commit_running_stats(&mut self, acts: &Activations) -> Result<()> {
        if acts.caches.len() != self.nodes.len() {
            return Err(foreign());
        }
        for (node, cache) in self.nodes.iter_mut().zip(&acts.caches) {
            if let (Layer::BatchNorm(s), Cache::BatchNorm(c)) = (&mut node.layer, cache) {
                s.update_running(c);
            }
        }
        Ok(())
    }

    /// Every piecewise-linear branch decision taken in a forward pass.
    pub fn activation_pattern(&self, acts: &Activations) -> ActivationPattern {
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, node)| match (&node.layer, &acts.caches[id]) {
                (Layer::Relu(cap), _) => Some(Decision::Relu(
                    acts.outputs[node.inputs[0]].data().iter().map(|&v| relu_region(*cap, v)).collect(),
                )),
                (_, Cache::Pool(idx)) => Some(Decision::Pool(idx.clone())),
                _ => None,
            })
            .collect();
        ActivationPattern { nodes }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Decision {
    /// Per element: 0 clamped low, 1 passing, 2 clamped at the cap.
    Relu(Vec<u8>),
    Pool(PoolIndices),
}

/// ReLU regions and pooling winners of one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    nodes: Vec<Option<Decision>>,
}

fn relu_region(cap: ReluCap, v: f32) -> u8 {
    if cap.is_active(v) {
        1
    } else if v > 0.0 {
        2
    } else {
        0
    }
}

fn replay_relu(x: &Tensor4, regions: &[u8]) -> Result<Tensor4> {
    if regions.len() != x.data().len() {
        return Err(foreign_pattern());
    }
    let data = x
        .data()
        .iter()
        .zip(regions)
        .map(|(&v, &r)| match r {
            0 => 0.0,
            1 => v,
            _ => 6.0,
        })
        .collect();
    Tensor4::from_vec(x.shape(), data)
}

fn foreign_pattern() -> Error {
    Error::InvalidArgument("activation pattern was not recorded on this graph".into())
}

pub(crate) fn scale_items(x: &Tensor4, keep: &[f32]) -> Tensor4 {
    let s = x.shape();
    let mut out = x.clone();
    for (n, &k) in keep.iter().enumerate().take(s.n) {
        if k != 1.0 {
            let base = n * s.item();
            out.data_mut()[base..base + s.item()].iter_mut().for_each(|v| *v *= k);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_graph() -> Graph {
        let mut g = Graph::new(1);
        let c = g.push("conv", Layer::Conv(ConvParams::zeros(1, 2, 3, 1, 1)), &[0]).unwrap();
        let r = g.push("relu", Layer::Relu(ReluCap::None), &[c]).unwrap();
        g.push("softmax", Layer::Softmax, &[r]).unwrap();
        g.initialize(3);
        g
    }

    #[test]
    fn push_checks_channel_contracts() {
        let mut g = Graph::new(1);
        assert!(g.push("c", Layer::Conv(ConvParams::zeros(2, 2, 3, 1, 1)), &[0]).is_err());
        assert!(g.push("a", Layer::Add, &[0]).is_err());
        assert!(g.push("fwd", Layer::Relu(ReluCap::None), &[1]).is_err());
        assert!(g.push("s", Layer::Softmax, &[0]).is_err());
        let c = g.push("c", Layer::Conv(ConvParams::zeros(1, 3, 1, 1, 0)), &[0]).unwrap();
        let cat = g.push("cat", Layer::Concat, &[0, c]).unwrap();
        assert_eq!(g.channels(cat), 4);
    }

    #[test]
    fn infer_matches_forward_output() {
        let g = conv_graph();
        let x = Tensor4::random_uniform(Shape4::new(2, 1, 5, 5), &mut RngStream::new(1));
        let acts = g.forward(&x, &ForwardCtx::infer()).unwrap();
        assert_eq!(&g.infer(&x, g.last()).unwrap(), acts.output(g.last()));
    }

    #[test]
    fn initialization_is_seeded() {
        let (a, b) = (conv_graph(), conv_graph());
        assert_eq!(a, b);
        let mut c = conv_graph();
        c.initialize(4);
        assert_ne!(a, c);
    }

    #[test]
    fn state_arrays_extend_params_with_running_stats() {
        let mut g = Graph::new(2);
        g.push("bn", Layer::BatchNorm(BatchNormState::new(2)), &[0]).unwrap();
        assert_eq!(g.params().len(), 2);
        assert_eq!(g.state_arrays().len(), 4);
        assert_eq!(g.state_arrays_mut().len(), 4);
    }
}
