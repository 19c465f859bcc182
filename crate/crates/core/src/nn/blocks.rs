use serde::{Deserialize, Serialize};

use super::graph::{Graph, Layer, NodeId, Role};
use super::nasnet::build_nasnet_cell;
use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, ConvParams, DepthwiseParams, Padding, ReluCap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockFamily {
    /// Two 3x3 conv + ReLU.
    UnetPlain,
    /// Two 3x3 conv + BN + ReLU.
    UnetModified,
    /// `layer_count` 3x3 conv + ReLU.
    Vgg,
    Residual,
    Dense,
    Xception,
    Mobilenet,
    InvertedResidual,
    NasnetNormal,
    NasnetReduction,
}

impl BlockFamily {
    pub const ALL: [BlockFamily; 10] = [
        BlockFamily::UnetPlain,
        BlockFamily::UnetModified,
        BlockFamily::Vgg,
        BlockFamily::Residual,
        BlockFamily::Dense,
        BlockFamily::Xception,
        BlockFamily::Mobilenet,
        BlockFamily::InvertedResidual,
        BlockFamily::NasnetNormal,
        BlockFamily::NasnetReduction,
    ];
}

/// Declarative description of one encoder block.
///
/// A stride of 2 halves the spatial extent. Families built from plain conv
/// stacks (U-Net, VGG, dense) realize it with a leading 2x2 max-pool; the
/// others use stride-2 convolutions. Odd extents are padded to even first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub family: BlockFamily,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Residual only: allow a 1x1 projection shortcut when the identity
    /// cannot match shapes.
    pub projection: bool,
    /// Dense: channels added per internal layer.
    pub growth_rate: usize,
    /// Dense: internal layer count L. VGG: convolutions in the stack.
    pub layer_count: usize,
    /// Inverted residual: expansion factor t.
    pub expansion: usize,
    /// NASNet: final drop-path probability.
    pub drop_path_rate: f32,
    /// NASNet: wrap every branch in a drop-path gate.
    pub drop_path_gates: bool,
}

impl BlockSpec {
    pub fn new(family: BlockFamily, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        BlockSpec {
            family,
            in_channels,
            out_channels,
            stride,
            projection: false,
            growth_rate: 12,
            layer_count: if family == BlockFamily::Dense { 3 } else { 2 },
            expansion: 6,
            drop_path_rate: 0.3,
            drop_path_gates: true,
        }
    }

    /// Dense block whose output width follows from its layer count.
    pub fn dense(in_channels: usize, growth_rate: usize, layer_count: usize, stride: usize) -> Self {
        BlockSpec {
            growth_rate,
            layer_count,
            ..BlockSpec::new(
                BlockFamily::Dense,
                in_channels,
                in_channels + layer_count * growth_rate,
                stride,
            )
        }
    }

    pub fn with_projection(mut self, projection: bool) -> Self {
        self.projection = projection;
        self
    }

    /// Whether the block adds its input (or a projection of it) back onto
    /// the main branch.
    pub fn has_shortcut(&self) -> bool {
        match self.family {
            BlockFamily::Residual | BlockFamily::Xception => true,
            BlockFamily::InvertedResidual => self.stride == 1 && self.in_channels == self.out_channels,
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidBlock(format!("{:?}: {msg}", self.family)));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.stride != 1 && self.stride != 2 {
            return bad(format!("stride must be 1 or 2, got {}", self.stride));
        }
        match self.family {
            BlockFamily::Vgg if self.layer_count == 0 => bad("needs at least one convolution".into()),
            BlockFamily::Residual
                if (self.stride == 2 || self.in_channels != self.out_channels) && !self.projection =>
            {
                bad(format!(
                    "{} -> {} channels at stride {} cannot use an identity shortcut and no projection is configured",
                    self.in_channels, self.out_channels, self.stride
                ))
            }
            BlockFamily::Dense => {
                if self.layer_count == 0 || self.growth_rate == 0 {
                    return bad("layer count and growth rate must be positive".into());
                }
                let expected = self.in_channels + self.layer_count * self.growth_rate;
                if self.out_channels != expected {
                    return bad(format!(
                        "output width {} must equal in + L * growth = {expected}",
                        self.out_channels
                    ));
                }
                Ok(())
            }
            BlockFamily::InvertedResidual if self.expansion == 0 => {
                bad("expansion factor must be positive".into())
            }
            BlockFamily::NasnetNormal | BlockFamily::NasnetReduction => {
                let want = if self.family == BlockFamily::NasnetNormal { 1 } else { 2 };
                if self.stride != want {
                    return bad(format!("stride must be {want}"));
                }
                if !self.out_channels.is_multiple_of(2) {
                    return bad(format!("output width {} must be even", self.out_channels));
                }
                if !(0.0..1.0).contains(&self.drop_path_rate) {
                    return bad(format!("drop-path rate {} must lie in [0, 1)", self.drop_path_rate));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Stride-1 `k x k` convolution with "same" padding.
pub(crate) fn conv(g: &mut Graph, name: String, x: NodeId, c_out: usize, k: usize) -> Result<NodeId> {
    let c_in = g.channels(x);
    g.push(name, Layer::Conv(ConvParams::zeros(c_in, c_out, k, 1, k / 2)), &[x])
}

/// Stride-2 `k x k` convolution on an even extent, output exactly half.
pub(crate) fn conv_s2(g: &mut Graph, name: String, x: NodeId, c_out: usize, k: usize) -> Result<NodeId> {
    let c_in = g.channels(x);
    let p = g.push(format!("{name}.pad"), Layer::Pad(Padding::same_stride2(k)), &[x])?;
    g.push(name, Layer::Conv(ConvParams::zeros(c_in, c_out, k, 2, 0)), &[p])
}

pub(crate) fn depthwise(g: &mut Graph, name: String, x: NodeId, k: usize, stride: usize) -> Result<NodeId> {
    let c = g.channels(x);
    if stride == 2 {
        let p = g.push(format!("{name}.pad"), Layer::Pad(Padding::same_stride2(k)), &[x])?;
        g.push(name, Layer::Depthwise(DepthwiseParams::zeros(c, k, 2, 0)), &[p])
    } else {
        g.push(name, Layer::Depthwise(DepthwiseParams::zeros(c, k, 1, k / 2)), &[x])
    }
}

pub(crate) fn bn(g: &mut Graph, name: String, x: NodeId) -> Result<NodeId> {
    let c = g.channels(x);
    g.push(name, Layer::BatchNorm(BatchNormState::new(c)), &[x])
}

pub(crate) fn relu(g: &mut Graph, name: String, x: NodeId, cap: ReluCap) -> Result<NodeId> {
    g.push(name, Layer::Relu(cap), &[x])
}

pub(crate) fn pad_even(g: &mut Graph, name: String, x: NodeId) -> Result<NodeId> {
    g.push(name, Layer::PadToEven, &[x])
}

/// Pads to even and max-pools.
pub(crate) fn pool_down(g: &mut Graph, prefix: &str, x: NodeId) -> Result<NodeId> {
    let e = pad_even(g, join(prefix, "pad_even"), x)?;
    g.push(join(prefix, "pool"), Layer::MaxPool, &[e])
}

/// `conv [-> BN] -> ReLU`.
pub(crate) fn conv_unit(
    g: &mut Graph,
    prefix: &str,
    x: NodeId,
    c_out: usize,
    k: usize,
    batch_norm: bool,
) -> Result<NodeId> {
    let mut y = conv(g, join(prefix, "conv"), x, c_out, k)?;
    if batch_norm {
        y = bn(g, join(prefix, "bn"), y)?;
    }
    relu(g, join(prefix, "relu"), y, ReluCap::None)
}

/// Appends the block described by `spec` after node `x` and returns the
/// block's output node.
pub fn build_block(g: &mut Graph, x: NodeId, spec: &BlockSpec, prefix: &str) -> Result<NodeId> {
    spec.validate()?;
    if g.channels(x) != spec.in_channels {
        return Err(Error::InvalidBlock(format!(
            "{prefix}: block expects {} input channels, node provides {}",
            spec.in_channels,
            g.channels(x)
        )));
    }
    let s2 = spec.stride == 2;
    match spec.family {
        BlockFamily::UnetPlain | BlockFamily::UnetModified | BlockFamily::Vgg => {
            let batch_norm = spec.family == BlockFamily::UnetModified;
            let count = if spec.family == BlockFamily::Vgg { spec.layer_count } else { 2 };
            let mut y = if s2 { pool_down(g, prefix, x)? } else { x };
            for i in 0..count {
                y = conv_unit(g, &join(prefix, &format!("unit{}", i + 1)), y, spec.out_channels, 3, batch_norm)?;
            }
            Ok(y)
        }
        BlockFamily::Residual => residual(g, x, spec, prefix),
        BlockFamily::Dense => dense(g, x, spec, prefix),
        BlockFamily::Xception => xception(g, x, spec, prefix),
        BlockFamily::Mobilenet => {
            let entry = if s2 { pad_even(g, join(prefix, "pad_even"), x)? } else { x };
            let d = depthwise(g, join(prefix, "dw"), entry, 3, spec.stride)?;
            let d = bn(g, join(prefix, "dw.bn"), d)?;
            let d = relu(g, join(prefix, "dw.relu"), d, ReluCap::None)?;
            conv_unit(g, &join(prefix, "pw"), d, spec.out_channels, 1, true)
        }
        BlockFamily::InvertedResidual => inverted_residual(g, x, spec, prefix),
        BlockFamily::NasnetNormal | BlockFamily::NasnetReduction => build_nasnet_cell(g, x, spec, prefix),
    }
}

fn residual(g: &mut Graph, x: NodeId, spec: &BlockSpec, prefix: &str) -> Result<NodeId> {
    let s2 = spec.stride == 2;
    let out = spec.out_channels;
    let entry = if s2 { pad_even(g, join(prefix, "pad_even"), x)? } else { x };
    let a = if s2 {
        conv_s2(g, join(prefix, "conv1"), entry, out, 3)?
    } else {
        conv(g, join(prefix, "conv1"), entry, out, 3)?
    };
    let a = bn(g, join(prefix, "bn1"), a)?;
    let a = relu(g, join(prefix, "relu1"), a, ReluCap::None)?;
    let a = conv(g, join(prefix, "conv2"), a, out, 3)?;
    let a = bn(g, join(prefix, "bn2"), a)?;
    let shortcut = if !s2 && spec.in_channels == out {
        entry
    } else {
        let s = if s2 { g.push(join(prefix, "proj.pool"), Layer::MaxPool, &[entry])? } else { entry };
        let s = conv(g, join(prefix, "proj.conv"), s, out, 1)?;
        bn(g, join(prefix, "proj.bn"), s)?
    };
    let sum = g.push(join(prefix, "add"), Layer::Add, &[a, shortcut])?;
    relu(g, join(prefix, "relu2"), sum, ReluCap::None)
}

fn dense(g: &mut Graph, x: NodeId, spec: &BlockSpec, prefix: &str) -> Result<NodeId> {
    let x0 = if spec.stride == 2 { pool_down(g, prefix, x)? } else { x };
    let mut sources = vec![x0];
    for l in 1..=spec.layer_count {
        let p = join(prefix, &format!("layer{l}"));
        let feed = g.push_with_role(join(&p, "feed"), Layer::Concat, &sources, Some(Role::DenseFeed))?;
        let y = bn(g, join(&p, "bn"), feed)?;
        let y = relu(g, join(&p, "relu"), y, ReluCap::None)?;
        let y = conv(g, join(&p, "conv"), y, spec.growth_rate, 3)?;
        sources.push(y);
    }
    g.push(join(prefix, "concat"), Layer::Concat, &sources)
}

/// Depthwise `k x k` followed by a pointwise 1x1 projection.
pub(crate) fn separable(
    g: &mut Graph,
    prefix: &str,
    x: NodeId,
    c_out: usize,
    k: usize,
    stride: usize,
) -> Result<NodeId> {
    let d = depthwise(g, join(prefix, "dw"), x, k, stride)?;
    conv(g, join(prefix, "pw"), d, c_out, 1)
}

fn xception(g: &mut Graph, x: NodeId, spec: &BlockSpec, prefix: &str) -> Result<NodeId> {
    let s2 = spec.stride == 2;
    let out = spec.out_channels;
    let entry = if s2 { pad_even(g, join(prefix, "pad_even"), x)? } else { x };
    let a = separable(g, &join(prefix, "sep1"), entry, out, 3, 1)?;
    let a = bn(g, join(prefix, "sep1.bn"), a)?;
    let a = relu(g, join(prefix, "sep1.relu"), a, ReluCap::None)?;
    let a = separable(g, &join(prefix, "sep2"), a, out, 3, spec.stride)?;
    let a = bn(g, join(prefix, "sep2.bn"), a)?;
    let s = if s2 { g.push(join(prefix, "short.pool"), Layer::MaxPool, &[entry])? } else { entry };
    let s = conv(g, join(prefix, "short.conv"), s, out, 1)?;
    let s = bn(g, join(prefix, "short.bn"), s)?;
    let sum = g.push(join(prefix, "add"), Layer::Add, &[a, s])?;
    relu(g, join(prefix, "relu"), sum, ReluCap::None)
}

fn inverted_residual(g: &mut Graph, x: NodeId, spec: &BlockSpec, prefix: &str) -> Result<NodeId> {
    let entry = if spec.stride == 2 { pad_even(g, join(prefix, "pad_even"), x)? } else { x };
    let e = conv(g, join(prefix, "expand"), entry, spec.in_channels * spec.expansion, 1)?;
    let e = bn(g, join(prefix, "expand.bn"), e)?;
    let e = relu(g, join(prefix, "expand.relu6"), e, ReluCap::Six)?;
    let d = depthwise(g, join(prefix, "dw"), e, 3, spec.stride)?;
    let d = bn(g, join(prefix, "dw.bn"), d)?;
    let d = relu(g, join(prefix, "dw.relu6"), d, ReluCap::Six)?;
    let p = conv(g, join(prefix, "project"), d, spec.out_channels, 1)?;
    let p = bn(g, join(prefix, "project.bn"), p)?;
    if spec.has_shortcut() {
        g.push(join(prefix, "add"), Layer::Add, &[entry, p])
    } else {
        Ok(p)
    }
}

/// A standalone graph holding just one block, initialized from `seed`.
pub fn block_graph(spec: &BlockSpec, seed: u64) -> Result<Graph> {
    let mut g = Graph::new(spec.in_channels);
    build_block(&mut g, Graph::INPUT, spec, "block")?;
    g.initialize(seed);
    Ok(g)
}

/// Total source edges into dense-block feed concatenations.
pub fn dense_feed_connections(g: &Graph) -> usize {
    g.nodes()
        .iter()
        .filter(|n| n.role == Some(Role::DenseFeed))
        .map(|n| n.inputs.len())
        .sum()
}
