use super::blocks::{conv, conv_unit};
use super::graph::{Graph, Layer, NodeId};
use crate::error::{Error, Result};
use crate::tensor::UpConvParams;

/// Output nodes of a decoder: pre-softmax logits and probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderOutput {
    pub logits: NodeId,
    pub probs: NodeId,
}

/// Appends the expanding path.
///
/// `skips` are ordered shallow to deep. Each stage, deepest first, runs a
/// 2x2 up-convolution to the skip's width, crops the result to the skip's
/// extent (it can overshoot by a pixel when the encoder padded an odd
/// extent), concatenates `[skip, upsampled]` and applies two
/// `3x3 conv -> BN -> ReLU` units. A 1x1 conv to `num_classes` and a channel
/// softmax form the head.
pub fn build_decoder(
    g: &mut Graph,
    bottleneck: NodeId,
    skips: &[NodeId],
    num_classes: usize,
) -> Result<DecoderOutput> {
    if skips.is_empty() {
        return Err(Error::InvalidBlock("decoder needs at least one skip tap".into()));
    }
    if num_classes < 2 {
        return Err(Error::InvalidBlock(format!("{num_classes} classes; the softmax head needs two or more")));
    }
    let mut x = bottleneck;
    for (i, &skip) in skips.iter().enumerate().rev() {
        let p = format!("dec{i}");
        let c = g.channels(skip);
        let params = UpConvParams::zeros(g.channels(x), c);
        let up = g.push(format!("{p}.up"), Layer::UpConv(params), &[x])?;
        let up = g.push(format!("{p}.crop"), Layer::CropTo, &[up, skip])?;
        let cat = g.push(format!("{p}.concat"), Layer::Concat, &[skip, up])?;
        let y = conv_unit(g, &format!("{p}.unit1"), cat, c, 3, true)?;
        x = conv_unit(g, &format!("{p}.unit2"), y, c, 3, true)?;
    }
    let logits = conv(g, "head.conv".into(), x, num_classes, 1)?;
    let probs = g.push("head.softmax", Layer::Softmax, &[logits])?;
    Ok(DecoderOutput { logits, probs })
}
