use rand::Rng;

use super::blocks::{bn, conv, pad_even, relu, separable, BlockFamily, BlockSpec};
use super::graph::{scale_items, Graph, Layer, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{Mode, ReluCap, RngStream, Tensor4};

/// Drops each batch item's branch output as a whole with probability
/// `rate_final * progress`, scaling survivors by `1 / (1 - p)`.
///
/// Returns the output and the per-item multiplier applied.
pub fn scheduled_drop_path(
    branch: &Tensor4,
    rate_final: f32,
    progress: f32,
    rng: &mut RngStream,
    mode: Mode,
) -> Result<(Tensor4, Vec<f32>)> {
    if !(0.0..1.0).contains(&rate_final) {
        return Err(Error::InvalidArgument(format!(
            "drop-path rate {rate_final} must lie in [0, 1)"
        )));
    }
    let n = branch.shape().n;
    let p = rate_final * progress.clamp(0.0, 1.0);
    if mode == Mode::Infer || p == 0.0 {
        return Ok((branch.clone(), vec![1.0; n]));
    }
    let keep = 1.0 / (1.0 - p);
    let scale: Vec<f32> = (0..n)
        .map(|_| if rng.gen::<f32>() < p { 0.0 } else { keep })
        .collect();
    Ok((scale_items(branch, &scale), scale))
}

fn join(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}

fn gate(g: &mut Graph, name: String, x: NodeId, spec: &BlockSpec) -> Result<NodeId> {
    if spec.drop_path_gates {
        g.push(name, Layer::DropPath { rate_final: spec.drop_path_rate }, &[x])
    } else {
        Ok(x)
    }
}

/// `ReLU -> depthwise k x k -> pointwise -> BN`.
fn sep_branch(g: &mut Graph, prefix: &str, x: NodeId, k: usize, stride: usize) -> Result<NodeId> {
    let c = g.channels(x);
    let r = relu(g, join(prefix, "relu"), x, ReluCap::None)?;
    let s = separable(g, prefix, r, c, k, stride)?;
    bn(g, join(prefix, "bn"), s)
}

/// Simplified NASNet cell.
///
/// The input is preprocessed (`ReLU -> 1x1 conv -> BN`) to half the output
/// width, giving `h`. Two combinations follow, each the sum of two gated
/// branches, and their concatenation is the cell output:
///
/// * normal: `sep3(h) + h` and `sep5(h) + h`
/// * reduction: `sep3_s2(h) + pool(h)` and `sep5_s2(h) + pool(h)`
pub fn build_nasnet_cell(g: &mut Graph, x: NodeId, spec: &BlockSpec, prefix: &str) -> Result<NodeId> {
    spec.validate()?;
    let reduction = match spec.family {
        BlockFamily::NasnetNormal => false,
        BlockFamily::NasnetReduction => true,
        other => {
            return Err(Error::InvalidBlock(format!("{other:?} is not a NASNet cell")));
        }
    };
    let half = spec.out_channels / 2;
    let entry = if reduction { pad_even(g, join(prefix, "pad_even"), x)? } else { x };
    let h = relu(g, join(prefix, "pre.relu"), entry, ReluCap::None)?;
    let h = conv(g, join(prefix, "pre.conv"), h, half, 1)?;
    let h = bn(g, join(prefix, "pre.bn"), h)?;

    let (stride, other) = if reduction {
        (2, g.push(join(prefix, "pool"), Layer::MaxPool, &[h])?)
    } else {
        (1, h)
    };
    let mut combs = Vec::with_capacity(2);
    for (i, k) in [(1, 3), (2, 5)] {
        let p = join(prefix, &format!("comb{i}"));
        let a = sep_branch(g, &join(&p, &format!("sep{k}")), h, k, stride)?;
        let a = gate(g, join(&p, "gate_a"), a, spec)?;
        let b = gate(g, join(&p, "gate_b"), other, spec)?;
        combs.push(g.push(join(&p, "add"), Layer::Add, &[a, b])?);
    }
    g.push(join(prefix, "concat"), Layer::Concat, &combs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::blocks::block_graph;
    use crate::nn::graph::ForwardCtx;
    use crate::tensor::{Shape4, Tensor4};

    fn cell_output(spec: &BlockSpec, x: &Tensor4) -> Shape4 {
        let g = block_graph(spec, 9).unwrap();
        g.infer(x, g.last()).unwrap().shape()
    }

    #[test]
    fn normal_cell_keeps_extent_and_reduction_halves_it() {
        let x = Tensor4::random_uniform(Shape4::new(1, 6, 8, 8), &mut RngStream::new(1));
        let normal = BlockSpec::new(BlockFamily::NasnetNormal, 6, 8, 1);
        assert_eq!(cell_output(&normal, &x), Shape4::new(1, 8, 8, 8));
        let reduction = BlockSpec::new(BlockFamily::NasnetReduction, 6, 8, 2);
        assert_eq!(cell_output(&reduction, &x), Shape4::new(1, 8, 4, 4));
    }

    #[test]
    fn every_branch_is_gated() {
        let g = block_graph(&BlockSpec::new(BlockFamily::NasnetNormal, 4, 4, 1), 0).unwrap();
        let gates = g.nodes().iter().filter(|n| n.layer.kind() == "drop_path").count();
        assert_eq!(gates, 4);
    }

    #[test]
    fn zero_rate_gates_are_transparent() {
        for family in [BlockFamily::NasnetNormal, BlockFamily::NasnetReduction] {
            let stride = if family == BlockFamily::NasnetNormal { 1 } else { 2 };
            let mut spec = BlockSpec::new(family, 4, 6, stride);
            spec.drop_path_rate = 0.0;
            let gated = block_graph(&spec, 3).unwrap();
            spec.drop_path_gates = false;
            let mut plain = block_graph(&spec, 3).unwrap();
            // Node ids differ, so copy the parameters slot by slot.
            for (dst, src) in plain.params_mut().into_iter().zip(gated.params()) {
                dst.copy_from_slice(src);
            }
            let x = Tensor4::random_uniform(Shape4::new(3, 4, 6, 6), &mut RngStream::new(4));
            let ctx = ForwardCtx::train(11, 1.0);
            let a = gated.forward(&x, &ctx).unwrap();
            let b = plain.forward(&x, &ctx).unwrap();
            assert_eq!(a.output(gated.last()), b.output(plain.last()));
        }
    }

    #[test]
    fn drop_path_ramp_start_and_infer_are_identity() {
        let x = Tensor4::random_uniform(Shape4::new(4, 2, 3, 3), &mut RngStream::new(5));
        let mut rng = RngStream::new(6);
        let (y, _) = scheduled_drop_path(&x, 0.5, 0.0, &mut rng, Mode::Train).unwrap();
        assert_eq!(y, x);
        let (y, _) = scheduled_drop_path(&x, 0.5, 1.0, &mut rng, Mode::Infer).unwrap();
        assert_eq!(y, x);
        assert!(scheduled_drop_path(&x, 1.0, 1.0, &mut rng, Mode::Train).is_err());
    }

    #[test]
    fn drop_path_rate_matches_final_probability() {
        let x = Tensor4::filled(Shape4::new(10_000, 1, 1, 1), 1.0);
        let (y, scale) = scheduled_drop_path(&x, 0.2, 1.0, &mut RngStream::new(7), Mode::Train).unwrap();
        let dropped = scale.iter().filter(|&&s| s == 0.0).count() as f64 / 1e4;
        assert!((dropped - 0.2).abs() <= 0.02, "{dropped}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 1.25));
    }

    #[test]
    fn drop_path_probability_ramps_linearly() {
        let x = Tensor4::filled(Shape4::new(10_000, 1, 1, 1), 1.0);
        let (_, scale) = scheduled_drop_path(&x, 0.4, 0.5, &mut RngStream::new(8), Mode::Train).unwrap();
        let dropped = scale.iter().filter(|&&s| s == 0.0).count() as f64 / 1e4;
        assert!((dropped - 0.2).abs() <= 0.02, "{dropped}");
    }
}
