use deepseg::nn::{block_graph, dense_feed_connections, BlockFamily, BlockSpec, ForwardCtx};
use deepseg::tensor::{RngStream, Shape4, Tensor4};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = BlockSpec> {
    (0..BlockFamily::ALL.len(), 1usize..6, 1usize..4, prop::bool::ANY).prop_map(|(f, c_in, half_out, s2)| {
        let family = BlockFamily::ALL[f];
        let stride = match family {
            BlockFamily::NasnetNormal => 1,
            BlockFamily::NasnetReduction => 2,
            _ if s2 => 2,
            _ => 1,
        };
        let mut spec = match family {
            BlockFamily::Dense => BlockSpec::dense(c_in, half_out, 3, stride),
            _ => BlockSpec::new(family, c_in, 2 * half_out, stride).with_projection(true),
        };
        spec.expansion = 2;
        spec
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn block_output_shape_follows_stride(spec in spec_strategy(), h in 2usize..10, w in 2usize..10, seed in 0u64..1000) {
        let g = block_graph(&spec, seed).unwrap();
        let x = Tensor4::random_uniform(Shape4::new(2, spec.in_channels, h, w), &mut RngStream::new(seed));
        let acts = g.forward(&x, &ForwardCtx::train(seed, 0.7)).unwrap();
        let y = acts.output(g.last());
        let expect = Shape4::new(2, spec.out_channels, h.div_ceil(spec.stride), w.div_ceil(spec.stride));
        prop_assert_eq!(y.shape(), expect);
        prop_assert!(y.is_finite());

        // Shortcut additions never change shape.
        for (id, node) in g.nodes().iter().enumerate() {
            if node.layer.kind() == "add" {
                for &i in &node.inputs {
                    prop_assert_eq!(acts.output(i).shape(), acts.output(id).shape());
                }
            }
        }
    }

    #[test]
    fn dense_width_and_connections(c_in in 1usize..8, growth in 1usize..6, layers in 1usize..5) {
        let spec = BlockSpec::dense(c_in, growth, layers, 1);
        prop_assert_eq!(spec.out_channels, c_in + layers * growth);
        let g = block_graph(&spec, 0).unwrap();
        prop_assert_eq!(g.channels(g.last()), spec.out_channels);
        prop_assert_eq!(dense_feed_connections(&g), layers * (layers + 1) / 2);
    }

    #[test]
    fn inverted_residual_shortcut_rule(c_in in 1usize..8, c_out in 1usize..8, s2 in prop::bool::ANY) {
        let stride = if s2 { 2 } else { 1 };
        let spec = BlockSpec::new(BlockFamily::InvertedResidual, c_in, c_out, stride);
        let g = block_graph(&spec, 1).unwrap();
        let adds = g.nodes().iter().filter(|n| n.layer.kind() == "add").count();
        let expected = usize::from(stride == 1 && c_in == c_out);
        prop_assert_eq!(adds, expected);
        prop_assert_eq!(spec.has_shortcut(), expected == 1);
    }
}
