use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::blocks::{bn, build_block, conv, relu, BlockFamily, BlockSpec};
use super::decoder::build_decoder;
use super::graph::{Activations, ForwardCtx, Graph, Layer, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{ReluCap, Shape4, Tensor4};

pub const MAX_DEPTH: usize = 6;
pub const MAX_FILTERS: usize = 1024;
pub const MAX_EXTENT: usize = 4096;
pub const MAX_CLASSES: usize = 64;
pub const MAX_INPUT_CHANNELS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderFamily {
    UnetPlain,
    UnetModified,
    Vgg,
    Residual,
    Dense,
    Xception,
    Mobilenet,
    InvertedResidual,
    Nasnet,
}

impl EncoderFamily {
    pub const ALL: [EncoderFamily; 9] = [
        EncoderFamily::UnetPlain,
        EncoderFamily::UnetModified,
        EncoderFamily::Vgg,
        EncoderFamily::Residual,
        EncoderFamily::Dense,
        EncoderFamily::Xception,
        EncoderFamily::Mobilenet,
        EncoderFamily::InvertedResidual,
        EncoderFamily::Nasnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderFamily::UnetPlain => "unet_plain",
            EncoderFamily::UnetModified => "unet_modified",
            EncoderFamily::Vgg => "vgg",
            EncoderFamily::Residual => "residual",
            EncoderFamily::Dense => "dense",
            EncoderFamily::Xception => "xception",
            EncoderFamily::Mobilenet => "mobilenet",
            EncoderFamily::InvertedResidual => "inverted_residual",
            EncoderFamily::Nasnet => "nasnet",
        }
    }
}

impl fmt::Display for EncoderFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncoderFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::config("encoder", format!("unknown encoder family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderFamily,
    /// Downsampling stages; the bottleneck sits below the last one.
    pub depth: usize,
    pub base_filters: usize,
    pub num_classes: usize,
    /// `(channels, height, width)`.
    pub input_shape: [usize; 3],
    /// Final drop-path probability for NASNet cells.
    pub drop_path_rate: f32,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderFamily::UnetPlain,
            depth: 4,
            base_filters: 32,
            num_classes: 2,
            input_shape: [1, 224, 224],
            drop_path_rate: 0.3,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(encoder: EncoderFamily) -> Self {
        ModelConfig {
            encoder,
            ..ModelConfig::default()
        }
    }

    /// Filters at stage `d`.
    pub fn filters(&self, d: usize) -> usize {
        self.base_filters << d
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        if self.depth == 0 || self.depth > MAX_DEPTH {
            return Err(Error::config("model.depth", format!("must lie in 1..={MAX_DEPTH}, got {}", self.depth)));
        }
        if self.base_filters == 0 || self.base_filters > (MAX_FILTERS >> self.depth) {
            return Err(Error::config(
                "model.base_filters",
                format!(
                    "must be positive with base_filters * 2^depth <= {MAX_FILTERS}, got {} at depth {}",
                    self.base_filters, self.depth
                ),
            ));
        }
        if self.encoder == EncoderFamily::Nasnet && !self.base_filters.is_multiple_of(2) {
            return Err(Error::config("model.base_filters", "nasnet cells need an even filter count"));
        }
        if !(2..=MAX_CLASSES).contains(&self.num_classes) {
            return Err(Error::config("model.num_classes", format!("must lie in 2..={MAX_CLASSES}")));
        }
        if !(1..=MAX_INPUT_CHANNELS).contains(&c) || !(1..=MAX_EXTENT).contains(&h) || !(1..=MAX_EXTENT).contains(&w) {
            return Err(Error::config(
                "model.input_shape",
                format!("channels must lie in 1..={MAX_INPUT_CHANNELS} and extents in 1..={MAX_EXTENT}, got {:?}", self.input_shape),
            ));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return Err(Error::config("model.drop_path_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn input_batch_shape(&self, batch: usize) -> Shape4 {
        let [c, h, w] = self.input_shape;
        Shape4::new(batch, c, h, w)
    }
}

/// An assembled encoder-decoder network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    graph: Graph,
    skip_taps: Vec<NodeId>,
    dropout: NodeId,
    logits: NodeId,
    output: NodeId,
}

fn block(g: &mut Graph, x: NodeId, spec: BlockSpec, prefix: String) -> Result<NodeId> {
    build_block(g, x, &spec, &prefix)
}

/// `3x3 conv -> BN -> activation` stem used by the families whose blocks
/// expect a fixed width.
fn stem(g: &mut Graph, x: NodeId, c: usize, cap: Option<ReluCap>) -> Result<NodeId> {
    let y = conv(g, "stem.conv".into(), x, c, 3)?;
    let y = bn(g, "stem.bn".into(), y)?;
    match cap {
        Some(cap) => relu(g, "stem.relu".into(), y, cap),
        None => Ok(y),
    }
}

/// Builds encoder stage `d` (0 = full resolution) and returns its output.
fn encoder_stage(g: &mut Graph, x: NodeId, cfg: &ModelConfig, d: usize) -> Result<NodeId> {
    let f = cfg.filters(d);
    let c_in = g.channels(x);
    let stride = if d == 0 { 1 } else { 2 };
    let p = |s: &str| format!("enc{d}.{s}");
    use BlockFamily as B;
    match cfg.encoder {
        EncoderFamily::UnetPlain => block(g, x, BlockSpec::new(B::UnetPlain, c_in, f, stride), p("block")),
        EncoderFamily::UnetModified => {
            block(g, x, BlockSpec::new(B::UnetModified, c_in, f, stride), p("block"))
        }
        EncoderFamily::Vgg => {
            let mut spec = BlockSpec::new(B::Vgg, c_in, f, stride);
            spec.layer_count = if d < 2 { 2 } else { 3 };
            block(g, x, spec, p("block"))
        }
        EncoderFamily::Dense => {
            let growth = (f / 4).max(1);
            let y = block(g, x, BlockSpec::dense(c_in, growth, 3, stride), p("dense"))?;
            let y = bn(g, p("transition.bn"), y)?;
            let y = relu(g, p("transition.relu"), y, ReluCap::None)?;
            conv(g, p("transition.conv"), y, f, 1)
        }
        EncoderFamily::Residual | EncoderFamily::Xception => {
            let family = if cfg.encoder == EncoderFamily::Residual { B::Residual } else { B::Xception };
            let x = if d == 0 { stem(g, x, f, Some(ReluCap::None))? } else { x };
            let c_in = g.channels(x);
            block(g, x, BlockSpec::new(family, c_in, f, stride).with_projection(true), p("block"))
        }
        EncoderFamily::Mobilenet | EncoderFamily::InvertedResidual => {
            let (family, cap) = if cfg.encoder == EncoderFamily::Mobilenet {
                (B::Mobilenet, ReluCap::None)
            } else {
                (B::InvertedResidual, ReluCap::Six)
            };
            let x = if d == 0 { stem(g, x, f, Some(cap))? } else { x };
            let c_in = g.channels(x);
            let y = if d == 0 {
                x
            } else {
                block(g, x, BlockSpec::new(family, c_in, f, 2), p("down"))?
            };
            block(g, y, BlockSpec::new(family, f, f, 1), p("block"))
        }
        EncoderFamily::Nasnet => {
            let with_rate = |mut s: BlockSpec| {
                s.drop_path_rate = cfg.drop_path_rate;
                s
            };
            let y = if d == 0 {
                stem(g, x, f, None)?
            } else {
                block(g, x, with_rate(BlockSpec::new(B::NasnetReduction, c_in, f, 2)), p("reduction"))?
            };
            block(g, y, with_rate(BlockSpec::new(B::NasnetNormal, f, f, 1)), p("normal"))
        }
    }
}

/// Builds the encoder, bottleneck, spatial-dropout site and decoder for
/// `config`, initialized from `config.init_seed`.
pub fn assemble_model(config: &ModelConfig) -> Result<Model> {
    let mut model = assemble_uninitialized(config)?;
    model.graph.initialize(config.init_seed);
    Ok(model)
}

/// Structure only; every weight is zero and batch norms are at identity.
pub(crate) fn assemble_uninitialized(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut g = Graph::new(config.input_shape[0]);
    let mut x = Graph::INPUT;
    let mut skip_taps = Vec::with_capacity(config.depth);
    for d in 0..=config.depth {
        x = encoder_stage(&mut g, x, config, d)?;
        if d < config.depth {
            skip_taps.push(x);
        }
    }
    let dropout = g.push("bottleneck.dropout", Layer::SpatialDropout { rate: 0.5 }, &[x])?;
    let head = build_decoder(&mut g, dropout, &skip_taps, config.num_classes)?;
    Ok(Model {
        config: config.clone(),
        graph: g,
        skip_taps,
        dropout,
        logits: head.logits,
        output: head.probs,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn skip_taps(&self) -> &[NodeId] {
        &self.skip_taps
    }

    pub fn skip_channels(&self) -> Vec<usize> {
        self.skip_taps.iter().map(|&t| self.graph.channels(t)).collect()
    }

    pub fn dropout_node(&self) -> NodeId {
        self.dropout
    }

    pub fn logits(&self) -> NodeId {
        self.logits
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn set_dropout_rate(&mut self, rate: f32) -> Result<()> {
        self.graph.set_dropout_rate(rate)
    }

    pub fn forward(&self, input: &Tensor4, ctx: &ForwardCtx) -> Result<Activations> {
        self.check_extent(input)?;
        self.graph.forward(input, ctx)
    }

    /// Infer-mode class probabilities.
    pub fn predict(&self, input: &Tensor4) -> Result<Tensor4> {
        self.check_extent(input)?;
        self.graph.infer(input, self.output)
    }

    fn check_extent(&self, input: &Tensor4) -> Result<()> {
        let s = input.shape();
        let expected = self.config.input_batch_shape(s.n);
        if s != expected {
            return Err(Error::shapes("model_input", s, expected));
        }
        Ok(())
    }
}

/// Every trainable scalar: conv weights and biases, batch-norm scale and
/// shift.
pub fn count_parameters(model: &Model) -> usize {
    model.graph.parameter_count()
}

/// Layer count under this convention: every convolution (including
/// depthwise and up-convolution), batch norm, activation, pooling,
/// multi-input concatenation, addition, dropout or drop-path gate and the
/// softmax count once. Plumbing nodes (input, padding, cropping and
/// single-input concatenation) do not count.
pub fn count_layers(model: &Model) -> usize {
    count_graph_layers(&model.graph)
}

pub fn count_graph_layers(g: &Graph) -> usize {
    g.nodes()
        .iter()
        .filter(|n| match n.layer {
            Layer::Input | Layer::Pad(_) | Layer::PadToEven | Layer::CropTo => false,
            Layer::Concat => n.inputs.len() > 1,
            _ => true,
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngStream;

    #[test]
    fn unknown_family_is_rejected() {
        assert!("resnet".parse::<EncoderFamily>().is_err());
        assert_eq!("inverted_residual".parse::<EncoderFamily>().unwrap(), EncoderFamily::InvertedResidual);
        let err = serde_json::from_str::<ModelConfig>(r#"{"encoder": "lenet"}"#);
        assert!(err.is_err());
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(serde_json::from_str::<ModelConfig>(r#"{"depht": 3}"#).is_err());
        for bad in [
            ModelConfig { depth: 0, ..ModelConfig::default() },
            ModelConfig { depth: 7, ..ModelConfig::default() },
            ModelConfig { base_filters: 128, depth: 4, ..ModelConfig::default() },
            ModelConfig { num_classes: 1, ..ModelConfig::default() },
            ModelConfig { input_shape: [1, 0, 4], ..ModelConfig::default() },
            ModelConfig { base_filters: 3, ..ModelConfig::new(EncoderFamily::Nasnet) },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config { .. })), "{bad:?}");
        }
    }

    #[test]
    fn baseline_skip_widths_double() {
        let m = assemble_uninitialized(&ModelConfig::default()).unwrap();
        assert_eq!(m.skip_channels(), vec![32, 64, 128, 256]);
        assert_eq!(m.skip_taps().len(), m.config().depth);
    }

    #[test]
    fn exactly_one_softmax_head() {
        for family in EncoderFamily::ALL {
            let cfg = ModelConfig { depth: 2, base_filters: 4, input_shape: [1, 16, 16], ..ModelConfig::new(family) };
            let m = assemble_model(&cfg).unwrap();
            let heads = m.graph().nodes().iter().filter(|n| n.layer.kind() == "softmax").count();
            assert_eq!(heads, 1, "{family}");
            assert_eq!(m.graph().last(), m.output());
        }
    }

    #[test]
    fn odd_extents_round_trip_through_encoder_and_decoder() {
        for family in EncoderFamily::ALL {
            let cfg = ModelConfig { depth: 3, base_filters: 2, input_shape: [1, 13, 10], ..ModelConfig::new(family) };
            let m = assemble_model(&cfg).unwrap();
            let x = Tensor4::random_uniform(cfg.input_batch_shape(1), &mut RngStream::new(0));
            assert_eq!(m.predict(&x).unwrap().shape(), Shape4::new(1, 2, 13, 10), "{family}");
        }
    }

    #[test]
    fn assembly_is_deterministic() {
        let cfg = ModelConfig { depth: 2, base_filters: 4, init_seed: 9, ..ModelConfig::new(EncoderFamily::Dense) };
        assert_eq!(assemble_model(&cfg).unwrap(), assemble_model(&cfg).unwrap());
        let other = ModelConfig { init_seed: 10, ..cfg.clone() };
        assert_ne!(assemble_model(&cfg).unwrap(), assemble_model(&other).unwrap());
    }

    #[test]
    fn predict_rejects_wrong_extent() {
        let cfg = ModelConfig { depth: 1, base_filters: 2, input_shape: [1, 8, 8], ..ModelConfig::default() };
        let m = assemble_model(&cfg).unwrap();
        assert!(m.predict(&Tensor4::zeros(Shape4::new(1, 1, 8, 9))).is_err());
    }
}
