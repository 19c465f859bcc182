//! Layer graph, encoder block families, decoder and model assembly.

mod blocks;
mod checkpoint;
mod decoder;
mod graph;
mod model;
mod nasnet;

pub use blocks::{block_graph, build_block, dense_feed_connections, BlockFamily, BlockSpec};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use decoder::{build_decoder, DecoderOutput};
pub use graph::{Activations, ForwardCtx, Gradients, Graph, Layer, Node, NodeId, Role};
pub use model::{
    assemble_model, count_graph_layers, count_layers, count_parameters, EncoderFamily, Model,
    ModelConfig,
};
pub use nasnet::{build_nasnet_cell, scheduled_drop_path};
