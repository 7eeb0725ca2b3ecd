//! Hierarchical prompt-query encoding at toy scale.
//!
//! * low level: [`Ca2Chain`], progressive cross-attention across encoder blocks
//! * mid level: [`QueryAggregator`], learnable queries conditioned on the prompt
//! * high level: two [`WeightAdapter`]s and the softmax [`fuse`] of their scores
//!
//! Everything runs on [`crate::numerics::Tape`] so every path has exact
//! gradients.

mod adapter;
mod attention;
mod ca2;
pub mod checkpoint;
mod fusion;
mod pipeline;
mod qformer;

pub use adapter::WeightAdapter;
pub use attention::{cross_attention, AttentionParams};
pub use ca2::{Ca2Chain, Ca2Config, LayerFeatureStack};
pub use fusion::{fuse, fuse_on_tape, fused_visual, fused_visual_on_tape, FusionWeights};
pub use pipeline::{
    encoder_grad_check, EncoderConfig, EncoderInput, EncoderOutput, HierarchicalEncoder,
    GROUP_ADAPTERS, GROUP_AGGREGATOR, GROUP_ENCODER,
};
pub use qformer::{QueryAggregator, DEFAULT_QUERIES};
