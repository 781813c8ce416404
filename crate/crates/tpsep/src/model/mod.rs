//! The separation model: configuration, parameters and forward pass.

pub mod config;
pub mod net;
pub mod params;

pub use config::ModelConfig;
pub use net::{
    channel_attention, decode, encode, encoded_frames, inter_block, intra_block,
    multistage_forward, node_waveform, overlap_add, segment, separate, triple_path_subnet,
    waveform_node, StageNodes,
};
pub use params::{head_out_channels, MultiStageParams, NodeParams, ParamSet};
