//! The vision transformer: patch embedding, class token, interchangeable
//! attention modules and the classification head.

mod config;
mod params;
mod permutation;
mod vit;

pub use config::{ModelConfig, PredictorInput};
pub use params::{
    AttentionModule, AttentionModuleParams, Layer, ModelParams, OutputHead, OutputHeadParams,
    Params, PatchEmbed, PatchEmbedParams, PositionEncoding, PositionEncodingParams,
    PositionPredictor, PositionPredictorParams,
};
pub use permutation::Permutation;
pub use vit::{
    argmax, attention_module_forward, attention_module_traced, embed_input, forward_layers,
    model_forward, output_head, patch_batch, patchify, validate_order, AttentionTrace, Dropout,
    ForwardOutput, LayerRecord, VisionTransformer,
};
