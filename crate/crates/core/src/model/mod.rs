//! The PyFormer network: pyramid level inputs, convolutional tokenizer,
//! transformer encoder per level, level fusion and classification head.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, TensorEntry, BLOB_FILE, CHECKPOINT_MAGIC, MANIFEST_FILE};
pub use config::PyFormerConfig;
pub use forward::{
    add_positional, argmax, attention, attention_with_weights, classify_head, conv_block, encode_levels, encoder_layer,
    feed_forward, forward, forward_patch, integrate_levels, level_input, predict_proba, pyramid_level_input,
    to_model_layout, TokenSequence,
};
pub use params::{BoundParams, EncoderLayerParams, HeadParams, LevelParams, ModelParams, PyFormerParams};
