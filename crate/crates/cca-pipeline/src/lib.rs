//! Orchestration for the CCA image codec: dataset handling, the training
//! loop, checkpoint persistence and end-to-end compression.

pub mod checkpoint;
pub mod codec_pipeline;
pub mod config;
pub mod dataset;
pub mod error;
pub mod optim;
pub mod trainer;

pub use checkpoint::{load_checkpoint, load_checkpoint_bytes, save_checkpoint, TrainedModel};
pub use codec_pipeline::{
    compress, decompress, decompress_with_latents, CompressStats, DecodedLatents,
};
pub use config::TrainConfig;
pub use dataset::{read_ppm, synth_corpus, synth_image, write_ppm, CropSampler, RgbImage};
pub use error::{PipelineError, PipelineResult};
pub use trainer::{forward_item, noise_keys, LossSelect, StepMode, StepSettings, Trainer};
