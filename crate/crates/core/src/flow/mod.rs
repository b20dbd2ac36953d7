//! Conditional flow matching over the 16³ structured latent: the velocity
//! transformer, its training loop, the guided Euler sampler and checkpoints.

pub mod checkpoint;
pub mod latent;
pub mod model;
pub mod optim;
pub mod sampler;
pub mod train;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, parse_hash, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use latent::{decode_latent, encode_target, flow_sample_at, make_flow_sample, FlowSample};
pub use model::{patch_position_embedding, sinusoidal, Conditioning, FlowModel, ForwardInfo, ModelConfig, ModelParams};
pub use optim::{AdamW, AdamWConfig};
pub use sampler::{
    baseline_sequential_conditioning, baseline_sequential_latent, guided_velocity, integrate, sample, sample_latent,
    sampling_step_schedule, LinearGaussianFlow, SampleConfig, VelocityField, DEFAULT_SAMPLING_STEPS,
};
pub use train::{
    accumulate_batch, build_conditioning, cfm_loss, partial_voxels, step_seed, train_step, BatchItem, ItemRecord,
    LrSchedule, StepLog, TrainConfig, TrainSet, Trainer, MAX_VIEWS,
};
