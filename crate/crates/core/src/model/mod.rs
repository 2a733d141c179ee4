//! Joint video-action flow-matching model: latent layout, network,
//! training loop and checkpoints.

mod adapter;
pub mod checkpoint;
mod config;
mod data;
mod joint;
pub mod layers;
mod net;
mod params;
mod real;
mod train;

pub use adapter::AdapterSlots;
pub use config::{ArchConfig, Geometry, ModelConfig, Prediction, Variant, CLEAN_T_MIN};
pub use data::{from_model_space, prepare_dataset, prepare_episode, to_model_space, Prepared};
pub use joint::{flow_interpolate, tokenize, untokenize, JointLayout, Region, Stream};
pub use net::{BlockSlots, Cache, Conditions, Model, Slots};
pub use params::{Layout, Slot, TensorSpec};
pub use real::Real;
pub use train::{
    clean_joint, draw_conditions, loss, loss_and_grad, read_log, Adam, Draw, LossRecord,
    StepInputs, TrainConfig, Trainer,
};
