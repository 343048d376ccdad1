//! 1-D U-net sequence labeler: tensors, layer primitives, the network graph,
//! and deterministic ADAM training.

pub mod layers;
pub mod tensor;
pub mod train;
pub mod unet;

pub use layers::{concat_skip, conv1d_same, lead_collapse, maxpool2, upsample_deconv};
pub use tensor::Tensor;
pub use train::{train, TrainConfig};
pub use unet::{
    forward, load_model, loss_and_grads, save_model, ScalePreset, UNetConfig, UNetModel,
    MODEL_FORMAT_VERSION,
};
