//! Minimal tensor engine with reverse-mode gradients, the 2D/3D/4D
//! convolutional classifiers, Adam training, checkpoints and gradient
//! checking.

mod adam;
mod checkpoint;
mod gemm;
mod gradcheck;
mod layers;
mod network;
mod tensor;
mod train;

pub use adam::{adam_step, AdamParams, AdamState};
pub use checkpoint::{
    blob_path, load_checkpoint, load_tensor, save_checkpoint, save_tensor, tensor_from_json, tensor_to_json,
    CHECKPOINT_VERSION, TENSOR_VERSION,
};
pub use gradcheck::{gradient_check, relative_error, GradCheckOptions, GradCheckReport, LayerCheck, REL_ERROR_FLOOR};
pub use layers::{conv_forward, LayerSpec, Mode};
pub use network::{softmax, softmax_cross_entropy, LayerInfo, Network, NetworkConfig, Variant};
pub use tensor::Tensor;
pub use train::{train, training_log_csv, EpochLog, Prediction, TrainOptions, TrainedModel};
