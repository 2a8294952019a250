//! The pose network: tensors, parameters, forward/backward, losses,
//! frame-buffer recurrence and training.

pub mod adam;
pub mod config;
pub mod loss;
pub mod model;
pub mod params;
pub mod repm;
pub mod tensor;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use config::NetConfig;
pub use loss::{loss_and_grads, losses, LossWeights, Losses, Targets};
pub use model::{backward, forward, update_running_stats, ActivationTape, BnStats, Mode, OutputGrads, Outputs};
pub use params::{Gradients, NetworkParams, ParamSpec};
pub use repm::{compose_backward_confidence, compose_input, lnes_tensor, Composed, FrameBufferState};
pub use tensor::Tensor;
pub use train::{
    apply_batch, infer_stream, sequence_gradients, train_sequence, train_step, SequenceGradients, StreamingEstimator,
    TrainOptions, TrainingSample,
};
