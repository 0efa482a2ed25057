//! Minimal differentiable engine.
//!
//! Layers are explicit forward/backward pairs: `forward` returns its output
//! and a cache, `backward` consumes that cache and the output gradient. All
//! arithmetic is `f64`; [`Precision::F32`] rounds parameters to single
//! precision after every update so checkpoints (stored as f32) are lossless.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod optim;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, grad_check_masked, relative_error};
pub use layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, Conv2d, Conv2dCache,
    Conv2dGrads, LayerNorm, LayerNormCache, LayerNormGrads, Linear, LinearGrads, MaxPool2d,
    MaxPoolCache,
};
pub(crate) use layers::gemm;
pub use loss::{bce_with_logits, log_sigmoid, sigmoid, sigmoid_focal_loss, FocalParams, SupervisedLoss};
pub use optim::{adamw_step, cosine_lr, AdamState, Gradients, ParamStore, Precision, TrainSchedule};
pub use tensor::Tensor;
