//! Minimal neural-network engine: 1D convolutions, dense layers, global
//! average pooling, leaky-ReLU, MSE, Adam, finite-difference checks and
//! binary checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{gradient_check, gradient_check_model, GradCheckReport};
pub use layers::{conv1d_forward, dense_forward, global_avg_pool, leaky_relu, ConvShape};
pub use loss::mse_loss;
pub use network::{Activation, LayerParams, LayerSpec, ModelState, NetworkSpec, DEFAULT_LEAKY_SLOPE};
pub use optim::OptimizerConfig;
pub use tensor::{Scalar, Tensor2D};
