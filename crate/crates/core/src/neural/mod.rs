//! Networks, losses and training at desk scale.
//!
//! Everything runs in `f64` on a small tape-based autodiff ([`graph`]).

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod nets;
pub mod optim;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Model};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use layers::{BlockKind, BlockSpec};
pub use loss::{loss_adversarial, loss_control, loss_fft, loss_pixel, loss_total, LossParts, LossWeights, Role};
pub use nets::{Architecture, Dfg, DiscriminatorConfig, I2fNet, Lcr, LcrConfig, Network, PatchDiscriminator, UNetConfig};
pub use optim::Adam;
pub use tensor::Tensor;
pub use train::{train_dfg, train_i2fnet, train_lcr, Frozen, Objective, StepLog, TrainConfig, TrainSample};
