//! LoRA adapters on a frozen base network: forward pass, cross-entropy loss,
//! factor-restricted gradients and plain SGD.

mod adapter;
mod model;
mod train;

pub use adapter::{AdapterCheckpoint, LoraAdapter, DEFAULT_INIT_STD};
pub use model::{Architecture, BaseLayer, BaseModel, LoraModel, TrainableSelector};
pub use train::{loss, local_train, loss_and_grads, pretrain_base, sgd_step, FactorGrads, Grads, LocalTrainConfig};
