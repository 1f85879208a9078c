//! Minimal ML kernel: dense matrices, logistic regression and ReLU MLPs,
//! softmax cross-entropy, mini-batch SGD and accuracy metrics.

mod arch;
pub mod codec;
mod dataset;
mod eval;
mod loss;
mod matrix;
mod model;
mod train;

pub use arch::{ArchDescriptor, ModelKind};
pub use dataset::ClientDataset;
pub use eval::{argmax, evaluate, evaluate_named, predict, QualityReport};
pub use loss::{ce_loss_and_grad, softmax};
pub use matrix::Matrix;
pub use model::Model;
pub use train::{epoch_order, sgd_train, TrainConfig};

pub(crate) use loss::{check_batch, log_sum_exp, softmax_in_place};
pub(crate) use train::sgd_loop;
