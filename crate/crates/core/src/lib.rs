//! Model-centric collaborative learning on simulated edge devices.
//!
//! The crate covers a federated-learning simulator over heterogeneous clients
//! ([`federation`], [`hetero`]), a content-addressed model vault with quality
//! metadata ([`vault`]), predicate-based model discovery ([`discovery`]),
//! discovery-plus-distillation for isolated parties ([`distill`]), a framed
//! JSON network service ([`service`]) and the experiment harness that ties
//! them together ([`experiment`]).
//!
//! The numerical core in [`ml`] is generic over [`Scalar`] (`f32` or `f64`).
//! Stored models, vault metadata and experiment results are `f64`; the aliases
//! below name those concrete types.

pub mod error;
pub mod ml;
pub mod scalar;
pub mod seed;
pub mod datagen;
pub mod hetero;
pub mod federation;
pub mod vault;
pub mod discovery;
pub mod distill;
pub mod service;
pub mod experiment;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = ml::Matrix<f64>;
pub type Model = ml::Model<f64>;
pub type ClientDataset = ml::ClientDataset<f64>;
pub type FederatedDataset = datagen::FederatedDataset<f64>;

pub type Matrix32 = ml::Matrix<f32>;
pub type Model32 = ml::Model<f32>;
pub type ClientDataset32 = ml::ClientDataset<f32>;
