//! HyperGAN: a generative model over neural-network parameters.
//!
//! A mixer MLP maps Gaussian noise to a correlated latent vector, which is
//! partitioned into per-layer codes; parallel generators map each code to
//! the weights of one target-network layer. A discriminator on the codes
//! keeps the latent distribution close to a Gaussian prior so sampled
//! networks stay diverse. The crate also carries the training loop,
//! ensemble evaluation (accuracy, predictive entropy, OOD detection,
//! weight-diversity statistics), FGSM/PGD attack protocols, dataset
//! loaders, and checkpoint/config plumbing used by the CLI.

pub mod attack;
pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod data;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod nets;
pub mod optim;
pub mod tensor;
pub mod train;

pub use tensor::{Graph, Tensor, TensorError, Value};
