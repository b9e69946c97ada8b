//! Natural-gradient optimization toolkit: a small dense-network engine that
//! keeps per-sample gradient caches, Fisher information constructions in
//! explicit and Gram form, SGD / exact NGD / block NGD / TENGraD optimizers,
//! an experiment harness, and numerical oracles for the underlying identities.

pub mod error;
pub mod fisher;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod oracle;

pub use error::{Error, Result};
pub use fisher::{FisherBlock, FisherRepr};
pub use linalg::Matrix;
pub use model::{Activation, BatchCache, DenseLayer, Head, Network};
pub use optim::{Method, OptimConfig};
