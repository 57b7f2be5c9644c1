//! Link-prediction graph neural networks (full-batch GCN and neighbor-sampled
//! GraphSAGE) trained with a rank-based individual fairness objective, plus
//! the utility (AUC) and fairness (NDCG@k) evaluation used to compare them.

pub mod error;
pub mod fairness;
pub mod graph;
pub mod models;
pub mod numeric;
pub mod rng;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
