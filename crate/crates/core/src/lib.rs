//! Federated averaging on label-skewed clients.
//!
//! The crate simulates FedAvg with a small dense softmax classifier and
//! measures how client label skew, quantified as the L1 distance between a
//! client's class distribution and the population's, drives the weights of
//! the federated model away from those of centralized SGD.
//!
//! * [`model`]: the classifier, analytic gradients and SGD.
//! * [`data`]: datasets, IDX loading, class distributions and partitioning.
//! * [`federation`]: FedAvg, the centralized baseline and the full-gradient pair.
//! * [`analysis`]: weight divergence, the divergence bound and EMD sweeps.
//! * [`sharing`]: the global-share mitigation.

pub mod analysis;
pub mod data;
mod error;
pub mod federation;
pub mod model;
pub mod seed;
pub mod sharing;

pub use analysis::{BoundCheckReport, DivergenceReport, ProbeSpec, SweepTable};
pub use data::{ClassDistribution, ClientShard, LabeledDataset, PartitionKind, PartitionSpec};
pub use error::{Error, Result};
pub use federation::{FedConfig, RoundRecord};
pub use model::{GradientSet, ModelParams};
pub use sharing::{ShareConfig, SharingReport};
