//! Datasets, label distributions and client partitioning.

mod dataset;
mod distribution;
mod idx;
mod partition;
mod synthetic;

pub use dataset::LabeledDataset;
pub use distribution::{
    emd, gen_target_emd_distribution, interpolate_to_target, max_emd_to_uniform, shift_distribution,
    ClassDistribution,
};
pub use idx::{load_idx, parse_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{
    largest_remainder, manifests, mixture_distribution, partition, ClientShard, PartitionKind, PartitionSpec,
    ShardManifest,
};
pub use synthetic::{class_centres, gen_synthetic, sample_blobs};
