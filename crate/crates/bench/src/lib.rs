//! Shared fixtures for the criterion benchmarks.

use fedskew::data::{gen_synthetic, partition, ClientShard, LabeledDataset, PartitionKind, PartitionSpec};
use fedskew::model::{init_params, ModelParams};

pub struct Fixture {
    pub data: LabeledDataset,
    pub shards: Vec<ClientShard>,
    pub init: ModelParams,
}

/// Ten-class blobs split IID over ten clients, with a `[dim, hidden, 10]` model.
pub fn fixture(dim: usize, hidden: usize, per_class: usize) -> Fixture {
    let data = gen_synthetic(10, dim, per_class, 3.0, 1).expect("synthetic data");
    let shards = partition(
        &data,
        &PartitionSpec {
            kind: PartitionKind::Iid,
            clients: 10,
            seed: 2,
        },
    )
    .expect("partition");
    let init = init_params(&[dim, hidden, 10], 3, 1.0).expect("init");
    Fixture { data, shards, init }
}
