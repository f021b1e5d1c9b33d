//! Splitting a dataset across clients: IID, k-class label skew, and the
//! cyclic-shift construction that gives every client the same EMD to the
//! population.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{gen_target_emd_distribution, ClassDistribution, LabeledDataset};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionKind {
    Iid,
    /// Sort by label, cut into `clients · classes_per_client` equal runs,
    /// hand each client `classes_per_client` of them.
    KClass { classes_per_client: usize },
    /// Every client's label histogram is a cyclic shift of one distribution
    /// at the given EMD from uniform.
    TargetEmd { emd: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    #[serde(flatten)]
    pub kind: PartitionKind,
    pub clients: usize,
    #[serde(default)]
    pub seed: u64,
}

/// One client's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    /// Positions in the source dataset, in shard order.
    pub indices: Vec<usize>,
    pub data: LabeledDataset,
    pub dist: ClassDistribution,
}

impl ClientShard {
    pub fn new(client_id: usize, indices: Vec<usize>, data: LabeledDataset) -> Result<Self> {
        let dist = data.distribution()?;
        Ok(Self {
            client_id,
            indices,
            data,
            dist,
        })
    }

    pub fn from_source(client_id: usize, source: &LabeledDataset, indices: Vec<usize>) -> Result<Self> {
        let data = source.subset(&indices);
        Self::new(client_id, indices, data)
    }

    /// Sample count `n^(k)`.
    pub fn n(&self) -> usize {
        self.data.len()
    }
}

/// JSON manifest entry: `{client_id, indices}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

pub fn manifests(shards: &[ClientShard]) -> Vec<ShardManifest> {
    shards
        .iter()
        .map(|s| ShardManifest {
            client_id: s.client_id,
            indices: s.indices.clone(),
        })
        .collect()
}

pub fn partition(data: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    let k = spec.clients;
    if k == 0 {
        return Err(Error::config("clients", "must be at least 1"));
    }
    let index_sets = match spec.kind {
        PartitionKind::Iid => iid(data, k, spec.seed)?,
        PartitionKind::KClass { classes_per_client } => k_class(data, k, classes_per_client, spec.seed)?,
        PartitionKind::TargetEmd { emd } => target_emd(data, k, emd, spec.seed)?,
    };
    index_sets
        .into_iter()
        .enumerate()
        .map(|(id, idx)| ClientShard::from_source(id, data, idx))
        .collect()
}

fn require_divisible(n: usize, by: usize, what: &str) -> Result<()> {
    if n == 0 || !n.is_multiple_of(by) {
        return Err(Error::config(
            "clients",
            format!("{n} examples cannot be split into {by} equal {what}"),
        ));
    }
    Ok(())
}

fn iid(data: &LabeledDataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    require_divisible(data.len(), k, "shards")?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive_seed(seed, "iid")));
    let m = data.len() / k;
    Ok(order.chunks(m).map(<[usize]>::to_vec).collect())
}

fn k_class(data: &LabeledDataset, k: usize, per_client: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if per_client == 0 || per_client > data.num_classes() {
        return Err(Error::config(
            "classes_per_client",
            format!("must lie in [1, {}]", data.num_classes()),
        ));
    }
    let runs = k * per_client;
    require_divisible(data.len(), runs, "label-sorted runs")?;
    let mut sorted: Vec<usize> = (0..data.len()).collect();
    sorted.sort_by_key(|&i| data.label(i));
    let run_len = data.len() / runs;

    let mut run_ids: Vec<usize> = (0..runs).collect();
    run_ids.shuffle(&mut seed::rng(seed::derive_seed(seed, "k_class")));
    Ok(run_ids
        .chunks(per_client)
        .map(|ids| {
            let mut ids = ids.to_vec();
            ids.sort_unstable();
            ids.iter()
                .flat_map(|&r| sorted[r * run_len..(r + 1) * run_len].iter().copied())
                .collect()
        })
        .collect())
}

/// Rounds `total · probs` to integers summing to `total` (largest
/// remainder, ties to the lower class index).
pub fn largest_remainder(probs: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = probs.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn target_emd(data: &LabeledDataset, k: usize, emd: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    let c = data.num_classes();
    if !k.is_multiple_of(c) {
        return Err(Error::config(
            "clients",
            format!("target-EMD partitioning needs a multiple of {c} clients, got {k}"),
        ));
    }
    let base = gen_target_emd_distribution(emd, c, seed::derive_seed(seed, "target_distribution"))?;

    // Balanced pools: every class trimmed to the rarest class's count.
    let mut rng = seed::rng(seed::derive_seed(seed, "pools"));
    let mut pools: Vec<Vec<usize>> = (0..c).map(|class| data.class_indices(class)).collect();
    let per_class = pools.iter().map(Vec::len).min().unwrap_or(0);
    for pool in &mut pools {
        pool.shuffle(&mut rng);
        pool.truncate(per_class);
    }
    require_divisible(per_class * c, k, "shards")?;
    let m = per_class * c / k;

    // Rounding once and rotating the counts keeps per-class totals exact.
    let counts = largest_remainder(base.probs(), m);
    let mut cursor = vec![0usize; c];
    let mut shards = Vec::with_capacity(k);
    for client in 0..k {
        let mut idx = Vec::with_capacity(m);
        for class in 0..c {
            let need = counts[(class + c - client % c) % c];
            let available = per_class - cursor[class];
            if need > available {
                return Err(Error::Partition {
                    class,
                    needed: need,
                    available,
                });
            }
            idx.extend_from_slice(&pools[class][cursor[class]..cursor[class] + need]);
            cursor[class] += need;
        }
        shards.push(idx);
    }
    Ok(shards)
}

/// Pooled label distribution implied by the shards: `Σ_k (n_k / Σn) p^(k)`.
pub fn mixture_distribution(shards: &[ClientShard]) -> Result<ClassDistribution> {
    let first = shards
        .first()
        .ok_or_else(|| Error::Data("no shards".into()))?;
    let total: usize = shards.iter().map(ClientShard::n).sum();
    let mut probs = vec![0.0; first.dist.num_classes()];
    for s in shards {
        let w = s.n() as f64 / total as f64;
        for (acc, p) in probs.iter_mut().zip(s.dist.probs()) {
            *acc += w * p;
        }
    }
    ClassDistribution::new(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{emd, gen_synthetic};

    fn balanced(c: usize, per: usize) -> LabeledDataset {
        gen_synthetic(c, 2, per, 1.0, 3).unwrap()
    }

    fn audit(data: &LabeledDataset, shards: &[ClientShard], expect_all: bool) {
        let mut seen = vec![false; data.len()];
        for s in shards {
            for &i in &s.indices {
                assert!(!seen[i], "index {i} assigned twice");
                seen[i] = true;
            }
            assert_eq!(s.n(), shards[0].n());
            assert_eq!(s.dist, s.data.distribution().unwrap());
        }
        if expect_all {
            assert!(seen.iter().all(|&b| b));
        }
    }

    #[test]
    fn iid_shards_are_near_uniform() {
        let d = balanced(10, 600);
        let shards = partition(&d, &PartitionSpec { kind: PartitionKind::Iid, clients: 10, seed: 1 }).unwrap();
        audit(&d, &shards, true);
        let u = ClassDistribution::uniform(10);
        for s in &shards {
            assert!(emd(&s.dist, &u).unwrap() < 0.15);
        }
    }

    #[test]
    fn one_class_shards_are_one_hot() {
        let d = balanced(10, 50);
        let spec = PartitionSpec {
            kind: PartitionKind::KClass { classes_per_client: 1 },
            clients: 10,
            seed: 4,
        };
        let shards = partition(&d, &spec).unwrap();
        audit(&d, &shards, true);
        let u = ClassDistribution::uniform(10);
        let mut classes: Vec<usize> = shards.iter().map(|s| s.data.label(0)).collect();
        for s in &shards {
            assert_eq!(s.dist.probs().iter().filter(|&&p| p == 1.0).count(), 1);
            assert!((emd(&s.dist, &u).unwrap() - 1.8).abs() < 1e-12);
        }
        classes.sort_unstable();
        assert_eq!(classes, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn target_emd_shards() {
        let d = balanced(10, 100);
        let spec = PartitionSpec {
            kind: PartitionKind::TargetEmd { emd: 0.72 },
            clients: 10,
            seed: 8,
        };
        let shards = partition(&d, &spec).unwrap();
        audit(&d, &shards, true);
        let u = ClassDistribution::uniform(10);
        let mean: f64 = shards.iter().map(|s| emd(&s.dist, &u).unwrap()).sum::<f64>() / 10.0;
        assert!((mean - 0.72).abs() < 0.05, "mean emd {mean}");
        let mix = mixture_distribution(&shards).unwrap();
        assert!(emd(&mix, &u).unwrap() < 1e-9);
    }

    #[test]
    fn target_emd_trims_unbalanced_pools() {
        let d = balanced(4, 30);
        let mut keep: Vec<usize> = (0..d.len()).collect();
        keep.retain(|&i| !(d.label(i) == 2 && i % 30 < 5));
        let d = d.subset(&keep);
        let spec = PartitionSpec {
            kind: PartitionKind::TargetEmd { emd: 1.0 },
            clients: 4,
            seed: 0,
        };
        let shards = partition(&d, &spec).unwrap();
        audit(&d, &shards, false);
        assert_eq!(shards.iter().map(ClientShard::n).sum::<usize>(), 100);
    }

    #[test]
    fn target_emd_rejects_client_count_not_multiple_of_classes() {
        let d = balanced(10, 30);
        let spec = PartitionSpec {
            kind: PartitionKind::TargetEmd { emd: 0.5 },
            clients: 6,
            seed: 0,
        };
        assert!(matches!(partition(&d, &spec), Err(Error::Config { .. })));
    }

    #[test]
    fn indivisible_sizes_rejected() {
        let d = balanced(3, 7);
        let spec = PartitionSpec { kind: PartitionKind::Iid, clients: 4, seed: 0 };
        assert!(partition(&d, &spec).is_err());
        let spec = PartitionSpec {
            kind: PartitionKind::KClass { classes_per_client: 4 },
            clients: 3,
            seed: 0,
        };
        assert!(partition(&d, &spec).is_err());
    }

    #[test]
    fn largest_remainder_sums_exactly() {
        assert_eq!(largest_remainder(&[0.55, 0.25, 0.2], 10), vec![6, 2, 2]);
        let c = largest_remainder(&[1.0 / 3.0; 3], 100);
        assert_eq!(c, vec![34, 33, 33]);
    }

    #[test]
    fn deterministic() {
        let d = balanced(10, 20);
        for kind in [
            PartitionKind::Iid,
            PartitionKind::KClass { classes_per_client: 2 },
            PartitionKind::TargetEmd { emd: 1.44 },
        ] {
            let spec = PartitionSpec { kind, clients: 10, seed: 11 };
            assert_eq!(partition(&d, &spec).unwrap(), partition(&d, &spec).unwrap());
        }
    }
}
