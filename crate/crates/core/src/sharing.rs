//! Data-sharing mitigation: a small class-uniform global dataset is carved
//! from held-out data, a warm-up model is trained on it, and each client
//! merges a random fraction of it into its private data before FedAvg.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::{emd, ClassDistribution, ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::federation::{run_fedavg, run_sgd, FedConfig, RoundRecord};
use crate::model::{evaluate, ModelParams};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShareConfig {
    /// `|G| / |D|`.
    pub beta: f64,
    /// Fraction of `G` each client receives.
    pub alpha: f64,
    #[serde(default)]
    pub warmup_steps: usize,
    /// Warm-up learning rate; defaults to the federated `eta0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_eta: Option<f64>,
    /// Warm-up batch size; defaults to the federated batch size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_batch: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl ShareConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config("beta", "must lie in (0, 1]"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Holdout indices forming `G`: `round(beta · d_size)` rounded to a multiple
/// of the class count, the same number drawn from every class.
pub fn select_global_share(holdout: &LabeledDataset, d_size: usize, beta: f64, seed: u64) -> Result<Vec<usize>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::config("beta", "must lie in (0, 1]"));
    }
    let c = holdout.num_classes();
    let target = (beta * d_size as f64).round();
    let per_class = (target / c as f64).round() as usize;
    if per_class == 0 {
        return Err(Error::config(
            "beta",
            format!("share of {target} examples is smaller than one per class"),
        ));
    }
    let mut rng = seed::rng(seed::derive_seed(seed, "global_share"));
    let mut picked = Vec::with_capacity(per_class * c);
    for class in 0..c {
        let mut pool = holdout.class_indices(class);
        if pool.len() < per_class {
            return Err(Error::Share {
                class,
                needed: per_class,
                available: pool.len(),
            });
        }
        pool.shuffle(&mut rng);
        picked.extend_from_slice(&pool[..per_class]);
    }
    Ok(picked)
}

pub fn build_global_share(holdout: &LabeledDataset, d_size: usize, beta: f64, seed: u64) -> Result<LabeledDataset> {
    Ok(holdout.subset(&select_global_share(holdout, d_size, beta, seed)?))
}

/// Per-client positions into `G` (each drawn without replacement).
pub fn distribute_share_indices(share_len: usize, alpha: f64, clients: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config("alpha", "must lie in (0, 1]"));
    }
    let size = ((alpha * share_len as f64).round() as usize).min(share_len);
    Ok((0..clients)
        .map(|k| {
            let mut rng = seed::rng(seed::derive_indexed(seed, "share_portion", k as u64));
            let mut idx = index::sample(&mut rng, share_len, size).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect())
}

pub fn distribute_share(g: &LabeledDataset, alpha: f64, clients: usize, seed: u64) -> Result<Vec<LabeledDataset>> {
    Ok(distribute_share_indices(g.len(), alpha, clients, seed)?
        .iter()
        .map(|idx| g.subset(idx))
        .collect())
}

/// `steps` mini-batch SGD steps on `G`.
pub fn warmup(
    g: &LabeledDataset,
    init: &ModelParams,
    steps: usize,
    eta: f64,
    batch: usize,
    seed: u64,
) -> Result<ModelParams> {
    if steps == 0 {
        return Ok(init.clone());
    }
    if batch == 0 || batch > g.len() {
        return Err(Error::config(
            "warmup_batch",
            format!("batch {batch} must lie in [1, {}]", g.len()),
        ));
    }
    let mut rng = seed::rng(seed::derive_seed(seed, "warmup"));
    run_sgd(init, g, batch, eta, steps, &mut rng)
}

/// Private shard followed by its share portion, shuffled.
pub fn merge_shard(shard: &ClientShard, portion: &LabeledDataset, seed: u64) -> Result<ClientShard> {
    let joined = LabeledDataset::concat(&[&shard.data, portion])?;
    let mut order: Vec<usize> = (0..joined.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive_indexed(seed, "merge", shard.client_id as u64)));
    ClientShard::new(shard.client_id, order.clone(), joined.subset(&order))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEmdShift {
    pub client_id: usize,
    pub n_private: usize,
    pub n_merged: usize,
    pub emd_before: f64,
    pub emd_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharingReport {
    pub beta: f64,
    pub alpha: f64,
    pub share_size: usize,
    pub portion_size: usize,
    /// Holdout positions making up `G`.
    pub share_indices: Vec<usize>,
    pub warmup_accuracy: f64,
    pub shared: Vec<RoundRecord>,
    pub control: Vec<RoundRecord>,
    pub clients: Vec<ClientEmdShift>,
}

impl SharingReport {
    /// `round,accuracy_shared,accuracy_control`
    pub fn trajectory_csv(&self) -> String {
        let mut s = String::from("round,accuracy_shared,accuracy_control\n");
        for (a, b) in self.shared.iter().zip(&self.control) {
            s.push_str(&format!("{},{},{}\n", a.round, a.test_accuracy, b.test_accuracy));
        }
        s
    }

    /// `client_id,emd_before,emd_after`
    pub fn emd_shift_csv(&self) -> String {
        let mut s = String::from("client_id,emd_before,emd_after\n");
        for c in &self.clients {
            s.push_str(&format!("{},{},{}\n", c.client_id, c.emd_before, c.emd_after));
        }
        s
    }

    pub fn final_shared(&self) -> f64 {
        self.shared.last().map_or(f64::NAN, |r| r.test_accuracy)
    }

    pub fn final_control(&self) -> f64 {
        self.control.last().map_or(f64::NAN, |r| r.test_accuracy)
    }
}

fn pooled_distribution(parts: &[&LabeledDataset]) -> Result<ClassDistribution> {
    let c = parts
        .first()
        .ok_or_else(|| Error::Data("no data".into()))?
        .num_classes();
    let mut counts = vec![0usize; c];
    for p in parts {
        for (acc, n) in counts.iter_mut().zip(p.class_counts()) {
            *acc += n;
        }
    }
    ClassDistribution::from_counts(&counts)
}

/// Runs FedAvg on the merged data and a no-sharing control, both starting
/// from the warm-up model.
pub fn run_sharing_experiment(
    d_shards: &[ClientShard],
    holdout: &LabeledDataset,
    test: &LabeledDataset,
    init: &ModelParams,
    base_cfg: &FedConfig,
    share_cfg: &ShareConfig,
) -> Result<SharingReport> {
    share_cfg.validate()?;
    base_cfg.validate()?;
    let d_size: usize = d_shards.iter().map(ClientShard::n).sum();
    let share_indices = select_global_share(holdout, d_size, share_cfg.beta, share_cfg.seed)?;
    let g = holdout.subset(&share_indices);

    let warm = warmup(
        &g,
        init,
        share_cfg.warmup_steps,
        share_cfg.warmup_eta.unwrap_or(base_cfg.eta0),
        share_cfg.warmup_batch.unwrap_or(base_cfg.batch_size),
        share_cfg.seed,
    )?;
    let warmup_accuracy = evaluate(&warm, test)?;

    let portions = distribute_share(&g, share_cfg.alpha, d_shards.len(), share_cfg.seed)?;
    let merged: Vec<ClientShard> = d_shards
        .iter()
        .zip(&portions)
        .map(|(s, p)| merge_shard(s, p, share_cfg.seed))
        .collect::<Result<_>>()?;

    let private: Vec<&LabeledDataset> = d_shards.iter().map(|s| &s.data).collect();
    let pop_before = pooled_distribution(&private)?;
    let with_shares: Vec<&LabeledDataset> = private.iter().copied().chain(portions.iter()).collect();
    let pop_after = pooled_distribution(&with_shares)?;
    let clients = d_shards
        .iter()
        .zip(&merged)
        .map(|(s, m)| {
            Ok(ClientEmdShift {
                client_id: s.client_id,
                n_private: s.n(),
                n_merged: m.n(),
                emd_before: emd(&s.dist, &pop_before)?,
                emd_after: emd(&m.dist, &pop_after)?,
            })
        })
        .collect::<Result<_>>()?;

    let shared = run_fedavg(&merged, test, &warm, base_cfg)?;
    let control = run_fedavg(d_shards, test, &warm, base_cfg)?;
    Ok(SharingReport {
        beta: share_cfg.beta,
        alpha: share_cfg.alpha,
        share_size: g.len(),
        portion_size: portions.first().map_or(0, LabeledDataset::len),
        share_indices,
        warmup_accuracy,
        shared,
        control,
        clients,
    })
}
