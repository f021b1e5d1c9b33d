//! Federated averaging and the matched centralized SGD baseline.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{mixture_distribution, ClassDistribution, ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{class_conditional_grads, evaluate, loss_and_grad_at, sgd_step, GradientSet, ModelParams};
use crate::seed;

fn default_decay() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    /// Number of clients; every client participates in every round.
    pub clients: usize,
    /// Local mini-batch size `B`.
    pub batch_size: usize,
    /// Local epochs `E` per round.
    pub local_epochs: usize,
    /// Explicit local step count `T` per round. Overrides `local_epochs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_steps: Option<usize>,
    pub eta0: f64,
    /// Per-round multiplicative learning-rate decay.
    #[serde(default = "default_decay")]
    pub decay: f64,
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clients", self.clients),
            ("batch_size", self.batch_size),
            ("local_epochs", self.local_epochs),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.local_steps == Some(0) {
            return Err(Error::config("local_steps", "must be positive"));
        }
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return Err(Error::config("eta0", "must be positive"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config("decay", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Learning rate used during round `round` (0-based).
    pub fn eta(&self, round: usize) -> f64 {
        self.eta0 * self.decay.powi(round as i32)
    }

    /// Local steps per round for a client holding `n` examples with batch size `batch`.
    pub fn steps_per_round(&self, n: usize, batch: usize) -> usize {
        self.local_steps.unwrap_or(self.local_epochs * n.div_ceil(batch))
    }
}

/// Evaluation after a communication round. `round == -1` is the initial
/// model before any training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: i64,
    pub eta: f64,
    pub test_accuracy: f64,
    /// Local SGD steps taken by each client this round (`T` per client).
    pub client_steps: Vec<usize>,
    #[serde(skip)]
    pub global_params: ModelParams,
}

fn shuffle_rng(seed: u64, round: usize, stream: usize) -> ChaCha8Rng {
    let round_seed = seed::derive_indexed(seed, "round", round as u64);
    seed::rng(seed::derive_indexed(round_seed, "stream", stream as u64))
}

/// Mini-batch SGD for exactly `steps` steps, reshuffling at each pass over
/// the data. The trailing short batch of a pass is kept. Indices inside a
/// batch are summed in ascending order so a full batch matches
/// [`crate::model::loss_and_grad`] bit for bit.
pub(crate) fn run_sgd(
    init: &ModelParams,
    data: &LabeledDataset,
    batch: usize,
    eta: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ModelParams> {
    let mut params = init.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch_idx = Vec::with_capacity(batch);
    let mut done = 0;
    while done < steps {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            if done == steps {
                break;
            }
            batch_idx.clear();
            batch_idx.extend_from_slice(chunk);
            batch_idx.sort_unstable();
            let (_, grad) = loss_and_grad_at(&params, data, &batch_idx)?;
            params = sgd_step(&params, &grad, eta)?;
            done += 1;
        }
    }
    Ok(params)
}

/// One client's local update for `round`, starting from the broadcast model.
pub fn local_train(params: &ModelParams, shard: &ClientShard, cfg: &FedConfig, round: usize) -> Result<ModelParams> {
    cfg.validate()?;
    if shard.n() == 0 {
        return Err(Error::Data(format!("client {} has no data", shard.client_id)));
    }
    if cfg.batch_size > shard.n() {
        return Err(Error::config(
            "batch_size",
            format!("{} exceeds client {} sample count {}", cfg.batch_size, shard.client_id, shard.n()),
        ));
    }
    let steps = cfg.steps_per_round(shard.n(), cfg.batch_size);
    let mut rng = shuffle_rng(cfg.seed, round, shard.client_id);
    run_sgd(params, &shard.data, cfg.batch_size, cfg.eta(round), steps, &mut rng)
}

/// Sample-weighted mean `Σ_k (n_k / Σn) w_k`, accumulated in list order as
/// `w_0 + Σ_k (n_k / Σn)(w_k − w_0)` so identical inputs come back exactly.
pub fn aggregate(locals: &[(ModelParams, usize)]) -> Result<ModelParams> {
    let (reference, _) = locals
        .first()
        .ok_or_else(|| Error::Data("nothing to aggregate".into()))?;
    if locals.iter().any(|(_, n)| *n == 0) {
        return Err(Error::Data("client with zero samples in aggregation".into()));
    }
    let total: usize = locals.iter().map(|(_, n)| n).sum();
    let mut out = reference.clone();
    for (params, n) in locals {
        let delta = params.difference(reference)?;
        out.add_scaled(&delta, *n as f64 / total as f64)?;
    }
    Ok(out)
}

fn initial_record(init: &ModelParams, test: &LabeledDataset) -> Result<RoundRecord> {
    Ok(RoundRecord {
        round: -1,
        eta: 0.0,
        test_accuracy: evaluate(init, test)?,
        client_steps: Vec::new(),
        global_params: init.clone(),
    })
}

pub fn run_fedavg(
    shards: &[ClientShard],
    test: &LabeledDataset,
    init: &ModelParams,
    cfg: &FedConfig,
) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    if shards.is_empty() {
        return Err(Error::Data("no client shards".into()));
    }
    if shards.len() != cfg.clients {
        return Err(Error::config(
            "clients",
            format!("configured for {} clients but {} shards given", cfg.clients, shards.len()),
        ));
    }
    let client_steps: Vec<usize> = shards
        .iter()
        .map(|s| cfg.steps_per_round(s.n(), cfg.batch_size))
        .collect();

    let mut records = vec![initial_record(init, test)?];
    let mut global = init.clone();
    for round in 0..cfg.rounds {
        global = fedavg_round(&global, shards, cfg, round)?;
        records.push(RoundRecord {
            round: round as i64,
            eta: cfg.eta(round),
            test_accuracy: evaluate(&global, test)?,
            client_steps: client_steps.clone(),
            global_params: global.clone(),
        });
    }
    Ok(records)
}

/// Broadcast, train every client (in parallel), aggregate in client order.
pub fn fedavg_round(global: &ModelParams, shards: &[ClientShard], cfg: &FedConfig, round: usize) -> Result<ModelParams> {
    let locals: Vec<(ModelParams, usize)> = shards
        .par_iter()
        .map(|s| local_train(global, s, cfg, round).map(|p| (p, s.n())))
        .collect::<Result<_>>()?;
    aggregate(&locals)
}

/// Pooled SGD with batch size `B·K`; one round is `E` epochs (or `T`
/// steps) and uses shuffle stream 0, so with `K = 1` it replays FedAvg.
pub fn run_centralized(
    data: &LabeledDataset,
    test: &LabeledDataset,
    init: &ModelParams,
    cfg: &FedConfig,
) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let batch = cfg.batch_size * cfg.clients;
    if batch > data.len() {
        return Err(Error::config(
            "batch_size",
            format!("centralized batch B*K = {batch} exceeds {} examples", data.len()),
        ));
    }
    let steps = cfg.steps_per_round(data.len(), batch);
    let mut records = vec![initial_record(init, test)?];
    let mut params = init.clone();
    for round in 0..cfg.rounds {
        params = centralized_round(&params, data, cfg, round)?;
        records.push(RoundRecord {
            round: round as i64,
            eta: cfg.eta(round),
            test_accuracy: evaluate(&params, test)?,
            client_steps: vec![steps],
            global_params: params.clone(),
        });
    }
    Ok(records)
}

/// One round of the centralized baseline.
pub fn centralized_round(params: &ModelParams, data: &LabeledDataset, cfg: &FedConfig, round: usize) -> Result<ModelParams> {
    let batch = cfg.batch_size * cfg.clients;
    if batch > data.len() {
        return Err(Error::config(
            "batch_size",
            format!("centralized batch B*K = {batch} exceeds {} examples", data.len()),
        ));
    }
    let steps = cfg.steps_per_round(data.len(), batch);
    let mut rng = shuffle_rng(cfg.seed, round, 0);
    run_sgd(params, data, batch, cfg.eta(round), steps, &mut rng)
}

/// Weight trajectories of the full-gradient federated and centralized runs.
#[derive(Debug, Clone)]
pub struct DeterministicRun {
    pub eta: f64,
    pub sync_interval: usize,
    /// `w^(c)_t` for `t = 0..=m·T`.
    pub central: Vec<ModelParams>,
    /// `w^(f)_{mT}` for `m = 0..=rounds`.
    pub synced: Vec<ModelParams>,
    /// `clients[t][k]` is `w^(k)_t`; at sync steps, the pre-aggregation weights.
    pub clients: Vec<Vec<ModelParams>>,
    pub population: ClassDistribution,
    pub client_dists: Vec<ClassDistribution>,
    pub client_n: Vec<usize>,
    /// Data over which class-conditional expectations are taken.
    pub pooled: LabeledDataset,
}

fn mixed_gradient(grads: &[GradientSet], weights: &[f64], like: &ModelParams) -> Result<GradientSet> {
    let mut g = GradientSet::zeros_like(like);
    for (gi, &w) in grads.iter().zip(weights) {
        if w != 0.0 {
            g.add_scaled(gi, w)?;
        }
    }
    Ok(g)
}

/// Full-gradient version of FedAvg alongside centralized gradient descent.
///
/// Both runs use class-conditional expected gradients taken over the pooled
/// data, so the only difference between a client and the centralized twin is
/// the class prior: client `k` mixes them with `p^(k)`, the twin with the
/// population prior `p`. Learning rate is fixed.
pub fn run_deterministic_pair(
    shards: &[ClientShard],
    init: &ModelParams,
    eta: f64,
    sync_interval: usize,
    rounds: usize,
) -> Result<DeterministicRun> {
    if shards.is_empty() {
        return Err(Error::Data("no client shards".into()));
    }
    if sync_interval == 0 {
        return Err(Error::config("sync_interval", "must be positive"));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::config("eta", "must be positive"));
    }
    let parts: Vec<&LabeledDataset> = shards.iter().map(|s| &s.data).collect();
    let pooled = LabeledDataset::concat(&parts)?;
    let population = mixture_distribution(shards)?;
    let client_dists: Vec<ClassDistribution> = shards.iter().map(|s| s.dist.clone()).collect();
    let client_n: Vec<usize> = shards.iter().map(ClientShard::n).collect();

    let step = |w: &ModelParams, prior: &ClassDistribution| -> Result<ModelParams> {
        let grads = class_conditional_grads(w, &pooled)?;
        sgd_step(w, &mixed_gradient(&grads, prior.probs(), w)?, eta)
    };

    let mut central = vec![init.clone()];
    let mut synced = vec![init.clone()];
    let mut clients = vec![vec![init.clone(); shards.len()]];
    for _ in 0..rounds {
        let mut locals = vec![synced[synced.len() - 1].clone(); shards.len()];
        for _ in 0..sync_interval {
            let next = step(&central[central.len() - 1], &population)?;
            central.push(next);
            locals = locals
                .iter()
                .zip(&client_dists)
                .map(|(w, p)| step(w, p))
                .collect::<Result<_>>()?;
            clients.push(locals.clone());
        }
        let weighted: Vec<(ModelParams, usize)> = locals.into_iter().zip(client_n.iter().copied()).collect();
        synced.push(aggregate(&weighted)?);
    }
    Ok(DeterministicRun {
        eta,
        sync_interval,
        central,
        synced,
        clients,
        population,
        client_dists,
        client_n,
        pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, partition, PartitionKind, PartitionSpec};
    use crate::model::{init_params, loss_and_grad, DenseLayer};

    fn cfg(clients: usize, b: usize) -> FedConfig {
        FedConfig {
            clients,
            batch_size: b,
            local_epochs: 1,
            local_steps: None,
            eta0: 0.1,
            decay: 0.99,
            rounds: 3,
            seed: 5,
        }
    }

    fn scalar(v: f64) -> ModelParams {
        ModelParams::from_layers(vec![DenseLayer {
            inputs: 1,
            outputs: 1,
            weights: vec![v],
            bias: vec![v],
        }])
        .unwrap()
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[(scalar(1.5), 4)]).unwrap(), scalar(1.5));
        assert_eq!(aggregate(&[(scalar(1.0), 2), (scalar(3.0), 2)]).unwrap(), scalar(2.0));
        assert_eq!(aggregate(&[(scalar(0.0), 1), (scalar(4.0), 3)]).unwrap(), scalar(3.0));
        let other = ModelParams::zeros(&[2, 1]).unwrap();
        assert!(matches!(aggregate(&[(scalar(0.0), 1), (other, 1)]), Err(Error::Shape(_))));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn aggregate_is_idempotent_bitwise() {
        let p = init_params(&[5, 7, 3], 1, 1.0).unwrap();
        let copies: Vec<_> = (0..7).map(|_| (p.clone(), 13)).collect();
        assert_eq!(aggregate(&copies).unwrap(), p);
    }

    #[test]
    fn full_batch_single_client_is_one_sgd_step() {
        let data = gen_synthetic(3, 4, 10, 2.0, 1).unwrap();
        let shard = ClientShard::from_source(0, &data, (0..data.len()).collect()).unwrap();
        let init = init_params(&[4, 6, 3], 2, 1.0).unwrap();
        let c = cfg(1, data.len());
        let local = local_train(&init, &shard, &c, 0).unwrap();
        let (_, g) = loss_and_grad(&init, &data).unwrap();
        assert_eq!(local, sgd_step(&init, &g, c.eta(0)).unwrap());
    }

    #[test]
    fn local_train_is_pure_and_deterministic() {
        let data = gen_synthetic(3, 4, 10, 2.0, 1).unwrap();
        let a = ClientShard::from_source(0, &data, (0..data.len()).collect()).unwrap();
        let init = init_params(&[4, 6, 3], 2, 1.0).unwrap();
        let snapshot = init.clone();
        let c = cfg(2, 7);
        let x = local_train(&init, &a, &c, 1).unwrap();
        assert_eq!(x, local_train(&init, &a, &c, 1).unwrap());
        assert_eq!(init, snapshot);
        assert!(local_train(&init, &a, &cfg(2, 31), 0).is_err());
    }

    #[test]
    fn zero_gradient_data_is_a_fixed_point() {
        // Linear model with zero features and balanced labels sits at its optimum.
        let data = LabeledDataset::new(vec![0.0; 4], vec![0, 1, 0, 1], 1, 2).unwrap();
        let shard = ClientShard::from_source(0, &data, (0..4).collect()).unwrap();
        let init = ModelParams::zeros(&[1, 2]).unwrap();
        assert_eq!(local_train(&init, &shard, &cfg(1, 2), 0).unwrap(), init);
    }

    #[test]
    fn zero_rounds_records_only_initial_model() {
        let data = gen_synthetic(2, 2, 10, 3.0, 1).unwrap();
        let shards = partition(&data, &PartitionSpec { kind: PartitionKind::Iid, clients: 2, seed: 0 }).unwrap();
        let init = init_params(&[2, 2], 0, 1.0).unwrap();
        let mut c = cfg(2, 5);
        c.rounds = 0;
        let recs = run_fedavg(&shards, &data, &init, &c).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].round, -1);
    }

    #[test]
    fn single_client_matches_centralized_bitwise() {
        let data = gen_synthetic(3, 4, 20, 2.0, 3).unwrap();
        let shard = ClientShard::from_source(0, &data, (0..data.len()).collect()).unwrap();
        let init = init_params(&[4, 8, 3], 4, 1.0).unwrap();
        let c = cfg(1, 8);
        let fed = run_fedavg(&[shard], &data, &init, &c).unwrap();
        let cen = run_centralized(&data, &data, &init, &c).unwrap();
        assert_eq!(fed.len(), cen.len());
        for (a, b) in fed.iter().zip(&cen) {
            assert_eq!(a.global_params, b.global_params);
            assert_eq!(a.test_accuracy, b.test_accuracy);
        }
    }

    #[test]
    fn centralized_rejects_oversized_batch() {
        let data = gen_synthetic(2, 2, 5, 3.0, 1).unwrap();
        let init = init_params(&[2, 2], 0, 1.0).unwrap();
        assert!(matches!(
            run_centralized(&data, &data, &init, &cfg(3, 4)),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn client_count_must_match_shards() {
        let data = gen_synthetic(2, 2, 10, 3.0, 1).unwrap();
        let shards = partition(&data, &PartitionSpec { kind: PartitionKind::Iid, clients: 2, seed: 0 }).unwrap();
        let init = init_params(&[2, 2], 0, 1.0).unwrap();
        assert!(run_fedavg(&shards, &data, &init, &cfg(3, 2)).is_err());
    }

    #[test]
    fn deterministic_pair_with_matching_priors_never_diverges() {
        let data = gen_synthetic(4, 3, 12, 2.0, 2).unwrap();
        let spec = PartitionSpec {
            kind: PartitionKind::TargetEmd { emd: 0.0 },
            clients: 4,
            seed: 1,
        };
        let shards = partition(&data, &spec).unwrap();
        let init = init_params(&[3, 5, 4], 1, 1.0).unwrap();
        let run = run_deterministic_pair(&shards, &init, 0.5, 3, 2).unwrap();
        assert_eq!(run.central.len(), 7);
        assert_eq!(run.synced.len(), 3);
        for m in 0..=2 {
            assert!(run.synced[m].distance(&run.central[3 * m]).unwrap() < 1e-12);
        }
    }
}
