//! Divergence and accuracy as functions of client EMD.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::weight_divergence;
use crate::data::{partition, ClientShard, LabeledDataset, PartitionKind, PartitionSpec};
use crate::error::{Error, Result};
use crate::federation::{centralized_round, fedavg_round, run_fedavg, FedConfig};
use crate::model::ModelParams;
use crate::seed;

pub const TOTAL_LAYER: &str = "total";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub emd: f64,
    /// Layer name, or [`TOTAL_LAYER`] for the whole model.
    pub layer: String,
    pub mean: f64,
    pub std: f64,
    /// One value per repetition.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// `emd,layer,mean,std`
    pub fn to_summary_csv(&self) -> String {
        let mut s = String::from("emd,layer,mean,std\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.emd, r.layer, r.mean, r.std));
        }
        s
    }

    /// `emd,rep,layer,value`
    pub fn to_long_csv(&self) -> String {
        let mut s = String::from("emd,rep,layer,value\n");
        for r in &self.rows {
            for (rep, v) in r.values.iter().enumerate() {
                s.push_str(&format!("{},{},{},{}\n", r.emd, rep, r.layer, v));
            }
        }
        s
    }

    pub fn total_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.layer == TOTAL_LAYER)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Seed of the partition for grid point `point`, repetition `rep`.
pub fn sweep_partition_seed(seed: u64, point: usize, rep: usize) -> u64 {
    seed::derive_indexed(seed::derive_indexed(seed, "emd_point", point as u64), "rep", rep as u64)
}

fn sweep_shards(data: &LabeledDataset, emd: f64, clients: usize, seed: u64) -> Result<Vec<ClientShard>> {
    partition(
        data,
        &PartitionSpec {
            kind: PartitionKind::TargetEmd { emd },
            clients,
            seed,
        },
    )
}

fn pooled(shards: &[ClientShard]) -> Result<LabeledDataset> {
    let parts: Vec<&LabeledDataset> = shards.iter().map(|s| &s.data).collect();
    LabeledDataset::concat(&parts)
}

fn check_grid(grid: &[f64], reps: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config("grid", "empty EMD grid"));
    }
    if reps == 0 {
        return Err(Error::config("reps", "need at least one repetition"));
    }
    Ok(())
}

/// Weight divergence after one round of FedAvg versus one matched round of
/// centralized SGD from the same initialization, for every grid point and
/// `reps` seeded client distributions.
pub fn divergence_vs_emd_sweep(
    data: &LabeledDataset,
    grid: &[f64],
    reps: usize,
    init: &ModelParams,
    cfg: &FedConfig,
    seed: u64,
) -> Result<SweepTable> {
    check_grid(grid, reps)?;
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..reps).map(move |r| (g, r))).collect();
    let reports = jobs
        .par_iter()
        .map(|&(g, rep)| {
            let shards = sweep_shards(data, grid[g], cfg.clients, sweep_partition_seed(seed, g, rep))?;
            let fed = fedavg_round(init, &shards, cfg, 0)?;
            let central = centralized_round(init, &pooled(&shards)?, cfg, 0)?;
            weight_divergence(&fed, &central)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut names = vec![TOTAL_LAYER.to_owned()];
    names.extend(init.layer_names());
    let mut rows = Vec::with_capacity(grid.len() * names.len());
    for (g, &emd) in grid.iter().enumerate() {
        let block = &reports[g * reps..(g + 1) * reps];
        for (li, name) in names.iter().enumerate() {
            let values: Vec<f64> = block
                .iter()
                .map(|r| if li == 0 { r.total } else { r.per_layer[li - 1].1 })
                .collect();
            let (mean, std) = mean_std(&values);
            rows.push(SweepRow {
                emd,
                layer: name.clone(),
                mean,
                std,
                values,
            });
        }
    }
    Ok(SweepTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub emd: f64,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyTable {
    /// `emd,mean,std`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("emd,mean,std\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.emd, r.mean, r.std));
        }
        s
    }

    pub fn means(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean).collect()
    }
}

/// Final FedAvg test accuracy after `cfg.rounds` rounds, over the same
/// partitions as [`divergence_vs_emd_sweep`] for equal `seed`.
pub fn accuracy_vs_emd_sweep(
    data: &LabeledDataset,
    test: &LabeledDataset,
    grid: &[f64],
    reps: usize,
    init: &ModelParams,
    cfg: &FedConfig,
    seed: u64,
) -> Result<AccuracyTable> {
    check_grid(grid, reps)?;
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..reps).map(move |r| (g, r))).collect();
    let finals = jobs
        .par_iter()
        .map(|&(g, rep)| {
            let shards = sweep_shards(data, grid[g], cfg.clients, sweep_partition_seed(seed, g, rep))?;
            let records = run_fedavg(&shards, test, init, cfg)?;
            Ok(records.last().map_or(f64::NAN, |r| r.test_accuracy))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyTable {
        rows: grid
            .iter()
            .enumerate()
            .map(|(g, &emd)| {
                let values = finals[g * reps..(g + 1) * reps].to_vec();
                let (mean, std) = mean_std(&values);
                AccuracyRow { emd, mean, std, values }
            })
            .collect(),
    })
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Tied block shares the average of ranks i+1..=j+1.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Shape(format!("spearman over {} and {} values", x.len(), y.len())));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Sizes of every increase in a sequence expected to be nonincreasing.
pub fn inversions(values: &[f64]) -> Vec<f64> {
    values
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| w[1] - w[0])
        .collect()
}
