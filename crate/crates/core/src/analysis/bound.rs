//! Numerical check of the weight-divergence bound for full-gradient
//! FedAvg versus centralized gradient descent.
//!
//! For client `k` with label prior `p^(k)`, sample weight `n_k / Σn`, and
//! amplification `a_k = 1 + η Σ_i p^(k)_i λ_i`, the divergence after the
//! `m`-th synchronization satisfies
//!
//! ```text
//! ‖w^(f)_mT − w^(c)_mT‖ ≤ Σ_k (n_k/Σn) [ a_k^T ‖w^(f)_(m−1)T − w^(c)_(m−1)T‖
//!                          + η · EMD_k · Σ_{j=0}^{T−1} a_k^j g_max(w^(c)_{mT−1−j}) ]
//! ```
//!
//! where `λ_i` is a Lipschitz constant of the class-`i` expected gradient
//! and `g_max(w)` is the largest class-conditional gradient norm at `w`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{emd, ClassDistribution, ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::federation::{run_deterministic_pair, DeterministicRun};
use crate::model::{class_conditional_grads, ModelParams};
use crate::seed;

/// Slack below which a synchronization counts as a violation.
pub const SLACK_TOLERANCE: f64 = -1e-9;

/// `max_i ‖∇ E_{x|y=i} loss(x, w)‖` over the classes of `data`.
pub fn g_max(params: &ModelParams, data: &LabeledDataset) -> Result<f64> {
    Ok(class_conditional_grads(params, data)?
        .iter()
        .map(|g| g.norm())
        .fold(0.0, f64::max))
}

fn default_safety() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    /// Number of sampled weight pairs.
    pub pairs: usize,
    /// Perturbation norms are drawn uniformly from `(0, radius]`.
    pub radius: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_safety")]
    pub safety_factor: f64,
}

impl ProbeSpec {
    fn validate(&self) -> Result<()> {
        if self.pairs == 0 {
            return Err(Error::config("pairs", "need at least one probe pair"));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::config("radius", "must be positive"));
        }
        if !(self.safety_factor.is_finite() && self.safety_factor > 0.0) {
            return Err(Error::config("safety_factor", "must be positive"));
        }
        Ok(())
    }
}

fn perturb(anchor: &ModelParams, radius: f64, rng: &mut impl Rng) -> Result<ModelParams> {
    let dir: Vec<f64> = (0..anchor.num_params()).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * (1.0 - rng.random::<f64>());
    let mut out = anchor.clone();
    out.add_scaled(&anchor.unflatten(&dir)?, r / norm)?;
    Ok(out)
}

/// Safety-factored empirical Lipschitz constants of every class-conditional
/// gradient, probed with weight pairs perturbed around `anchors`.
pub fn estimate_lipschitz_all(anchors: &[ModelParams], data: &LabeledDataset, probe: &ProbeSpec) -> Result<Vec<f64>> {
    probe.validate()?;
    let first = anchors
        .first()
        .ok_or_else(|| Error::config("anchors", "no trajectory points to probe around"))?;
    let mut rng = seed::rng(probe.seed);
    let mut best = vec![0.0f64; first.num_classes()];
    for _ in 0..probe.pairs {
        let anchor = &anchors[rng.random_range(0..anchors.len())];
        let w = perturb(anchor, probe.radius, &mut rng)?;
        let w2 = perturb(anchor, probe.radius, &mut rng)?;
        let dist = w.distance(&w2)?;
        if dist == 0.0 {
            continue;
        }
        let g = class_conditional_grads(&w, data)?;
        let g2 = class_conditional_grads(&w2, data)?;
        for (b, (gi, gi2)) in best.iter_mut().zip(g.iter().zip(&g2)) {
            let mut d = gi.clone();
            d.add_scaled(gi2, -1.0)?;
            *b = b.max(d.norm() / dist);
        }
    }
    Ok(best.into_iter().map(|l| probe.safety_factor * l).collect())
}

/// Estimate for a single class.
pub fn estimate_lipschitz(
    anchors: &[ModelParams],
    data: &LabeledDataset,
    class: usize,
    probe: &ProbeSpec,
) -> Result<f64> {
    if !data.labels().contains(&class) {
        return Err(Error::EmptyClass { class });
    }
    estimate_lipschitz_all(anchors, data, probe)?
        .get(class)
        .copied()
        .ok_or(Error::EmptyClass { class })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub eta: f64,
    pub sync_interval: usize,
    pub lambda: Vec<f64>,
    pub client_dists: Vec<ClassDistribution>,
    pub client_n: Vec<usize>,
    pub population: ClassDistribution,
    /// `g_max(w^(c)_t)` for `t = 0, 1, ...` along the centralized run.
    pub gmax_trace: Vec<f64>,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        if self.client_dists.len() != self.client_n.len() || self.client_dists.is_empty() {
            return Err(Error::BoundInput("client distributions and counts differ in length".into()));
        }
        if self.client_n.contains(&0) {
            return Err(Error::BoundInput("client with zero samples".into()));
        }
        if self.lambda.len() != self.population.num_classes() {
            return Err(Error::BoundInput(format!(
                "{} Lipschitz constants for {} classes",
                self.lambda.len(),
                self.population.num_classes()
            )));
        }
        if self.lambda.iter().chain(&self.gmax_trace).any(|v| v.is_nan() || *v < 0.0) || self.eta.is_nan() || self.eta < 0.0 {
            return Err(Error::BoundInput("λ, g_max and η must be non-negative".into()));
        }
        if self.sync_interval == 0 {
            return Err(Error::BoundInput("synchronization interval must be positive".into()));
        }
        Ok(())
    }

    /// `a_k = 1 + η Σ_i p^(k)_i λ_i` per client.
    pub fn amplification(&self) -> Vec<f64> {
        self.client_dists
            .iter()
            .map(|d| 1.0 + self.eta * d.probs().iter().zip(&self.lambda).map(|(p, l)| p * l).sum::<f64>())
            .collect()
    }
}

/// Right-hand side of the bound for synchronization `m ≥ 1`, given the
/// divergence after synchronization `m − 1`.
pub fn bound_rhs(prev_divergence: f64, inputs: &BoundInputs, m: usize) -> Result<f64> {
    inputs.validate()?;
    if prev_divergence.is_nan() || prev_divergence < 0.0 {
        return Err(Error::BoundInput("previous divergence must be non-negative".into()));
    }
    let t = inputs.sync_interval;
    if m == 0 {
        return Err(Error::BoundInput("synchronizations are numbered from 1".into()));
    }
    if inputs.gmax_trace.len() < m * t {
        return Err(Error::BoundInput(format!(
            "g_max trace has {} entries, round {m} needs {}",
            inputs.gmax_trace.len(),
            m * t
        )));
    }
    let total: usize = inputs.client_n.iter().sum();
    let mut rhs = 0.0;
    for ((dist, &n), a) in inputs.client_dists.iter().zip(&inputs.client_n).zip(inputs.amplification()) {
        let weight = n as f64 / total as f64;
        let emd_k = emd(dist, &inputs.population)?;
        let mut geometric = 0.0;
        let mut a_pow = 1.0;
        for j in 0..t {
            geometric += a_pow * inputs.gmax_trace[m * t - 1 - j];
            a_pow *= a;
        }
        // a_pow == a^T here.
        rhs += weight * (a_pow * prev_divergence + inputs.eta * emd_k * geometric);
    }
    Ok(rhs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub m: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    Estimated,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub rows: Vec<BoundRow>,
    pub lambda: Vec<f64>,
    pub lambda_source: LambdaSource,
    /// Whether λ had to be re-estimated with a larger probe.
    pub reestimated: bool,
    pub gmax_trace: Vec<f64>,
    pub passed: bool,
}

impl BoundCheckReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("m,lhs,rhs,slack\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.m, r.lhs, r.rhs, r.slack));
        }
        s
    }
}

fn check_rows(run: &DeterministicRun, inputs: &BoundInputs, rounds: usize) -> Result<Vec<BoundRow>> {
    let t = run.sync_interval;
    let mut prev = run.synced[0].distance(&run.central[0])?;
    let mut rows = Vec::with_capacity(rounds);
    for m in 1..=rounds {
        let lhs = run.synced[m].distance(&run.central[m * t])?;
        let rhs = bound_rhs(prev, inputs, m)?;
        rows.push(BoundRow {
            m,
            lhs,
            rhs,
            slack: rhs - lhs,
        });
        prev = lhs;
    }
    Ok(rows)
}

/// Runs the full-gradient pair and checks the bound at every
/// synchronization, chaining each round from the measured divergence of the
/// previous one. With estimated λ, a failing check is retried once with a
/// probe of twice as many pairs before being reported.
pub fn verify_bound(
    shards: &[ClientShard],
    init: &ModelParams,
    eta: f64,
    sync_interval: usize,
    rounds: usize,
    probe: &ProbeSpec,
    lambda_override: Option<&[f64]>,
) -> Result<BoundCheckReport> {
    let run = run_deterministic_pair(shards, init, eta, sync_interval, rounds)?;
    let steps = rounds * sync_interval;
    let gmax_trace = run.central[..steps]
        .iter()
        .map(|w| g_max(w, &run.pooled))
        .collect::<Result<Vec<_>>>()?;

    let (lambda, source) = match lambda_override {
        Some(l) => (l.to_vec(), LambdaSource::Override),
        None => (
            estimate_lipschitz_all(&run.central, &run.pooled, probe)?,
            LambdaSource::Estimated,
        ),
    };
    let mut inputs = BoundInputs {
        eta,
        sync_interval,
        lambda,
        client_dists: run.client_dists.clone(),
        client_n: run.client_n.clone(),
        population: run.population.clone(),
        gmax_trace,
    };
    let mut rows = check_rows(&run, &inputs, rounds)?;
    let failed = |rows: &[BoundRow]| rows.iter().any(|r| r.slack < SLACK_TOLERANCE);

    let mut reestimated = false;
    if source == LambdaSource::Estimated && failed(&rows) {
        let wider = ProbeSpec {
            pairs: probe.pairs * 2,
            seed: seed::derive_seed(probe.seed, "reestimate"),
            ..probe.clone()
        };
        let again = estimate_lipschitz_all(&run.central, &run.pooled, &wider)?;
        for (l, l2) in inputs.lambda.iter_mut().zip(again) {
            *l = l.max(l2);
        }
        rows = check_rows(&run, &inputs, rounds)?;
        reestimated = true;
    }
    let passed = !failed(&rows);
    Ok(BoundCheckReport {
        rows,
        lambda: inputs.lambda,
        lambda_source: source,
        reestimated,
        gmax_trace: inputs.gmax_trace,
        passed,
    })
}
