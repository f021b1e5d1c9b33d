//! Weight divergence, the divergence bound, and EMD sweeps.

mod bound;
mod divergence;
mod sweep;

pub use bound::{
    bound_rhs, estimate_lipschitz, estimate_lipschitz_all, g_max, verify_bound, BoundCheckReport, BoundInputs,
    BoundRow, LambdaSource, ProbeSpec, SLACK_TOLERANCE,
};
pub use divergence::{weight_divergence, DivergenceReport};
pub use sweep::{
    accuracy_vs_emd_sweep, divergence_vs_emd_sweep, inversions, mean_std, spearman, sweep_partition_seed,
    AccuracyRow, AccuracyTable, SweepRow, SweepTable, TOTAL_LAYER,
};
