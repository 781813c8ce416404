//! Losses and evaluation metrics.

pub mod metrics;
pub mod staged;

pub use metrics::{
    aggregate, best_perm_si_snr, eval_metrics, pit_assign, pit_assign_matrix, permutations,
    sdr_plain, si_snr, ItemMetrics, MetricsReport, SI_SNR_EPS,
};
pub use staged::{si_snr_node, stage_weights, total_loss, StageLossReport, StageWeights};
