//! Effectiveness metrics, latency measurement, parameter sweeps and the
//! compute-budget comparison.

mod budget;
mod latency;
mod metrics;
mod stats;
mod sweep;

pub use budget::{budget_report, BudgetEntry, BudgetReport, BudgetRow};
pub use latency::{measure_latency, LatencyProtocol, LatencyReport, TopicTiming};
pub use metrics::{evaluate_run, ndcg_at_10, rr_at_10, EvalOptions, EvalReport, QueryMetrics, CUTOFF};
pub use stats::{paired_t_test, PairedTTest, ALPHA};
pub use sweep::{
    budget_entries, plot_data, read_budget_csv, sweep, sweep_csv, write_budget_csv,
    write_plot_data, write_sweep_csv, SweepConfig, SweepFailure, SweepOutcome, SweepRow,
    BUDGET_CSV_HEADER, CSV_HEADER,
};
