//! Static value ranges, influence counts and sensitivity bounds, plus the
//! dynamic oracles used to check them.

pub mod analysis;

pub use analysis::{
    compute_influence_bounds, compute_sensitivity_bounds, compute_value_ranges, AnalysisOptions, Analyzer, ExprInfo,
    Segment, SensitivityReport, StreamReport,
};
pub mod oracle;

pub use oracle::{check_adjacent_traces, per_event_sensitivity, perturb_trace, record_timestamp, OracleError, PerEventOracle};
