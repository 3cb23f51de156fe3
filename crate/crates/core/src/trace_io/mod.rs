//! Trace container, configuration files, and report emission.

pub mod config;
pub mod container;
pub mod report;

pub use config::{
    parse_flag, parse_heavy_hitters, BudgetSpec, ExperimentConfig, KvConfig, LiveSource,
    PolicySpec, TraceSource,
};
pub use container::{decode_trace, encode_trace, read_trace, write_trace, FORMAT_VERSION, MAGIC};
pub use report::{
    fmt_sig6, render_report_csv, render_summary_csv, write_mask_dump, write_report_csv,
    write_summary_csv,
};
