//! File formats: count tables, run configuration and result reports.

mod config;
mod report;
mod tables;

pub use config::{Mode, RunConfig, SimulationConfig, SimulationMethod};
pub use report::{
    chart_segments, check_ratio_sum, emit_report, render_log, render_ratio_chart, ResultRecord, CHART_FILE, LOG_FILE,
    RESULT_FILE, RESULT_SCHEMA,
};
pub use tables::{
    export_tables, field_tables, ingest_tables, read_table_file, TableCell, TableFile, TableMetadata,
    FIELD_TABLES_JSON, TABLE_SCHEMA,
};
