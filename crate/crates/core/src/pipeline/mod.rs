//! Closed loop over a scenario script: GRF estimation, continual prediction
//! and min-energy precoding every slot. Plus complexity benchmarks and
//! figure-data export.

mod bench;
mod config;
mod export;
mod run;
mod tasks;

pub use bench::{bench_complexity, fit_slope, write_bench_csv, BenchConfig, BenchKind, BenchReport, BenchRow};
pub use config::{DefaultScript, GrfStage, PipelineConfig, PrecoderStage, PredictorStage};
pub use export::{export_curves, ExportSummary, ESTIMATION_HEADER, NMSE_HEADER, POWER_HEADER};
pub use run::{
    run_pipeline, write_records, write_timings, PipelineRun, SlotRecord, SlotStatus, StageTimings, METRICS_HEADER,
};
pub use tasks::{
    run_continual_modes, run_reconstruction, ContinualTask, ReconstructionConfig, ReconstructionData,
    ReconstructionReport, SweepTask,
};
