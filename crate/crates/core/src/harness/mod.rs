//! Benchmarks, experiment orchestration, baselines and run reports.

mod benchmark;
mod report;
mod run;

pub use benchmark::{
    gen_synthetic_benchmark, ingest_benchmark, load_benchmark, synthesize, synthetic_class_name, validate_partition,
    Benchmark, BenchmarkSource, BenchmarkSpec, BENCHMARK_FILE, TEST_FILE, TRAIN_FILE,
};
pub use report::{
    deterministic_hash, emit_report, matrix_csv, BenchmarkSummary, MatrixRow, RunReport, WallTimes, REPORT_VERSION,
};
pub use run::{build_text_encoder, run_baseline, run_experiment, Baseline, LabelSet, Method, RunConfig};
