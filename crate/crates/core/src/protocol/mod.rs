//! Session streams, the incremental session loop and its metrics.

mod data;
mod metrics;
mod runner;
mod stream;

pub use data::{
    catalog_words, default_catalog, pattern_catalog, render, render_dataset, synthesize_dataset,
    ClassSpec, Dataset, Example, SyntheticSpec,
};
pub use metrics::{cumulative_accuracy, round2, summarize, SessionEval, SessionMetrics};
pub use runner::{evaluate_through, run_fscil, FscilConfig, FscilOutcome, DEFAULT_TEMPLATE};
pub use stream::{
    build_session_stream, build_stream_from_assignment, build_stream_from_manifest,
    validate_stream, BenchmarkSplit, Session, SessionStream, SplitManifest, Violation,
};
