//! Configuration, synthetic data, dataset ingestion, checkpoints,
//! orchestration and reports.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod gradcheck;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Manifest};
pub use config::{FeatureSource, RunConfig, ScanpathSource};
pub use dataset::{ingest, DatasetIndex, DatasetPaths, ImageEntry, Split};
pub use pipeline::{run_pipeline, PipelineSummary, Run};
pub use synth::{gen_synthetic, SyntheticSpec};
