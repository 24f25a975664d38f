//! Stage orchestration, configuration profiles, checkpoints and reports.

mod checkpoint;
mod config;
mod dataset;
mod report;
mod runlog;
mod stages;

pub use checkpoint::{
    encode_checkpoint, load_checkpoint, load_manifest, save_checkpoint, Manifest, Provenance, TensorEntry, FORMAT_VERSION,
    MANIFEST_FILE, TENSORS_FILE,
};
pub use config::{AdapterConfig, DataConfig, EncoderShape, EvalConfig, PipelineConfig, PretrainConfig, Profile, StageConfig};
pub use dataset::{save_knowledge, Dataset};
pub use report::{emit_report, load_reports, ReportFormat};
pub use runlog::{LogRecord, RunLog};
pub use stages::{
    pair_pool, run_stage, CorpusAudit, Layout, Runner, Stage, StageOutcome, ABLATION_JSON, ABLATION_TSV, AUDIT_FILE,
    CONFIG_FILE, LOSS_FILE, REPORT_JSON, REPORT_TSV, RUN_LOG_FILE, VOCAB_FILE,
};
