//! Retrieval metrics, task finetuning, evaluation and the adapter ablation.

mod ablation;
mod finetune;
mod metrics;
mod tasks;

pub use ablation::{
    ablate, assemble, eval_task, finetune_task, fusion_budget, run_ablation, run_downstream, train_adapter_on, AblationReport,
    AblationRow, AblationSetup, DownstreamPlan, ABLATION_KINDS, TaskData, TrainedAdapter, Variant,
};
pub use finetune::{
    alignment_pair, completion_pair, completion_query, finetune_alignment, finetune_completion, finetune_pairs,
    DownstreamHyper, FinetuneReport, Scope, Task,
};
pub use metrics::{
    embed_all, embed_labels, gold_rank, hits_at_k, mrr, rank, report_from_ranks, reports_tsv, CandidateIndex,
    CategoryMetrics, LangMetrics, MetricReport, RunMeta, EMBED_CHUNK, TSV_HEADER,
};
pub use tasks::{eval_alignment, eval_completion};
