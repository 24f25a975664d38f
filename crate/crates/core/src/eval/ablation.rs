use std::fmt;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::finetune::{finetune_alignment, finetune_completion, DownstreamHyper, FinetuneReport, Scope, Task};
use super::metrics::{reports_tsv, MetricReport};
use super::tasks::{eval_alignment, eval_completion};
use crate::adapters::{
    adapter_param_count, adapter_prefix, fusion_param_count, make_large_adapter, AdaptedEncoder, AdapterKind, AdapterSpec, Mode,
};
use crate::data::{AlignmentPair, CompletionItem, LanguageSplit, Mlkg, SynthData};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::numeric::ParamSet;
use crate::objectives::{train_adapter, AdapterTrainReport, KnowledgeSource, TrainHyper};

/// Knowledge graph, language split and the downstream train/test sets.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub kg: Mlkg,
    pub split: LanguageSplit,
    pub completion_train: Vec<CompletionItem>,
    pub completion_test: Vec<CompletionItem>,
    pub alignment_train: Vec<AlignmentPair>,
    pub alignment_test: Vec<AlignmentPair>,
}

impl TaskData {
    pub fn from_synth(d: &SynthData) -> Self {
        TaskData {
            kg: d.kg.clone(),
            split: d.split.clone(),
            completion_train: d.completion_train.clone(),
            completion_test: d.completion_test.clone(),
            alignment_train: d.alignment_train.clone(),
            alignment_test: d.alignment_test.clone(),
        }
    }
}

pub fn finetune_task(
    model: &mut AdaptedEncoder,
    vocab: &Vocab,
    data: &TaskData,
    task: Task,
    hyper: &DownstreamHyper,
    scope: Scope,
) -> Result<FinetuneReport> {
    match task {
        Task::Completion => finetune_completion(model, vocab, &data.kg, &data.completion_train, &data.split, hyper, scope),
        Task::Alignment => finetune_alignment(model, vocab, &data.kg, &data.alignment_train, &data.split, hyper, scope),
    }
}

pub fn eval_task(model: &AdaptedEncoder, vocab: &Vocab, data: &TaskData, task: Task, k: usize, variant: &str) -> Result<MetricReport> {
    match task {
        Task::Completion => eval_completion(model, vocab, &data.kg, &data.completion_test, &data.split, k, variant),
        Task::Alignment => eval_alignment(model, vocab, &data.kg, &data.alignment_test, &data.split, k, variant),
    }
}

/// Fusion-only training (fused models only) followed by full finetuning;
/// either stage is skipped when its hyper-parameters are absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamPlan {
    pub fusion: Option<DownstreamHyper>,
    pub finetune: Option<DownstreamHyper>,
}

pub fn run_downstream(
    model: &mut AdaptedEncoder,
    vocab: &Vocab,
    data: &TaskData,
    task: Task,
    plan: &DownstreamPlan,
) -> Result<Vec<FinetuneReport>> {
    let mut out = Vec::new();
    if let (Mode::Fusion, Some(h)) = (model.mode(), &plan.fusion) {
        out.push(finetune_task(model, vocab, data, task, h, Scope::FusionOnly)?);
    }
    if let Some(h) = &plan.finetune {
        out.push(finetune_task(model, vocab, data, task, h, Scope::All)?);
    }
    Ok(out)
}

/// A model configuration compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Base,
    Single(AdapterKind),
    Fusion,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Base,
        Variant::Single(AdapterKind::EP),
        Variant::Single(AdapterKind::TP),
        Variant::Single(AdapterKind::ES),
        Variant::Single(AdapterKind::TS),
        Variant::Single(AdapterKind::LARGE),
        Variant::Fusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Single(k) => k.name(),
            Variant::Fusion => "FUSION",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Adapter tensors trained against a fixed backbone. The training report
/// is absent for adapters read back from a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedAdapter {
    pub spec: AdapterSpec,
    pub params: ParamSet,
    pub report: Option<AdapterTrainReport>,
}

impl TrainedAdapter {
    /// Extracts the adapter of `kind` from a model that hosts it.
    pub fn from_model(model: &AdaptedEncoder, kind: AdapterKind) -> Result<Self> {
        let spec = *model
            .adapters()
            .iter()
            .find(|a| a.kind == kind)
            .ok_or_else(|| Error::MissingStage { required: format!("train-adapter --kind {kind}"), path: String::new() })?;
        let prefix = adapter_prefix(kind);
        let mut params = model.params().filtered(|n| n.starts_with(&prefix));
        params.set_trainable_by(|_| false);
        Ok(TrainedAdapter { spec, params, report: None })
    }
}

/// Total size of four adapters of bottleneck `b` plus fusion.
pub fn fusion_budget(dim: usize, layers: usize, bottleneck: usize) -> usize {
    AdapterKind::KNOWLEDGE.len() * adapter_param_count(dim, layers, bottleneck) + fusion_param_count(dim, layers)
}

/// Inserts a fresh adapter of `kind` into a copy of `backbone` and trains it.
pub fn train_adapter_on(
    backbone: &AdaptedEncoder,
    kind: AdapterKind,
    bottleneck: usize,
    source: &KnowledgeSource,
    vocab: &Vocab,
    hyper: &TrainHyper,
) -> Result<TrainedAdapter> {
    let (d, l) = (backbone.config().dim, backbone.config().layers);
    let mut m = backbone.clone();
    if kind == AdapterKind::LARGE {
        let (spec, p) = make_large_adapter(fusion_budget(d, l, bottleneck), d, l, hyper.seed)?;
        m.add_adapter_params(spec, p)?;
    } else {
        m.add_adapter(kind, bottleneck, hyper.seed)?;
    }
    let report = train_adapter(&mut m, kind, source, vocab, hyper)?;
    info!("trained {kind}: probe cosine {:.3} -> {:.3}", report.probe_before, report.probe_after);
    let trained = TrainedAdapter::from_model(&m, kind)?;
    Ok(TrainedAdapter { report: Some(report), ..trained })
}

/// Builds the model for `variant` from trained adapters. A fused model
/// combines every knowledge adapter given.
pub fn assemble(backbone: &AdaptedEncoder, adapters: &[TrainedAdapter], variant: Variant, fusion_seed: u64) -> Result<AdaptedEncoder> {
    let mut m = backbone.clone();
    let find = |k: AdapterKind| {
        adapters.iter().find(|a| a.spec.kind == k).ok_or_else(|| Error::MissingStage { required: format!("train-adapter --kind {k}"), path: String::new() })
    };
    match variant {
        Variant::Base => {}
        Variant::Single(k) => {
            let a = find(k)?;
            m.add_adapter_params(a.spec, a.params.clone())?;
            m.set_mode(Mode::Single(k))?;
        }
        Variant::Fusion => {
            let knowledge: Vec<&TrainedAdapter> = adapters.iter().filter(|a| a.spec.kind != AdapterKind::LARGE).collect();
            if knowledge.is_empty() {
                return Err(Error::MissingStage { required: "train-adapter".into(), path: "fusion needs at least one adapter".into() });
            }
            for a in knowledge {
                m.add_adapter_params(a.spec, a.params.clone())?;
            }
            m.add_fusion(fusion_seed)?;
            m.set_mode(Mode::Fusion)?;
        }
    }
    m.train_only(|_| false);
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub completion: MetricReport,
    pub alignment: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn get(&self, variant: Variant, task: Task) -> Option<&MetricReport> {
        let row = self.rows.iter().find(|r| r.variant == variant.name())?;
        Some(match task {
            Task::Completion => &row.completion,
            Task::Alignment => &row.alignment,
        })
    }

    /// Side-by-side tables, completion first.
    pub fn to_tsv(&self) -> Result<String> {
        let comp: Vec<MetricReport> = self.rows.iter().map(|r| r.completion.clone()).collect();
        let align: Vec<MetricReport> = self.rows.iter().map(|r| r.alignment.clone()).collect();
        Ok(format!("{}\n{}", reports_tsv(&comp)?, reports_tsv(&align)?))
    }
}

/// Everything the ablation needs besides the variants themselves.
pub struct AblationSetup<'a> {
    pub data: &'a TaskData,
    pub source: &'a KnowledgeSource,
    pub vocab: &'a Vocab,
    pub backbone: &'a AdaptedEncoder,
    pub bottleneck: usize,
    pub adapter: TrainHyper,
    pub completion: DownstreamPlan,
    pub alignment: DownstreamPlan,
    pub fusion_seed: u64,
    pub k: usize,
}

impl AblationSetup<'_> {
    pub fn plan(&self, task: Task) -> &DownstreamPlan {
        match task {
            Task::Completion => &self.completion,
            Task::Alignment => &self.alignment,
        }
    }
}

/// Adapter kinds the ablation compares, in table order.
pub const ABLATION_KINDS: [AdapterKind; 5] =
    [AdapterKind::EP, AdapterKind::TP, AdapterKind::ES, AdapterKind::TS, AdapterKind::LARGE];

/// Trains every adapter kind once, then finetunes and evaluates each
/// variant on both tasks from the same starting point.
pub fn run_ablation(setup: &AblationSetup<'_>) -> Result<(AblationReport, Vec<TrainedAdapter>)> {
    let adapters = ABLATION_KINDS
        .into_iter()
        .map(|k| train_adapter_on(setup.backbone, k, setup.bottleneck, setup.source, setup.vocab, &setup.adapter))
        .collect::<Result<Vec<_>>>()?;
    Ok((ablate(setup, &adapters)?, adapters))
}

/// Finetunes and evaluates every variant with already trained adapters.
pub fn ablate(setup: &AblationSetup<'_>, adapters: &[TrainedAdapter]) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let mut reports = Vec::new();
        for task in [Task::Completion, Task::Alignment] {
            let mut m = assemble(setup.backbone, adapters, v, setup.fusion_seed)?;
            run_downstream(&mut m, setup.vocab, setup.data, task, setup.plan(task))?;
            let r = eval_task(&m, setup.vocab, setup.data, task, setup.k, v.name())?;
            let (h1, _, mrr) = r.mean();
            info!("{v} {}: hit@1 {:.1} mrr {:.1}", task.name(), h1 * 100.0, mrr * 100.0);
            reports.push(r);
        }
        let alignment = reports.pop().expect("two tasks");
        let completion = reports.pop().expect("two tasks");
        rows.push(AblationRow { variant: v.name().to_string(), completion, alignment });
    }
    Ok(AblationReport { rows })
}
