use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::checkpoint::{encode_checkpoint, load_checkpoint, save_checkpoint, Manifest, Provenance, MANIFEST_FILE};
use super::config::PipelineConfig;
use super::dataset::{save_knowledge, Dataset};
use super::report::{emit_report, ReportFormat};
use super::runlog::RunLog;
use crate::adapters::{group_checksums, AdaptedEncoder, AdapterKind, Mode};
use crate::data::{audit_languages, gen_synthetic, label_languages, save_alignment, save_completion, AuditFinding};
use crate::encoder::{mlm_pretrain, tokenize, Vocab};
use crate::error::{Error, Result};
use crate::eval::{
    ablate, assemble, eval_task, finetune_task, train_adapter_on, AblationReport, AblationSetup, DownstreamPlan, MetricReport,
    RunMeta, Scope, Task, TrainedAdapter, Variant, ABLATION_KINDS,
};
use crate::numeric::{curve_csv, LossRecord};
use crate::objectives::{KnowledgeSource, LanguageCounts};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const AUDIT_FILE: &str = "audit.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TSV: &str = "report.tsv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_TSV: &str = "ablation.tsv";

/// One unit of work of the enhancement workflow.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenSynthetic,
    Pretrain,
    TrainAdapter(AdapterKind),
    TrainFusion(Task),
    Finetune(Task, Variant),
    Eval(Task, Variant),
    Ablate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::GenSynthetic => f.write_str("gen-synthetic"),
            Stage::Pretrain => f.write_str("pretrain"),
            Stage::TrainAdapter(k) => write!(f, "train-adapter --kind {}", k.name().to_ascii_lowercase()),
            Stage::TrainFusion(t) => write!(f, "train-fusion --task {}", t.name()),
            Stage::Finetune(t, v) => write!(f, "finetune --task {} --variant {v}", t.name()),
            Stage::Eval(t, v) => write!(f, "eval --task {} --variant {v}", t.name()),
            Stage::Ablate => f.write_str("ablate"),
            Stage::Report => f.write_str("report"),
        }
    }
}

/// Directory layout under the output root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn generated_data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn pretrain(&self) -> PathBuf {
        self.root.join("pretrain")
    }

    pub fn adapter(&self, kind: AdapterKind) -> PathBuf {
        self.root.join(format!("adapter-{kind}"))
    }

    pub fn fusion(&self, task: Task) -> PathBuf {
        self.root.join(format!("fusion-{}", task.name()))
    }

    pub fn finetune(&self, task: Task, variant: Variant) -> PathBuf {
        self.root.join(format!("finetune-{}-{variant}", task.name()))
    }

    pub fn eval(&self, task: Task, variant: Variant) -> PathBuf {
        self.root.join(format!("eval-{}-{variant}", task.name()))
    }

    pub fn ablate(&self) -> PathBuf {
        self.root.join("ablate")
    }

    pub fn run_log(&self) -> PathBuf {
        self.root.join(RUN_LOG_FILE)
    }
}

/// What a stage produced.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub stage: String,
    pub dir: PathBuf,
    pub manifest: Option<Manifest>,
    pub reports: Vec<MetricReport>,
}

/// Languages found in a training corpus, checked against the unseen
/// zero-shot languages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusAudit {
    pub stage: String,
    /// training texts drawn per language
    pub sampled: LanguageCounts,
    /// records per language in the written corpus files
    pub records: LanguageCounts,
    pub forbidden: Vec<String>,
    pub violations: usize,
}

/// Runs pipeline stages for one resolved configuration.
pub struct Runner<'a> {
    cfg: &'a PipelineConfig,
    layout: Layout,
    config_hash: String,
}

pub fn run_stage(cfg: &PipelineConfig, out: &Path, stage: Stage) -> Result<StageOutcome> {
    Runner::new(cfg, out).run(stage)
}

fn has_checkpoint(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file()
}

fn missing(stage: Stage, dir: &Path) -> Error {
    Error::MissingStage { required: stage.to_string(), path: dir.display().to_string() }
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a PipelineConfig, out: &Path) -> Self {
        Runner { cfg, layout: Layout::new(out), config_hash: cfg.hash() }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        info!("stage {stage}");
        fs::create_dir_all(&self.layout.root)?;
        match stage {
            Stage::GenSynthetic => self.gen_synthetic(),
            Stage::Pretrain => self.pretrain(),
            Stage::TrainAdapter(k) => self.train_adapter(k).map(|(o, _)| o),
            Stage::TrainFusion(t) => self.train_fusion(t),
            Stage::Finetune(t, v) => self.finetune(t, v),
            Stage::Eval(t, v) => self.eval(t, v),
            Stage::Ablate => self.ablate(),
            Stage::Report => self.report(),
        }
    }

    fn provenance(&self, stage: Stage, parent: Option<&Manifest>) -> Provenance {
        Provenance {
            stage: stage.to_string(),
            seed: self.cfg.seed,
            profile: self.cfg.profile.name().to_string(),
            config_hash: self.config_hash.clone(),
            parent: parent.map(|m| m.content_hash.clone()),
        }
    }

    fn meta(&self, checkpoint_hash: &str) -> RunMeta {
        RunMeta {
            seed: self.cfg.seed,
            profile: self.cfg.profile.name().to_string(),
            config_hash: self.config_hash.clone(),
            checkpoint_hash: checkpoint_hash.to_string(),
        }
    }

    fn start_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), self.cfg.to_toml()?)?;
        Ok(())
    }

    fn save(&self, model: &AdaptedEncoder, dir: &Path, stage: Stage, parent: Option<&Manifest>) -> Result<Manifest> {
        let m = save_checkpoint(model, self.provenance(stage, parent), dir)?;
        info!("{stage}: checkpoint {} ({})", dir.display(), &m.content_hash[..12]);
        Ok(m)
    }

    fn write_curve(&self, dir: &Path, stage: Stage, curve: &[LossRecord]) -> Result<()> {
        fs::write(dir.join(LOSS_FILE), curve_csv(curve))?;
        RunLog::new(self.layout.run_log()).append_curve(&stage.to_string(), curve)
    }

    fn data_dir(&self) -> PathBuf {
        self.cfg.data.dir.clone().unwrap_or_else(|| self.layout.generated_data())
    }

    fn data(&self) -> Result<Dataset> {
        Dataset::load(&self.data_dir())
    }

    fn backbone(&self) -> Result<(AdaptedEncoder, Manifest, Vocab)> {
        let dir = self.layout.pretrain();
        if !has_checkpoint(&dir) {
            return Err(missing(Stage::Pretrain, &dir));
        }
        let (model, manifest) = load_checkpoint(&dir)?;
        if model.mode() != Mode::None || !model.adapters().is_empty() {
            return Err(Error::Checkpoint(format!("{} does not hold a bare backbone", dir.display())));
        }
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        Ok((model, manifest, vocab))
    }

    /// Loads a trained adapter, checking it was trained on `backbone`.
    fn adapter(&self, kind: AdapterKind, backbone: &AdaptedEncoder) -> Result<TrainedAdapter> {
        let dir = self.layout.adapter(kind);
        if !has_checkpoint(&dir) {
            return Err(missing(Stage::TrainAdapter(kind), &dir));
        }
        let (model, _) = load_checkpoint(&dir)?;
        let expected = group_checksums(backbone.params());
        if group_checksums(model.params()).get("backbone") != expected.get("backbone") {
            return Err(Error::Checkpoint(format!("{} was trained on a different backbone", dir.display())));
        }
        TrainedAdapter::from_model(&model, kind)
    }

    fn audit(
        &self,
        dir: &Path,
        stage: Stage,
        sampled: &LanguageCounts,
        records: &[&str],
    ) -> Result<CorpusAudit> {
        let data_split = self.data()?.task.split;
        let forbidden = data_split.zs_un.clone();
        let mut counts = LanguageCounts::new();
        for l in records {
            *counts.entry(l.to_string()).or_default() += 1;
        }
        let findings: Vec<AuditFinding> = audit_languages(&stage.to_string(), records.iter().copied(), &forbidden);
        let sampled_bad: u64 = sampled.iter().filter(|(l, _)| forbidden.contains(l)).map(|(_, n)| n).sum();
        let audit = CorpusAudit {
            stage: stage.to_string(),
            sampled: sampled.clone(),
            records: counts,
            forbidden,
            violations: findings.len() + sampled_bad as usize,
        };
        let mut text = serde_json::to_string_pretty(&audit)?;
        text.push('\n');
        fs::write(dir.join(AUDIT_FILE), text)?;
        if audit.violations > 0 {
            return Err(Error::Data(format!(
                "{stage}: {} training records in unseen zero-shot languages {:?}",
                audit.violations, audit.forbidden
            )));
        }
        Ok(audit)
    }

    fn gen_synthetic(&self) -> Result<StageOutcome> {
        let dir = self.layout.generated_data();
        let data = Dataset::from_synth(gen_synthetic(&self.cfg.synth())?);
        self.start_dir(&dir)?;
        data.save(&dir)?;
        let stats = data.task.kg.stats();
        info!("generated {} entities, {} relations, {} triples", stats.entities, stats.relations, stats.triples);
        Ok(StageOutcome { stage: Stage::GenSynthetic.to_string(), dir, manifest: None, reports: vec![] })
    }

    fn pretrain(&self) -> Result<StageOutcome> {
        let stage = Stage::Pretrain;
        let data = self.data()?;
        let vocab = Vocab::build(data.corpus.iter().map(|(_, s)| s.as_str()), self.cfg.encoder.min_freq)?;
        let enc = self.cfg.encoder.config(vocab.len());
        let seqs = data.corpus.iter().map(|(l, s)| tokenize(s, l, &vocab, enc.max_len)).collect::<Result<Vec<_>>>()?;
        let outcome = mlm_pretrain(&seqs, &enc, &self.cfg.mlm_hyper())?;
        let mut model = AdaptedEncoder::new(enc, outcome.params)?;
        model.train_only(|_| false);
        let dir = self.layout.pretrain();
        self.start_dir(&dir)?;
        vocab.save(&dir.join(VOCAB_FILE))?;
        let manifest = self.save(&model, &dir, stage, None)?;
        self.write_curve(&dir, stage, &outcome.curve)?;
        Ok(StageOutcome { stage: stage.to_string(), dir, manifest: Some(manifest), reports: vec![] })
    }

    fn train_adapter(&self, kind: AdapterKind) -> Result<(StageOutcome, TrainedAdapter)> {
        let stage = Stage::TrainAdapter(kind);
        let (backbone, parent, vocab) = self.backbone()?;
        let source = self.data()?.knowledge()?;
        let hyper = self.cfg.adapter_hyper(pair_pool(&source, kind));
        let trained = train_adapter_on(&backbone, kind, self.cfg.adapters.bottleneck, &source, &vocab, &hyper)?;
        let model = assemble(&backbone, std::slice::from_ref(&trained), Variant::Single(kind), 0)?;
        let dir = self.layout.adapter(kind);
        self.start_dir(&dir)?;
        let manifest = self.save(&model, &dir, stage, Some(&parent))?;
        let report = trained.report.as_ref().expect("freshly trained adapter has a report");
        self.write_curve(&dir, stage, &report.curve)?;
        let corpus = dir.join("corpus");
        save_knowledge(&corpus, &source.kg, &source.c1, &source.c2)?;
        let records: Vec<&str> = label_languages(&source.kg)
            .into_iter()
            .chain(source.c1.iter().map(|r| r.lang.as_str()))
            .chain(source.c2.iter().map(|r| r.lang.as_str()))
            .collect();
        self.audit(&dir, stage, &report.languages, &records)?;
        let outcome = StageOutcome { stage: stage.to_string(), dir, manifest: Some(manifest), reports: vec![] };
        Ok((outcome, trained))
    }

    fn train_fusion(&self, task: Task) -> Result<StageOutcome> {
        let stage = Stage::TrainFusion(task);
        let (backbone, parent, vocab) = self.backbone()?;
        let adapters = self.cfg.adapters.kinds.iter().map(|k| self.adapter(*k, &backbone)).collect::<Result<Vec<_>>>()?;
        let mut model = assemble(&backbone, &adapters, Variant::Fusion, self.cfg.fusion_seed())?;
        let data = self.data()?;
        let report = finetune_task(&mut model, &vocab, &data.task, task, &self.cfg.fusion_hyper(task), Scope::FusionOnly)?;
        let dir = self.layout.fusion(task);
        self.start_dir(&dir)?;
        let manifest = self.save(&model, &dir, stage, Some(&parent))?;
        self.write_curve(&dir, stage, &report.curve)?;
        self.write_task_corpus(&dir, stage, &data, task, &report.languages)?;
        Ok(StageOutcome { stage: stage.to_string(), dir, manifest: Some(manifest), reports: vec![] })
    }

    fn write_task_corpus(&self, dir: &Path, stage: Stage, data: &Dataset, task: Task, sampled: &LanguageCounts) -> Result<()> {
        let t = &data.task;
        let records: Vec<&str> = match task {
            Task::Completion => {
                save_completion(&dir.join("train.tsv"), &t.completion_train)?;
                t.completion_train.iter().map(|i| i.lang.as_str()).collect()
            }
            Task::Alignment => {
                save_alignment(&dir.join("train.tsv"), &t.alignment_train)?;
                t.alignment_train.iter().flat_map(|p| [p.src.as_str(), p.tgt.as_str()]).collect()
            }
        };
        self.audit(dir, stage, sampled, &records)?;
        Ok(())
    }

    /// Model a variant starts finetuning from, with the checkpoint it came
    /// from when there is one.
    fn start_model(&self, task: Task, variant: Variant, backbone: &AdaptedEncoder) -> Result<(AdaptedEncoder, Option<Manifest>)> {
        match variant {
            Variant::Base => Ok((backbone.clone(), None)),
            Variant::Single(k) => {
                let a = self.adapter(k, backbone)?;
                Ok((assemble(backbone, &[a], variant, 0)?, Some(super::checkpoint::load_manifest(&self.layout.adapter(k))?)))
            }
            Variant::Fusion => {
                let dir = self.layout.fusion(task);
                if has_checkpoint(&dir) {
                    let (m, manifest) = load_checkpoint(&dir)?;
                    if m.mode() != Mode::Fusion {
                        return Err(Error::Checkpoint(format!("{} does not hold a fused model", dir.display())));
                    }
                    Ok((m, Some(manifest)))
                } else if !self.cfg.fusion.enabled {
                    let adapters =
                        self.cfg.adapters.kinds.iter().map(|k| self.adapter(*k, backbone)).collect::<Result<Vec<_>>>()?;
                    Ok((assemble(backbone, &adapters, variant, self.cfg.fusion_seed())?, None))
                } else {
                    Err(missing(Stage::TrainFusion(task), &dir))
                }
            }
        }
    }

    fn finetune(&self, task: Task, variant: Variant) -> Result<StageOutcome> {
        let stage = Stage::Finetune(task, variant);
        let (backbone, backbone_manifest, vocab) = self.backbone()?;
        let (mut model, parent) = self.start_model(task, variant, &backbone)?;
        let data = self.data()?;
        let report = finetune_task(&mut model, &vocab, &data.task, task, &self.cfg.finetune_hyper(task), Scope::All)?;
        let dir = self.layout.finetune(task, variant);
        self.start_dir(&dir)?;
        let manifest = self.save(&model, &dir, stage, Some(parent.as_ref().unwrap_or(&backbone_manifest)))?;
        self.write_curve(&dir, stage, &report.curve)?;
        self.write_task_corpus(&dir, stage, &data, task, &report.languages)?;
        Ok(StageOutcome { stage: stage.to_string(), dir, manifest: Some(manifest), reports: vec![] })
    }

    fn eval(&self, task: Task, variant: Variant) -> Result<StageOutcome> {
        let stage = Stage::Eval(task, variant);
        let (backbone, backbone_manifest, vocab) = self.backbone()?;
        let tuned = self.layout.finetune(task, variant);
        let (model, hash) = if has_checkpoint(&tuned) {
            let (m, manifest) = load_checkpoint(&tuned)?;
            let upstream = self.start_model(task, variant, &backbone)?.1.unwrap_or(backbone_manifest);
            if manifest.provenance.parent.as_deref() != Some(upstream.content_hash.as_str()) {
                return Err(Error::Checkpoint(format!(
                    "{} was finetuned from an older checkpoint; rerun `{}`",
                    tuned.display(),
                    Stage::Finetune(task, variant)
                )));
            }
            (m, manifest.content_hash)
        } else if !self.cfg.finetune.enabled {
            let (m, _) = self.start_model(task, variant, &backbone)?;
            let hash = encode_checkpoint(&m, Provenance::default()).0.content_hash;
            (m, hash)
        } else {
            return Err(missing(Stage::Finetune(task, variant), &tuned));
        };
        let data = self.data()?;
        let mut report = eval_task(&model, &vocab, &data.task, task, self.cfg.eval.k, variant.name())?;
        report.meta = self.meta(&hash);
        let dir = self.layout.eval(task, variant);
        self.start_dir(&dir)?;
        let reports = vec![report];
        emit_report(&reports, ReportFormat::Json, &dir.join(REPORT_JSON))?;
        emit_report(&reports, ReportFormat::Tsv, &dir.join(REPORT_TSV))?;
        for r in &reports {
            for c in &r.categories {
                info!("{variant} {} {}: hit@1 {:.1} mrr {:.1}", task.name(), c.category, c.hit1 * 100.0, c.mrr * 100.0);
            }
        }
        Ok(StageOutcome { stage: stage.to_string(), dir, manifest: None, reports })
    }

    fn plan(&self, task: Task) -> DownstreamPlan {
        DownstreamPlan {
            fusion: self.cfg.fusion.enabled.then(|| self.cfg.fusion_hyper(task)),
            finetune: self.cfg.finetune.enabled.then(|| self.cfg.finetune_hyper(task)),
        }
    }

    fn ablate(&self) -> Result<StageOutcome> {
        let (backbone, backbone_manifest, vocab) = self.backbone()?;
        let data = self.data()?;
        let source = data.knowledge()?;
        let mut adapters = Vec::new();
        for kind in ABLATION_KINDS {
            if has_checkpoint(&self.layout.adapter(kind)) {
                adapters.push(self.adapter(kind, &backbone)?);
            } else {
                adapters.push(self.train_adapter(kind)?.1);
            }
        }
        let setup = AblationSetup {
            data: &data.task,
            source: &source,
            vocab: &vocab,
            backbone: &backbone,
            bottleneck: self.cfg.adapters.bottleneck,
            adapter: self.cfg.adapter_hyper(0),
            completion: self.plan(Task::Completion),
            alignment: self.plan(Task::Alignment),
            fusion_seed: self.cfg.fusion_seed(),
            k: self.cfg.eval.k,
        };
        let mut report = ablate(&setup, &adapters)?;
        let meta = self.meta(&backbone_manifest.content_hash);
        for row in &mut report.rows {
            row.completion.meta = meta.clone();
            row.alignment.meta = meta.clone();
        }
        let dir = self.layout.ablate();
        self.start_dir(&dir)?;
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(dir.join(ABLATION_JSON), text)?;
        fs::write(dir.join(ABLATION_TSV), report.to_tsv()?)?;
        let reports = report.rows.iter().flat_map(|r| [r.completion.clone(), r.alignment.clone()]).collect();
        Ok(StageOutcome { stage: Stage::Ablate.to_string(), dir, manifest: None, reports })
    }

    /// Collects every evaluation and ablation report under the output root.
    fn report(&self) -> Result<StageOutcome> {
        let mut reports = Vec::new();
        let mut dirs: Vec<PathBuf> = fs::read_dir(&self.layout.root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(REPORT_JSON).is_file() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("eval-")))
            .collect();
        dirs.sort();
        for d in dirs {
            let text = fs::read_to_string(d.join(REPORT_JSON))?;
            reports.extend(serde_json::from_str::<Vec<MetricReport>>(&text)?);
        }
        let ablation = self.layout.ablate().join(ABLATION_JSON);
        if ablation.is_file() {
            let a: AblationReport = serde_json::from_str(&fs::read_to_string(&ablation)?)?;
            reports.extend(a.rows.into_iter().flat_map(|r| {
                let tag = |mut m: MetricReport| {
                    m.variant = format!("ablate:{}", m.variant);
                    m
                };
                [tag(r.completion), tag(r.alignment)]
            }));
        }
        if reports.is_empty() {
            warn!("no reports under {}", self.layout.root.display());
            return Err(missing(Stage::Eval(Task::Alignment, Variant::Fusion), &self.layout.root));
        }
        let root = self.layout.root.clone();
        emit_report(&reports, ReportFormat::Json, &root.join(REPORT_JSON))?;
        emit_report(&reports, ReportFormat::Tsv, &root.join(REPORT_TSV))?;
        Ok(StageOutcome { stage: Stage::Report.to_string(), dir: root, manifest: None, reports })
    }
}

/// Number of anchor records one pass over an adapter's objective visits.
pub fn pair_pool(source: &KnowledgeSource, kind: AdapterKind) -> usize {
    let labels: usize = source.kg.entities().iter().map(|e| e.labels.len()).sum();
    match kind {
        AdapterKind::EP => labels,
        AdapterKind::TP => source.kg.triples().len(),
        AdapterKind::ES => source.c1.len(),
        AdapterKind::TS => source.c2.len(),
        AdapterKind::LARGE => AdapterKind::KNOWLEDGE.iter().map(|k| pair_pool(source, *k)).sum(),
    }
}
