//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line to stderr
//! (bypassing output capture) and then asserts.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use kadapt::adapters::{
    adapter_param_count, fusion_forward, fusion_param_count, group_checksums, init_adapter, make_large_adapter,
    param_counts, verify_frozen, AdaptedEncoder, AdapterKind, Mode,
};
use kadapt::data::{load_alignment, load_c1, load_c2, load_completion, load_mlkg, Category, LanguageSplit};
use kadapt::encoder::Vocab;
use kadapt::eval::{hits_at_k, mrr, rank, CandidateIndex, MetricReport, Task, Variant};
use kadapt::numeric::{gradcheck, Graph, LossGraph, Real, Tensor, Var};
use kadapt::objectives::{
    infonce, infonce_graph, pair_loss, sample_ep_batch, sample_es_batch, sample_tp_batch, sample_ts_batch, train_adapter,
    PairSpec, TrainHyper,
};
use kadapt::pipeline::{run_stage, CorpusAudit, Dataset, Layout, PipelineConfig, Profile, Stage};
use kadapt::seed::rng_for;
use rand::Rng;

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    let line = format!("criterion {id:>2} {} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

// ---------------------------------------------------------------- runs

const SEED: u64 = 1;
const TEN_MINUTES: Duration = Duration::from_secs(600);

/// Timed scenarios run one at a time so wall-clock limits measure a single run.
static EXCLUSIVE: Mutex<()> = Mutex::new(());

fn exclusive() -> std::sync::MutexGuard<'static, ()> {
    EXCLUSIVE.lock().unwrap_or_else(|e| e.into_inner())
}

struct DeskRun {
    root: PathBuf,
    elapsed: Duration,
    reports: Vec<(Variant, MetricReport)>,
}

impl DeskRun {
    fn report(&self, variant: Variant) -> &MetricReport {
        &self.reports.iter().find(|(v, _)| *v == variant).expect("variant evaluated").1
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kadapt-acceptance-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn desk(kinds: &str) -> PipelineConfig {
    let sets = vec![format!("adapters.kinds={kinds}")];
    PipelineConfig::resolve(Some(Profile::Desk), None, &sets, Some(SEED)).unwrap()
}

/// Full desk pipeline for one task: data, pretraining, the configured
/// adapters, fusion, then finetuning and evaluation of FUSION and the base
/// encoder.
fn desk_run(name: &str, cfg: &PipelineConfig, task: Task) -> DeskRun {
    let root = scratch(name);
    let _guard = exclusive();
    let start = Instant::now();
    run_stage(cfg, &root, Stage::GenSynthetic).unwrap();
    run_stage(cfg, &root, Stage::Pretrain).unwrap();
    for &kind in &cfg.adapters.kinds {
        run_stage(cfg, &root, Stage::TrainAdapter(kind)).unwrap();
    }
    run_stage(cfg, &root, Stage::TrainFusion(task)).unwrap();
    let mut reports = Vec::new();
    for variant in [Variant::Fusion, Variant::Base] {
        run_stage(cfg, &root, Stage::Finetune(task, variant)).unwrap();
        let out = run_stage(cfg, &root, Stage::Eval(task, variant)).unwrap();
        reports.push((variant, out.reports.into_iter().next().unwrap()));
    }
    DeskRun { root, elapsed: start.elapsed(), reports }
}

fn alignment_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| desk_run("alignment", &desk("[\"EP\",\"ES\"]"), Task::Alignment))
}

fn alignment_rerun() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| desk_run("alignment-rerun", &desk("[\"EP\",\"ES\"]"), Task::Alignment))
}

fn completion_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| desk_run("completion", &desk("[\"TP\",\"TS\"]"), Task::Completion))
}

fn ablation_run() -> &'static (PathBuf, Duration) {
    static RUN: OnceLock<(PathBuf, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let root = scratch("ablation");
        let cfg = PipelineConfig::resolve(Some(Profile::Desk), None, &[], Some(SEED)).unwrap();
        let _guard = exclusive();
        let start = Instant::now();
        run_stage(&cfg, &root, Stage::GenSynthetic).unwrap();
        run_stage(&cfg, &root, Stage::Pretrain).unwrap();
        run_stage(&cfg, &root, Stage::Ablate).unwrap();
        (root, start.elapsed())
    })
}

fn category(r: &MetricReport, c: Category) -> (f64, f64) {
    let m = r.category(c).expect("category evaluated");
    (m.hit1 * 100.0, m.mrr * 100.0)
}

// ---------------------------------------------------------------- 1

struct FusedContrastive<'a> {
    model: &'a AdaptedEncoder,
    vocab: &'a Vocab,
    pairs: Vec<PairSpec>,
}

impl LossGraph for FusedContrastive<'_> {
    fn build<T: Real>(&self, g: &mut Graph<'_, T>) -> kadapt::Result<Var> {
        pair_loss(g, self.model, self.vocab, &self.pairs, 0.5)
    }
}

#[test]
fn c01_gradient_check() {
    let _guard = exclusive();
    let start = Instant::now();
    let t = common::tiny(2, 32, 5);
    let mut model = t.model.clone();
    for (i, kind) in [AdapterKind::EP, AdapterKind::TP, AdapterKind::ES, AdapterKind::TS].into_iter().enumerate() {
        model.add_adapter(kind, 4, i as u64).unwrap();
    }
    model.add_fusion(9).unwrap();
    model.set_mode(Mode::Fusion).unwrap();
    // move every tensor off its structured init so no gradient is trivially zero
    let mut rng = rng_for(5, "jitter");
    let names: Vec<String> = model.params().names().cloned().collect();
    for name in names {
        let t = model.params().tensor(&name).unwrap().clone();
        let noise = Tensor::randn(t.shape(), 0.02, &mut rng);
        let data = t.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
        model.params_mut().replace(&name, Tensor::new(t.shape().to_vec(), data).unwrap()).unwrap();
    }
    model.train_only(|_| true);
    let mut prng = rng_for(5, "pairs");
    let pairs = sample_ep_batch(&t.source, 3, &mut prng).unwrap();
    let loss = FusedContrastive { model: &model, vocab: &t.vocab, pairs };
    // f64 central differences: 1e-4 sits between truncation and roundoff error
    let report = gradcheck(&loss, model.params(), 1e-4).unwrap();
    let elapsed = start.elapsed();
    let ok = report.max_rel_error < 1e-3 && elapsed < Duration::from_secs(60);
    verdict(
        1,
        "gradient check",
        ok,
        &format!(
            "max rel error {:.2e} over {} scalars (worst {}[{}]) in {:.1}s",
            report.max_rel_error,
            report.scalars_checked,
            report.worst_param,
            report.worst_index,
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok, "{report:?} in {elapsed:?}");
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_frozen_backbone() {
    let t = common::tiny(1, 16, 6);
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, kind) in [AdapterKind::EP, AdapterKind::TP, AdapterKind::ES, AdapterKind::TS, AdapterKind::LARGE].into_iter().enumerate() {
        let mut model = t.model.clone();
        model.add_adapter(kind, 8, i as u64).unwrap();
        let before = group_checksums(model.params());
        let hyper = TrainHyper { batch: 8, steps: 100, lr: 5e-3, warmup: 10, tau: 0.1, p_cs: 0.5, seed: 6 };
        let report = train_adapter(&mut model, kind, &t.source, &t.vocab, &hyper).unwrap();
        let after = group_checksums(model.params());
        let group = format!("adapter.{kind}");
        let frozen = verify_frozen(&before, &after, &[group.clone()], "acceptance").is_ok() && before["backbone"] == after["backbone"];
        let moved = before[&group] != after[&group] && report.curve.len() == 100;
        ok &= frozen && moved;
        lines.push(format!("{kind}:{}", if frozen && moved { "frozen" } else { "VIOLATED" }));
    }
    // a tampered backbone must be reported with exit code 3
    let before = group_checksums(t.model.params());
    let mut tampered = t.model.clone();
    let name = tampered.params().names().next().unwrap().clone();
    let mut data = tampered.params().tensor(&name).unwrap().clone().into_data();
    data[0] += 1.0;
    let shape = tampered.params().tensor(&name).unwrap().shape().to_vec();
    tampered.params_mut().replace(&name, Tensor::new(shape, data).unwrap()).unwrap();
    let err = verify_frozen(&before, &group_checksums(tampered.params()), &[], "acceptance").unwrap_err();
    ok &= err.exit_code() == 3;
    verdict(2, "frozen backbone", ok, &format!("100 steps each, {}; tamper exit code {}", lines.join(" "), err.exit_code()));
    assert!(ok);
}

// ---------------------------------------------------------------- 3

#[test]
fn c03_fusion_weights() {
    let (d, n) = (16, 4);
    let mut rng = rng_for(3, "fusion-inputs");
    let q = Tensor::randn(&[d, d], 0.5, &mut rng);
    let k = Tensor::randn(&[d, d], 0.5, &mut rng);
    let v = Tensor::randn(&[d, d], 0.5, &mut rng);
    let vector = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f32> { (0..d).map(|_| rng.random_range(-2.0..2.0)).collect() };
    let (mut worst_sum, mut negative, mut worst_uniform) = (0.0f64, 0usize, 0.0f64);
    for _ in 0..1000 {
        let h = vector(&mut rng);
        let outputs: Vec<Vec<f32>> = (0..n).map(|_| vector(&mut rng)).collect();
        let w = fusion_forward(&h, &outputs, &q, &k, &v).unwrap().weights;
        negative += w.iter().filter(|&&x| x < 0.0).count();
        worst_sum = worst_sum.max((w.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs());
        let same = vec![h.clone(); n];
        let u = fusion_forward(&h, &same, &q, &k, &v).unwrap().weights;
        for x in u {
            worst_uniform = worst_uniform.max((x as f64 - 1.0 / (n + 1) as f64).abs());
        }
    }
    let ok = negative == 0 && worst_sum <= 1e-6 && worst_uniform <= 1e-5;
    verdict(
        3,
        "fusion weights",
        ok,
        &format!("1000 inputs, {negative} negative, max |sum-1| {worst_sum:.1e}, max uniform deviation {worst_uniform:.1e}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_parameter_accounting() {
    let t = common::tiny(2, 32, 4);
    let mut model = t.model.clone();
    for (i, kind) in [AdapterKind::EP, AdapterKind::TP, AdapterKind::ES, AdapterKind::TS].into_iter().enumerate() {
        model.add_adapter(kind, 8, i as u64).unwrap();
    }
    model.add_fusion(1).unwrap();
    let budget = param_counts(&model);
    let p = model.params();
    let mut ok = budget.backbone == p.num_scalars_by(|n| n.starts_with("backbone."))
        && budget.fusion == p.num_scalars_by(|n| n.starts_with("fusion."))
        && budget.backbone + budget.extra() == p.num_scalars();
    for (kind, count) in &budget.adapters {
        ok &= *count == p.num_scalars_by(|n| n.starts_with(&format!("adapter.{kind}.")));
    }
    let paper_adapter = init_adapter(AdapterKind::EP, 768, 12, 8, 0).unwrap().num_scalars();
    ok &= paper_adapter == 156_768 && adapter_param_count(768, 12, 8) == 156_768;
    let mut large = Vec::new();
    for (d, l, b) in [(768, 12, 48), (64, 2, 64), (32, 2, 8)] {
        let reference = 4 * adapter_param_count(d, l, b) + fusion_param_count(d, l);
        let (spec, params) = make_large_adapter(reference, d, l, 0).unwrap();
        let size = params.num_scalars();
        let increment = l * (2 * d + 1);
        ok &= size == adapter_param_count(d, l, spec.bottleneck) && size.abs_diff(reference) <= increment;
        large.push(format!("d{d}: {size} vs {reference}"));
    }
    verdict(
        4,
        "parameter accounting",
        ok,
        &format!("enumeration {} = closed form, d768 L12 b8 adapter {paper_adapter}, LARGE {}", p.num_scalars(), large.join(", ")),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 5

fn brute_force_order(query: &[f32], ids: &[String], rows: &[Vec<f32>]) -> Vec<String> {
    let norm = |v: &[f32]| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let cos: Vec<f64> = rows
        .iter()
        .map(|r| {
            let den = norm(r) * norm(query);
            if den == 0.0 { 0.0 } else { r.iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / den }
        })
        .collect();
    let mut slots = vec![String::new(); ids.len()];
    for i in 0..ids.len() {
        let ahead = (0..ids.len()).filter(|&j| cos[j] > cos[i] || (cos[j] == cos[i] && ids[j] < ids[i])).count();
        slots[ahead] = ids[i].clone();
    }
    slots
}

#[test]
fn c05_metric_oracles() {
    let ranks = [1, 2, 4];
    let h1 = hits_at_k(&ranks, 1).unwrap();
    let m = mrr(&ranks).unwrap();
    let mut ok = (h1 - 1.0 / 3.0).abs() < 1e-9 && (m - 0.583_333_333_333).abs() < 1e-9;
    let mut rng = rng_for(5, "rank-sets");
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..30usize);
        let d = rng.random_range(2..6usize);
        let mut ids: Vec<String> = (0..n).map(|i| format!("Q{:03}", (i * 37 + 11) % 997)).collect();
        ids.reverse();
        let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n);
        for i in 0..n {
            // every third row repeats an earlier one to force ties
            if i > 0 && i % 3 == 0 {
                let j = rng.random_range(0..i);
                rows.push(rows[j].clone());
            } else {
                rows.push((0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect());
            }
        }
        let query: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let matrix = Tensor::new(vec![n, d], rows.concat()).unwrap();
        let index = CandidateIndex::new("xx", ids.clone(), matrix).unwrap();
        if rank(&query, &index).unwrap() != brute_force_order(&query, &ids, &rows) {
            mismatches += 1;
        }
    }
    ok &= mismatches == 0;
    verdict(5, "metric oracles", ok, &format!("hit@1 {h1:.4}, MRR {m:.5}, {mismatches}/200 rank mismatches"));
    assert!(ok);
}

// ---------------------------------------------------------------- 6

#[test]
fn c06_infonce_closed_form() {
    let anchors = vec![vec![1.0f32, 0.0], vec![0.0, 1.0]];
    let positives = anchors.clone();
    let two = infonce(&anchors, &positives, 1.0).unwrap();
    let expected = (1.0 + (-1.0f64).exp()).ln();
    let one = infonce(&[vec![0.3, -0.7]], &[vec![1.2, 0.4]], 1.0).unwrap();

    let empty = kadapt::numeric::ParamSet::new();
    let mut g = Graph::<f64>::new(&empty);
    let a = g.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let p = g.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let loss = infonce_graph(&mut g, a, p, 1.0).unwrap();
    let graph_two = g.scalar_value(loss);
    let a1 = g.constant(vec![1, 2], vec![0.3, -0.7]).unwrap();
    let p1 = g.constant(vec![1, 2], vec![1.2, 0.4]).unwrap();
    let loss1 = infonce_graph(&mut g, a1, p1, 1.0).unwrap();
    let graph_one = g.scalar_value(loss1);

    let ok = (two - expected).abs() < 1e-6 && (graph_two - expected).abs() < 1e-6 && one == 0.0 && graph_one == 0.0;
    verdict(
        6,
        "InfoNCE closed form",
        ok,
        &format!("B=2 {two:.9} (graph {graph_two:.9}) vs {expected:.9}; B=1 {one} (graph {graph_one})"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 7

#[test]
fn c07_zero_shot_alignment() {
    let run = alignment_run();
    let (fusion, base) = (run.report(Variant::Fusion), run.report(Variant::Base));
    let mut ok = run.elapsed < TEN_MINUTES;
    let mut parts = Vec::new();
    for c in [Category::ZsIn, Category::ZsUn] {
        let (f, b) = (category(fusion, c).0, category(base, c).0);
        ok &= f >= b + 20.0;
        parts.push(format!("{} FUSION {f:.1} vs base {b:.1}", c.name()));
    }
    verdict(7, "zero-shot alignment", ok, &format!("Hit@1 {} in {:.0}s", parts.join(", "), run.elapsed.as_secs_f64()));
    assert!(ok);
}

// ---------------------------------------------------------------- 8

#[test]
fn c08_completion_transfer() {
    let run = completion_run();
    let f = category(run.report(Variant::Fusion), Category::ZsIn).1;
    let b = category(run.report(Variant::Base), Category::ZsIn).1;
    let ok = f > b && run.elapsed < TEN_MINUTES;
    verdict(8, "completion transfer", ok, &format!("ZS-In MRR FUSION {f:.2} vs base {b:.2} in {:.0}s", run.elapsed.as_secs_f64()));
    assert!(ok);
}

// ---------------------------------------------------------------- 9

#[test]
fn c09_ablation_direction() {
    let (root, elapsed) = ablation_run();
    let text = fs::read_to_string(Layout::new(root).ablate().join("ablation.json")).unwrap();
    let report: kadapt::eval::AblationReport = serde_json::from_str(&text).unwrap();
    let hit1 = |v: Variant, t: Task| report.get(v, t).expect("variant in ablation").mean().0 * 100.0;
    let singles = [AdapterKind::EP, AdapterKind::TP, AdapterKind::ES, AdapterKind::TS];
    let mut ok = true;
    let mut parts = Vec::new();
    let (ep_a, tp_a) = (hit1(Variant::Single(AdapterKind::EP), Task::Alignment), hit1(Variant::Single(AdapterKind::TP), Task::Alignment));
    let (ep_c, tp_c) = (hit1(Variant::Single(AdapterKind::EP), Task::Completion), hit1(Variant::Single(AdapterKind::TP), Task::Completion));
    ok &= ep_a >= tp_a && tp_c >= ep_c;
    parts.push(format!("alignment EP {ep_a:.1} TP {tp_a:.1}, completion TP {tp_c:.1} EP {ep_c:.1}"));
    for task in [Task::Completion, Task::Alignment] {
        let best = singles.iter().map(|&k| hit1(Variant::Single(k), task)).fold(f64::NEG_INFINITY, f64::max);
        let fusion = hit1(Variant::Fusion, task);
        ok &= fusion >= best - 2.0;
        parts.push(format!("{} FUSION {fusion:.1} vs best single {best:.1}", task.name()));
    }
    verdict(9, "ablation direction", ok, &format!("Hit@1 {} ({:.0}s)", parts.join("; "), elapsed.as_secs_f64()));
    assert!(ok);
}

// ---------------------------------------------------------------- 10

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "run_log.jsonl") {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn c10_determinism() {
    let (a, b) = (alignment_run(), alignment_rerun());
    let (fa, fb) = (files(&a.root), files(&b.root));
    let differing: Vec<String> =
        fa.iter().filter(|f| fs::read(a.root.join(f)).ok() != fs::read(b.root.join(f)).ok()).map(|f| f.display().to_string()).collect();
    let checkpoints = fa.iter().filter(|f| f.ends_with("tensors.bin")).count();
    let reports = fa.iter().filter(|f| f.ends_with("report.json")).count();
    let ok = fa == fb && differing.is_empty() && checkpoints >= 6 && reports == 2;
    verdict(
        10,
        "determinism",
        ok,
        &format!("{} files ({checkpoints} checkpoints, {reports} reports), differing: {differing:?}", fa.len()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 11

/// Languages of every record under a stage directory's training corpora.
fn corpus_languages(dir: &Path) -> Vec<String> {
    let mut langs = Vec::new();
    let corpus = dir.join("corpus");
    if corpus.is_dir() {
        let kg = load_mlkg(&corpus.join("entities.tsv"), &corpus.join("relations.tsv"), &corpus.join("triples.tsv")).unwrap();
        langs.extend(kg.entities().iter().chain(kg.relations()).flat_map(|e| e.labels.keys().cloned()));
        langs.extend(load_c1(&corpus.join("descriptions.tsv")).unwrap().into_iter().map(|s| s.lang));
        for entry in fs::read_dir(corpus.join("triple_sentences")).unwrap() {
            let path = entry.unwrap().path();
            let lang = path.file_stem().unwrap().to_string_lossy().to_string();
            langs.extend(load_c2(&path, &lang).unwrap().into_iter().map(|s| s.lang));
        }
    }
    let train = dir.join("train.tsv");
    if train.is_file() {
        match load_alignment(&train) {
            Ok(pairs) => langs.extend(pairs.into_iter().flat_map(|p| [p.src, p.tgt])),
            Err(_) => langs.extend(load_completion(&train).unwrap().into_iter().map(|i| i.lang)),
        }
    }
    langs
}

fn sampler_languages(source: &kadapt::objectives::KnowledgeSource) -> BTreeSet<String> {
    let mut rng = rng_for(11, "audit");
    let mut seen = BTreeSet::new();
    for _ in 0..50 {
        let batches = [
            sample_ep_batch(source, 16, &mut rng).unwrap(),
            sample_tp_batch(source, 16, 1.0, &mut rng).unwrap(),
            sample_es_batch(source, 16, &mut rng).unwrap(),
            sample_ts_batch(source, 16, &mut rng).unwrap(),
        ];
        for pair in batches.iter().flatten() {
            seen.extend(pair.anchor.langs.iter().chain(&pair.positive.langs).cloned());
        }
    }
    seen
}

#[test]
fn c11_unseen_languages_stay_unseen() {
    let roots = [&alignment_run().root, &completion_run().root, &ablation_run().0];
    let mut violations = 0usize;
    let (mut audits, mut records, mut stages) = (0usize, 0usize, 0usize);
    let mut split: Option<LanguageSplit> = None;
    for root in roots {
        let data = Dataset::load(&Layout::new(root).generated_data()).unwrap();
        let zs_un = data.task.split.zs_un.clone();
        // finetuning reads these files in every stage
        let task_langs: Vec<String> = data
            .task
            .completion_train
            .iter()
            .map(|i| i.lang.clone())
            .chain(data.task.alignment_train.iter().flat_map(|p| [p.src.clone(), p.tgt.clone()]))
            .collect();
        violations += task_langs.iter().filter(|l| zs_un.contains(l)).count();
        records += task_langs.len();
        let sampled = sampler_languages(&data.knowledge().unwrap());
        violations += sampled.iter().filter(|l| zs_un.contains(l)).count();
        for entry in fs::read_dir(root).unwrap() {
            let dir = entry.unwrap().path();
            let name = dir.file_name().unwrap().to_string_lossy().to_string();
            let trained = ["adapter-", "fusion-", "finetune-"].iter().any(|p| name.starts_with(p));
            if !trained {
                continue;
            }
            stages += 1;
            let audit: CorpusAudit = serde_json::from_str(&fs::read_to_string(dir.join("audit.json")).unwrap()).unwrap();
            audits += 1;
            violations += audit.violations;
            violations += audit.sampled.keys().chain(audit.records.keys()).filter(|l| zs_un.contains(l)).count();
            let langs = corpus_languages(&dir);
            records += langs.len();
            violations += langs.iter().filter(|l| zs_un.contains(l)).count();
        }
        split = Some(data.task.split);
    }
    let split = split.unwrap();
    let ok = violations == 0 && audits == stages && stages > 0 && !split.zs_un.is_empty();
    verdict(
        11,
        "unseen-language audit",
        ok,
        &format!("{stages} training stages, {records} records scanned, ZS-Un {:?}, {violations} violations", split.zs_un),
    );
    assert!(ok);
}
