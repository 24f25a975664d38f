use serde::{Deserialize, Serialize};

use crate::adapters::{group_checksums, param_group, verify_frozen, AdaptedEncoder, Mode};
use crate::data::{AlignmentPair, CompletionItem, LanguageSplit, Mlkg, Triple};
use crate::encoder::{Vocab, SEP};
use crate::error::{Error, Result};
use crate::numeric::LossRecord;
use crate::objectives::{embed_pairs, LanguageCounts, mean_pair_cosine, train_contrastive, EpochCursor, PairSpec, Pool, TextItem, TrainHyper};
use crate::seed::rng_for;

/// Task finetuning hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamHyper {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub warmup: u64,
    pub tau: f64,
    pub seed: u64,
}

/// Which parameters a finetuning stage updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    /// fusion layers only; backbone and adapters frozen
    FusionOnly,
    /// every parameter the current mode uses
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Completion,
    Alignment,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Completion => "completion",
            Task::Alignment => "alignment",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "completion" => Ok(Task::Completion),
            "alignment" => Ok(Task::Alignment),
            _ => Err(Error::Config(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneReport {
    pub curve: Vec<LossRecord>,
    pub probe_before: f64,
    pub probe_after: f64,
    pub languages: LanguageCounts,
}

fn label<'a>(kg: &'a Mlkg, id: &str, lang: &str, entity: bool) -> Result<&'a str> {
    let rec = if entity { kg.entity(id) } else { kg.relation(id) };
    rec.and_then(|r| r.labels.get(lang))
        .map(String::as_str)
        .ok_or_else(|| Error::Data(format!("`{id}` has no `{lang}` label")))
}

/// `subject [SEP] relation` rendered in one language.
pub fn completion_query(kg: &Mlkg, triple: &Triple, lang: &str) -> Result<TextItem> {
    let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let mut tokens = words(label(kg, &triple.head, lang, true)?);
    tokens.push(SEP.to_string());
    tokens.extend(words(label(kg, &triple.rel, lang, false)?));
    Ok(TextItem { tokens, langs: vec![lang.to_string(); 2], pool: Pool::Sentence })
}

pub fn completion_pair(kg: &Mlkg, item: &CompletionItem) -> Result<PairSpec> {
    let t = &item.triple;
    Ok(PairSpec {
        anchor: completion_query(kg, t, &item.lang)?,
        positive: TextItem::label(label(kg, &t.tail, &item.lang, true)?, &item.lang),
        source: format!("{}:{}|{}|{}", item.lang, t.head, t.rel, t.tail),
    })
}

pub fn alignment_pair(kg: &Mlkg, pair: &AlignmentPair) -> Result<PairSpec> {
    Ok(PairSpec {
        anchor: TextItem::label(label(kg, &pair.entity, &pair.src, true)?, &pair.src),
        positive: TextItem::label(label(kg, &pair.entity, &pair.tgt, true)?, &pair.tgt),
        source: format!("{}:{}-{}", pair.entity, pair.src, pair.tgt),
    })
}

fn check_languages<'a>(langs: impl IntoIterator<Item = &'a str>, split: &LanguageSplit) -> Result<()> {
    let allowed = split.finetune_languages();
    match langs.into_iter().find(|l| !allowed.iter().any(|a| a == l)) {
        Some(l) => Err(Error::Data(format!("finetuning data in non-supervised language `{l}`"))),
        None => Ok(()),
    }
}

/// Groups that the current mode reads.
fn active_groups(model: &AdaptedEncoder) -> Vec<String> {
    let mut g = vec!["backbone".to_string()];
    match model.mode() {
        Mode::None => {}
        Mode::Single(k) => g.push(format!("adapter.{k}")),
        Mode::Fusion => {
            g.extend(model.kinds().iter().map(|k| format!("adapter.{k}")));
            g.push("fusion".to_string());
        }
    }
    g
}

/// Contrastive finetuning over `pairs` for whole epochs.
pub fn finetune_pairs(
    model: &mut AdaptedEncoder,
    vocab: &Vocab,
    pairs: &[PairSpec],
    hyper: &DownstreamHyper,
    scope: Scope,
    stage: &str,
) -> Result<FinetuneReport> {
    if pairs.len() < 2 {
        return Err(Error::Data(format!("{stage}: need at least 2 training pairs, got {}", pairs.len())));
    }
    let trained = match scope {
        Scope::FusionOnly => {
            if model.mode() != Mode::Fusion {
                return Err(Error::MissingStage { required: "train-fusion".into(), path: format!("{stage} needs a fused model") });
            }
            vec!["fusion".to_string()]
        }
        Scope::All => active_groups(model),
    };
    let batch = hyper.batch.min(pairs.len());
    let per_epoch = (pairs.len() / batch).max(1);
    let th = TrainHyper {
        batch,
        steps: (hyper.epochs * per_epoch) as u64,
        lr: hyper.lr,
        warmup: hyper.warmup,
        tau: hyper.tau,
        p_cs: 0.0,
        seed: hyper.seed,
    };
    th.validate()?;
    model.train_only(|n| trained.contains(&param_group(n)));
    let before = group_checksums(model.params());
    let probe = &pairs[..pairs.len().min(64)];
    let probe_before = mean_pair_cosine(&embed_pairs(model, vocab, probe)?)?;

    let mut rng = rng_for(hyper.seed, stage);
    let mut cursor = EpochCursor::new(pairs.len());
    let run = train_contrastive(model, vocab, &th, &mut rng, |_, rng| (0..batch).map(|_| pairs[cursor.next(rng)].clone()).collect())?;

    let probe_after = mean_pair_cosine(&embed_pairs(model, vocab, probe)?)?;
    verify_frozen(&before, &group_checksums(model.params()), &trained, stage)?;
    model.train_only(|_| false);
    Ok(FinetuneReport { curve: run.curve, probe_before, probe_after, languages: run.languages })
}

/// Trains on supervised-language completion items.
pub fn finetune_completion(
    model: &mut AdaptedEncoder,
    vocab: &Vocab,
    kg: &Mlkg,
    train: &[CompletionItem],
    split: &LanguageSplit,
    hyper: &DownstreamHyper,
    scope: Scope,
) -> Result<FinetuneReport> {
    if train.is_empty() {
        return Err(Error::Data("no supervised-language completion triples".into()));
    }
    check_languages(train.iter().map(|i| i.lang.as_str()), split)?;
    let pairs = train.iter().map(|i| completion_pair(kg, i)).collect::<Result<Vec<_>>>()?;
    finetune_pairs(model, vocab, &pairs, hyper, scope, &format!("finetune.completion.{scope:?}"))
}

/// Trains on supervised-language alignment pairs.
pub fn finetune_alignment(
    model: &mut AdaptedEncoder,
    vocab: &Vocab,
    kg: &Mlkg,
    train: &[AlignmentPair],
    split: &LanguageSplit,
    hyper: &DownstreamHyper,
    scope: Scope,
) -> Result<FinetuneReport> {
    if train.is_empty() {
        return Err(Error::Data("no supervised-language alignment pairs".into()));
    }
    check_languages(train.iter().flat_map(|p| [p.src.as_str(), p.tgt.as_str()]), split)?;
    let pairs = train.iter().map(|p| alignment_pair(kg, p)).collect::<Result<Vec<_>>>()?;
    finetune_pairs(model, vocab, &pairs, hyper, scope, &format!("finetune.alignment.{scope:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::AdapterKind;
    use crate::testkit::fixture;

    fn hyper() -> DownstreamHyper {
        DownstreamHyper { batch: 8, epochs: 1, lr: 1e-3, warmup: 1, tau: 0.1, seed: 4 }
    }

    #[test]
    fn task_names_parse() {
        for t in [Task::Completion, Task::Alignment] {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert!("ranking".parse::<Task>().is_err());
    }

    #[test]
    fn fusion_scope_needs_a_fused_model() {
        let f = fixture();
        let mut m = f.model.clone();
        let t = &f.task;
        let err = finetune_alignment(&mut m, &f.vocab, &t.kg, &t.alignment_train, &t.split, &hyper(), Scope::FusionOnly).unwrap_err();
        assert!(matches!(err, Error::MissingStage { .. }));
    }

    #[test]
    fn non_supervised_pairs_are_rejected() {
        let f = fixture();
        let mut m = f.model.clone();
        let t = &f.task;
        let mut bad = t.alignment_train.clone();
        bad[0].tgt = t.split.zs_in[0].clone();
        let err = finetune_alignment(&mut m, &f.vocab, &t.kg, &bad, &t.split, &hyper(), Scope::All).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn fusion_only_leaves_adapters_frozen() {
        let f = fixture();
        let mut m = f.model.clone();
        m.add_adapter(AdapterKind::EP, 4, 1).unwrap();
        m.add_adapter(AdapterKind::TP, 4, 2).unwrap();
        m.add_fusion(3).unwrap();
        m.set_mode(Mode::Fusion).unwrap();
        let before = group_checksums(m.params());
        let t = &f.task;
        let r = finetune_completion(&mut m, &f.vocab, &t.kg, &t.completion_train, &t.split, &hyper(), Scope::FusionOnly).unwrap();
        let after = group_checksums(m.params());
        for g in ["backbone", "adapter.EP", "adapter.TP"] {
            assert_eq!(before[g], after[g], "{g}");
        }
        assert_ne!(before["fusion"], after["fusion"]);
        assert_eq!(r.curve.len(), t.completion_train.len() / 8);
        assert!(r.languages.keys().all(|l| t.split.sup.contains(l)));
    }

    #[test]
    fn completion_query_joins_subject_and_relation() {
        let f = fixture();
        let item = &f.task.completion_train[0];
        let q = completion_query(&f.task.kg, &item.triple, &item.lang).unwrap();
        assert!(q.tokens.iter().any(|t| t == crate::encoder::SEP));
        assert_eq!(q.pool, Pool::Sentence);
    }
}
