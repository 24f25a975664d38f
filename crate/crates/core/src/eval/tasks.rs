use std::collections::BTreeMap;

use super::finetune::completion_query;
use super::metrics::{embed_all, embed_labels, gold_rank, report_from_ranks, CandidateIndex, MetricReport};
use crate::adapters::AdaptedEncoder;
use crate::data::{AlignmentPair, CompletionItem, LanguageSplit, Mlkg};
use crate::encoder::Vocab;
use crate::error::Result;
use crate::objectives::TextItem;

/// Ranks each query against the candidate index of its language.
fn rank_queries(
    model: &AdaptedEncoder,
    vocab: &Vocab,
    kg: &Mlkg,
    queries: &BTreeMap<String, Vec<(TextItem, String)>>,
) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut out = BTreeMap::new();
    for (lang, qs) in queries {
        let index: CandidateIndex = embed_labels(model, vocab, kg, lang)?;
        let items: Vec<TextItem> = qs.iter().map(|(q, _)| q.clone()).collect();
        let emb = embed_all(model, vocab, &items)?;
        let ranks = qs.iter().enumerate().map(|(i, (_, gold))| gold_rank(emb.row(i), &index, gold)).collect::<Result<Vec<_>>>()?;
        out.insert(lang.clone(), ranks);
    }
    Ok(out)
}

/// Retrieves each test triple's object among all entities of its language.
pub fn eval_completion(
    model: &AdaptedEncoder,
    vocab: &Vocab,
    kg: &Mlkg,
    test: &[CompletionItem],
    split: &LanguageSplit,
    k: usize,
    variant: &str,
) -> Result<MetricReport> {
    let mut queries: BTreeMap<String, Vec<(TextItem, String)>> = BTreeMap::new();
    for item in test {
        let q = completion_query(kg, &item.triple, &item.lang)?;
        queries.entry(item.lang.clone()).or_default().push((q, item.triple.tail.clone()));
    }
    report_from_ranks("completion", variant, k, split, &rank_queries(model, vocab, kg, &queries)?)
}

/// Retrieves each entity among all target-language labels from its source label.
pub fn eval_alignment(
    model: &AdaptedEncoder,
    vocab: &Vocab,
    kg: &Mlkg,
    test: &[AlignmentPair],
    split: &LanguageSplit,
    k: usize,
    variant: &str,
) -> Result<MetricReport> {
    let mut queries: BTreeMap<String, Vec<(TextItem, String)>> = BTreeMap::new();
    for p in test {
        let e = kg.entity(&p.entity).ok_or_else(|| crate::Error::Data(format!("unknown entity `{}`", p.entity)))?;
        let l = e.labels.get(&p.src).ok_or_else(|| crate::Error::Data(format!("`{}` has no `{}` label", p.entity, p.src)))?;
        queries.entry(p.tgt.clone()).or_default().push((TextItem::label(l, &p.src), p.entity.clone()));
    }
    report_from_ranks("alignment", variant, k, split, &rank_queries(model, vocab, kg, &queries)?)
}
