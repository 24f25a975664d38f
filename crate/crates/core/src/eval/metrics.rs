use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::adapters::AdaptedEncoder;
use crate::data::{Category, LanguageSplit, Mlkg};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::objectives::{embed_items, TextItem};

/// Rows encoded per forward pass when embedding many texts.
pub const EMBED_CHUNK: usize = 64;

/// Label embeddings of every entity that has a label in one language.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateIndex {
    pub lang: String,
    /// ascending entity ids, one per row
    pub ids: Vec<String>,
    pub matrix: Tensor,
}

impl CandidateIndex {
    pub fn new(lang: &str, ids: Vec<String>, matrix: Tensor) -> Result<Self> {
        if matrix.shape().len() != 2 || matrix.shape()[0] != ids.len() {
            return Err(Error::shape("candidate index", format!("{} ids vs matrix {:?}", ids.len(), matrix.shape())));
        }
        Ok(CandidateIndex { lang: lang.to_string(), ids, matrix })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

/// Pooled encodings of many items, computed in fixed-size chunks.
pub fn embed_all(model: &AdaptedEncoder, vocab: &Vocab, items: &[TextItem]) -> Result<Tensor> {
    let d = model.config().dim;
    let mut data = Vec::with_capacity(items.len() * d);
    for chunk in items.chunks(EMBED_CHUNK) {
        data.extend_from_slice(embed_items(model, vocab, chunk)?.data());
    }
    Tensor::new(vec![items.len(), d], data)
}

/// Embeds the `lang` label of every entity; entities without one are skipped.
pub fn embed_labels(model: &AdaptedEncoder, vocab: &Vocab, kg: &Mlkg, lang: &str) -> Result<CandidateIndex> {
    let mut ents: Vec<_> = kg.entities().iter().collect();
    ents.sort_by(|a, b| a.id.cmp(&b.id));
    let (mut ids, mut items) = (Vec::new(), Vec::new());
    let mut missing = 0;
    for e in ents {
        match e.labels.get(lang) {
            Some(l) => {
                ids.push(e.id.clone());
                items.push(TextItem::label(l, lang));
            }
            None => missing += 1,
        }
    }
    if missing > 0 {
        warn!("{missing} entities have no `{lang}` label and are not candidates");
    }
    let matrix = if items.is_empty() { Tensor::zeros(&[0, model.config().dim]) } else { embed_all(model, vocab, &items)? };
    CandidateIndex::new(lang, ids, matrix)
}

fn cosines(query: &[f32], index: &CandidateIndex) -> Result<Vec<f64>> {
    if index.is_empty() {
        return Err(Error::Data(format!("empty candidate set for `{}`", index.lang)));
    }
    let d = index.matrix.shape()[1];
    if query.len() != d {
        return Err(Error::shape("rank", format!("query dim {} vs index dim {d}", query.len())));
    }
    let norm = |v: &[f32]| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let qn = norm(query);
    Ok(index
        .matrix
        .data()
        .chunks(d)
        .map(|c| {
            let den = qn * norm(c);
            if den == 0.0 {
                0.0
            } else {
                c.iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / den
            }
        })
        .collect())
}

/// Candidate ids by descending cosine with `query`; ties go to the lower id.
pub fn rank(query: &[f32], index: &CandidateIndex) -> Result<Vec<String>> {
    let sims = cosines(query, index)?;
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then_with(|| index.ids[a].cmp(&index.ids[b])));
    Ok(order.into_iter().map(|i| index.ids[i].clone()).collect())
}

/// 1-based rank of `gold`, or `usize::MAX` when it is not a candidate.
pub fn gold_rank(query: &[f32], index: &CandidateIndex, gold: &str) -> Result<usize> {
    let sims = cosines(query, index)?;
    let Some(g) = index.position(gold) else {
        warn!("gold `{gold}` missing from the `{}` candidates; counted as a miss", index.lang);
        return Ok(usize::MAX);
    };
    let ahead = sims
        .iter()
        .zip(&index.ids)
        .filter(|(s, id)| **s > sims[g] || (**s == sims[g] && id.as_str() < gold))
        .count();
    Ok(ahead + 1)
}

fn check_ranks(ranks: &[usize]) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::Data("no ranks to score".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Data("ranks are 1-based".into()));
    }
    Ok(())
}

pub fn hits_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

pub fn mrr(ranks: &[usize]) -> Result<f64> {
    check_ranks(ranks)?;
    Ok(ranks.iter().map(|&r| if r == usize::MAX { 0.0 } else { 1.0 / r as f64 }).sum::<f64>() / ranks.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangMetrics {
    pub lang: String,
    pub category: Category,
    pub n: usize,
    pub hit1: f64,
    pub hitk: f64,
    pub mrr: f64,
}

impl LangMetrics {
    pub fn from_ranks(lang: &str, category: Category, ranks: &[usize], k: usize) -> Result<Self> {
        Ok(LangMetrics { lang: lang.to_string(), category, n: ranks.len(), hit1: hits_at_k(ranks, 1)?, hitk: hits_at_k(ranks, k)?, mrr: mrr(ranks)? })
    }
}

/// Unweighted mean over the languages of one category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: Category,
    pub languages: usize,
    pub n: usize,
    pub hit1: f64,
    pub hitk: f64,
    pub mrr: f64,
}

/// Provenance stamped into every report.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub profile: String,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub variant: String,
    pub k: usize,
    pub languages: Vec<LangMetrics>,
    pub categories: Vec<CategoryMetrics>,
    pub meta: RunMeta,
}

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

impl MetricReport {
    pub fn new(task: &str, variant: &str, k: usize, mut languages: Vec<LangMetrics>) -> Self {
        languages.sort_by(|a, b| (a.category, &a.lang).cmp(&(b.category, &b.lang)));
        let categories = Category::ALL
            .into_iter()
            .filter_map(|c| {
                let rows: Vec<&LangMetrics> = languages.iter().filter(|m| m.category == c).collect();
                let m = rows.len() as f64;
                (!rows.is_empty()).then(|| CategoryMetrics {
                    category: c,
                    languages: rows.len(),
                    n: rows.iter().map(|r| r.n).sum(),
                    hit1: rows.iter().map(|r| r.hit1).sum::<f64>() / m,
                    hitk: rows.iter().map(|r| r.hitk).sum::<f64>() / m,
                    mrr: rows.iter().map(|r| r.mrr).sum::<f64>() / m,
                })
            })
            .collect();
        MetricReport { task: task.to_string(), variant: variant.to_string(), k, languages, categories, meta: RunMeta::default() }
    }

    pub fn category(&self, c: Category) -> Option<&CategoryMetrics> {
        self.categories.iter().find(|m| m.category == c)
    }

    pub fn language(&self, lang: &str) -> Option<&LangMetrics> {
        self.languages.iter().find(|m| m.lang == lang)
    }

    /// Unweighted mean over all evaluated languages.
    pub fn mean(&self) -> (f64, f64, f64) {
        let m = self.languages.len().max(1) as f64;
        let sum = |f: fn(&LangMetrics) -> f64| self.languages.iter().map(f).sum::<f64>() / m;
        (sum(|r| r.hit1), sum(|r| r.hitk), sum(|r| r.mrr))
    }

    /// Per-language rows followed by one `avg` row per category.
    pub fn tsv_rows(&self) -> Vec<String> {
        let mut rows: Vec<String> = self
            .languages
            .iter()
            .map(|r| format!("{}\t{}\t{}\t{}\t{}\t{}\t{}", self.variant, r.lang, r.category, r.n, pct(r.hit1), pct(r.hitk), pct(r.mrr)))
            .collect();
        rows.extend(self.categories.iter().map(|c| {
            format!("{}\tavg\t{}\t{}\t{}\t{}\t{}", self.variant, c.category, c.n, pct(c.hit1), pct(c.hitk), pct(c.mrr))
        }));
        rows
    }
}

pub const TSV_HEADER: &str = "variant\tlang\tcategory\tn\thit1\thitk\tmrr";

/// One table for several reports, with provenance as leading comment lines.
pub fn reports_tsv(reports: &[MetricReport]) -> Result<String> {
    let first = reports.first().ok_or_else(|| Error::Data("no reports to emit".into()))?;
    let m = &first.meta;
    let mut out = format!(
        "# task={} k={} seed={} profile={} config_hash={} checkpoint_hash={}\n{TSV_HEADER}\n",
        first.task, first.k, m.seed, m.profile, m.config_hash, m.checkpoint_hash
    );
    for r in reports {
        for row in r.tsv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Scores ranks grouped by language.
pub fn report_from_ranks(
    task: &str,
    variant: &str,
    k: usize,
    split: &LanguageSplit,
    ranks: &BTreeMap<String, Vec<usize>>,
) -> Result<MetricReport> {
    let rows = ranks
        .iter()
        .map(|(lang, r)| {
            let c = split.category(lang).ok_or_else(|| Error::Data(format!("language `{lang}` is in no category")))?;
            LangMetrics::from_ranks(lang, c, r, k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::new(task, variant, k, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(rows: &[[f32; 2]], ids: &[&str]) -> CandidateIndex {
        let data = rows.iter().flatten().copied().collect();
        CandidateIndex::new("xx", ids.iter().map(|s| s.to_string()).collect(), Tensor::new(vec![rows.len(), 2], data).unwrap()).unwrap()
    }

    #[test]
    fn hand_metrics() {
        let r = [1, 2, 4];
        assert!((hits_at_k(&r, 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(hits_at_k(&r, 4).unwrap(), 1.0);
        assert!((mrr(&r).unwrap() - 0.583_333_333_333).abs() < 1e-9);
        assert_eq!(mrr(&[3]).unwrap(), 1.0 / 3.0);
        assert!(hits_at_k(&[], 1).is_err());
        assert!(mrr(&[0]).is_err());
        assert_eq!(mrr(&[usize::MAX, 1]).unwrap(), 0.5);
    }

    #[test]
    fn ties_favour_lower_ids() {
        let idx = index(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], &["Q2", "Q1", "Q3"]);
        assert_eq!(rank(&[2.0, 0.0], &idx).unwrap(), ["Q1", "Q2", "Q3"]);
        assert_eq!(gold_rank(&[2.0, 0.0], &idx, "Q2").unwrap(), 2);
        assert_eq!(gold_rank(&[0.0, 1.0], &idx, "Q3").unwrap(), 1);
        assert_eq!(gold_rank(&[0.0, 1.0], &idx, "Q9").unwrap(), usize::MAX);
    }

    #[test]
    fn empty_index_and_bad_dims_fail() {
        let idx = CandidateIndex::new("xx", vec![], Tensor::zeros(&[0, 2])).unwrap();
        assert!(rank(&[1.0, 0.0], &idx).is_err());
        let idx = index(&[[1.0, 0.0]], &["Q1"]);
        assert!(rank(&[1.0, 0.0, 0.0], &idx).is_err());
        assert_eq!(gold_rank(&[0.3, -0.2], &idx, "Q1").unwrap(), 1);
    }

    #[test]
    fn tsv_formatting() {
        let m = LangMetrics { lang: "de".into(), category: Category::ZsIn, n: 10, hit1: 0.131, hitk: 0.5, mrr: 0.157 };
        let mut r = MetricReport::new("alignment", "FUSION", 10, vec![m]);
        r.meta.seed = 3;
        let tsv = reports_tsv(&[r.clone()]).unwrap();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[1], TSV_HEADER);
        assert_eq!(lines[2], "FUSION\tde\tZS-In\t10\t13.1\t50.0\t15.7");
        assert_eq!(lines[3], "FUSION\tavg\tZS-In\t10\t13.1\t50.0\t15.7");
        let back: MetricReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
