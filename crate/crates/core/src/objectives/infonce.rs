use crate::adapters::AdaptedEncoder;
use crate::encoder::{encode_graph, tokenize_words, PaddedBatch, TokenSeq, Vocab};
use crate::error::{Error, Result};
use crate::numeric::{cosine_sim, Graph, Real, Tensor, Var};

/// How a text item is reduced to one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    /// mean over every token except PAD, SEP and MASK
    Sentence,
    /// mean over an inclusive token span
    Span(usize, usize),
}

/// A whitespace-tokenized text to be encoded and pooled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextItem {
    pub tokens: Vec<String>,
    /// languages of the labels that make up the text
    pub langs: Vec<String>,
    pub pool: Pool,
}

impl TextItem {
    pub fn label(label: &str, lang: &str) -> Self {
        TextItem { tokens: label.split_whitespace().map(String::from).collect(), langs: vec![lang.to_string()], pool: Pool::Sentence }
    }
}

/// One anchor/positive pair and the record it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSpec {
    pub anchor: TextItem,
    pub positive: TextItem,
    pub source: String,
}

/// Encoded anchors and positives; row `i` of each forms a pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub anchors: Tensor,
    pub positives: Tensor,
    pub provenance: Vec<String>,
}

fn to_batch(items: &[TextItem], vocab: &Vocab, max_len: usize) -> Result<(PaddedBatch, Vec<Vec<usize>>)> {
    let seqs = items
        .iter()
        .map(|it| tokenize_words(&it.tokens, it.langs.first().map_or("", String::as_str), vocab, max_len))
        .collect::<Result<Vec<TokenSeq>>>()?;
    let batch = PaddedBatch::new(&seqs, max_len)?;
    let skip = [Vocab::PAD_ID, Vocab::SEP_ID, Vocab::MASK_ID];
    let groups = items
        .iter()
        .enumerate()
        .map(|(b, it)| {
            let n = seqs[b].len();
            let g: Vec<usize> = match it.pool {
                Pool::Span(i, j) if i <= j && j < n => (i..=j).map(|t| batch.row(b, t)).collect(),
                Pool::Span(i, j) => return Err(Error::Data(format!("span ({i}, {j}) outside {n} tokens"))),
                Pool::Sentence => (0..n).map(|t| batch.row(b, t)).filter(|&r| !skip.contains(&batch.ids[r])).collect(),
            };
            if g.is_empty() {
                return Err(Error::Data(format!("nothing to pool in {:?}", it.tokens)));
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((batch, groups))
}

/// Encodes and pools `items` in one padded batch; returns `[items, dim]`.
pub fn encode_items<T: Real>(g: &mut Graph<'_, T>, model: &AdaptedEncoder, vocab: &Vocab, items: &[TextItem]) -> Result<Var> {
    let (batch, groups) = to_batch(items, vocab, model.config().max_len)?;
    let h = encode_graph(g, model.config(), &batch, Some(model))?;
    g.mean_rows(h.last, groups)
}

/// Pooled representations outside of training, `[items, dim]`.
pub fn embed_items(model: &AdaptedEncoder, vocab: &Vocab, items: &[TextItem]) -> Result<Tensor> {
    let mut g = Graph::<f32>::new(model.params());
    let v = encode_items(&mut g, model, vocab, items)?;
    Ok(g.to_tensor(v))
}

pub fn embed_pairs(model: &AdaptedEncoder, vocab: &Vocab, pairs: &[PairSpec]) -> Result<ContrastiveBatch> {
    let items: Vec<TextItem> = pairs.iter().map(|p| p.anchor.clone()).chain(pairs.iter().map(|p| p.positive.clone())).collect();
    let all = embed_items(model, vocab, &items)?;
    let (b, d) = (pairs.len(), model.config().dim);
    Ok(ContrastiveBatch {
        anchors: Tensor::new(vec![b, d], all.data()[..b * d].to_vec())?,
        positives: Tensor::new(vec![b, d], all.data()[b * d..].to_vec())?,
        provenance: pairs.iter().map(|p| p.source.clone()).collect(),
    })
}

/// InfoNCE over cosine similarities with in-batch negatives: row `i` of
/// `anchors` should pick row `i` of `positives` among all positives.
pub fn infonce_graph<T: Real>(g: &mut Graph<'_, T>, anchors: Var, positives: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let a = g.l2_normalize_rows(anchors)?;
    let p = g.l2_normalize_rows(positives)?;
    let sims = g.matmul_nt(a, p)?;
    let logits = g.scale(sims, 1.0 / tau)?;
    let b = g.shape(anchors)[0];
    let targets: Vec<usize> = (0..b).collect();
    g.cross_entropy(logits, &targets)
}

/// Contrastive loss of a batch of text pairs under `model`.
pub fn pair_loss<T: Real>(g: &mut Graph<'_, T>, model: &AdaptedEncoder, vocab: &Vocab, pairs: &[PairSpec], tau: f64) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::Data("empty contrastive batch".into()));
    }
    let items: Vec<TextItem> = pairs.iter().map(|p| p.anchor.clone()).chain(pairs.iter().map(|p| p.positive.clone())).collect();
    let pooled = encode_items(g, model, vocab, &items)?;
    let b = pairs.len();
    let a = g.select_rows(pooled, &(0..b).collect::<Vec<_>>())?;
    let p = g.select_rows(pooled, &(b..2 * b).collect::<Vec<_>>())?;
    infonce_graph(g, a, p, tau)
}

/// Reference InfoNCE in double precision on plain vectors.
pub fn infonce(anchors: &[Vec<f32>], positives: &[Vec<f32>], tau: f64) -> Result<f64> {
    if anchors.is_empty() || anchors.len() != positives.len() {
        return Err(Error::Data(format!("{} anchors vs {} positives", anchors.len(), positives.len())));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if anchors.iter().chain(positives).any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("contrastive representations".into()));
    }
    let mut total = 0.0;
    for (i, a) in anchors.iter().enumerate() {
        let logits = positives.iter().map(|p| cosine_sim(a, p).map(|c| c.value as f64 / tau)).collect::<Result<Vec<f64>>>()?;
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
        total += lse - logits[i];
    }
    Ok(total / anchors.len() as f64)
}

/// Mean cosine between paired rows.
pub fn mean_pair_cosine(batch: &ContrastiveBatch) -> Result<f64> {
    let n = batch.anchors.rows();
    let mut s = 0.0;
    for i in 0..n {
        s += cosine_sim(batch.anchors.row(i), batch.positives.row(i))?.value as f64;
    }
    Ok(s / n as f64)
}
