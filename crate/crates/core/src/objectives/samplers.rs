use log::info;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::infonce::{PairSpec, Pool, TextItem};
use crate::data::{LanguageSplit, Mlkg, TaggedSentence, TripleSentence};
use crate::encoder::{MASK, SEP};
use crate::error::{Error, Result};

/// Knowledge restricted to the languages adapters may see.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeSource {
    pub kg: Mlkg,
    pub c1: Vec<TaggedSentence>,
    pub c2: Vec<TripleSentence>,
    pub languages: Vec<String>,
}

impl KnowledgeSource {
    pub fn new(kg: &Mlkg, c1: &[TaggedSentence], c2: &[TripleSentence], languages: &[String]) -> Result<Self> {
        if languages.is_empty() {
            return Err(Error::Config("knowledge source needs at least one language".into()));
        }
        let kg = kg.restrict_languages(languages)?;
        let c1: Vec<TaggedSentence> = c1.iter().filter(|r| languages.contains(&r.lang) && r.validate(&kg).is_ok()).cloned().collect();
        let c2: Vec<TripleSentence> = c2.iter().filter(|r| languages.contains(&r.lang) && r.validate(&kg).is_ok()).cloned().collect();
        Ok(KnowledgeSource { kg, c1, c2, languages: languages.to_vec() })
    }

    /// Supervised and seen zero-shot languages only.
    pub fn for_split(kg: &Mlkg, c1: &[TaggedSentence], c2: &[TripleSentence], split: &LanguageSplit) -> Result<Self> {
        Self::new(kg, c1, c2, &split.adapter_languages())
    }
}

/// Visits items in a fresh random order every epoch.
#[derive(Clone, Debug)]
pub(crate) struct EpochCursor {
    order: Vec<usize>,
    pos: usize,
}

impl EpochCursor {
    pub(crate) fn new(n: usize) -> Self {
        EpochCursor { order: (0..n).collect(), pos: n }
    }

    pub(crate) fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

pub trait PairSampler {
    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<PairSpec>;
}

fn label_tokens(label: &str) -> impl Iterator<Item = String> + '_ {
    label.split_whitespace().map(String::from)
}

/// Entity label pairs across two different languages.
pub struct EpSampler<'a> {
    src: &'a KnowledgeSource,
    pairs: Vec<(usize, String, String)>,
    cursor: EpochCursor,
}

impl<'a> EpSampler<'a> {
    pub fn new(src: &'a KnowledgeSource) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, e) in src.kg.entities().iter().enumerate() {
            for a in e.labels.keys() {
                for b in e.labels.keys() {
                    if a != b {
                        pairs.push((i, a.clone(), b.clone()));
                    }
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::Data("no entity has labels in two permitted languages".into()));
        }
        let n = pairs.len();
        Ok(EpSampler { src, pairs, cursor: EpochCursor::new(n) })
    }
}

impl PairSampler for EpSampler<'_> {
    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<PairSpec> {
        (0..size)
            .map(|_| {
                let (i, a, b) = &self.pairs[self.cursor.next(rng)];
                let e = &self.src.kg.entities()[*i];
                PairSpec {
                    anchor: TextItem::label(&e.labels[a], a),
                    positive: TextItem::label(&e.labels[b], b),
                    source: format!("{}:{a}-{b}", e.id),
                }
            })
            .collect()
    }
}

/// `subject [SEP] relation` against the object label, with code-switching.
pub struct TpSampler<'a> {
    src: &'a KnowledgeSource,
    /// triple index and the languages shared by all three labels
    items: Vec<(usize, Vec<String>)>,
    p_cs: f64,
    cursor: EpochCursor,
}

impl<'a> TpSampler<'a> {
    pub fn new(src: &'a KnowledgeSource, p_cs: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_cs) {
            return Err(Error::Config(format!("code-switch probability {p_cs} outside [0, 1]")));
        }
        let kg = &src.kg;
        let mut items = Vec::new();
        let mut skipped = 0;
        for (k, t) in kg.triples().iter().enumerate() {
            let (h, r, o) = (kg.entity(&t.head).expect("valid"), kg.relation(&t.rel).expect("valid"), kg.entity(&t.tail).expect("valid"));
            let common: Vec<String> =
                h.labels.keys().filter(|l| r.labels.contains_key(*l) && o.labels.contains_key(*l)).cloned().collect();
            if common.is_empty() && p_cs < 1.0 {
                skipped += 1;
                continue;
            }
            items.push((k, common));
        }
        if skipped > 0 {
            info!("triple sampler skipped {skipped} triples without a shared label language");
        }
        if items.is_empty() {
            return Err(Error::Data("no usable triples".into()));
        }
        let n = items.len();
        Ok(TpSampler { src, items, p_cs, cursor: EpochCursor::new(n) })
    }
}

impl PairSampler for TpSampler<'_> {
    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<PairSpec> {
        let kg = &self.src.kg;
        (0..size)
            .map(|_| {
                let (k, common) = &self.items[self.cursor.next(rng)];
                let t = &kg.triples()[*k];
                let (h, r, o) = (kg.entity(&t.head).expect("valid"), kg.relation(&t.rel).expect("valid"), kg.entity(&t.tail).expect("valid"));
                let pick = |m: &std::collections::BTreeMap<String, String>, rng: &mut ChaCha8Rng| {
                    let keys: Vec<&String> = m.keys().collect();
                    (*keys.choose(rng).expect("labels are non-empty")).clone()
                };
                let switch = common.is_empty() || rng.random::<f64>() < self.p_cs;
                let (lh, lr, lo) = if switch {
                    (pick(&h.labels, rng), pick(&r.labels, rng), pick(&o.labels, rng))
                } else {
                    let l = common.choose(rng).expect("non-empty").clone();
                    (l.clone(), l.clone(), l)
                };
                let tokens = label_tokens(&h.labels[&lh]).chain([SEP.to_string()]).chain(label_tokens(&r.labels[&lr])).collect();
                PairSpec {
                    anchor: TextItem { tokens, langs: vec![lh, lr], pool: Pool::Sentence },
                    positive: TextItem::label(&o.labels[&lo], &lo),
                    source: format!("{}|{}|{}", t.head, t.rel, t.tail),
                }
            })
            .collect()
    }
}

/// Entity mention in context against the entity's label in another language.
pub struct EsSampler<'a> {
    src: &'a KnowledgeSource,
    items: Vec<(usize, Vec<String>)>,
    cursor: EpochCursor,
}

impl<'a> EsSampler<'a> {
    pub fn new(src: &'a KnowledgeSource) -> Result<Self> {
        let items: Vec<(usize, Vec<String>)> = src
            .c1
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                let e = src.kg.entity(&r.entity)?;
                let others: Vec<String> = e.labels.keys().filter(|l| **l != r.lang).cloned().collect();
                (!others.is_empty()).then_some((i, others))
            })
            .collect();
        if items.is_empty() {
            return Err(Error::Data("no tagged sentence has a cross-lingual label".into()));
        }
        let n = items.len();
        Ok(EsSampler { src, items, cursor: EpochCursor::new(n) })
    }
}

impl PairSampler for EsSampler<'_> {
    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<PairSpec> {
        (0..size)
            .map(|_| {
                let (i, others) = &self.items[self.cursor.next(rng)];
                let r = &self.src.c1[*i];
                let l = others.choose(rng).expect("non-empty");
                let e = self.src.kg.entity(&r.entity).expect("valid");
                PairSpec {
                    anchor: TextItem { tokens: r.tokens.clone(), langs: vec![r.lang.clone()], pool: Pool::Span(r.span.0, r.span.1) },
                    positive: TextItem::label(&e.labels[l], l),
                    source: format!("c1:{i}:{l}"),
                }
            })
            .collect()
    }
}

/// Triple sentence with the object masked against the object label.
pub struct TsSampler<'a> {
    src: &'a KnowledgeSource,
    cursor: EpochCursor,
}

impl<'a> TsSampler<'a> {
    pub fn new(src: &'a KnowledgeSource) -> Result<Self> {
        if src.c2.is_empty() {
            return Err(Error::Data("no triple sentences".into()));
        }
        Ok(TsSampler { src, cursor: EpochCursor::new(src.c2.len()) })
    }
}

impl PairSampler for TsSampler<'_> {
    fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<PairSpec> {
        (0..size)
            .map(|_| {
                let i = self.cursor.next(rng);
                let r = &self.src.c2[i];
                let (s, e) = r.span;
                let tokens = r.tokens[..s].iter().cloned().chain([MASK.to_string()]).chain(r.tokens[e + 1..].iter().cloned()).collect();
                let o = self.src.kg.entity(&r.triple.tail).expect("valid");
                PairSpec {
                    anchor: TextItem { tokens, langs: vec![r.lang.clone()], pool: Pool::Sentence },
                    positive: TextItem::label(&o.labels[&r.lang], &r.lang),
                    source: format!("c2:{i}"),
                }
            })
            .collect()
    }
}

pub fn sample_ep_batch(src: &KnowledgeSource, size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<PairSpec>> {
    Ok(EpSampler::new(src)?.next_batch(size, rng))
}

pub fn sample_tp_batch(src: &KnowledgeSource, size: usize, p_cs: f64, rng: &mut ChaCha8Rng) -> Result<Vec<PairSpec>> {
    Ok(TpSampler::new(src, p_cs)?.next_batch(size, rng))
}

pub fn sample_es_batch(src: &KnowledgeSource, size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<PairSpec>> {
    Ok(EsSampler::new(src)?.next_batch(size, rng))
}

pub fn sample_ts_batch(src: &KnowledgeSource, size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<PairSpec>> {
    Ok(TsSampler::new(src)?.next_batch(size, rng))
}
