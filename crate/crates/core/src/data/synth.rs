//! Seeded multilingual knowledge graph with sentence corpora and held-out
//! evaluation sets.
//!
//! Every non-base language spells each base word either identically (a
//! cognate) or with a language suffix, so the per-language lexicons are
//! bijective images of one base lexicon and alignment ground truth is exact.
//! Unseen zero-shot languages borrow most of their forms from a related
//! seen zero-shot language, the way closely related languages share
//! vocabulary.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::{AlignmentPair, CompletionItem, Labeled, LanguageSplit, Mlkg, TaggedSentence, Triple, TripleSentence};
use crate::error::{Error, Result};
use crate::seed::rng_for;

const LANGUAGE_CODES: [&str; 24] = [
    "en", "de", "fr", "it", "es", "pt", "nl", "sv", "pl", "ru", "ja", "zh", "ar", "hi", "ko", "tr", "fi", "hu", "cs",
    "el", "he", "id", "vi", "th",
];
const FUNCTION_WORDS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub languages: usize,
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub sentences_per_entity: usize,
    /// Size of the base syllable inventory entity labels are built from.
    pub syllables: usize,
    pub seed: u64,
    pub sup: usize,
    pub zs_in: usize,
    pub zs_un: usize,
    /// Probability that a non-base language keeps the base spelling.
    pub cognate_rate: f64,
    /// Probability that an unseen language copies its related language's form.
    pub inherit_rate: f64,
    pub completion_test_fraction: f64,
    pub alignment_test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            languages: 6,
            entities: 200,
            relations: 8,
            triples: 600,
            sentences_per_entity: 2,
            syllables: 48,
            seed: 7,
            sup: 3,
            zs_in: 2,
            zs_un: 1,
            cognate_rate: 0.5,
            inherit_rate: 0.75,
            completion_test_fraction: 0.2,
            alignment_test_fraction: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.entities < 10 || self.relations < 2 || self.languages < 3 {
            return Err(Error::Config("synthetic data needs at least 10 entities, 2 relations and 3 languages".into()));
        }
        if self.sup + self.zs_in + self.zs_un > self.languages || self.sup == 0 {
            return Err(Error::Config(format!(
                "category sizes {}+{}+{} do not fit {} languages with at least one supervised",
                self.sup, self.zs_in, self.zs_un, self.languages
            )));
        }
        let rates = [self.cognate_rate, self.inherit_rate, self.completion_test_fraction, self.alignment_test_fraction];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("rates and fractions must lie in [0, 1]".into()));
        }
        if self.syllables < 4 || self.syllables > 300 {
            return Err(Error::Config("syllable inventory must hold between 4 and 300 entries".into()));
        }
        if self.sentences_per_entity == 0 {
            return Err(Error::Config("sentences_per_entity must be positive".into()));
        }
        Ok(())
    }
}

/// Everything the generator emits.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub kg: Mlkg,
    pub c1: Vec<TaggedSentence>,
    pub c2: Vec<TripleSentence>,
    pub split: LanguageSplit,
    pub base_lang: String,
    /// Pretraining text over all languages.
    pub corpus: Vec<(String, String)>,
    pub completion_train: Vec<CompletionItem>,
    pub completion_test: Vec<CompletionItem>,
    pub alignment_train: Vec<AlignmentPair>,
    pub alignment_test: Vec<AlignmentPair>,
}

pub fn language_codes(n: usize) -> Vec<String> {
    (0..n).map(|i| LANGUAGE_CODES.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("x{i}"))).collect()
}

/// Assigns the first `sup` languages to Sup, the next `zs_in` to ZS-In and
/// the next `zs_un` to ZS-Un.
pub fn assign_language_splits(languages: &[String], sup: usize, zs_in: usize, zs_un: usize) -> Result<LanguageSplit> {
    if sup + zs_in + zs_un > languages.len() {
        return Err(Error::Config(format!("{} categories requested for {} languages", sup + zs_in + zs_un, languages.len())));
    }
    LanguageSplit::new(
        languages[..sup].to_vec(),
        languages[sup..sup + zs_in].to_vec(),
        languages[sup + zs_in..sup + zs_in + zs_un].to_vec(),
    )
}

fn base_words<R: Rng>(n: usize, rng: &mut R) -> Vec<String> {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
    const CODAS: &[&str] = &["", "n", "r", "s", "l"];
    let mut all: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| VOWELS.iter().flat_map(move |v| CODAS.iter().map(move |c| format!("{o}{v}{c}"))))
        .collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}

/// Per-language spellings of every base word.
struct Lexicon {
    forms: Vec<Vec<String>>,
}

impl Lexicon {
    fn new<R: Rng>(words: &[String], langs: &[String], split: &LanguageSplit, cfg: &SynthConfig, rng: &mut R) -> Self {
        let mut forms: Vec<Vec<String>> = Vec::with_capacity(langs.len());
        for (li, lang) in langs.iter().enumerate() {
            let parent = split
                .zs_un
                .iter()
                .position(|l| l == lang)
                .filter(|_| !split.zs_in.is_empty())
                .map(|k| &split.zs_in[k % split.zs_in.len()])
                .and_then(|p| langs.iter().position(|l| l == p));
            let row = words
                .iter()
                .enumerate()
                .map(|(wi, w)| {
                    if li == 0 {
                        return w.clone();
                    }
                    if let Some(pi) = parent {
                        if rng.random::<f64>() < cfg.inherit_rate {
                            return forms[pi][wi].clone();
                        }
                    }
                    if rng.random::<f64>() < cfg.cognate_rate {
                        w.clone()
                    } else {
                        format!("{w}_{lang}")
                    }
                })
                .collect();
            forms.push(row);
        }
        Lexicon { forms }
    }

    fn phrase(&self, lang: usize, word_ids: &[usize]) -> String {
        word_ids.iter().map(|&w| self.forms[lang][w].as_str()).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Fw(usize),
    Head,
    Rel,
    Tail,
}

const FACT_TEMPLATES: [&[Slot]; 4] = [
    &[Slot::Head, Slot::Rel, Slot::Tail],
    &[Slot::Fw(0), Slot::Head, Slot::Rel, Slot::Tail, Slot::Fw(1)],
    &[Slot::Head, Slot::Rel, Slot::Tail, Slot::Fw(2), Slot::Fw(3)],
    &[Slot::Fw(4), Slot::Fw(5), Slot::Head, Slot::Rel, Slot::Tail],
];
const MENTION_TEMPLATES: [&[Slot]; 2] = [&[Slot::Fw(6), Slot::Head, Slot::Fw(7)], &[Slot::Head, Slot::Fw(6), Slot::Fw(1), Slot::Fw(7)]];

struct Rendered {
    tokens: Vec<String>,
    head: (usize, usize),
    tail: Option<(usize, usize)>,
}

fn render(template: &[Slot], parts: [&str; 3], fw: &[String]) -> Rendered {
    let mut tokens: Vec<String> = Vec::new();
    let (mut head, mut tail) = ((0, 0), None);
    for slot in template {
        let start = tokens.len();
        let text = match *slot {
            Slot::Fw(i) => fw[i].as_str(),
            Slot::Head => parts[0],
            Slot::Rel => parts[1],
            Slot::Tail => parts[2],
        };
        tokens.extend(text.split_whitespace().map(String::from));
        let span = (start, tokens.len() - 1);
        match slot {
            Slot::Head => head = span,
            Slot::Tail => tail = Some(span),
            _ => {}
        }
    }
    Rendered { tokens, head, tail }
}

/// Generates the synthetic benchmark. Identical configs give identical output.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let langs = language_codes(cfg.languages);
    let split = assign_language_splits(&langs, cfg.sup, cfg.zs_in, cfg.zs_un)?;

    let mut rng = rng_for(cfg.seed, "synth.lexicon");
    let n_stems = 2 * cfg.relations;
    let words = base_words(cfg.syllables + n_stems + FUNCTION_WORDS, &mut rng);
    if words.len() < cfg.syllables + n_stems + FUNCTION_WORDS {
        return Err(Error::Config("too many relations for the base word inventory".into()));
    }
    let lex = Lexicon::new(&words, &langs, &split, cfg, &mut rng);
    let syl = 0..cfg.syllables;
    let stem = |i: usize| cfg.syllables + i;
    let fw_id = |i: usize| cfg.syllables + n_stems + i;

    // entity labels: unique syllable sequences of length 2 or 3
    let mut rng = rng_for(cfg.seed, "synth.entities");
    let max_labels = cfg.syllables * cfg.syllables * (1 + cfg.syllables);
    if cfg.entities * 2 > max_labels {
        return Err(Error::Config("syllable inventory too small for the entity count".into()));
    }
    let mut seen = BTreeSet::new();
    let mut entity_words: Vec<Vec<usize>> = Vec::with_capacity(cfg.entities);
    while entity_words.len() < cfg.entities {
        let len = if rng.random::<f64>() < 0.3 { 3 } else { 2 };
        let w: Vec<usize> = (0..len).map(|_| rng.random_range(syl.clone())).collect();
        if seen.insert(w.clone()) {
            entity_words.push(w);
        }
    }
    let label_map = |ws: &[usize]| -> Vec<(String, String)> {
        langs.iter().enumerate().map(|(li, l)| (l.clone(), lex.phrase(li, ws))).collect()
    };
    let entities: Vec<Labeled> = entity_words
        .iter()
        .enumerate()
        .map(|(i, ws)| Labeled::new(format!("E{i:04}"), label_map(ws)))
        .collect();
    let relation_words: Vec<Vec<usize>> = (0..cfg.relations).map(|r| vec![stem(2 * r), stem(2 * r + 1)]).collect();
    let relations: Vec<Labeled> = relation_words
        .iter()
        .enumerate()
        .map(|(r, ws)| Labeled::new(format!("R{r:02}"), label_map(ws)))
        .collect();

    // typed, functional facts with popular tails per relation
    // few enough types that every relation has room for its share of facts
    let n_types = (cfg.entities * cfg.relations / (2 * cfg.triples.max(1))).clamp(2, 5);
    let mut order: Vec<usize> = (0..cfg.entities).collect();
    order.shuffle(&mut rng);
    let mut by_type: Vec<Vec<usize>> = vec![Vec::new(); n_types];
    for (k, &e) in order.iter().enumerate() {
        by_type[k % n_types].push(e);
    }
    for t in &mut by_type {
        t.sort_unstable();
    }
    let mut rng = rng_for(cfg.seed, "synth.triples");
    let signatures: Vec<(usize, Vec<usize>)> = (0..cfg.relations)
        .map(|_| {
            let head_type = rng.random_range(0..n_types);
            let tail_type = rng.random_range(0..n_types);
            let mut pool = by_type[tail_type].clone();
            pool.shuffle(&mut rng);
            pool.truncate((by_type[tail_type].len() / 3).max(2));
            (head_type, pool)
        })
        .collect();
    let mut used = BTreeSet::new();
    let mut triple_idx: Vec<(usize, usize, usize)> = Vec::with_capacity(cfg.triples);
    let mut attempts = 0;
    while triple_idx.len() < cfg.triples && attempts < 50 * cfg.triples.max(1) {
        attempts += 1;
        let r = rng.random_range(0..cfg.relations);
        let (ht, pool) = &signatures[r];
        let h = *by_type[*ht].choose(&mut rng).expect("types are non-empty");
        let weights: Vec<f64> = (0..pool.len()).map(|k| 1.0 / (k + 1) as f64).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut t = pool[pool.len() - 1];
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                t = pool[k];
                break;
            }
            u -= w;
        }
        if t != h && used.insert((h, r)) {
            triple_idx.push((h, r, t));
        }
    }
    let triples: Vec<Triple> = triple_idx
        .iter()
        .map(|&(h, r, t)| Triple::new(entities[h].id.clone(), relations[r].id.clone(), entities[t].id.clone()))
        .collect();
    let kg = Mlkg::new(entities, relations, triples)?;

    // sentences
    let mut rng = rng_for(cfg.seed, "synth.sentences");
    let fws: Vec<Vec<String>> = (0..langs.len())
        .map(|li| (0..FUNCTION_WORDS).map(|i| lex.forms[li][fw_id(i)].clone()).collect())
        .collect();
    let mut facts_of: Vec<Vec<usize>> = vec![Vec::new(); cfg.entities];
    for (k, &(h, _, t)) in triple_idx.iter().enumerate() {
        facts_of[h].push(k);
        facts_of[t].push(k);
    }
    let fact_parts = |li: usize, k: usize| -> [String; 3] {
        let (h, r, t) = triple_idx[k];
        [lex.phrase(li, &entity_words[h]), lex.phrase(li, &relation_words[r]), lex.phrase(li, &entity_words[t])]
    };
    let mut c1 = Vec::new();
    for (e, ws) in entity_words.iter().enumerate() {
        for (li, lang) in langs.iter().enumerate() {
            for _ in 0..cfg.sentences_per_entity {
                let rec = if let Some(&k) = facts_of[e].choose(&mut rng) {
                    let parts = fact_parts(li, k);
                    let tpl = FACT_TEMPLATES.choose(&mut rng).expect("non-empty");
                    let r = render(tpl, [&parts[0], &parts[1], &parts[2]], &fws[li]);
                    let span = if triple_idx[k].0 == e { r.head } else { r.tail.expect("fact template") };
                    TaggedSentence { lang: lang.clone(), entity: kg.entities()[e].id.clone(), span, tokens: r.tokens }
                } else {
                    let label = lex.phrase(li, ws);
                    let tpl = MENTION_TEMPLATES.choose(&mut rng).expect("non-empty");
                    let r = render(tpl, [&label, "", ""], &fws[li]);
                    TaggedSentence { lang: lang.clone(), entity: kg.entities()[e].id.clone(), span: r.head, tokens: r.tokens }
                };
                c1.push(rec);
            }
        }
    }
    let base = langs[0].clone();
    let mut c2 = Vec::with_capacity(triple_idx.len());
    let mut corpus: Vec<(String, String)> = c1.iter().map(|r| (r.lang.clone(), r.tokens.join(" "))).collect();
    for (k, t) in kg.triples().iter().enumerate() {
        let parts = fact_parts(0, k);
        let tpl = FACT_TEMPLATES.choose(&mut rng).expect("non-empty");
        let r = render(tpl, [&parts[0], &parts[1], &parts[2]], &fws[0]);
        c2.push(TripleSentence { lang: base.clone(), triple: t.clone(), span: r.tail.expect("fact template"), tokens: r.tokens });
        for (li, lang) in langs.iter().enumerate() {
            let parts = fact_parts(li, k);
            let tpl = FACT_TEMPLATES.choose(&mut rng).expect("non-empty");
            let r = render(tpl, [&parts[0], &parts[1], &parts[2]], &fws[li]);
            corpus.push((lang.clone(), r.tokens.join(" ")));
        }
    }

    // held-out evaluation sets
    let mut rng = rng_for(cfg.seed, "synth.splits");
    let mut tix: Vec<usize> = (0..kg.triples().len()).collect();
    tix.shuffle(&mut rng);
    let n_test = (cfg.completion_test_fraction * tix.len() as f64).round() as usize;
    let (test_t, train_t) = tix.split_at(n_test);
    let (mut test_t, mut train_t) = (test_t.to_vec(), train_t.to_vec());
    test_t.sort_unstable();
    train_t.sort_unstable();
    let kg_ref = &kg;
    let items = |ix: &[usize], langs: &[String]| -> Vec<CompletionItem> {
        langs
            .iter()
            .flat_map(|l| ix.iter().map(move |&k| CompletionItem { lang: l.clone(), triple: kg_ref.triples()[k].clone() }))
            .collect()
    };
    let completion_train = items(&train_t, &split.sup);
    let completion_test = items(&test_t, &split.all());

    let mut eix: Vec<usize> = (0..cfg.entities).collect();
    eix.shuffle(&mut rng);
    let n_test = (cfg.alignment_test_fraction * eix.len() as f64).round() as usize;
    let (test_e, train_e) = eix.split_at(n_test);
    let (mut test_e, mut train_e) = (test_e.to_vec(), train_e.to_vec());
    test_e.sort_unstable();
    train_e.sort_unstable();
    let pairs = |ix: &[usize], targets: &[String]| -> Vec<AlignmentPair> {
        targets
            .iter()
            .filter(|l| **l != base)
            .flat_map(|l| {
                ix.iter().map(|&e| AlignmentPair { src: base.clone(), tgt: l.clone(), entity: kg.entities()[e].id.clone() })
            })
            .collect()
    };
    let alignment_train = pairs(&train_e, &split.sup);
    let alignment_test = pairs(&test_e, &split.all());

    Ok(SynthData {
        kg,
        c1,
        c2,
        split,
        base_lang: base,
        corpus,
        completion_train,
        completion_test,
        alignment_train,
        alignment_test,
    })
}
