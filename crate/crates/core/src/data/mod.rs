//! Multilingual knowledge-graph data: types, file formats, preprocessing
//! filters, language categories and a synthetic generator.

mod filters;
mod io;
mod synth;
mod types;

pub use filters::{audit_languages, filter_descriptions, filter_entities, filter_triples, label_languages, AuditFinding};
pub use io::{
    load_alignment, load_c1, load_c2, load_completion, load_corpus, load_labeled, load_mlkg, load_split, load_triples,
    save_alignment, save_c1, save_c2, save_completion, save_corpus, save_labeled, save_mlkg, save_split, save_triples,
};
pub use synth::{assign_language_splits, gen_synthetic, language_codes, SynthConfig, SynthData};
pub use types::{
    AlignmentPair, Category, CompletionItem, Entity, KgStats, Labeled, LanguageSplit, Mlkg, Relation, TaggedSentence,
    Triple, TripleSentence,
};
