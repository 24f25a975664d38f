//! Whitespace tokenization, a small pre-norm transformer encoder, and
//! masked-language-model pretraining.

mod mlm;
mod model;
mod vocab;

pub use mlm::{mlm_pretrain, MlmHyper, MlmOutcome};
pub use model::{
    encode, encode_graph, init_backbone, mean_pool, sentence_groups, EncoderConfig, HiddenStates, HiddenVars,
    IdentityHook, LayerHook, PaddedBatch, BACKBONE_PREFIX,
};
pub use vocab::{mask_span, tokenize, tokenize_words, TokenSeq, Vocab, MASK, PAD, SEP, UNK};
