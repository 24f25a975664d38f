//! Contrastive knowledge objectives and adapter training.

mod infonce;
mod samplers;
mod train;

pub use infonce::{
    embed_items, embed_pairs, encode_items, infonce, infonce_graph, mean_pair_cosine, pair_loss, ContrastiveBatch, PairSpec,
    Pool, TextItem,
};
pub use samplers::{
    sample_ep_batch, sample_es_batch, sample_tp_batch, sample_ts_batch, EpSampler, EsSampler, KnowledgeSource, PairSampler,
    TpSampler, TsSampler,
};
pub(crate) use samplers::EpochCursor;
pub use train::{train_adapter, train_contrastive, AdapterTrainReport, ContrastiveRun, LanguageCounts, TrainHyper};
