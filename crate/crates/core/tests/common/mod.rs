#![allow(dead_code)]

use kadapt::adapters::AdaptedEncoder;
use kadapt::data::{gen_synthetic, SynthConfig, SynthData};
use kadapt::encoder::{init_backbone, EncoderConfig, Vocab};
use kadapt::objectives::KnowledgeSource;
use kadapt::seed::rng_for;

pub struct Tiny {
    pub data: SynthData,
    pub vocab: Vocab,
    pub model: AdaptedEncoder,
    pub source: KnowledgeSource,
}

/// A small synthetic graph with a frozen random encoder of the given shape.
pub fn tiny(layers: usize, dim: usize, seed: u64) -> Tiny {
    let data = gen_synthetic(&SynthConfig { entities: 40, triples: 80, seed, ..SynthConfig::default() }).unwrap();
    let vocab = Vocab::build(data.corpus.iter().map(|(_, s)| s.as_str()), 1).unwrap();
    let cfg = EncoderConfig { layers, dim, heads: 2, ff_dim: 2 * dim, max_len: 24, vocab_size: vocab.len() };
    let params = init_backbone(&cfg, &mut rng_for(seed, "tiny")).unwrap();
    let mut model = AdaptedEncoder::new(cfg, params).unwrap();
    model.train_only(|_| false);
    let source = KnowledgeSource::for_split(&data.kg, &data.c1, &data.c2, &data.split).unwrap();
    Tiny { data, vocab, model, source }
}
