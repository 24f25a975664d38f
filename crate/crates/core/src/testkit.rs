//! Small fixtures shared by unit tests.

use crate::adapters::AdaptedEncoder;
use crate::data::{gen_synthetic, SynthConfig, SynthData};
use crate::encoder::{init_backbone, EncoderConfig, Vocab};
use crate::eval::TaskData;
use crate::objectives::KnowledgeSource;
use crate::seed::rng_for;

pub(crate) struct Fixture {
    pub data: SynthData,
    pub task: TaskData,
    pub vocab: Vocab,
    pub model: AdaptedEncoder,
    pub source: KnowledgeSource,
}

pub(crate) fn fixture() -> Fixture {
    let data = gen_synthetic(&SynthConfig { entities: 40, triples: 80, ..SynthConfig::default() }).unwrap();
    let vocab = Vocab::build(data.corpus.iter().map(|(_, s)| s.as_str()), 1).unwrap();
    let cfg = EncoderConfig { layers: 1, dim: 16, heads: 2, ff_dim: 32, max_len: 24, vocab_size: vocab.len() };
    let params = init_backbone(&cfg, &mut rng_for(3, "fixture")).unwrap();
    let mut model = AdaptedEncoder::new(cfg, params).unwrap();
    model.train_only(|_| false);
    let source = KnowledgeSource::for_split(&data.kg, &data.c1, &data.c2, &data.split).unwrap();
    Fixture { task: TaskData::from_synth(&data), data, vocab, model, source }
}
