use std::collections::BTreeMap;

use log::debug;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::infonce::{embed_pairs, mean_pair_cosine, pair_loss, PairSpec};
use super::samplers::{EpSampler, EsSampler, KnowledgeSource, PairSampler, TpSampler, TsSampler};
use crate::adapters::{adapter_prefix, group_checksums, verify_frozen, AdaptedEncoder, AdapterKind, Mode};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::numeric::{adam_step, grad_eval, warmup_lr, AdamConfig, AdamState, LossRecord};
use crate::seed::rng_for;

/// Contrastive training hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub batch: usize,
    pub steps: u64,
    pub lr: f64,
    pub warmup: u64,
    pub tau: f64,
    /// code-switching probability for triple pairs
    #[serde(default)]
    pub p_cs: f64,
    pub seed: u64,
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config(format!("contrastive batch must hold at least 2 pairs, got {}", self.batch)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.p_cs) {
            return Err(Error::Config(format!("code-switch probability {} outside [0, 1]", self.p_cs)));
        }
        Ok(())
    }
}

/// Outcome of training one adapter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterTrainReport {
    pub kind: AdapterKind,
    pub curve: Vec<LossRecord>,
    /// mean anchor/positive cosine on a fixed probe batch
    pub probe_before: f64,
    pub probe_after: f64,
    pub languages: LanguageCounts,
}

/// Number of training texts drawn per language.
pub type LanguageCounts = BTreeMap<String, u64>;

/// Loss curve and the languages the training batches contained.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContrastiveRun {
    pub curve: Vec<LossRecord>,
    pub languages: LanguageCounts,
}

/// Runs `hyper.steps` Adam steps on the model's trainable parameters,
/// drawing one batch per step from `next_batch`.
pub fn train_contrastive<F>(
    model: &mut AdaptedEncoder,
    vocab: &Vocab,
    hyper: &TrainHyper,
    rng: &mut ChaCha8Rng,
    mut next_batch: F,
) -> Result<ContrastiveRun>
where
    F: FnMut(u64, &mut ChaCha8Rng) -> Vec<PairSpec>,
{
    hyper.validate()?;
    let adam = AdamConfig::default();
    let mut state = AdamState::new();
    let mut curve = Vec::with_capacity(hyper.steps as usize);
    let mut languages = LanguageCounts::new();
    for step in 1..=hyper.steps {
        let pairs = next_batch(step, rng);
        for item in pairs.iter().flat_map(|p| [&p.anchor, &p.positive]) {
            for lang in &item.langs {
                *languages.entry(lang.clone()).or_default() += 1;
            }
        }
        let (loss, grads) = {
            let m = &*model;
            grad_eval(m.params(), |g| pair_loss(g, m, vocab, &pairs, hyper.tau))?
        };
        let lr = warmup_lr(step, hyper.lr, hyper.warmup);
        adam_step(model.params_mut(), &grads, &mut state, lr as f32, &adam)?;
        if step % 50 == 0 || step == 1 {
            debug!("contrastive step {step}: loss {loss:.4}");
        }
        curve.push(LossRecord { step, lr, loss });
    }
    Ok(ContrastiveRun { curve, languages })
}

const PROBE_PAIRS: usize = 64;

/// Trains the adapter of `kind` with its knowledge objective while
/// everything else stays frozen. LARGE cycles through all four objectives.
pub fn train_adapter(
    model: &mut AdaptedEncoder,
    kind: AdapterKind,
    source: &KnowledgeSource,
    vocab: &Vocab,
    hyper: &TrainHyper,
) -> Result<AdapterTrainReport> {
    hyper.validate()?;
    let mut samplers: Vec<Box<dyn PairSampler + '_>> = match kind {
        AdapterKind::EP => vec![Box::new(EpSampler::new(source)?)],
        AdapterKind::TP => vec![Box::new(TpSampler::new(source, hyper.p_cs)?)],
        AdapterKind::ES => vec![Box::new(EsSampler::new(source)?)],
        AdapterKind::TS => vec![Box::new(TsSampler::new(source)?)],
        AdapterKind::LARGE => vec![
            Box::new(EpSampler::new(source)?),
            Box::new(TpSampler::new(source, hyper.p_cs)?),
            Box::new(EsSampler::new(source)?),
            Box::new(TsSampler::new(source)?),
        ],
    };

    let previous_mode = model.mode();
    model.set_mode(Mode::Single(kind))?;
    let prefix = adapter_prefix(kind);
    model.train_only(|n| n.starts_with(&prefix));
    let before = group_checksums(model.params());

    let mut probe_rng = rng_for(hyper.seed, &format!("probe.{kind}"));
    let probe: Vec<PairSpec> = samplers.iter_mut().flat_map(|s| s.next_batch(PROBE_PAIRS / 4, &mut probe_rng)).collect();
    let probe_before = mean_pair_cosine(&embed_pairs(model, vocab, &probe)?)?;

    let mut rng = rng_for(hyper.seed, &format!("train.{kind}"));
    let n = samplers.len() as u64;
    let run = train_contrastive(model, vocab, hyper, &mut rng, |step, rng| {
        samplers[((step - 1) % n) as usize].next_batch(hyper.batch, rng)
    })?;

    let probe_after = mean_pair_cosine(&embed_pairs(model, vocab, &probe)?)?;
    verify_frozen(&before, &group_checksums(model.params()), &[format!("adapter.{kind}")], "train-adapter")?;
    model.train_only(|_| false);
    model.set_mode(previous_mode)?;
    Ok(AdapterTrainReport { kind, curve: run.curve, probe_before, probe_after, languages: run.languages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::fixture;

    fn hyper(steps: u64) -> TrainHyper {
        TrainHyper { batch: 8, steps, lr: 5e-3, warmup: 2, tau: 0.1, p_cs: 0.5, seed: 9 }
    }

    #[test]
    fn only_the_adapter_moves() {
        let f = fixture();
        let mut m = f.model.clone();
        m.add_adapter(AdapterKind::EP, 4, 1).unwrap();
        let before = group_checksums(m.params());
        let report = train_adapter(&mut m, AdapterKind::EP, &f.source, &f.vocab, &hyper(5)).unwrap();
        let after = group_checksums(m.params());
        assert_eq!(before["backbone"], after["backbone"]);
        assert_ne!(before["adapter.EP"], after["adapter.EP"]);
        assert_eq!(report.curve.len(), 5);
        assert_eq!(m.mode(), Mode::None);
        assert!(m.params().trainable_names().is_empty());
    }

    #[test]
    fn sampled_languages_exclude_unseen() {
        let f = fixture();
        let mut m = f.model.clone();
        m.add_adapter(AdapterKind::TS, 4, 1).unwrap();
        let report = train_adapter(&mut m, AdapterKind::TS, &f.source, &f.vocab, &hyper(3)).unwrap();
        assert!(!report.languages.is_empty());
        assert!(report.languages.keys().all(|l| !f.data.split.zs_un.contains(l)));
        assert_eq!(report.languages.values().sum::<u64>(), 3 * 8 * 2);
    }

    #[test]
    fn large_cycles_through_objectives() {
        let f = fixture();
        let mut m = f.model.clone();
        m.add_adapter(AdapterKind::LARGE, 8, 1).unwrap();
        let report = train_adapter(&mut m, AdapterKind::LARGE, &f.source, &f.vocab, &hyper(4)).unwrap();
        assert_eq!(report.curve.len(), 4);
    }

    #[test]
    fn invalid_hyper_is_rejected() {
        assert!(TrainHyper { batch: 1, ..hyper(1) }.validate().is_err());
        assert!(TrainHyper { tau: 0.0, ..hyper(1) }.validate().is_err());
        assert!(TrainHyper { p_cs: 2.0, ..hyper(1) }.validate().is_err());
        assert!(hyper(1).validate().is_ok());
    }
}
