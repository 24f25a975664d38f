use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{encode_graph, init_backbone, EncoderConfig, IdentityHook, PaddedBatch};
use super::vocab::{TokenSeq, Vocab};
use crate::error::{Error, Result};
use crate::numeric::{adam_step, grad_eval, warmup_lr, AdamConfig, AdamState, LossRecord, ParamSet};
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlmHyper {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub warmup: u64,
    /// Fraction of eligible tokens selected for prediction.
    pub mask_rate: f64,
    pub seed: u64,
}

impl MlmHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate <= 1.0) {
            return Err(Error::Config(format!("mask rate must lie in (0, 1], got {}", self.mask_rate)));
        }
        if self.batch == 0 || self.warmup == 0 {
            return Err(Error::Config("pretraining batch and warmup must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

pub struct MlmOutcome {
    pub params: ParamSet,
    pub curve: Vec<LossRecord>,
}

/// A batch with corrupted inputs and the original ids at selected rows.
#[derive(Debug)]
pub(crate) struct MaskedBatch {
    pub batch: PaddedBatch,
    pub rows: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Selects each eligible token with probability `rate` (at least one per
/// sequence) and corrupts it 80/10/10 into MASK / random token / unchanged.
pub(crate) fn mask_batch<R: Rng + ?Sized>(
    seqs: &[TokenSeq],
    rate: f64,
    vocab_size: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<MaskedBatch> {
    let mut corrupted = Vec::with_capacity(seqs.len());
    let mut picks = Vec::with_capacity(seqs.len());
    for s in seqs {
        let eligible: Vec<usize> = (0..s.len()).filter(|&i| s.mask[i] == 1 && s.ids[i] >= Vocab::NUM_SPECIAL).collect();
        let mut chosen: Vec<usize> = eligible.iter().copied().filter(|_| rng.random::<f64>() < rate).collect();
        if chosen.is_empty() && !eligible.is_empty() {
            chosen.push(eligible[rng.random_range(0..eligible.len())]);
        }
        let mut c = s.clone();
        for &i in &chosen {
            let u: f64 = rng.random();
            if u < 0.8 {
                c.ids[i] = Vocab::MASK_ID;
            } else if u < 0.9 {
                c.ids[i] = rng.random_range(Vocab::NUM_SPECIAL..vocab_size);
            }
        }
        corrupted.push(c);
        picks.push(chosen);
    }
    let batch = PaddedBatch::new(&corrupted, max_len)?;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (b, (s, chosen)) in seqs.iter().zip(&picks).enumerate() {
        for &i in chosen {
            rows.push(batch.row(b, i));
            targets.push(s.ids[i]);
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("no maskable token in batch".into()));
    }
    Ok(MaskedBatch { batch, rows, targets })
}

/// Masked-token cross-entropy with output embeddings tied to the input table.
pub(crate) fn mlm_loss(params: &ParamSet, cfg: &EncoderConfig, mb: &MaskedBatch) -> Result<(f32, crate::numeric::Grads)> {
    grad_eval(params, |g| {
        let h = encode_graph::<f32, IdentityHook>(g, cfg, &mb.batch, None)?;
        let sel = g.select_rows(h.last, &mb.rows)?;
        let emb = g.param("backbone.tok_emb")?;
        let bias = g.param("backbone.mlm_bias")?;
        let logits = g.matmul_nt(sel, emb)?;
        let logits = g.add_row(logits, bias)?;
        g.cross_entropy(logits, &mb.targets)
    })
}

/// Pretrains a freshly initialised backbone on `corpus`. Deterministic for a
/// fixed `hyper.seed`.
pub fn mlm_pretrain(corpus: &[TokenSeq], cfg: &EncoderConfig, hyper: &MlmHyper) -> Result<MlmOutcome> {
    hyper.validate()?;
    cfg.validate()?;
    let usable: Vec<&TokenSeq> = corpus
        .iter()
        .filter(|s| s.ids.iter().zip(&s.mask).any(|(&i, &m)| m == 1 && i >= Vocab::NUM_SPECIAL))
        .collect();
    if usable.is_empty() {
        return Err(Error::Data("pretraining corpus has no maskable tokens".into()));
    }
    let mut params = init_backbone(cfg, &mut rng_for(hyper.seed, "backbone.init"))?;
    let mut rng = rng_for(hyper.seed, "mlm.batches");
    let mut state = AdamState::new();
    let adam = AdamConfig::default();
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(hyper.steps as usize);
    for step in 1..=hyper.steps {
        let mut seqs = Vec::with_capacity(hyper.batch);
        while seqs.len() < hyper.batch.min(usable.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            seqs.push(usable[order[cursor]].clone());
            cursor += 1;
        }
        let mb = mask_batch(&seqs, hyper.mask_rate, cfg.vocab_size, cfg.max_len, &mut rng)?;
        let (loss, grads) = mlm_loss(&params, cfg, &mb)?;
        let lr = warmup_lr(step, hyper.lr, hyper.warmup);
        adam_step(&mut params, &grads, &mut state, lr as f32, &adam)?;
        if step % 50 == 0 || step == 1 {
            debug!("mlm step {step}: loss {loss:.4}");
        }
        curve.push(LossRecord { step, lr, loss });
    }
    Ok(MlmOutcome { params, curve })
}
