use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{TokenSeq, Vocab};
use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamSet, Real, Tensor, Var};

/// Shape of the backbone transformer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layers", self.layers),
            ("dim", self.dim),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder.{name} must be positive")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!("heads ({}) must divide dim ({})", self.heads, self.dim)));
        }
        if self.vocab_size <= Vocab::NUM_SPECIAL {
            return Err(Error::Config("vocabulary holds only special tokens".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

pub const BACKBONE_PREFIX: &str = "backbone.";
const INIT_STD: f32 = 0.02;

pub(crate) fn layer_name(layer: usize, leaf: &str) -> String {
    format!("backbone.layer.{layer}.{leaf}")
}

/// Randomly initialised backbone parameters, all trainable.
pub fn init_backbone<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<ParamSet> {
    cfg.validate()?;
    let (d, f) = (cfg.dim, cfg.ff_dim);
    let mut p = ParamSet::new();
    p.insert("backbone.tok_emb", Tensor::randn(&[cfg.vocab_size, d], INIT_STD, rng), true)?;
    p.insert("backbone.pos_emb", Tensor::randn(&[cfg.max_len, d], INIT_STD, rng), true)?;
    p.insert("backbone.mlm_bias", Tensor::zeros(&[cfg.vocab_size]), true)?;
    for l in 0..cfg.layers {
        for ln in ["ln1", "ln2"] {
            p.insert(layer_name(l, &format!("{ln}.gamma")), Tensor::filled(&[d], 1.0), true)?;
            p.insert(layer_name(l, &format!("{ln}.beta")), Tensor::zeros(&[d]), true)?;
        }
        for w in ["wq", "wk", "wv", "wo"] {
            p.insert(layer_name(l, &format!("attn.{w}")), Tensor::randn(&[d, d], INIT_STD, rng), true)?;
        }
        for b in ["bq", "bk", "bv", "bo"] {
            p.insert(layer_name(l, &format!("attn.{b}")), Tensor::zeros(&[d]), true)?;
        }
        p.insert(layer_name(l, "ff.w1"), Tensor::randn(&[d, f], INIT_STD, rng), true)?;
        p.insert(layer_name(l, "ff.b1"), Tensor::zeros(&[f]), true)?;
        p.insert(layer_name(l, "ff.w2"), Tensor::randn(&[f, d], INIT_STD, rng), true)?;
        p.insert(layer_name(l, "ff.b2"), Tensor::zeros(&[d]), true)?;
    }
    p.insert("backbone.ln_f.gamma", Tensor::filled(&[d], 1.0), true)?;
    p.insert("backbone.ln_f.beta", Tensor::zeros(&[d]), true)?;
    Ok(p)
}

/// Sequences right-padded to a common length.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub ids: Vec<usize>,
    pub keep: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl PaddedBatch {
    pub fn new(seqs: &[TokenSeq], max_len: usize) -> Result<Self> {
        Self::with_len(seqs, seqs.iter().map(TokenSeq::len).max().unwrap_or(0), max_len)
    }

    /// Pads every sequence to exactly `len` positions.
    pub fn with_len(seqs: &[TokenSeq], len: usize, max_len: usize) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        if len > max_len {
            return Err(Error::Data(format!("sequence length {len} exceeds max length {max_len}")));
        }
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut keep = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            if s.is_empty() || s.len() > len || s.mask.len() != s.len() {
                return Err(Error::Data(format!("sequence of length {} does not fit {len}", s.len())));
            }
            if !s.mask.iter().any(|&m| m == 1) {
                return Err(Error::Data("sequence has no unmasked token".into()));
            }
            for (&id, &m) in s.ids.iter().zip(&s.mask) {
                ids.push(if m == 1 { id } else { Vocab::PAD_ID });
                keep.push(m == 1);
            }
            ids.extend(std::iter::repeat_n(Vocab::PAD_ID, len - s.len()));
            keep.extend(std::iter::repeat_n(false, len - s.len()));
        }
        Ok(PaddedBatch { ids, keep, batch: seqs.len(), len })
    }

    /// Flat row index of token `t` in sequence `b`.
    pub fn row(&self, b: usize, t: usize) -> usize {
        b * self.len + t
    }
}

/// Transformation applied to the hidden state after each layer's feed-forward block.
pub trait LayerHook {
    fn apply<T: Real>(&self, g: &mut Graph<'_, T>, layer: usize, hidden: Var) -> Result<Var>;
}

/// Hook that returns its input unchanged.
pub struct IdentityHook;

impl LayerHook for IdentityHook {
    fn apply<T: Real>(&self, _g: &mut Graph<'_, T>, _layer: usize, hidden: Var) -> Result<Var> {
        Ok(hidden)
    }
}

/// Graph handles for the encoder outputs; every tensor is `[batch * len, dim]`.
pub struct HiddenVars {
    /// Residual stream after each layer.
    pub layers: Vec<Var>,
    /// Final layer-normalised states.
    pub last: Var,
}

/// Runs the pre-norm transformer on `g`.
pub fn encode_graph<T: Real, H: LayerHook>(
    g: &mut Graph<'_, T>,
    cfg: &EncoderConfig,
    batch: &PaddedBatch,
    hook: Option<&H>,
) -> Result<HiddenVars> {
    if batch.len > cfg.max_len {
        return Err(Error::Data(format!("batch length {} exceeds max length {}", batch.len, cfg.max_len)));
    }
    if let Some(&bad) = batch.ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(Error::Data(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    let (b, t, d, h) = (batch.batch, batch.len, cfg.dim, cfg.heads);
    let dh = cfg.head_dim();

    let tok = g.param("backbone.tok_emb")?;
    let pos = g.param("backbone.pos_emb")?;
    let positions: Vec<usize> = (0..b * t).map(|r| r % t).collect();
    let xe = g.embedding(tok, &batch.ids)?;
    let xp = g.embedding(pos, &positions)?;
    let mut x = g.add(xe, xp)?;

    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let p = |leaf: &str| layer_name(l, leaf);
        let (g1, b1) = (g.param(&p("ln1.gamma"))?, g.param(&p("ln1.beta"))?);
        let a = g.layer_norm(x, g1, b1)?;

        let proj = |w: &str, bias: &str, g: &mut Graph<'_, T>| -> Result<Var> {
            let wv = g.param(&p(w))?;
            let bv = g.param(&p(bias))?;
            let y = g.matmul(a, wv)?;
            let y = g.add_row(y, bv)?;
            let y = g.reshape(y, vec![b, t, h, dh])?;
            let y = g.swap_axes12(y)?;
            g.reshape(y, vec![b * h, t, dh])
        };
        let q = proj("attn.wq", "attn.bq", g)?;
        let k = proj("attn.wk", "attn.bk", g)?;
        let v = proj("attn.wv", "attn.bv", g)?;

        let scores = g.batch_matmul(q, k, true)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let attn = g.masked_softmax(scores, &batch.keep, h)?;
        let ctx = g.batch_matmul(attn, v, false)?;
        let ctx = g.reshape(ctx, vec![b, h, t, dh])?;
        let ctx = g.swap_axes12(ctx)?;
        let ctx = g.reshape(ctx, vec![b * t, d])?;
        let (wo, bo) = (g.param(&p("attn.wo"))?, g.param(&p("attn.bo"))?);
        let o = g.matmul(ctx, wo)?;
        let o = g.add_row(o, bo)?;
        x = g.add(x, o)?;

        let (g2, b2) = (g.param(&p("ln2.gamma"))?, g.param(&p("ln2.beta"))?);
        let f = g.layer_norm(x, g2, b2)?;
        let (w1, fb1) = (g.param(&p("ff.w1"))?, g.param(&p("ff.b1"))?);
        let f = g.matmul(f, w1)?;
        let f = g.add_row(f, fb1)?;
        let f = g.gelu(f)?;
        let (w2, fb2) = (g.param(&p("ff.w2"))?, g.param(&p("ff.b2"))?);
        let f = g.matmul(f, w2)?;
        let f = g.add_row(f, fb2)?;
        x = g.add(x, f)?;
        if let Some(hook) = hook {
            x = hook.apply(g, l, x)?;
        }
        layers.push(x);
    }
    let (gf, bf) = (g.param("backbone.ln_f.gamma")?, g.param("backbone.ln_f.beta")?);
    let last = g.layer_norm(x, gf, bf)?;
    Ok(HiddenVars { layers, last })
}

/// Per-layer token representations, each `[batch, len, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStates {
    pub layers: Vec<Tensor>,
    pub last: Tensor,
}

/// Forward pass outside of training.
pub fn encode<H: LayerHook>(
    params: &ParamSet,
    cfg: &EncoderConfig,
    batch: &PaddedBatch,
    hook: Option<&H>,
) -> Result<HiddenStates> {
    let mut g = Graph::<f32>::new(params);
    let hv = encode_graph(&mut g, cfg, batch, hook)?;
    let shape = vec![batch.batch, batch.len, cfg.dim];
    let to3 = |v: Var| Tensor::new(shape.clone(), g.to_tensor(v).into_data());
    Ok(HiddenStates {
        layers: hv.layers.iter().map(|&v| to3(v)).collect::<Result<_>>()?,
        last: to3(hv.last)?,
    })
}

/// Mean of the rows `span.0..=span.1` of a single sequence's states `[len, dim]`.
pub fn mean_pool(hidden: &Tensor, span: (usize, usize), mask: &[u8]) -> Result<Vec<f32>> {
    let (i, j) = span;
    let s = hidden.shape();
    if s.len() != 2 || s[0] != mask.len() {
        return Err(Error::shape("mean_pool", format!("states {s:?} with mask of {}", mask.len())));
    }
    if i > j || j >= s[0] {
        return Err(Error::Data(format!("span {span:?} outside {} tokens", s[0])));
    }
    if mask[i..=j].contains(&0) {
        return Err(Error::Data(format!("span {span:?} touches padding")));
    }
    let mut out = vec![0.0f32; s[1]];
    for r in i..=j {
        for (o, &v) in out.iter_mut().zip(hidden.row(r)) {
            *o += v;
        }
    }
    let n = (j - i + 1) as f32;
    for o in &mut out {
        *o /= n;
    }
    Ok(out)
}

/// Row groups for pooling whole sequences: every kept position except the
/// listed token ids.
pub fn sentence_groups(batch: &PaddedBatch, exclude: &[usize]) -> Result<Vec<Vec<usize>>> {
    (0..batch.batch)
        .map(|b| {
            let g: Vec<usize> = (0..batch.len)
                .map(|t| batch.row(b, t))
                .filter(|&r| batch.keep[r] && !exclude.contains(&batch.ids[r]))
                .collect();
            if g.is_empty() {
                Err(Error::Data(format!("sequence {b} has nothing left to pool")))
            } else {
                Ok(g)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny() -> (EncoderConfig, ParamSet) {
        let cfg = EncoderConfig { layers: 2, dim: 8, heads: 2, ff_dim: 16, max_len: 10, vocab_size: 12 };
        let p = init_backbone(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        (cfg, p)
    }

    fn seq(ids: &[usize]) -> TokenSeq {
        TokenSeq::from_ids(ids.to_vec(), "en")
    }

    #[test]
    fn config_validation() {
        let (mut cfg, _) = tiny();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        cfg.heads = 2;
        cfg.layers = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn identity_hook_matches_no_hook() {
        let (cfg, p) = tiny();
        let b = PaddedBatch::new(&[seq(&[4, 5, 6]), seq(&[7, 8])], cfg.max_len).unwrap();
        let a = encode::<IdentityHook>(&p, &cfg, &b, None).unwrap();
        let c = encode(&p, &cfg, &b, Some(&IdentityHook)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn padding_does_not_change_real_positions() {
        let (cfg, p) = tiny();
        let short = PaddedBatch::new(&[seq(&[4, 5, 6])], cfg.max_len).unwrap();
        let long = PaddedBatch::with_len(&[seq(&[4, 5, 6])], 7, cfg.max_len).unwrap();
        let a = encode::<IdentityHook>(&p, &cfg, &short, None).unwrap();
        let b = encode::<IdentityHook>(&p, &cfg, &long, None).unwrap();
        assert_eq!(a.last.data(), &b.last.data()[..3 * cfg.dim]);
    }

    #[test]
    fn batch_order_is_equivariant() {
        let (cfg, p) = tiny();
        let (x, y) = (seq(&[4, 5, 6]), seq(&[9, 10]));
        let ab = encode::<IdentityHook>(&p, &cfg, &PaddedBatch::new(&[x.clone(), y.clone()], 10).unwrap(), None).unwrap();
        let ba = encode::<IdentityHook>(&p, &cfg, &PaddedBatch::new(&[y, x], 10).unwrap(), None).unwrap();
        let n = 3 * cfg.dim;
        assert_eq!(&ab.last.data()[..n], &ba.last.data()[n..]);
        assert_eq!(&ab.last.data()[n..], &ba.last.data()[..n]);
    }

    #[test]
    fn oversize_and_out_of_vocab_are_errors() {
        let (cfg, p) = tiny();
        let long = seq(&[4; 11]);
        assert!(PaddedBatch::new(&[long], cfg.max_len).is_err());
        let b = PaddedBatch::new(&[seq(&[40])], cfg.max_len).unwrap();
        assert!(encode::<IdentityHook>(&p, &cfg, &b, None).is_err());
    }

    #[test]
    fn pooling_examples() {
        let h = Tensor::new(vec![3, 2], vec![1.0, 3.0, 3.0, 1.0, 9.0, 9.0]).unwrap();
        assert_eq!(mean_pool(&h, (0, 1), &[1, 1, 1]).unwrap(), [2.0, 2.0]);
        assert_eq!(mean_pool(&h, (2, 2), &[1, 1, 1]).unwrap(), [9.0, 9.0]);
        assert!(mean_pool(&h, (1, 2), &[1, 1, 0]).is_err());
        assert!(mean_pool(&h, (2, 1), &[1, 1, 1]).is_err());
    }

    #[test]
    fn sentence_groups_skip_excluded_ids() {
        let b = PaddedBatch::new(&[seq(&[4, Vocab::SEP_ID, 5]), seq(&[Vocab::MASK_ID, 6])], 10).unwrap();
        let g = sentence_groups(&b, &[Vocab::SEP_ID, Vocab::MASK_ID]).unwrap();
        assert_eq!(g, vec![vec![0, 2], vec![4]]);
        let only_mask = PaddedBatch::new(&[seq(&[Vocab::MASK_ID])], 10).unwrap();
        assert!(sentence_groups(&only_mask, &[Vocab::MASK_ID]).is_err());
    }
}
