use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::{adapter_graph, fusion_graph};
use crate::encoder::{encode, EncoderConfig, HiddenStates, LayerHook, PaddedBatch, BACKBONE_PREFIX};
use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamSet, Real, Tensor, Var};
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AdapterKind {
    /// entity alignment, phrase level
    EP,
    /// triples, phrase level
    TP,
    /// entity alignment, sentence level
    ES,
    /// triples, sentence level
    TS,
    /// single wide adapter trained on every objective
    LARGE,
}

impl AdapterKind {
    pub const KNOWLEDGE: [AdapterKind; 4] = [AdapterKind::EP, AdapterKind::TP, AdapterKind::ES, AdapterKind::TS];

    pub fn name(self) -> &'static str {
        match self {
            AdapterKind::EP => "EP",
            AdapterKind::TP => "TP",
            AdapterKind::ES => "ES",
            AdapterKind::TS => "TS",
            AdapterKind::LARGE => "LARGE",
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdapterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EP" => Ok(AdapterKind::EP),
            "TP" => Ok(AdapterKind::TP),
            "ES" => Ok(AdapterKind::ES),
            "TS" => Ok(AdapterKind::TS),
            "LARGE" => Ok(AdapterKind::LARGE),
            other => Err(Error::Config(format!("unknown adapter kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub kind: AdapterKind,
    pub bottleneck: usize,
}

/// Which adapter path the forward pass takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    None,
    Single(AdapterKind),
    Fusion,
}

pub fn adapter_prefix(kind: AdapterKind) -> String {
    format!("adapter.{kind}.")
}

pub fn fusion_prefix() -> &'static str {
    "fusion."
}

fn adapter_name(kind: AdapterKind, layer: usize, leaf: &str) -> String {
    format!("adapter.{kind}.{layer}.{leaf}")
}

fn fusion_name(layer: usize, leaf: &str) -> String {
    format!("fusion.{layer}.{leaf}")
}

const W_UP_STD: f32 = 1e-4;
const FUSION_QK_STD: f32 = 0.02;
const FUSION_V_NOISE: f32 = 1e-4;

/// Adapter weights for every layer. The down-projection gets a fan-in scaled
/// normal init, the up-projection a near-zero one, biases start at zero.
pub fn init_adapter(kind: AdapterKind, dim: usize, layers: usize, bottleneck: usize, seed: u64) -> Result<ParamSet> {
    if bottleneck == 0 {
        return Err(Error::Config("adapter bottleneck must be at least 1".into()));
    }
    let mut rng = rng_for(seed, &format!("adapter.{kind}"));
    let mut p = ParamSet::new();
    let down_std = 1.0 / (dim as f32).sqrt();
    for l in 0..layers {
        p.insert(adapter_name(kind, l, "W_down"), Tensor::randn(&[dim, bottleneck], down_std, &mut rng), true)?;
        p.insert(adapter_name(kind, l, "b_down"), Tensor::zeros(&[bottleneck]), true)?;
        p.insert(adapter_name(kind, l, "W_up"), Tensor::randn(&[bottleneck, dim], W_UP_STD, &mut rng), true)?;
        p.insert(adapter_name(kind, l, "b_up"), Tensor::zeros(&[dim]), true)?;
    }
    Ok(p)
}

/// Fusion projections for every layer; `V` starts at the identity.
pub fn init_fusion(dim: usize, layers: usize, seed: u64) -> Result<ParamSet> {
    let mut rng = rng_for(seed, "fusion");
    let mut p = ParamSet::new();
    for l in 0..layers {
        p.insert(fusion_name(l, "Q"), Tensor::randn(&[dim, dim], FUSION_QK_STD, &mut rng), true)?;
        p.insert(fusion_name(l, "K"), Tensor::randn(&[dim, dim], FUSION_QK_STD, &mut rng), true)?;
        let noise = Tensor::randn(&[dim, dim], FUSION_V_NOISE, &mut rng);
        let eye = Tensor::identity(dim);
        let v = eye.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
        p.insert(fusion_name(l, "V"), Tensor::new(vec![dim, dim], v)?, true)?;
    }
    Ok(p)
}

/// Parameter group of a tensor name: `backbone`, `adapter.<KIND>` or `fusion`.
pub fn param_group(name: &str) -> String {
    let mut parts = name.splitn(3, '.');
    match (parts.next(), parts.next()) {
        (Some("adapter"), Some(kind)) => format!("adapter.{kind}"),
        (Some(head), _) => head.to_string(),
        _ => String::new(),
    }
}

/// Checksum per parameter group.
pub fn group_checksums(params: &ParamSet) -> BTreeMap<String, String> {
    let groups: BTreeSet<String> = params.names().map(|n| param_group(n)).collect();
    groups.into_iter().map(|g| {
        let sum = params.checksum_by(|n| param_group(n) == g);
        (g, sum)
    }).collect()
}

/// Fails with a frozen-contract violation if any group outside `trained`
/// changed between the two snapshots.
pub fn verify_frozen(
    before: &BTreeMap<String, String>,
    after: &BTreeMap<String, String>,
    trained: &[String],
    stage: &str,
) -> Result<()> {
    for (group, sum) in before {
        if trained.contains(group) {
            continue;
        }
        if after.get(group) != Some(sum) {
            return Err(Error::FrozenViolation { stage: stage.to_string(), group: group.clone() });
        }
    }
    Ok(())
}

/// A backbone with named adapters, optional fusion, and a forward mode.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedEncoder {
    config: EncoderConfig,
    params: ParamSet,
    adapters: Vec<AdapterSpec>,
    fusion: bool,
    mode: Mode,
}

impl AdaptedEncoder {
    /// Wraps backbone parameters with no adapters.
    pub fn new(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        Self::from_parts(config, params, Vec::new(), false, Mode::None)
    }

    /// Reassembles a model and checks that the parameter names match the
    /// declared structure exactly.
    pub fn from_parts(
        config: EncoderConfig,
        params: ParamSet,
        adapters: Vec<AdapterSpec>,
        fusion: bool,
        mode: Mode,
    ) -> Result<Self> {
        config.validate()?;
        let emb = params.tensor("backbone.tok_emb")?;
        if emb.shape() != [config.vocab_size, config.dim] {
            return Err(Error::Config(format!("token table {:?} does not match the encoder config", emb.shape())));
        }
        for (i, a) in adapters.iter().enumerate() {
            if adapters[..i].iter().any(|b| b.kind == a.kind) {
                return Err(Error::Config(format!("adapter {} listed twice", a.kind)));
            }
        }
        for name in params.names() {
            let known = name.starts_with(BACKBONE_PREFIX)
                || (fusion && name.starts_with(fusion_prefix()))
                || adapters.iter().any(|a| name.starts_with(&adapter_prefix(a.kind)));
            if !known {
                return Err(Error::Config(format!("parameter `{name}` does not belong to the declared model")));
            }
        }
        let mut m = AdaptedEncoder { config, params, adapters, fusion, mode: Mode::None };
        m.set_mode(mode)?;
        Ok(m)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn adapters(&self) -> &[AdapterSpec] {
        &self.adapters
    }

    pub fn kinds(&self) -> Vec<AdapterKind> {
        self.adapters.iter().map(|a| a.kind).collect()
    }

    pub fn has_fusion(&self) -> bool {
        self.fusion
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) -> Result<()> {
        match mode {
            Mode::Single(k) if !self.adapters.iter().any(|a| a.kind == k) => {
                Err(Error::Config(format!("adapter {k} is not inserted")))
            }
            Mode::Fusion if !self.fusion || self.adapters.is_empty() => {
                Err(Error::Config("fusion mode requires fusion parameters and at least one adapter".into()))
            }
            _ => {
                self.mode = mode;
                Ok(())
            }
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Result<Self> {
        self.set_mode(mode)?;
        Ok(self)
    }

    pub fn add_adapter(&mut self, kind: AdapterKind, bottleneck: usize, seed: u64) -> Result<()> {
        let p = init_adapter(kind, self.config.dim, self.config.layers, bottleneck, seed)?;
        self.add_adapter_params(AdapterSpec { kind, bottleneck }, p)
    }

    /// Attaches previously trained adapter tensors.
    pub fn add_adapter_params(&mut self, spec: AdapterSpec, params: ParamSet) -> Result<()> {
        if self.adapters.iter().any(|a| a.kind == spec.kind) {
            return Err(Error::Config(format!("adapter {} is already inserted", spec.kind)));
        }
        let prefix = adapter_prefix(spec.kind);
        let (d, b) = (self.config.dim, spec.bottleneck);
        for l in 0..self.config.layers {
            for (leaf, shape) in [("W_down", vec![d, b]), ("b_down", vec![b]), ("W_up", vec![b, d]), ("b_up", vec![d])] {
                let t = params.tensor(&adapter_name(spec.kind, l, leaf))?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::shape("add_adapter", format!("{prefix}{l}.{leaf}: {:?}", t.shape())));
                }
            }
        }
        if params.len() != 4 * self.config.layers || params.names().any(|n| !n.starts_with(&prefix)) {
            return Err(Error::Config(format!("unexpected tensors in adapter {}", spec.kind)));
        }
        self.params.extend(params)?;
        self.adapters.push(spec);
        Ok(())
    }

    pub fn add_fusion(&mut self, seed: u64) -> Result<()> {
        if self.fusion {
            return Err(Error::Config("fusion is already present".into()));
        }
        self.params.extend(init_fusion(self.config.dim, self.config.layers, seed)?)?;
        self.fusion = true;
        Ok(())
    }

    /// Marks exactly the parameters selected by `pred` as trainable.
    pub fn train_only(&mut self, pred: impl Fn(&str) -> bool) {
        self.params.set_trainable_by(pred);
    }

    pub fn encode(&self, batch: &PaddedBatch) -> Result<HiddenStates> {
        encode(&self.params, &self.config, batch, Some(self))
    }

    fn adapter_on<T: Real>(&self, g: &mut Graph<'_, T>, kind: AdapterKind, layer: usize, h: Var) -> Result<Var> {
        let wd = g.param(&adapter_name(kind, layer, "W_down"))?;
        let bd = g.param(&adapter_name(kind, layer, "b_down"))?;
        let wu = g.param(&adapter_name(kind, layer, "W_up"))?;
        let bu = g.param(&adapter_name(kind, layer, "b_up"))?;
        adapter_graph(g, h, wd, bd, wu, bu)
    }
}

impl LayerHook for AdaptedEncoder {
    fn apply<T: Real>(&self, g: &mut Graph<'_, T>, layer: usize, hidden: Var) -> Result<Var> {
        match self.mode {
            Mode::None => Ok(hidden),
            Mode::Single(kind) => self.adapter_on(g, kind, layer, hidden),
            Mode::Fusion => {
                let outs = self
                    .adapters
                    .iter()
                    .map(|a| self.adapter_on(g, a.kind, layer, hidden))
                    .collect::<Result<Vec<_>>>()?;
                let q = g.param(&fusion_name(layer, "Q"))?;
                let k = g.param(&fusion_name(layer, "K"))?;
                let v = g.param(&fusion_name(layer, "V"))?;
                fusion_graph(g, hidden, &outs, q, k, v).map(|(out, _)| out)
            }
        }
    }
}

/// Returns a copy of `base` with one fresh adapter per kind, in the given
/// order. Each adapter's initial weights depend only on `seed` and its kind.
pub fn insert_adapters(
    base: &AdaptedEncoder,
    kinds: &[AdapterKind],
    bottleneck: usize,
    seed: u64,
) -> Result<AdaptedEncoder> {
    if kinds.is_empty() {
        return Err(Error::Config("no adapter kinds given".into()));
    }
    let mut m = base.clone();
    for &k in kinds {
        m.add_adapter(k, bottleneck, seed)?;
    }
    Ok(m)
}
