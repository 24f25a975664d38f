use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::AdapterKind;
use crate::data::SynthConfig;
use crate::encoder::{EncoderConfig, MlmHyper, Vocab};
use crate::error::{Error, Result};
use crate::eval::{DownstreamHyper, Task};
use crate::objectives::TrainHyper;
use crate::seed::derive_seed;

/// Named set of default hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 12-layer, 768-wide encoder with a long training schedule
    Paper,
    /// small encoder sized for CPU runs of a few minutes
    Desk,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile {s:?}, expected paper or desk"))),
        }
    }
}

/// Where the knowledge graph and corpora come from. Without `dir` the
/// synthetic generator writes them under the output directory; its seed is
/// derived from the run seed, so `synthetic.seed` is ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub synthetic: SynthConfig,
}

/// Encoder shape; the vocabulary size comes from the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderShape {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    /// tokens rarer than this map to UNK
    pub min_freq: usize,
}

impl EncoderShape {
    pub fn config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            dim: self.dim,
            heads: self.heads,
            ff_dim: self.ff_dim,
            max_len: self.max_len,
            vocab_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub warmup: u64,
    pub mask_rate: f64,
}

/// Knowledge adapters. Training length is either a fixed step count or a
/// number of passes over the adapter's pair pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    /// adapters combined by fusion, in fusion order
    pub kinds: Vec<AdapterKind>,
    pub bottleneck: usize,
    pub batch: usize,
    pub steps: Option<u64>,
    pub epochs: Option<u64>,
    pub lr: f64,
    pub warmup: u64,
    pub tau: f64,
    pub p_cs: f64,
}

/// Downstream training stage (fusion-only or full finetuning).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    /// a disabled stage is skipped by the ablation
    pub enabled: bool,
    pub batch: usize,
    pub epochs_completion: usize,
    pub epochs_alignment: usize,
    pub lr: f64,
    pub warmup: u64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// cutoff of the Hit@k column
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub seed: u64,
    pub data: DataConfig,
    pub encoder: EncoderShape,
    pub pretrain: PretrainConfig,
    pub adapters: AdapterConfig,
    pub fusion: StageConfig,
    pub finetune: StageConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => desk(),
            Profile::Paper => paper(),
        }
    }

    /// Resolves the profile defaults, then the config file, then `key=value`
    /// overrides (dotted keys, TOML values), then the explicit seed.
    pub fn resolve(profile: Option<Profile>, file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Self> {
        let file_table = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        let chosen = match (profile, file_table.get("profile")) {
            (Some(p), _) => p,
            (None, Some(v)) => v.as_str().ok_or_else(|| Error::Config("profile must be a string".into()))?.parse()?,
            (None, None) => Profile::Desk,
        };
        let mut merged = to_table(&Self::profile(chosen))?;
        overlay(&mut merged, file_table);
        for set in sets {
            let (key, value) = parse_set(set)?;
            let patch = key.rsplit('.').fold(value, |inner, part| {
                let mut t = toml::Table::new();
                t.insert(part.to_string(), inner);
                toml::Value::Table(t)
            });
            let toml::Value::Table(patch) = patch else { unreachable!("fold wraps in a table") };
            overlay(&mut merged, patch);
        }
        merged.insert("profile".into(), toml::Value::String(chosen.name().into()));
        if let Some(s) = seed {
            merged.insert("seed".into(), toml::Value::Integer(s as i64));
        }
        let cfg: PipelineConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synthetic.validate()?;
        // the vocabulary is only known after pretraining reads the corpus
        self.encoder.config(Vocab::NUM_SPECIAL + 1).validate()?;
        if let Some(dir) = &self.data.dir {
            if !dir.is_dir() {
                return Err(Error::Config(format!("data.dir {} does not exist", dir.display())));
            }
        }
        if self.adapters.kinds.is_empty() || self.adapters.kinds.contains(&AdapterKind::LARGE) {
            return Err(Error::Config("adapters.kinds must list knowledge adapters (EP, TP, ES, TS) only".into()));
        }
        if self.adapters.bottleneck == 0 || self.eval.k == 0 {
            return Err(Error::Config("adapters.bottleneck and eval.k must be positive".into()));
        }
        if self.adapters.steps.is_some() == self.adapters.epochs.is_some() {
            return Err(Error::Config("set exactly one of adapters.steps and adapters.epochs".into()));
        }
        self.mlm_hyper().validate()?;
        self.adapter_hyper(1).validate()?;
        for (name, s) in [("fusion", &self.fusion), ("finetune", &self.finetune)] {
            if s.batch < 2 || !(s.lr > 0.0) || !(s.tau > 0.0) {
                return Err(Error::Config(format!("{name}: batch must be at least 2, lr and tau positive")));
            }
        }
        Ok(())
    }

    /// sha256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Generator settings with the run seed.
    pub fn synth(&self) -> SynthConfig {
        SynthConfig { seed: derive_seed(self.seed, "data"), ..self.data.synthetic.clone() }
    }

    pub fn mlm_hyper(&self) -> MlmHyper {
        let p = &self.pretrain;
        MlmHyper {
            steps: p.steps,
            batch: p.batch,
            lr: p.lr,
            warmup: p.warmup,
            mask_rate: p.mask_rate,
            seed: derive_seed(self.seed, "pretrain"),
        }
    }

    /// Adapter hyper-parameters for a pair pool of `pool` items.
    pub fn adapter_hyper(&self, pool: usize) -> TrainHyper {
        let a = &self.adapters;
        let steps = match (a.steps, a.epochs) {
            (Some(s), _) => s,
            (None, Some(e)) => e * (pool as u64).div_ceil(a.batch.max(1) as u64),
            (None, None) => 0,
        };
        TrainHyper {
            batch: a.batch,
            steps,
            lr: a.lr,
            warmup: a.warmup,
            tau: a.tau,
            p_cs: a.p_cs,
            seed: derive_seed(self.seed, "adapters"),
        }
    }

    pub fn fusion_hyper(&self, task: Task) -> DownstreamHyper {
        stage_hyper(&self.fusion, task, derive_seed(self.seed, "fusion"))
    }

    pub fn finetune_hyper(&self, task: Task) -> DownstreamHyper {
        stage_hyper(&self.finetune, task, derive_seed(self.seed, "finetune"))
    }

    pub fn fusion_seed(&self) -> u64 {
        derive_seed(self.seed, "fusion.init")
    }
}

fn stage_hyper(s: &StageConfig, task: Task, seed: u64) -> DownstreamHyper {
    let epochs = match task {
        Task::Completion => s.epochs_completion,
        Task::Alignment => s.epochs_alignment,
    };
    DownstreamHyper { batch: s.batch, epochs, lr: s.lr, warmup: s.warmup, tau: s.tau, seed }
}

fn desk() -> PipelineConfig {
    PipelineConfig {
        profile: Profile::Desk,
        seed: 1,
        data: DataConfig { dir: None, synthetic: SynthConfig::default() },
        encoder: EncoderShape { layers: 2, dim: 64, heads: 4, ff_dim: 128, max_len: 24, min_freq: 1 },
        pretrain: PretrainConfig { steps: 500, batch: 32, lr: 1e-3, warmup: 50, mask_rate: 0.15 },
        adapters: AdapterConfig {
            kinds: AdapterKind::KNOWLEDGE.to_vec(),
            bottleneck: 64,
            batch: 128,
            steps: Some(300),
            epochs: None,
            lr: 5e-3,
            warmup: 30,
            tau: 0.1,
            p_cs: 0.5,
        },
        fusion: StageConfig {
            enabled: true,
            batch: 32,
            epochs_completion: 10,
            epochs_alignment: 10,
            lr: 1e-2,
            warmup: 10,
            tau: 0.1,
        },
        finetune: StageConfig {
            enabled: true,
            batch: 16,
            epochs_completion: 1,
            epochs_alignment: 1,
            lr: 1e-4,
            warmup: 10,
            tau: 0.1,
        },
        eval: EvalConfig { k: 10 },
    }
}

fn paper() -> PipelineConfig {
    let downstream = StageConfig {
        enabled: true,
        batch: 8,
        epochs_completion: 10,
        epochs_alignment: 1,
        lr: 1e-8,
        warmup: 0,
        tau: 0.1,
    };
    PipelineConfig {
        profile: Profile::Paper,
        seed: 1,
        data: DataConfig { dir: None, synthetic: SynthConfig::default() },
        encoder: EncoderShape { layers: 12, dim: 768, heads: 12, ff_dim: 3072, max_len: 128, min_freq: 1 },
        pretrain: PretrainConfig { steps: 100_000, batch: 128, lr: 1e-4, warmup: 10_000, mask_rate: 0.15 },
        adapters: AdapterConfig {
            kinds: AdapterKind::KNOWLEDGE.to_vec(),
            bottleneck: 48,
            batch: 128,
            steps: None,
            epochs: Some(10),
            lr: 1e-4,
            warmup: 10_000,
            tau: 0.1,
            p_cs: 0.5,
        },
        fusion: downstream.clone(),
        finetune: downstream,
        eval: EvalConfig { k: 10 },
    }
}

fn to_table(cfg: &PipelineConfig) -> Result<toml::Table> {
    let text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))
}

/// Merges a user layer. Setting one of the adapter length keys clears
/// the other so a step count can replace an epoch count and vice versa.
fn overlay(base: &mut toml::Table, patch: toml::Table) {
    if let Some(toml::Value::Table(a)) = patch.get("adapters") {
        if let Some(toml::Value::Table(b)) = base.get_mut("adapters") {
            for (set, clear) in [("steps", "epochs"), ("epochs", "steps")] {
                if a.contains_key(set) && !a.contains_key(clear) {
                    b.remove(clear);
                }
            }
        }
    }
    merge(base, patch);
}

/// Recursively overlays `patch` on `base`; tables merge, everything else
/// replaces.
fn merge(base: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_set(set: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = set.split_once('=').ok_or_else(|| Error::Config(format!("override {set:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("invalid override key {key:?}")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}
