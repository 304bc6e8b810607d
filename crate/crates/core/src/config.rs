//! Run configuration as plain `key = value` text.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::{Ablations, FusionPromptMode};
use crate::neighbor::{AttentionCombine, NeighborQuery};
use crate::scorer::LossConfig;
use crate::semantics::PoolTuningConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MetaOrder {
    #[default]
    First,
    Second,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProjectionInterpretation {
    #[default]
    TransD,
}

/// Every hyperparameter of a run. Defaults are the desk-scale settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    /// Embedding width `d`; `None` takes it from the embedding files.
    pub dim: Option<usize>,
    /// Attention key width `d_k`; `None` means `d`.
    pub key_dim: Option<usize>,
    pub k_shot: usize,
    pub queries_per_episode: usize,
    pub max_neighbors: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_interval: usize,
    pub lr: f64,
    /// `None` means half the outer rate.
    pub inner_lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub margin: f64,
    pub lambda: f64,
    pub temperature: f64,
    pub num_negatives: usize,
    pub pool_size: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub neighbor_query: NeighborQuery,
    pub attention_combine: AttentionCombine,
    pub fusion_prompt: FusionPromptMode,
    pub meta_order: MetaOrder,
    pub projection_interpretation: ProjectionInterpretation,
    pub ablate: Ablations,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            dim: None,
            key_dim: None,
            k_shot: 5,
            queries_per_episode: 5,
            max_neighbors: 50,
            batch_size: 32,
            steps: 2000,
            eval_interval: 200,
            lr: 0.001,
            inner_lr: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            margin: 1.0,
            lambda: 0.05,
            temperature: 0.1,
            num_negatives: 1024,
            pool_size: 64,
            dropout: 0.2,
            leaky_slope: 0.01,
            neighbor_query: NeighborQuery::Target,
            attention_combine: AttentionCombine::Concat,
            fusion_prompt: FusionPromptMode::Generated,
            meta_order: MetaOrder::First,
            projection_interpretation: ProjectionInterpretation::TransD,
            ablate: Ablations::none(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn show_auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl Config {
    pub const KEYS: [&'static str; 27] = [
        "ablate",
        "adam_eps",
        "attention_combine",
        "batch_size",
        "beta1",
        "beta2",
        "dim",
        "dropout",
        "eval_interval",
        "fusion_prompt",
        "inner_lr",
        "k_shot",
        "key_dim",
        "lambda",
        "leaky_slope",
        "lr",
        "margin",
        "max_neighbors",
        "meta_order",
        "neighbor_query",
        "num_negatives",
        "pool_size",
        "projection_interpretation",
        "queries_per_episode",
        "seed",
        "steps",
        "temperature",
    ];

    /// Applies one `key = value` setting. Dashes in keys are accepted as
    /// underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        let k = key.as_str();
        match k {
            "seed" => self.seed = parse_num(k, v)?,
            "dim" => self.dim = parse_auto(k, v)?,
            "key_dim" => self.key_dim = parse_auto(k, v)?,
            "k_shot" => self.k_shot = parse_num(k, v)?,
            "queries_per_episode" => self.queries_per_episode = parse_num(k, v)?,
            "max_neighbors" => self.max_neighbors = parse_num(k, v)?,
            "batch_size" => self.batch_size = parse_num(k, v)?,
            "steps" => self.steps = parse_num(k, v)?,
            "eval_interval" => self.eval_interval = parse_num(k, v)?,
            "lr" => self.lr = parse_num(k, v)?,
            "inner_lr" => self.inner_lr = parse_auto(k, v)?,
            "beta1" => self.beta1 = parse_num(k, v)?,
            "beta2" => self.beta2 = parse_num(k, v)?,
            "adam_eps" => self.adam_eps = parse_num(k, v)?,
            "margin" => self.margin = parse_num(k, v)?,
            "lambda" => self.lambda = parse_num(k, v)?,
            "temperature" => self.temperature = parse_num(k, v)?,
            "num_negatives" => self.num_negatives = parse_num(k, v)?,
            "pool_size" => self.pool_size = parse_num(k, v)?,
            "dropout" => self.dropout = parse_num(k, v)?,
            "leaky_slope" => self.leaky_slope = parse_num(k, v)?,
            "neighbor_query" => {
                self.neighbor_query = match v {
                    "target" => NeighborQuery::Target,
                    "neighbor" => NeighborQuery::Neighbor,
                    _ => return Err(Error::Config(format!("neighbor_query: expected target|neighbor, got {v:?}"))),
                }
            }
            "attention_combine" => {
                self.attention_combine = match v {
                    "concat" => AttentionCombine::Concat,
                    "dot" => AttentionCombine::Dot,
                    _ => return Err(Error::Config(format!("attention_combine: expected concat|dot, got {v:?}"))),
                }
            }
            "fusion_prompt" => {
                self.fusion_prompt = match v {
                    "generated" => FusionPromptMode::Generated,
                    "shared" => FusionPromptMode::Shared,
                    _ => return Err(Error::Config(format!("fusion_prompt: expected generated|shared, got {v:?}"))),
                }
            }
            "meta_order" => {
                self.meta_order = match v {
                    "first" => MetaOrder::First,
                    "second" => MetaOrder::Second,
                    _ => return Err(Error::Config(format!("meta_order: expected first|second, got {v:?}"))),
                }
            }
            "projection_interpretation" => {
                self.projection_interpretation = match v {
                    "transd" => ProjectionInterpretation::TransD,
                    _ => return Err(Error::Config(format!("projection_interpretation: only transd is supported, got {v:?}"))),
                }
            }
            "ablate" => self.ablate = v.parse()?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "seed" => self.seed.to_string(),
            "dim" => show_auto(&self.dim),
            "key_dim" => show_auto(&self.key_dim),
            "k_shot" => self.k_shot.to_string(),
            "queries_per_episode" => self.queries_per_episode.to_string(),
            "max_neighbors" => self.max_neighbors.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "steps" => self.steps.to_string(),
            "eval_interval" => self.eval_interval.to_string(),
            "lr" => self.lr.to_string(),
            "inner_lr" => show_auto(&self.inner_lr),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "margin" => self.margin.to_string(),
            "lambda" => self.lambda.to_string(),
            "temperature" => self.temperature.to_string(),
            "num_negatives" => self.num_negatives.to_string(),
            "pool_size" => self.pool_size.to_string(),
            "dropout" => self.dropout.to_string(),
            "leaky_slope" => self.leaky_slope.to_string(),
            "neighbor_query" => match self.neighbor_query {
                NeighborQuery::Target => "target",
                NeighborQuery::Neighbor => "neighbor",
            }
            .to_string(),
            "attention_combine" => match self.attention_combine {
                AttentionCombine::Concat => "concat",
                AttentionCombine::Dot => "dot",
            }
            .to_string(),
            "fusion_prompt" => match self.fusion_prompt {
                FusionPromptMode::Generated => "generated",
                FusionPromptMode::Shared => "shared",
            }
            .to_string(),
            "meta_order" => match self.meta_order {
                MetaOrder::First => "first",
                MetaOrder::Second => "second",
            }
            .to_string(),
            "projection_interpretation" => "transd".to_string(),
            "ablate" => self.ablate.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form: every key, sorted, one per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("known key"));
        }
        s
    }

    pub fn inner_lr(&self) -> f64 {
        self.inner_lr.unwrap_or(0.5 * self.lr)
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            inner_lr: self.inner_lr(),
            lambda: if self.ablate.uses_pool_tuning() { self.lambda } else { 0.0 },
        }
    }

    pub fn pool_tuning(&self) -> PoolTuningConfig {
        PoolTuningConfig {
            temperature: self.temperature,
            num_negatives: self.num_negatives,
            weight: self.loss().lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.meta_order == MetaOrder::Second {
            return Err(Error::Unsupported(
                "meta_order = second: only first-order outer gradients are implemented".into(),
            ));
        }
        if self.k_shot == 0 {
            return bad("k_shot must be at least 1");
        }
        if self.queries_per_episode == 0 {
            return bad("queries_per_episode must be at least 1");
        }
        if self.max_neighbors == 0 {
            return bad("max_neighbors must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be at least 1");
        }
        if self.pool_size == 0 {
            return bad("pool_size must be at least 1");
        }
        if self.dim == Some(0) || self.key_dim == Some(0) {
            return bad("dimensions must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam moments must lie in [0, 1) and eps must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return bad("leaky_slope must lie in [0, 1)");
        }
        self.loss().validate()?;
        self.pool_tuning().validate()
    }
}
