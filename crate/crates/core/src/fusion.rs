//! Fusion of task-relational information, the retrieved prompt and the fusion
//! prompt into the meta-representation.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::RelationId;
use crate::neighbor::mlp_named;
use crate::numerics::{MlpNodes, MlpParams, NodeId, Tape, Tensor};
use crate::semantics::{task_semantic_embedding, SelfAttnParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionPromptMode {
    /// `fp_r = g_fp([s_r; r_r])`
    #[default]
    Generated,
    /// One learnable vector shared by every task.
    Shared,
}

/// Component switches. Disabled inputs are replaced by zero vectors so that
/// parameter shapes never change.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// No task-semantic embedding, prompt or fusion prompt.
    pub semantic: bool,
    /// The task-semantic embedding stands in for the retrieved prompt.
    pub pool: bool,
    pub fusion_prompt: bool,
    pub pool_tuning: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 4] = ["semantic", "pool", "fusion-prompt", "pool-tuning"];

    pub fn none() -> Self {
        Self::default()
    }

    pub fn tags(&self) -> Vec<&'static str> {
        let flags = [self.semantic, self.pool, self.fusion_prompt, self.pool_tuning];
        Self::NAMES.iter().zip(flags).filter(|(_, f)| *f).map(|(n, _)| *n).collect()
    }

    /// Whether the retrieved prompt path (pool reads) is live.
    pub fn uses_pool(&self) -> bool {
        !self.semantic && !self.pool
    }

    pub fn uses_pool_tuning(&self) -> bool {
        self.uses_pool() && !self.pool_tuning
    }
}

impl fmt::Display for Ablations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tags = self.tags();
        if tags.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&tags.join(","))
        }
    }
}

impl FromStr for Ablations {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablations::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "none" => {}
                "semantic" => a.semantic = true,
                "pool" => a.pool = true,
                "fusion-prompt" => a.fusion_prompt = true,
                "pool-tuning" => a.pool_tuning = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown ablation {other:?}; expected one of {}",
                        Self::NAMES.join(", ")
                    )))
                }
            }
        }
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    /// `[r_r; p_r; fp_r] (5d) -> d -> d`
    pub phi: MlpParams,
    /// `[s_r; r_r] (4d) -> d`, affine.
    pub g_fp: MlpParams,
    /// `[d]`, read only in shared mode.
    pub shared_prompt: Tensor,
    pub mode: FusionPromptMode,
}

impl FusionParams {
    pub fn random(d: usize, rng: &mut impl Rng) -> Self {
        let mut g_fp = MlpParams::random(&[4 * d, d], false, rng);
        g_fp.output_activation = false;
        Self {
            phi: MlpParams::random(&[5 * d, d, d], false, rng),
            g_fp,
            shared_prompt: crate::numerics::Linear::random(1, d, rng).weight.reshape(vec![d]).expect("sized"),
            mode: FusionPromptMode::default(),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if (self.phi.input_dim(), self.phi.output_dim()) != (5 * d, d) {
            return Err(Error::dims("Φ_fuse", &[5 * d, d], &[self.phi.input_dim(), self.phi.output_dim()]));
        }
        if (self.g_fp.input_dim(), self.g_fp.output_dim()) != (4 * d, d) {
            return Err(Error::dims("g_fp", &[4 * d, d], &[self.g_fp.input_dim(), self.g_fp.output_dim()]));
        }
        if self.shared_prompt.shape() != [d] {
            return Err(Error::dims("shared fusion prompt", &[d], self.shared_prompt.shape()));
        }
        self.phi.validate()?;
        self.g_fp.validate()
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = mlp_named("fusion.phi", &self.phi);
        out.extend(mlp_named("fusion.g_fp", &self.g_fp));
        out.push(("fusion.shared_prompt".into(), &self.shared_prompt));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.phi.tensors_mut();
        out.extend(self.g_fp.tensors_mut());
        out.push(&mut self.shared_prompt);
        out
    }

    pub fn register(&self, tape: &mut Tape) -> FusionNodes {
        FusionNodes {
            phi: self.phi.register(tape),
            g_fp: self.g_fp.register(tape),
            shared_prompt: tape.leaf(self.shared_prompt.clone()),
            mode: self.mode,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusionNodes {
    pub phi: MlpNodes,
    pub g_fp: MlpNodes,
    pub shared_prompt: NodeId,
    pub mode: FusionPromptMode,
}

impl FusionNodes {
    pub fn ids(&self) -> Vec<NodeId> {
        let mut v = self.phi.ids();
        v.extend(self.g_fp.ids());
        v.push(self.shared_prompt);
        v
    }

    pub fn fusion_prompt(&self, tape: &mut Tape, s_r: NodeId, r_r: NodeId) -> Result<NodeId> {
        match self.mode {
            FusionPromptMode::Generated => {
                let x = tape.concat(&[s_r, r_r])?;
                self.g_fp.forward(tape, x)
            }
            FusionPromptMode::Shared => Ok(self.shared_prompt),
        }
    }

    pub fn fuse(&self, tape: &mut Tape, r_r: NodeId, p_r: NodeId, fp_r: NodeId) -> Result<NodeId> {
        let x = tape.concat(&[r_r, p_r, fp_r])?;
        self.phi.forward(tape, x)
    }
}

/// The fused per-task translation vector and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaRepresentation {
    pub mr: Tensor,
    pub relation: RelationId,
    /// `None` when the pool was not consulted.
    pub prompt_index: Option<usize>,
}

/// Same mechanism and parameters as the semantic aggregation, applied to
/// neighbor-enhanced relational pairs.
pub fn task_relational_embedding(pairs: &[Tensor], params: &SelfAttnParams) -> Result<Tensor> {
    task_semantic_embedding(pairs, params)
}

pub fn make_fusion_prompt(s_r: &Tensor, r_r: &Tensor, params: &FusionParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let s = tape.leaf(s_r.clone());
    let r = tape.leaf(r_r.clone());
    let fp = nodes.fusion_prompt(&mut tape, s, r)?;
    Ok(tape.value(fp).clone())
}

pub fn fuse(r_r: &Tensor, p_r: &Tensor, fp_r: &Tensor, params: &FusionParams) -> Result<Tensor> {
    let want = params.phi.input_dim();
    let got = r_r.len() + p_r.len() + fp_r.len();
    if got != want {
        return Err(Error::dims("fuse input", &[want], &[got]));
    }
    let mut x = r_r.data().to_vec();
    x.extend_from_slice(p_r.data());
    x.extend_from_slice(fp_r.data());
    params.phi.forward(&Tensor::vector(x))
}
