//! Multi-head self-attention over feature groups.
//!
//! Each layer is pre-norm residual, `x + MHSA(RMSNorm(x))`, with
//! `MHSA(x) = Concat(head_1, …, head_H)·W_O` and
//! `head_i = softmax(Q_i·K_iᵀ / √d_k)·V_i`. Intra-group stacks run over the
//! feature positions of one group; the inter-group stack runs over one
//! mean-pooled token per group.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::schema::{FeatureLayout, Group};
use crate::error::{Error, Result};
use crate::mamba::linear_init;
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub heads: usize,
    pub rms_eps: f64,
}

impl AttentionConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    /// Scalar parameters in one layer.
    pub fn layer_param_count(&self) -> usize {
        self.d_model + 4 * self.d_model * self.d_model
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionLayer {
    pub config: AttentionConfig,
    pub norm_gain: ParamId,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
}

/// Per-head attention matrices of one layer, each `[T×T]`.
pub type HeadWeights = Vec<Var>;

impl AttentionLayer {
    pub fn init(store: &mut ParamStore, prefix: &str, config: AttentionConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        Ok(Self {
            config,
            norm_gain: store.add(format!("{prefix}.norm_gain"), Tensor::full(&[1, d], 1.0)),
            w_q: store.add(format!("{prefix}.w_q"), linear_init(d, d, rng)),
            w_k: store.add(format!("{prefix}.w_k"), linear_init(d, d, rng)),
            w_v: store.add(format!("{prefix}.w_v"), linear_init(d, d, rng)),
            w_o: store.add(format!("{prefix}.w_o"), Tensor::zeros(&[d, d])),
        })
    }

    /// Bare multi-head attention on `x[T×D]`, without norm or residual.
    pub fn attend(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<(Var, HeadWeights)> {
        let (t_len, d) = g.value(x).dims2()?;
        if d != self.config.d_model || t_len == 0 {
            return Err(Error::shape("attention", g.value(x).shape(), &[self.config.d_model]));
        }
        let dk = self.config.head_dim();
        let q = g.matmul(x, p[self.w_q])?;
        let k = g.matmul(x, p[self.w_k])?;
        let v = g.matmul(x, p[self.w_v])?;
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut weights = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
            let w = g.softmax_rows(scores)?;
            heads.push(g.matmul(w, vh)?);
            weights.push(w);
        }
        let cat = g.concat_cols(&heads)?;
        Ok((g.matmul(cat, p[self.w_o])?, weights))
    }

    /// `x + MHSA(RMSNorm(x))`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<(Var, HeadWeights)> {
        let normed = g.rmsnorm(x, p[self.norm_gain], self.config.rms_eps)?;
        let (out, weights) = self.attend(g, p, normed)?;
        Ok((g.add(out, x)?, weights))
    }
}

/// `L` stacked layers with unshared parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    pub layers: Vec<AttentionLayer>,
}

impl AttentionStack {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        config: AttentionConfig,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|l| AttentionLayer::init(store, &format!("{prefix}.layer{l}"), config, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Returns the output and the weights indexed `[layer][head]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, mut x: Var) -> Result<(Var, Vec<HeadWeights>)> {
        let mut all = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, w) = layer.forward(g, p, x)?;
            x = y;
            all.push(w);
        }
        Ok((x, all))
    }
}

/// Feature positions of each non-empty group, in [`Group::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub groups: Vec<(Group, Vec<usize>)>,
    pub n_features: usize,
}

impl GroupPartition {
    /// `assignment[i]` is the group of sequence position `i`.
    pub fn new(assignment: &[Option<Group>]) -> Result<Self> {
        if let Some(i) = assignment.iter().position(Option::is_none) {
            return Err(Error::Schema(format!("feature at position {i} has no group")));
        }
        let groups = Group::ALL
            .into_iter()
            .filter_map(|grp| {
                let idx: Vec<usize> = assignment
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| **a == Some(grp))
                    .map(|(i, _)| i)
                    .collect();
                (!idx.is_empty()).then_some((grp, idx))
            })
            .collect();
        Ok(Self {
            groups,
            n_features: assignment.len(),
        })
    }

    pub fn from_layout(layout: &FeatureLayout) -> Result<Self> {
        let assignment: Vec<_> = layout.features.iter().map(|f| Some(f.group)).collect();
        Self::new(&assignment)
    }

    pub fn group_names(&self) -> Vec<Group> {
        self.groups.iter().map(|(g, _)| *g).collect()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Output of one group's intra-group stack.
#[derive(Debug, Clone)]
pub struct GroupOutput {
    pub group: Group,
    pub features: Var,
    pub weights: Vec<HeadWeights>,
}

/// Gathers each group's rows of `x[F×D]` and runs that group's stack.
/// `stacks` pairs with `part.groups`; `None` passes the rows through.
pub fn intra_group_attention(
    g: &mut Graph,
    p: &Bound,
    x: Var,
    part: &GroupPartition,
    stacks: &[Option<AttentionStack>],
) -> Result<Vec<GroupOutput>> {
    let (f, _) = g.value(x).dims2()?;
    if f != part.n_features || stacks.len() != part.len() {
        return Err(Error::Contract(format!(
            "partition of {} features in {} groups applied to {f} rows with {} stacks",
            part.n_features,
            part.len(),
            stacks.len()
        )));
    }
    let mut out = Vec::with_capacity(part.len());
    for ((group, rows), stack) in part.groups.iter().zip(stacks) {
        let sub = g.gather_rows(x, rows)?;
        let (features, weights) = match stack {
            Some(s) => s.forward(g, p, sub)?,
            None => (sub, Vec::new()),
        };
        out.push(GroupOutput {
            group: *group,
            features,
            weights,
        });
    }
    Ok(out)
}

/// Mean-pools each group to one token and attends across the tokens.
/// Returns `[G×D]` and the `[layer][head]` weights, each `[G×G]`.
pub fn inter_group_attention(
    g: &mut Graph,
    p: &Bound,
    groups: &[GroupOutput],
    stack: Option<&AttentionStack>,
) -> Result<(Var, Vec<HeadWeights>)> {
    let tokens = groups
        .iter()
        .map(|o| g.mean_rows(o.features))
        .collect::<Result<Vec<_>>>()?;
    let pooled = g.concat_rows(&tokens)?;
    match stack {
        Some(s) => s.forward(g, p, pooled),
        None => Ok((pooled, Vec::new())),
    }
}

/// Dense layer from the flattened group tokens to the outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionHead {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl PredictionHead {
    pub fn init(store: &mut ParamStore, prefix: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: store.add(format!("{prefix}.weight"), Tensor::zeros(&[inputs, outputs])),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[1, outputs])),
        }
    }

    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    /// `fused[G×D] → [1×n_outputs]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, fused: Var) -> Result<Var> {
        let flat = g.reshape(fused, vec![1, self.inputs])?;
        let y = g.matmul(flat, p[self.weight])?;
        g.add_row(y, p[self.bias])
    }
}
