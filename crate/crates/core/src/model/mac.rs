use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    inter_group_attention, intra_group_attention, AttentionStack, GroupOutput, GroupPartition, HeadWeights,
    PredictionHead,
};
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::schema::{FeatureKind, FeatureSchema, Group, LayoutFeature};
use crate::data::transform::EncodedSample;
use crate::error::{Error, Result};
use crate::mamba::{uniform, MambaBlock};
use crate::model::config::ModelConfig;
use crate::params::{Bound, ParamId, ParamStore};

/// Largest standardised input magnitude accepted in debug builds.
pub const INPUT_LIMIT: f64 = 100.0;

/// The assembled network and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MacModel {
    schema: FeatureSchema,
    config: ModelConfig,
    store: ParamStore,
    n_numeric_slots: usize,
    n_categorical_slots: usize,
    /// Model features in schema order, after `drop_group`.
    features: Vec<LayoutFeature>,
    numeric_slots: Vec<usize>,
    categorical_slots: Vec<usize>,
    /// First table row and capacity of each model categorical feature.
    categorical_rows: Vec<(usize, usize)>,
    /// Row of each feature (schema order) in `[numeric ; categorical]`.
    merge_order: Vec<usize>,
    numeric_weight: Option<ParamId>,
    numeric_bias: Option<ParamId>,
    categorical_table: Option<ParamId>,
    numeric_blocks: Vec<MambaBlock>,
    char_blocks: Vec<MambaBlock>,
    partition: GroupPartition,
    intra: Vec<Option<AttentionStack>>,
    inter: Option<AttentionStack>,
    head: PredictionHead,
}

/// Attention matrices of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTrace {
    pub group: Group,
    /// Feature names of the matrix rows and columns.
    pub labels: Vec<String>,
    /// `[layer][head]`, each `[F_g×F_g]`.
    pub layers: Vec<Vec<Tensor>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub intra: Vec<GroupTrace>,
    /// Tokens are the groups in `intra` order; `[layer][head]`, each `[G×G]`.
    pub inter: Vec<Vec<Tensor>>,
    pub prediction: Vec<f64>,
}

struct Pass {
    prediction: Var,
    groups: Vec<GroupOutput>,
    inter: Vec<HeadWeights>,
}

impl MacModel {
    /// Builds the network for `schema` and initialises it from `seed`.
    pub fn new(schema: &FeatureSchema, config: &ModelConfig, seed: u64) -> Result<Self> {
        schema.validate()?;
        config.validate()?;
        let layout = schema.layout();
        let n_outputs = layout.n_outputs();
        let features: Vec<LayoutFeature> = layout
            .features
            .iter()
            .filter(|f| Some(f.group) != config.ablation.drop_group)
            .cloned()
            .collect();
        if features.is_empty() {
            return Err(Error::Config("no features left after dropping a group".into()));
        }
        let d = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();

        let mut numeric_slots = Vec::new();
        let mut categorical_slots = Vec::new();
        let mut categorical_rows = Vec::new();
        let mut table_rows = 0;
        for f in &features {
            match f.kind {
                FeatureKind::Numeric => numeric_slots.push(f.slot),
                FeatureKind::Categorical => {
                    categorical_slots.push(f.slot);
                    categorical_rows.push((table_rows, f.vocab_capacity));
                    table_rows += f.vocab_capacity;
                }
            }
        }
        let (fn_, fc) = (numeric_slots.len(), categorical_slots.len());
        let (mut ni, mut ci) = (0, 0);
        let merge_order = features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Numeric => {
                    ni += 1;
                    ni - 1
                }
                FeatureKind::Categorical => {
                    ci += 1;
                    fn_ + ci - 1
                }
            })
            .collect();

        let (numeric_weight, numeric_bias) = if fn_ > 0 {
            (
                Some(store.add("embed.numeric.weight", uniform(fn_, d, 1.0, &mut rng))),
                Some(store.add("embed.numeric.bias", uniform(fn_, d, 1.0, &mut rng))),
            )
        } else {
            (None, None)
        };
        let categorical_table =
            (fc > 0).then(|| store.add("embed.categorical.table", uniform(table_rows, d, 1.0, &mut rng)));

        let blocks = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, present: bool| -> Result<Vec<MambaBlock>> {
            if !(present && config.ablation.use_mamba) {
                return Ok(Vec::new());
            }
            (0..config.mamba_blocks)
                .map(|b| MambaBlock::init(store, &format!("mamba.{name}.{b}"), config.mamba(), rng))
                .collect()
        };
        let numeric_blocks = blocks(&mut store, &mut rng, "numeric", fn_ > 0)?;
        let char_blocks = blocks(&mut store, &mut rng, "char", fc > 0)?;

        let assignment: Vec<Option<Group>> = features.iter().map(|f| Some(f.group)).collect();
        let partition = GroupPartition::new(&assignment)?;
        let intra = partition
            .groups
            .iter()
            .map(|(grp, _)| {
                config
                    .ablation
                    .use_intra
                    .then(|| {
                        AttentionStack::init(
                            &mut store,
                            &format!("intra.{grp}"),
                            config.attention(),
                            config.attn_layers,
                            &mut rng,
                        )
                    })
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let inter = config
            .ablation
            .use_inter
            .then(|| AttentionStack::init(&mut store, "inter", config.attention(), config.attn_layers, &mut rng))
            .transpose()?;
        let head = PredictionHead::init(&mut store, "head", partition.len() * d, n_outputs);

        Ok(Self {
            schema: schema.clone(),
            config: config.clone(),
            store,
            n_numeric_slots: layout.n_numeric(),
            n_categorical_slots: layout.n_categorical(),
            features,
            numeric_slots,
            categorical_slots,
            categorical_rows,
            merge_order,
            numeric_weight,
            numeric_bias,
            categorical_table,
            numeric_blocks,
            char_blocks,
            partition,
            intra,
            inter,
            head,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn n_outputs(&self) -> usize {
        self.head.outputs
    }

    /// Model features in schema order.
    pub fn features(&self) -> &[LayoutFeature] {
        &self.features
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn head(&self) -> &PredictionHead {
        &self.head
    }

    fn check_sample(&self, s: &EncodedSample) -> Result<()> {
        if s.numeric.len() != self.n_numeric_slots || s.categorical.len() != self.n_categorical_slots {
            return Err(Error::Data(format!(
                "sample has {} numeric and {} categorical values; the schema expects {} and {}",
                s.numeric.len(),
                s.categorical.len(),
                self.n_numeric_slots,
                self.n_categorical_slots
            )));
        }
        if cfg!(debug_assertions) {
            if let Some(v) = s.numeric.iter().find(|v| !(v.abs() <= INPUT_LIMIT)) {
                return Err(Error::Data(format!(
                    "input value {v} looks unnormalised (|value| > {INPUT_LIMIT})"
                )));
            }
        }
        for (&slot, &(_, cap)) in self.categorical_slots.iter().zip(&self.categorical_rows) {
            if s.categorical[slot] >= cap {
                return Err(Error::Data(format!(
                    "token id {} exceeds vocabulary capacity {cap}",
                    s.categorical[slot]
                )));
            }
        }
        Ok(())
    }

    fn pass(&self, g: &mut Graph, p: &Bound, s: &EncodedSample) -> Result<Pass> {
        self.check_sample(s)?;
        let d = self.config.embed_dim;
        let mut parts = Vec::with_capacity(2);
        if let (Some(w), Some(b)) = (self.numeric_weight, self.numeric_bias) {
            let fn_ = self.numeric_slots.len();
            let mut rep = Vec::with_capacity(fn_ * d);
            for &slot in &self.numeric_slots {
                rep.extend(std::iter::repeat_n(s.numeric[slot], d));
            }
            let values = g.constant(Tensor::matrix(fn_, d, rep)?);
            let scaled = g.mul(values, p[w])?;
            let mut x = g.add(scaled, p[b])?;
            for block in &self.numeric_blocks {
                x = block.forward(g, p, x)?;
            }
            parts.push(x);
        }
        if let Some(table) = self.categorical_table {
            let rows: Vec<usize> = self
                .categorical_slots
                .iter()
                .zip(&self.categorical_rows)
                .map(|(&slot, &(start, _))| start + s.categorical[slot])
                .collect();
            let mut x = g.gather_rows(p[table], &rows)?;
            for block in &self.char_blocks {
                x = block.forward(g, p, x)?;
            }
            parts.push(x);
        }
        let stacked = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
        let merged = g.gather_rows(stacked, &self.merge_order)?;
        let groups = intra_group_attention(g, p, merged, &self.partition, &self.intra)?;
        let (fused, inter) = inter_group_attention(g, p, &groups, self.inter.as_ref())?;
        let prediction = self.head.forward(g, p, fused)?;
        Ok(Pass {
            prediction,
            groups,
            inter,
        })
    }

    /// Standardised prediction `[1×n_outputs]` on an existing graph.
    pub fn forward(&self, g: &mut Graph, p: &Bound, s: &EncodedSample) -> Result<Var> {
        Ok(self.pass(g, p, s)?.prediction)
    }

    /// Mean Huber loss over `batch` against standardised targets.
    pub fn batch_loss(&self, g: &mut Graph, p: &Bound, batch: &[EncodedSample]) -> Result<Var> {
        let preds = batch
            .iter()
            .map(|s| self.forward(g, p, s))
            .collect::<Result<Vec<_>>>()?;
        let stacked = g.concat_rows(&preds)?;
        let targets: Vec<f64> = batch.iter().flat_map(|s| s.targets.iter().copied()).collect();
        g.huber(stacked, &targets, self.config.huber_delta)
    }

    /// Loss and per-parameter gradients (in store order) for one batch.
    pub fn loss_and_grads(&self, batch: &[EncodedSample]) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let loss = self.batch_loss(&mut g, &p, batch)?;
        let value = g.value(loss).data()[0];
        g.backward(loss)?;
        let grads = p.vars().iter().map(|v| g.grad_or_zeros(*v)).collect();
        Ok((value, grads))
    }

    /// Standardised predictions.
    pub fn predict(&self, s: &EncodedSample) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let y = self.forward(&mut g, &p, s)?;
        Ok(g.value(y).data().to_vec())
    }

    pub fn predict_batch(&self, samples: &[EncodedSample]) -> Result<Vec<Vec<f64>>> {
        samples.iter().map(|s| self.predict(s)).collect()
    }

    /// Runs one sample and returns every attention matrix.
    pub fn trace(&self, s: &EncodedSample) -> Result<AttentionTrace> {
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let pass = self.pass(&mut g, &p, s)?;
        let values = |layers: &[HeadWeights], g: &Graph| -> Vec<Vec<Tensor>> {
            layers
                .iter()
                .map(|heads| heads.iter().map(|w| g.value(*w).clone()).collect())
                .collect()
        };
        let intra = pass
            .groups
            .iter()
            .zip(&self.partition.groups)
            .map(|(out, (grp, rows))| GroupTrace {
                group: *grp,
                labels: rows.iter().map(|r| self.features[*r].name.clone()).collect(),
                layers: values(&out.weights, &g),
            })
            .collect();
        Ok(AttentionTrace {
            intra,
            inter: values(&pass.inter, &g),
            prediction: g.value(pass.prediction).data().to_vec(),
        })
    }
}
