//! Synthetic CPU-like suites with a recorded generating function.
//!
//! Every numeric feature is drawn as `u ~ U(−1, 1)` and reported in its own
//! units as `lo + (hi − lo)·(u + 1)/2`. Each target is
//!
//! ```text
//! y = base + Σ_i w_i·u_i + Σ_p c_p·u_a(p)·u_b(p) + Σ_k offset_k[token_k] + ε
//! ```
//!
//! with `ε ~ N(0, noise_std²)`. Features of `silent_groups` get no weight.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::dataset::{Dataset, Provenance, Record};
use crate::data::schema::{FeatureKind, FeatureSchema, FeatureSpec, Group, OutputSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub cpu: usize,
    pub memory: usize,
    pub other: usize,
    /// Categorical features in the Char group.
    pub char: usize,
    pub n_outputs: usize,
    pub noise_std: f64,
    pub base: f64,
    /// Linear weights have magnitude in `[weight_min, weight_max]`.
    pub weight_min: f64,
    pub weight_max: f64,
    /// Number of pairwise interaction terms.
    pub interactions: usize,
    pub interaction_scale: f64,
    /// Distinct tokens per categorical feature.
    pub tokens: usize,
    pub offset_scale: f64,
    pub vocab_capacity: usize,
    pub silent_groups: Vec<Group>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 500,
            cpu: 20,
            memory: 8,
            other: 4,
            char: 3,
            n_outputs: 1,
            noise_std: 1.0,
            base: 500.0,
            weight_min: 4.0,
            weight_max: 16.0,
            interactions: 4,
            interaction_scale: 30.0,
            tokens: 5,
            offset_scale: 15.0,
            vocab_capacity: 8,
            silent_groups: Vec::new(),
        }
    }
}

impl SynthSpec {
    /// The default spec without interaction terms.
    pub fn linear() -> Self {
        Self {
            interactions: 0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFeature {
    pub name: String,
    pub group: Group,
    pub kind: FeatureKind,
    /// Value range for numeric features.
    pub lo: f64,
    pub hi: f64,
    /// Token strings for categorical features.
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    /// Numeric slots.
    pub a: usize,
    pub b: usize,
    /// One coefficient per output.
    pub coef: Vec<f64>,
}

/// The exact function used to produce targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGenerator {
    pub suite: String,
    pub features: Vec<SynthFeature>,
    pub outputs: Vec<String>,
    pub base: Vec<f64>,
    /// `[output][numeric slot]`.
    pub linear: Vec<Vec<f64>>,
    pub interactions: Vec<Interaction>,
    /// `[output][categorical slot][token]`.
    pub offsets: Vec<Vec<Vec<f64>>>,
    pub noise_std: f64,
    pub vocab_capacity: usize,
}

impl SynthGenerator {
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            features: self
                .features
                .iter()
                .map(|f| match f.kind {
                    FeatureKind::Numeric => FeatureSpec::numeric(&f.name, f.group),
                    FeatureKind::Categorical => FeatureSpec::categorical(&f.name, f.group, self.vocab_capacity),
                })
                .collect(),
            outputs: OutputSpec {
                suite: self.suite.clone(),
                columns: self.outputs.clone(),
            },
        }
    }

    fn numeric_features(&self) -> impl Iterator<Item = &SynthFeature> {
        self.features.iter().filter(|f| f.kind == FeatureKind::Numeric)
    }

    fn categorical_features(&self) -> impl Iterator<Item = &SynthFeature> {
        self.features.iter().filter(|f| f.kind == FeatureKind::Categorical)
    }

    /// Noiseless targets for raw feature values in slot order.
    pub fn evaluate(&self, numeric: &[f64], categorical: &[String]) -> Result<Vec<f64>> {
        let u: Vec<f64> = self
            .numeric_features()
            .zip(numeric)
            .map(|(f, x)| 2.0 * (x - f.lo) / (f.hi - f.lo) - 1.0)
            .collect();
        let tokens = self
            .categorical_features()
            .zip(categorical)
            .map(|(f, t)| {
                f.tokens
                    .iter()
                    .position(|s| s == t)
                    .ok_or_else(|| Error::Data(format!("feature {:?}: unknown token {t:?}", f.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((0..self.outputs.len())
            .map(|o| {
                let mut y = self.base[o];
                for (w, ui) in self.linear[o].iter().zip(&u) {
                    y += w * ui;
                }
                for it in &self.interactions {
                    y += it.coef[o] * u[it.a] * u[it.b];
                }
                for (k, t) in tokens.iter().enumerate() {
                    y += self.offsets[o][k][*t];
                }
                y
            })
            .collect())
    }
}

fn signed(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let m = if hi > lo { rng.random_range(lo..hi) } else { lo };
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

/// Draws a generator from `spec` and samples `spec.n_samples` rows from it.
pub fn synthesize(spec: &SynthSpec, seed: u64) -> Result<(Dataset, SynthGenerator)> {
    if spec.n_outputs == 0 || spec.n_samples == 0 {
        return Err(Error::Config("synthetic suite needs samples and outputs".into()));
    }
    if spec.char > 0 && (spec.tokens == 0 || spec.tokens >= spec.vocab_capacity) {
        return Err(Error::Config(format!(
            "{} tokens do not fit vocabulary capacity {}",
            spec.tokens, spec.vocab_capacity
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::new();
    for (group, count, prefix) in [
        (Group::Char, spec.char, "char"),
        (Group::Cpu, spec.cpu, "cpu"),
        (Group::Memory, spec.memory, "mem"),
        (Group::Other, spec.other, "other"),
    ] {
        for i in 0..count {
            let name = format!("{prefix}_{i:02}");
            features.push(if group == Group::Char {
                SynthFeature {
                    name,
                    group,
                    kind: FeatureKind::Categorical,
                    lo: 0.0,
                    hi: 0.0,
                    tokens: (0..spec.tokens).map(|t| format!("{prefix}{i}_v{t}")).collect(),
                }
            } else {
                let lo = rng.random_range(0.0..100.0);
                let hi = lo + rng.random_range(1.0..100.0);
                SynthFeature {
                    name,
                    group,
                    kind: FeatureKind::Numeric,
                    lo,
                    hi,
                    tokens: Vec::new(),
                }
            });
        }
    }
    let numeric_groups: Vec<Group> = features
        .iter()
        .filter(|f| f.kind == FeatureKind::Numeric)
        .map(|f| f.group)
        .collect();
    let audible: Vec<usize> = (0..numeric_groups.len())
        .filter(|i| !spec.silent_groups.contains(&numeric_groups[*i]))
        .collect();
    let outputs: Vec<String> = (0..spec.n_outputs).map(|o| format!("y{o}")).collect();
    let linear = (0..spec.n_outputs)
        .map(|_| {
            numeric_groups
                .iter()
                .map(|g| {
                    let w = signed(&mut rng, spec.weight_min, spec.weight_max);
                    if spec.silent_groups.contains(g) {
                        0.0
                    } else {
                        w
                    }
                })
                .collect()
        })
        .collect();
    let mut interactions = Vec::with_capacity(spec.interactions);
    if spec.interactions > 0 && audible.len() < 2 {
        return Err(Error::Config("interactions need two weighted numeric features".into()));
    }
    for _ in 0..spec.interactions {
        let pair = sample(&mut rng, audible.len(), 2);
        interactions.push(Interaction {
            a: audible[pair.index(0)],
            b: audible[pair.index(1)],
            coef: (0..spec.n_outputs)
                .map(|_| signed(&mut rng, 0.5 * spec.interaction_scale, spec.interaction_scale))
                .collect(),
        });
    }
    let char_silent = spec.silent_groups.contains(&Group::Char);
    let offsets = (0..spec.n_outputs)
        .map(|_| {
            (0..spec.char)
                .map(|_| {
                    (0..spec.tokens)
                        .map(|_| {
                            let v = rng.random_range(-spec.offset_scale..=spec.offset_scale);
                            if char_silent {
                                0.0
                            } else {
                                v
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let generator = SynthGenerator {
        suite: "synthetic".into(),
        features,
        outputs,
        base: vec![spec.base; spec.n_outputs],
        linear,
        interactions,
        offsets,
        noise_std: spec.noise_std,
        vocab_capacity: spec.vocab_capacity,
    };

    let noise = Normal::new(0.0, spec.noise_std.max(0.0))
        .map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut records = Vec::with_capacity(spec.n_samples);
    for row in 0..spec.n_samples {
        let mut numeric = Vec::new();
        let mut categorical = Vec::new();
        for f in &generator.features {
            match f.kind {
                FeatureKind::Numeric => {
                    let u: f64 = rng.random_range(-1.0..=1.0);
                    numeric.push(f.lo + (f.hi - f.lo) * (u + 1.0) / 2.0);
                }
                FeatureKind::Categorical => {
                    categorical.push(f.tokens[rng.random_range(0..f.tokens.len())].clone());
                }
            }
        }
        let mut targets = generator.evaluate(&numeric, &categorical)?;
        if spec.noise_std > 0.0 {
            for t in &mut targets {
                *t += noise.sample(&mut rng);
            }
        }
        records.push(Record {
            numeric,
            categorical,
            targets,
            provenance: Provenance {
                source: format!("synthetic:{seed}"),
                row,
            },
        });
    }
    let layout = generator.schema().layout();
    Ok((Dataset { layout, records }, generator))
}
