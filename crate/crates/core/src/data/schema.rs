//! Feature schema: which columns are features, how they are typed and grouped,
//! which are trimmed or expanded, and which columns are the outputs.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    #[serde(alias = "Char")]
    Char,
    #[serde(alias = "CPU", alias = "Cpu")]
    Cpu,
    #[serde(alias = "Memory", alias = "mem")]
    Memory,
    #[serde(alias = "Other")]
    Other,
}

impl Group {
    /// Token order for inter-group attention.
    pub const ALL: [Group; 4] = [Group::Char, Group::Cpu, Group::Memory, Group::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Char => "char",
            Group::Cpu => "cpu",
            Group::Memory => "memory",
            Group::Other => "other",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "char" => Ok(Group::Char),
            "cpu" => Ok(Group::Cpu),
            "memory" | "mem" => Ok(Group::Memory),
            "other" => Ok(Group::Other),
            _ => Err(Error::Schema(format!("unknown group {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

fn default_vocab_capacity() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub group: Group,
    #[serde(default)]
    pub drop: bool,
    /// Name of the mapping file whose entries replace this column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expand_via: Option<String>,
    /// Numeric columns produced by the expansion, named `<name>.<column>`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expand_columns: Vec<String>,
    /// Embedding rows for a categorical feature, including the UNK row.
    #[serde(default = "default_vocab_capacity")]
    pub vocab_capacity: usize,
}

impl FeatureSpec {
    pub fn numeric(name: &str, group: Group) -> Self {
        Self {
            name: name.to_owned(),
            kind: FeatureKind::Numeric,
            group,
            drop: false,
            expand_via: None,
            expand_columns: Vec::new(),
            vocab_capacity: default_vocab_capacity(),
        }
    }

    pub fn categorical(name: &str, group: Group, vocab_capacity: usize) -> Self {
        Self {
            kind: FeatureKind::Categorical,
            vocab_capacity,
            ..Self::numeric(name, group)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub suite: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    pub outputs: OutputSpec,
}

/// Where a model feature's value comes from in the input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSource {
    Column(String),
    Expanded {
        column: String,
        mapping: String,
        field: String,
    },
}

/// One model input after trimming and expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutFeature {
    pub name: String,
    pub kind: FeatureKind,
    pub group: Group,
    /// Index into the sample's numeric or categorical vector.
    pub slot: usize,
    pub vocab_capacity: usize,
    pub source: FeatureSource,
}

/// Resolved model inputs in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub suite: String,
    pub features: Vec<LayoutFeature>,
    pub outputs: Vec<String>,
}

impl FeatureLayout {
    pub fn n_numeric(&self) -> usize {
        self.of_kind(FeatureKind::Numeric).count()
    }

    pub fn n_categorical(&self) -> usize {
        self.of_kind(FeatureKind::Categorical).count()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn of_kind(&self, kind: FeatureKind) -> impl Iterator<Item = &LayoutFeature> {
        self.features.iter().filter(move |f| f.kind == kind)
    }

    /// Groups that own at least one feature, in [`Group::ALL`] order.
    pub fn groups(&self) -> Vec<Group> {
        Group::ALL
            .into_iter()
            .filter(|g| self.features.iter().any(|f| f.group == *g))
            .collect()
    }
}

impl FeatureSchema {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature {:?}", f.name)));
            }
            if f.expand_via.is_some() && f.expand_columns.is_empty() {
                return Err(Error::Schema(format!(
                    "feature {:?} expands via a mapping but declares no expand_columns",
                    f.name
                )));
            }
            if f.kind == FeatureKind::Categorical && f.expand_via.is_none() && f.vocab_capacity < 2 {
                return Err(Error::Schema(format!(
                    "categorical feature {:?} needs vocab_capacity >= 2",
                    f.name
                )));
            }
        }
        if self.outputs.columns.is_empty() {
            return Err(Error::Schema("no output columns declared".into()));
        }
        for c in &self.outputs.columns {
            if seen.contains(c.as_str()) {
                return Err(Error::Schema(format!("{c:?} is both a feature and an output")));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!("duplicate output {c:?}")));
            }
        }
        let layout = self.layout();
        if layout.features.is_empty() {
            return Err(Error::Schema("every feature is dropped".into()));
        }
        let mut names = HashSet::new();
        for f in &layout.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("expanded name {:?} collides", f.name)));
            }
        }
        Ok(())
    }

    /// Trims dropped features and replaces expanded ones by their numeric
    /// columns, which inherit the source feature's group.
    pub fn layout(&self) -> FeatureLayout {
        let mut features = Vec::new();
        let (mut n_num, mut n_cat) = (0, 0);
        for f in self.features.iter().filter(|f| !f.drop) {
            match &f.expand_via {
                Some(mapping) => {
                    for field in &f.expand_columns {
                        features.push(LayoutFeature {
                            name: format!("{}.{}", f.name, field),
                            kind: FeatureKind::Numeric,
                            group: f.group,
                            slot: n_num,
                            vocab_capacity: 0,
                            source: FeatureSource::Expanded {
                                column: f.name.clone(),
                                mapping: mapping.clone(),
                                field: field.clone(),
                            },
                        });
                        n_num += 1;
                    }
                }
                None => {
                    let slot = match f.kind {
                        FeatureKind::Numeric => &mut n_num,
                        FeatureKind::Categorical => &mut n_cat,
                    };
                    features.push(LayoutFeature {
                        name: f.name.clone(),
                        kind: f.kind,
                        group: f.group,
                        slot: *slot,
                        vocab_capacity: match f.kind {
                            FeatureKind::Numeric => 0,
                            FeatureKind::Categorical => f.vocab_capacity,
                        },
                        source: FeatureSource::Column(f.name.clone()),
                    });
                    *slot += 1;
                }
            }
        }
        FeatureLayout {
            suite: self.outputs.suite.clone(),
            features,
            outputs: self.outputs.columns.clone(),
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serialises");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
