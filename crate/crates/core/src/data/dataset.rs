//! Raw tabular datasets and CSV ingestion.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::schema::{FeatureKind, FeatureLayout, FeatureSchema, FeatureSource};
use crate::error::{Error, Result};

/// Mapping file contents: cell value → {expanded column → value}.
pub type Mapping = BTreeMap<String, BTreeMap<String, f64>>;

/// Mapping files by name, as referenced from `expand_via`.
#[derive(Debug, Clone, Default)]
pub struct Mappings(HashMap<String, Mapping>);

impl Mappings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, mapping: Mapping) {
        self.0.insert(name.into(), mapping);
    }

    pub fn load(&mut self, name: impl Into<String>, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.insert(name, serde_json::from_str(&text)?);
        Ok(())
    }

    fn get(&self, name: &str) -> Result<&Mapping> {
        self.0
            .get(name)
            .ok_or_else(|| Error::Schema(format!("mapping {name:?} was not supplied")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub row: usize,
}

/// One sample before normalisation. Values are in layout slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub numeric: Vec<f64>,
    pub categorical: Vec<String>,
    pub targets: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub layout: FeatureLayout,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn suite(&self) -> &str {
        &self.layout.suite
    }

    /// Records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            layout: self.layout.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn concat(&self, other: &Dataset) -> Self {
        let mut records = self.records.clone();
        records.extend_from_slice(&other.records);
        Self {
            layout: self.layout.clone(),
            records,
        }
    }

    /// Column `j` of the targets.
    pub fn target_column(&self, j: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.targets[j]).collect()
    }
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Row {
        row,
        msg: format!("column {column:?}: cannot parse {cell:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Row {
            row,
            msg: format!("column {column:?}: non-finite value {cell:?}"),
        });
    }
    Ok(v)
}

/// Reads a CSV whose header names the schema's columns in any order.
///
/// Dropped features need not be present. Expanded features are replaced by
/// the columns of their mapping file. `row` indices in errors and provenance
/// count data rows from zero.
pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema, mappings: &Mappings) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, &path.display().to_string(), schema, mappings)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    source: &str,
    schema: &FeatureSchema,
    mappings: &Mappings,
) -> Result<Dataset> {
    let layout = schema.layout();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: HashMap<String, usize> = rdr
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_owned(), i))
        .collect();
    let column = |name: &str| {
        header
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };

    enum Getter<'a> {
        Plain(usize),
        Expanded {
            col: usize,
            name: &'a str,
            mapping: &'a Mapping,
            field: &'a str,
        },
    }
    let mut getters = Vec::with_capacity(layout.features.len());
    for f in &layout.features {
        getters.push(match &f.source {
            FeatureSource::Column(name) => Getter::Plain(column(name)?),
            FeatureSource::Expanded {
                column: name,
                mapping,
                field,
            } => Getter::Expanded {
                col: column(name)?,
                name,
                mapping: mappings.get(mapping)?,
                field,
            },
        });
    }
    let outputs = layout
        .outputs
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut numeric = Vec::with_capacity(layout.n_numeric());
        let mut categorical = Vec::with_capacity(layout.n_categorical());
        for (f, getter) in layout.features.iter().zip(&getters) {
            match getter {
                Getter::Plain(col) => {
                    let cell = rec.get(*col).unwrap_or("");
                    match f.kind {
                        FeatureKind::Numeric => numeric.push(parse_number(cell, row, &f.name)?),
                        FeatureKind::Categorical => categorical.push(cell.to_owned()),
                    }
                }
                Getter::Expanded {
                    col,
                    name,
                    mapping,
                    field,
                } => {
                    let key = rec.get(*col).unwrap_or("");
                    let value = mapping
                        .get(key)
                        .and_then(|entry| entry.get(*field))
                        .ok_or_else(|| Error::Row {
                            row,
                            msg: format!("column {name:?}: no mapping entry {key:?}.{field}"),
                        })?;
                    numeric.push(*value);
                }
            }
        }
        let targets = layout
            .outputs
            .iter()
            .zip(&outputs)
            .map(|(name, &col)| parse_number(rec.get(col).unwrap_or(""), row, name))
            .collect::<Result<Vec<_>>>()?;
        records.push(Record {
            numeric,
            categorical,
            targets,
            provenance: Provenance {
                source: source.to_owned(),
                row,
            },
        });
    }
    Ok(Dataset { layout, records })
}

/// Writes a dataset back out in layout column order. Expanded features are
/// written under their expanded names.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = dataset.layout.features.iter().map(|f| f.name.as_str()).collect();
    header.extend(dataset.layout.outputs.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in &dataset.records {
        let mut row = Vec::with_capacity(header.len());
        for f in &dataset.layout.features {
            row.push(match f.kind {
                FeatureKind::Numeric => r.numeric[f.slot].to_string(),
                FeatureKind::Categorical => r.categorical[f.slot].clone(),
            });
        }
        row.extend(r.targets.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{FeatureSpec, Group, OutputSpec};

    fn schema() -> FeatureSchema {
        FeatureSchema {
            features: vec![
                FeatureSpec::numeric("cores", Group::Cpu),
                FeatureSpec::numeric("freq", Group::Cpu),
                FeatureSpec::categorical("vendor", Group::Char, 8),
                FeatureSpec {
                    drop: true,
                    ..FeatureSpec::numeric("serial", Group::Other)
                },
            ],
            outputs: OutputSpec {
                suite: "demo".into(),
                columns: vec!["score".into()],
            },
        }
    }

    #[test]
    fn reads_three_rows_in_any_column_order() {
        let csv = "vendor,score,freq,serial,cores\nA,10,2.0,1,8\nB,12,2.5,2,16\nA,11,3.0,3,32\n";
        let d = read_csv(csv.as_bytes(), "mem", &schema(), &Mappings::new()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.records[1].numeric, vec![16.0, 2.5]);
        assert_eq!(d.records[2].categorical, vec!["A".to_string()]);
        assert_eq!(d.records[0].targets, vec![10.0]);
        assert!(d.layout.features.iter().all(|f| f.name != "serial"));
    }

    #[test]
    fn dropped_column_may_be_absent() {
        let csv = "vendor,score,freq,cores\nA,10,2.0,8\n";
        let d = read_csv(csv.as_bytes(), "mem", &schema(), &Mappings::new()).unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "vendor,score,cores\nA,10,8\n";
        let err = read_csv(csv.as_bytes(), "mem", &schema(), &Mappings::new()).unwrap_err();
        assert!(err.to_string().contains("freq"), "{err}");
    }

    #[test]
    fn bad_number_reports_row() {
        let csv = "vendor,score,freq,cores\nA,10,2.0,8\nB,11,fast,8\n";
        let err = read_csv(csv.as_bytes(), "mem", &schema(), &Mappings::new()).unwrap_err();
        assert!(matches!(err, Error::Row { row: 1, .. }), "{err}");
    }

    #[test]
    fn part_number_expands_through_mapping() {
        let mut s = schema();
        s.features.push(FeatureSpec {
            expand_via: Some("dimm".into()),
            expand_columns: vec!["speed".into(), "rank".into()],
            ..FeatureSpec::categorical("DIMM.PartNo", Group::Memory, 2)
        });
        let mapping: Mapping =
            serde_json::from_str(r#"{"PNX": {"speed": 4800, "rank": 2}}"#).unwrap();
        let mut maps = Mappings::new();
        maps.insert("dimm", mapping);
        let csv = "vendor,score,freq,cores,DIMM.PartNo\nA,10,2.0,8,PNX\n";
        let d = read_csv(csv.as_bytes(), "mem", &s, &maps).unwrap();
        assert_eq!(d.records[0].numeric, vec![8.0, 2.0, 4800.0, 2.0]);
        let names: Vec<_> = d.layout.features.iter().map(|f| f.name.as_str()).collect();
        assert!(names.contains(&"DIMM.PartNo.speed") && names.contains(&"DIMM.PartNo.rank"));

        let csv = "vendor,score,freq,cores,DIMM.PartNo\nA,10,2.0,8,UNKNOWN\n";
        assert!(read_csv(csv.as_bytes(), "mem", &s, &maps).is_err());
        assert!(read_csv(csv.as_bytes(), "mem", &s, &Mappings::new()).is_err());
    }
}
