use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};
use crate::sem2vec::{load_segmap, sem2vec, SemVector};

/// One JSON-lines record: raw labels plus precomputed branch features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub id: String,
    pub labels: Vec<String>,
    pub img_feat: Vec<f64>,
    pub body_feat: Vec<f64>,
    #[serde(default)]
    pub segmap_path: Option<String>,
    /// Valence, arousal and dominance levels, each in `1..=10`.
    #[serde(default)]
    pub numeric_levels: Option<[u8; 3]>,
}

impl FeatureRecord {
    pub fn level(&self, dim: Dimension) -> Result<u8> {
        let levels = self
            .numeric_levels
            .ok_or_else(|| DatasetError::MissingLevels(self.id.clone()))?;
        let level = levels[dim.index()];
        if !(1..=10).contains(&level) {
            return Err(DatasetError::LevelRange {
                id: self.id.clone(),
                level,
            });
        }
        Ok(level)
    }

    /// Checks feature widths and finiteness.
    pub fn validate(&self, d_img: usize, d_body: usize) -> Result<()> {
        for (field, values, expected) in [
            ("img_feat", &self.img_feat, d_img),
            ("body_feat", &self.body_feat, d_body),
        ] {
            if values.len() != expected {
                return Err(DatasetError::Dimension {
                    id: self.id.clone(),
                    field,
                    expected,
                    found: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite {
                    id: self.id.clone(),
                    field,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Valence,
    Arousal,
    Dominance,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Valence, Dimension::Arousal, Dimension::Dominance];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Valence => "valence",
            Dimension::Arousal => "arousal",
            Dimension::Dominance => "dominance",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown dimension {s:?}"))
    }
}

/// Reads a JSON-lines file; blank lines are skipped, ids must be unique.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<FeatureRecord>> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FeatureRecord =
            serde_json::from_str(&line).map_err(|source| DatasetError::Json {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?;
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_records(path: impl AsRef<Path>, records: &[FeatureRecord]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for r in records {
        let line = serde_json::to_string(r).expect("records always serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// A record with its semantic presence vector resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub record: FeatureRecord,
    pub sem: Option<SemVector>,
}

impl Sample {
    pub fn new(record: FeatureRecord, sem: Option<SemVector>) -> Self {
        Self { record, sem }
    }
}

/// Validates every record and, when `with_sem` is set, loads its segmentation
/// map relative to `base_dir`. Fails on the first bad record.
pub fn resolve_samples(
    records: Vec<FeatureRecord>,
    base_dir: &Path,
    d_img: usize,
    d_body: usize,
    n_sem: usize,
    with_sem: bool,
) -> Result<Vec<Sample>> {
    records
        .into_iter()
        .map(|record| {
            record.validate(d_img, d_body)?;
            let sem = if with_sem {
                let rel = record
                    .segmap_path
                    .as_ref()
                    .ok_or_else(|| DatasetError::MissingSegmap(record.id.clone()))?;
                let map =
                    load_segmap(base_dir.join(rel)).map_err(|source| DatasetError::SegMap {
                        id: record.id.clone(),
                        source,
                    })?;
                if map.n_sem() != n_sem {
                    return Err(DatasetError::SemClasses {
                        id: record.id.clone(),
                        expected: n_sem,
                        found: map.n_sem(),
                    });
                }
                Some(sem2vec(&map))
            } else {
                None
            };
            Ok(Sample { record, sem })
        })
        .collect()
}
