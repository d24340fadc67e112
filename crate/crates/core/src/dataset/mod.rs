//! Sample ingestion, benchmark protocols and one-shot task assembly.

mod records;
mod split;
mod synth;
mod task;

pub use records::{load_records, resolve_samples, write_records, Dimension, FeatureRecord, Sample};
pub use split::{build_split, encode_label, Protocol, SplitSpec, EMOTIC_LABELS, LEVELS};
pub use synth::{synth_clusters, SynthConfig, SynthData};
pub use task::{
    assemble_task, Manifest, ManifestEntry, OneShotTask, Target, TaskItem, TaskManifest,
};

use thiserror::Error;

use crate::sem2vec::SegMapError;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("label {0:?} is not mapped by the split")]
    UnknownLabel(String),
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("record {0:?} has no labels")]
    EmptyLabels(String),
    #[error("class {class} has {found} records, at least {needed} required")]
    InsufficientData {
        class: String,
        found: usize,
        needed: usize,
    },
    #[error("record {id:?}: {field} has {found} values, expected {expected}")]
    Dimension {
        id: String,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("record {id:?}: {field} contains a non-finite value")]
    NonFinite { id: String, field: &'static str },
    #[error("record {id:?}: numeric level {level} outside 1..=10")]
    LevelRange { id: String, level: u8 },
    #[error("record {0:?} has no numeric_levels")]
    MissingLevels(String),
    #[error("record {0:?} has no segmap_path")]
    MissingSegmap(String),
    #[error("record {id:?}: {source}")]
    SegMap {
        id: String,
        #[source]
        source: SegMapError,
    },
    #[error("record {id:?}: segmentation map has {found} classes, expected {expected}")]
    SemClasses {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("manifest refers to unknown record {0:?}")]
    UnknownRecord(String),
    #[error("manifest record {id:?} is class {manifest} but encodes to {encoded}")]
    ManifestClass {
        id: String,
        manifest: usize,
        encoded: usize,
    },
    #[error("invalid synthetic configuration: {0}")]
    InvalidSynth(String),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;
