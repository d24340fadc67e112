//! Binary class-presence encoding of semantic segmentation label maps.
//!
//! A [`SegMap`] is a grid of semantic class ids; [`sem2vec`] marks every id
//! that occurs on at least one cell. The on-disk format is plain text:
//!
//! ```text
//! H W N_SEM
//! c c c ...   (H lines of W ids)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of semantic categories of the reference segmentation model.
pub const DEFAULT_N_SEM: usize = 150;

#[derive(Debug, Error)]
pub enum SegMapError {
    #[error("class id {id} at cell {cell} is outside [0, {n_sem})")]
    InvalidClass {
        id: usize,
        cell: usize,
        n_sem: usize,
    },
    #[error("malformed segmentation map: {0}")]
    Malformed(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMap {
    height: usize,
    width: usize,
    n_sem: usize,
    cells: Vec<usize>,
}

impl SegMap {
    pub fn new(
        height: usize,
        width: usize,
        n_sem: usize,
        cells: Vec<usize>,
    ) -> Result<Self, SegMapError> {
        if cells.len() != height * width {
            return Err(SegMapError::Malformed(format!(
                "expected {} cells for {height}x{width}, found {}",
                height * width,
                cells.len()
            )));
        }
        if let Some((cell, &id)) = cells.iter().enumerate().find(|(_, &id)| id >= n_sem) {
            return Err(SegMapError::InvalidClass { id, cell, n_sem });
        }
        Ok(Self {
            height,
            width,
            n_sem,
            cells,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_sem(&self) -> usize {
        self.n_sem
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn parse(text: &str) -> Result<Self, SegMapError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| SegMapError::Malformed("empty file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| SegMapError::Malformed(format!("header {header:?}: {e}")))?;
        let [height, width, n_sem] = dims[..] else {
            return Err(SegMapError::Malformed(format!(
                "header must be \"H W N_SEM\", found {header:?}"
            )));
        };
        let mut cells = Vec::with_capacity(height * width);
        let mut rows = 0;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            rows += 1;
            let before = cells.len();
            for tok in line.split_whitespace() {
                let id = tok
                    .parse::<usize>()
                    .map_err(|e| SegMapError::Malformed(format!("row {rows}: {tok:?}: {e}")))?;
                cells.push(id);
            }
            if cells.len() - before != width {
                return Err(SegMapError::Malformed(format!(
                    "row {rows} has {} cells, expected {width}",
                    cells.len() - before
                )));
            }
        }
        if rows != height {
            return Err(SegMapError::Malformed(format!(
                "{rows} rows, expected {height}"
            )));
        }
        Self::new(height, width, n_sem, cells)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.height, self.width, self.n_sem);
        for r in 0..self.height {
            let row: Vec<String> = self.cells[r * self.width..(r + 1) * self.width]
                .iter()
                .map(|c| c.to_string())
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

pub fn load_segmap(path: impl AsRef<Path>) -> Result<SegMap, SegMapError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SegMapError::Io {
        path: path.display().to_string(),
        source,
    })?;
    SegMap::parse(&text)
}

/// Binary presence vector over the `n_sem` semantic classes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemVector(Vec<u8>);

impl SemVector {
    /// Builds a vector with ones at `present`.
    pub fn from_classes(
        n_sem: usize,
        present: impl IntoIterator<Item = usize>,
    ) -> Result<Self, SegMapError> {
        let mut v = vec![0u8; n_sem];
        for (cell, id) in present.into_iter().enumerate() {
            if id >= n_sem {
                return Err(SegMapError::InvalidClass { id, cell, n_sem });
            }
            v[id] = 1;
        }
        Ok(Self(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn present(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }
}

pub fn sem2vec(map: &SegMap) -> SemVector {
    let mut v = vec![0u8; map.n_sem];
    for &c in &map.cells {
        v[c] = 1;
    }
    SemVector(v)
}
