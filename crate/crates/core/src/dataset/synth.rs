//! Gaussian-cluster data with matching segmentation maps, for exercising the
//! full pipeline without any real imagery.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{write_records, DatasetError, FeatureRecord, Result, Sample, SplitSpec};
use crate::numerics::norm;
use crate::rng::{self, streams};
use crate::sem2vec::{sem2vec, SegMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub per_class: usize,
    /// Width of both the image and the body feature vectors.
    pub dim: usize,
    /// Norm of every class mean.
    pub sep: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Place class means on coordinate axes (requires `dim >= n_classes`);
    /// otherwise draw random directions.
    pub orthogonal_means: bool,
    pub n_sem: usize,
    /// Random non-signature semantic ids added to every map.
    pub distractors: usize,
    pub segmap_side: usize,
    /// Per-class label strings; defaults to `class-<c>`.
    pub label_names: Option<Vec<String>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            per_class: 200,
            dim: 16,
            sep: 10.0,
            noise_std: 0.3,
            seed: 0,
            orthogonal_means: true,
            n_sem: crate::sem2vec::DEFAULT_N_SEM,
            distractors: 3,
            segmap_side: 8,
            label_names: None,
        }
    }
}

impl SynthConfig {
    pub fn label(&self, class: usize) -> String {
        self.label_names
            .as_ref()
            .map_or_else(|| format!("class-{class}"), |names| names[class].clone())
    }

    /// A categorical split over the generated labels, class `c` keeping index `c`.
    pub fn split(
        &self,
        name: &str,
        seen: Vec<usize>,
        novel: Vec<usize>,
        support_seed: u64,
    ) -> Result<SplitSpec> {
        let mut spec = SplitSpec::custom(
            name,
            (0..self.n_classes).map(|c| (self.label(c), c)).collect(),
            seen,
            novel,
            support_seed,
        )?;
        spec.class_names = (0..self.n_classes).map(|c| (c, self.label(c))).collect();
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatasetError::InvalidSynth(m));
        if self.sep.is_nan() || self.sep <= 0.0 {
            return bad(format!("sep must be positive, got {}", self.sep));
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return bad(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            ));
        }
        if self.n_classes == 0 || self.dim == 0 {
            return bad("n_classes and dim must be positive".into());
        }
        if self.orthogonal_means && self.dim < self.n_classes {
            return bad(format!(
                "orthogonal means need dim >= n_classes ({} < {})",
                self.dim, self.n_classes
            ));
        }
        if self.n_sem < self.n_classes + self.distractors {
            return bad(format!(
                "n_sem {} cannot hold {} class ids plus {} distractors",
                self.n_sem, self.n_classes, self.distractors
            ));
        }
        if self.segmap_side * self.segmap_side < self.distractors + 1 {
            return bad("segmentation map too small for its class ids".into());
        }
        if let Some(names) = &self.label_names {
            if names.len() != self.n_classes {
                return bad(format!(
                    "{} label names for {} classes",
                    names.len(),
                    self.n_classes
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub records: Vec<FeatureRecord>,
    /// Parallel to `records`; `records[i].segmap_path` names where it is written.
    pub segmaps: Vec<SegMap>,
}

impl SynthData {
    pub fn samples(&self) -> Vec<Sample> {
        self.records
            .iter()
            .zip(&self.segmaps)
            .map(|(r, m)| Sample::new(r.clone(), Some(sem2vec(m))))
            .collect()
    }

    /// Writes `records.jsonl` plus one segmentation file per record under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io_err = |path: &Path| {
            let path = path.display().to_string();
            move |source| DatasetError::Io { path, source }
        };
        for (r, m) in self.records.iter().zip(&self.segmaps) {
            let path = dir.join(
                r.segmap_path
                    .as_deref()
                    .expect("synthetic records carry maps"),
            );
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            std::fs::write(&path, m.to_text()).map_err(io_err(&path))?;
        }
        write_records(dir.join("records.jsonl"), &self.records)
    }
}

/// Draws `per_class` records for each class.
///
/// Image and body features are isotropic Gaussians around per-class means of
/// norm `sep`; the body means use a reversed axis order so the two branches
/// disagree on which coordinate carries which class. Every segmentation map
/// of class `c` contains semantic id `c` plus `distractors` ids drawn from
/// `[n_classes, n_sem)`.
pub fn synth_clusters(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, streams::SYNTH);
    let (img_means, body_means) = if cfg.orthogonal_means {
        let axis = |i: usize| {
            let mut v = vec![0.0; cfg.dim];
            v[i] = cfg.sep;
            v
        };
        (
            (0..cfg.n_classes).map(axis).collect::<Vec<_>>(),
            (0..cfg.n_classes)
                .map(|c| axis(cfg.dim - 1 - c))
                .collect::<Vec<_>>(),
        )
    } else {
        let direction = |rng: &mut rand_chacha::ChaCha20Rng| {
            let v: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = norm(&v).max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x * cfg.sep / n).collect::<Vec<f64>>()
        };
        let img = (0..cfg.n_classes).map(|_| direction(&mut rng)).collect();
        let body = (0..cfg.n_classes).map(|_| direction(&mut rng)).collect();
        (img, body)
    };

    let cells = cfg.segmap_side * cfg.segmap_side;
    let distractor_pool = cfg.n_sem - cfg.n_classes;
    let mut records = Vec::with_capacity(cfg.n_classes * cfg.per_class);
    let mut segmaps = Vec::with_capacity(records.capacity());
    for class in 0..cfg.n_classes {
        for k in 0..cfg.per_class {
            let draw = |mean: &[f64], rng: &mut rand_chacha::ChaCha20Rng| -> Vec<f64> {
                mean.iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + cfg.noise_std * z
                    })
                    .collect()
            };
            let img_feat = draw(&img_means[class], &mut rng);
            let body_feat = draw(&body_means[class], &mut rng);

            let mut ids = vec![class];
            ids.extend(
                index::sample(&mut rng, distractor_pool, cfg.distractors)
                    .into_iter()
                    .map(|d| cfg.n_classes + d),
            );
            let mut grid: Vec<usize> = (0..cells).map(|i| ids[i % ids.len()]).collect();
            grid.shuffle(&mut rng);
            let map = SegMap::new(cfg.segmap_side, cfg.segmap_side, cfg.n_sem, grid)
                .expect("ids bounded by n_sem");

            let id = format!("s{class:03}-{k:04}");
            records.push(FeatureRecord {
                labels: vec![cfg.label(class)],
                img_feat,
                body_feat,
                segmap_path: Some(format!("segmaps/{id}.seg")),
                numeric_levels: Some([
                    (class % 10 + 1) as u8,
                    ((class + 3) % 10 + 1) as u8,
                    ((class + 6) % 10 + 1) as u8,
                ]),
                id,
            });
            segmaps.push(map);
        }
    }
    Ok(SynthData { records, segmaps })
}
