//! The three-branch embedder.
//!
//! Each active branch maps its input to a `branch_width` feature: the image
//! and body branches with one affine layer over precomputed features, the
//! semantic branch with a two-layer rectified MLP over the class-presence
//! vector. Branch outputs are concatenated in the order (image, body,
//! semantic), fused by one affine layer and L2-normalized. A separate affine
//! head maps embeddings to seen-class logits for the classification loss.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sample;
use crate::numerics::{
    l2_normalize_backward, l2_normalize_forward, relu_backward, relu_forward, LayerTape, Linear,
    Matrix, NumericsError, Parameters,
};
use crate::rng::{self, streams};

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{what}: expected width {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("sample {0:?} has no semantic vector but the semantic branch is active")]
    MissingSem(String),
    #[error("unknown model variant {0:?}")]
    UnknownVariant(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Which feature branches feed the fusion head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Branches {
    pub img: bool,
    pub body: bool,
    pub sem: bool,
}

impl Branches {
    pub fn count(self) -> usize {
        usize::from(self.img) + usize::from(self.body) + usize::from(self.sem)
    }
}

/// Named branch combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    IDml,
    BDml,
    IbDml,
    SemIDml,
    SemIbDml,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::IDml,
        Variant::BDml,
        Variant::IbDml,
        Variant::SemIDml,
        Variant::SemIbDml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::IDml => "I-DML",
            Variant::BDml => "B-DML",
            Variant::IbDml => "IB-DML",
            Variant::SemIDml => "Sem-I-DML",
            Variant::SemIbDml => "Sem-IB-DML",
        }
    }

    pub fn branches(self) -> Branches {
        let (img, body, sem) = match self {
            Variant::IDml => (true, false, false),
            Variant::BDml => (false, true, false),
            Variant::IbDml => (true, true, false),
            Variant::SemIDml => (true, false, true),
            Variant::SemIbDml => (true, true, true),
        };
        Branches { img, body, sem }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

impl TryFrom<String> for Variant {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_img: usize,
    pub d_body: usize,
    pub n_sem: usize,
    pub branch_width: usize,
    pub sem_hidden: usize,
    pub d_emb: usize,
    /// Number of seen classes, i.e. classification head outputs.
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::SemIbDml,
            d_img: 512,
            d_body: 512,
            n_sem: crate::sem2vec::DEFAULT_N_SEM,
            branch_width: 512,
            sem_hidden: 256,
            d_emb: 128,
            n_classes: 6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let b = self.variant.branches();
        let zero = [
            ("branch_width", self.branch_width),
            ("d_emb", self.d_emb),
            ("n_classes", self.n_classes),
            ("d_img", if b.img { self.d_img } else { 1 }),
            ("d_body", if b.body { self.d_body } else { 1 }),
            ("n_sem", if b.sem { self.n_sem } else { 1 }),
            ("sem_hidden", if b.sem { self.sem_hidden } else { 1 }),
        ]
        .into_iter()
        .filter(|(_, v)| *v == 0)
        .map(|(k, _)| k)
        .collect::<Vec<_>>();
        if !zero.is_empty() {
            return Err(ModelError::Config(format!(
                "zero width: {}",
                zero.join(", ")
            )));
        }
        Ok(())
    }
}

/// Branch inputs for one batch. Inactive branches may hold empty matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchInput {
    pub img: Matrix,
    pub body: Matrix,
    pub sem: Matrix,
}

impl BatchInput {
    pub fn rows(&self) -> usize {
        self.img.rows().max(self.body.rows()).max(self.sem.rows())
    }
}

/// Everything one forward pass caches for [`EmbedderModel::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTape {
    img: Option<LayerTape>,
    body: Option<LayerTape>,
    sem: Option<[LayerTape; 3]>,
    fuse: LayerTape,
    normalize: LayerTape,
    rows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedderModel {
    config: ModelConfig,
    pub img_head: Option<Linear>,
    pub body_head: Option<Linear>,
    pub sem_hidden: Option<Linear>,
    pub sem_out: Option<Linear>,
    pub fuse_head: Linear,
    pub cls_head: Linear,
}

impl EmbedderModel {
    /// Fan-based uniform initialization from the run seed's `init` stream.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let b = config.variant.branches();
        let w = config.branch_width;
        let mut rng = rng::stream(seed, streams::INIT);
        let img_head = b.img.then(|| Linear::glorot(config.d_img, w, &mut rng));
        let body_head = b.body.then(|| Linear::glorot(config.d_body, w, &mut rng));
        let sem_hidden = b
            .sem
            .then(|| Linear::glorot(config.n_sem, config.sem_hidden, &mut rng));
        let sem_out = b
            .sem
            .then(|| Linear::glorot(config.sem_hidden, w, &mut rng));
        let fuse_head = Linear::glorot(w * b.count(), config.d_emb, &mut rng);
        let cls_head = Linear::glorot(config.d_emb, config.n_classes, &mut rng);
        Ok(Self {
            config,
            img_head,
            body_head,
            sem_hidden,
            sem_out,
            fuse_head,
            cls_head,
        })
    }

    /// Same layout, every parameter zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.inputs(), l.outputs());
        Self {
            config: self.config.clone(),
            img_head: self.img_head.as_ref().map(z),
            body_head: self.body_head.as_ref().map(z),
            sem_hidden: self.sem_hidden.as_ref().map(z),
            sem_out: self.sem_out.as_ref().map(z),
            fuse_head: z(&self.fuse_head),
            cls_head: z(&self.cls_head),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn branches(&self) -> Branches {
        self.config.variant.branches()
    }

    /// Named layers in checkpoint order.
    pub fn layers(&self) -> Vec<(&'static str, &Linear)> {
        let mut out = Vec::new();
        for (name, layer) in [
            ("img_head", &self.img_head),
            ("body_head", &self.body_head),
            ("sem_hidden", &self.sem_hidden),
            ("sem_out", &self.sem_out),
        ] {
            if let Some(l) = layer {
                out.push((name, l));
            }
        }
        out.push(("fuse_head", &self.fuse_head));
        out.push(("cls_head", &self.cls_head));
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut Linear> {
        let mut out: Vec<&mut Linear> = [
            self.img_head.as_mut(),
            self.body_head.as_mut(),
            self.sem_hidden.as_mut(),
            self.sem_out.as_mut(),
        ]
        .into_iter()
        .flatten()
        .collect();
        out.push(&mut self.fuse_head);
        out.push(&mut self.cls_head);
        out
    }

    /// Stacks sample features into branch input matrices, checking widths.
    pub fn batch_input<'a>(
        &self,
        samples: impl IntoIterator<Item = &'a Sample>,
    ) -> Result<BatchInput> {
        let b = self.branches();
        let c = &self.config;
        let (mut img, mut body, mut sem) = (Vec::new(), Vec::new(), Vec::new());
        let mut rows = 0;
        for s in samples {
            rows += 1;
            let r = &s.record;
            if b.img {
                check_width(
                    &format!("record {:?} img_feat", r.id),
                    c.d_img,
                    r.img_feat.len(),
                )?;
                img.extend_from_slice(&r.img_feat);
            }
            if b.body {
                check_width(
                    &format!("record {:?} body_feat", r.id),
                    c.d_body,
                    r.body_feat.len(),
                )?;
                body.extend_from_slice(&r.body_feat);
            }
            if b.sem {
                let v = s
                    .sem
                    .as_ref()
                    .ok_or_else(|| ModelError::MissingSem(r.id.clone()))?;
                check_width(
                    &format!("record {:?} semantic vector", r.id),
                    c.n_sem,
                    v.len(),
                )?;
                sem.extend(v.to_f64());
            }
        }
        let width = |on: bool, w: usize| if on { w } else { 0 };
        Ok(BatchInput {
            img: Matrix::new(rows, width(b.img, c.d_img), img)?,
            body: Matrix::new(rows, width(b.body, c.d_body), body)?,
            sem: Matrix::new(rows, width(b.sem, c.n_sem), sem)?,
        })
    }

    /// Unit-norm embeddings for every row of `input`.
    pub fn embed_batch(&self, input: &BatchInput) -> Result<(Matrix, ForwardTape)> {
        let rows = input.rows();
        let mut parts = Vec::with_capacity(3);
        let mut run = |layer: &Option<Linear>, x: &Matrix| -> Result<Option<LayerTape>> {
            let Some(layer) = layer else { return Ok(None) };
            check_rows(rows, x)?;
            let (out, tape) = layer.forward(x)?;
            parts.push(out);
            Ok(Some(tape))
        };
        let img = run(&self.img_head, &input.img)?;
        let body = run(&self.body_head, &input.body)?;
        let sem = match (&self.sem_hidden, &self.sem_out) {
            (Some(hidden), Some(out)) => {
                check_rows(rows, &input.sem)?;
                let (h, t1) = hidden.forward(&input.sem)?;
                let (a, t2) = relu_forward(&h)?;
                let (o, t3) = out.forward(&a)?;
                parts.push(o);
                Some([t1, t2, t3])
            }
            _ => None,
        };
        let fused_in = Matrix::hconcat(&parts.iter().collect::<Vec<_>>())?;
        let (fused, fuse) = self.fuse_head.forward(&fused_in)?;
        let (z, normalize) = l2_normalize_forward(&fused)?;
        Ok((
            z,
            ForwardTape {
                img,
                body,
                sem,
                fuse,
                normalize,
                rows,
            },
        ))
    }

    /// Embeds one example.
    pub fn embed(&self, sample: &Sample) -> Result<Vec<f64>> {
        let input = self.batch_input([sample])?;
        Ok(self.embed_batch(&input)?.0.into_data())
    }

    /// Embeds samples in fixed-size chunks.
    pub fn embed_samples<'a>(
        &self,
        samples: impl IntoIterator<Item = &'a Sample>,
    ) -> Result<Matrix> {
        let samples: Vec<&Sample> = samples.into_iter().collect();
        let mut data = Vec::with_capacity(samples.len() * self.config.d_emb);
        for chunk in samples.chunks(256) {
            let input = self.batch_input(chunk.iter().copied())?;
            data.extend(self.embed_batch(&input)?.0.into_data());
        }
        Ok(Matrix::new(samples.len(), self.config.d_emb, data)?)
    }

    pub fn classify_logits(&self, embeddings: &Matrix) -> Result<(Matrix, LayerTape)> {
        check_width("embedding", self.config.d_emb, embeddings.cols())?;
        Ok(self.cls_head.forward(embeddings)?)
    }

    /// Accumulates classification-head gradients into `grads` and returns
    /// the gradient with respect to the embeddings.
    pub fn classify_backward(
        &self,
        tape: &LayerTape,
        d_logits: &Matrix,
        grads: &mut EmbedderModel,
    ) -> Result<Matrix> {
        let g = self.cls_head.backward(tape, d_logits)?;
        accumulate(&mut grads.cls_head, &g.weights, &g.bias)?;
        Ok(g.input)
    }

    /// Backpropagates `d_embeddings` through normalization, fusion and every
    /// active branch, accumulating into `grads`.
    pub fn backward(
        &self,
        tape: &ForwardTape,
        d_embeddings: &Matrix,
        grads: &mut EmbedderModel,
    ) -> Result<()> {
        if d_embeddings.shape() != (tape.rows, self.config.d_emb) {
            return Err(NumericsError::TapeMismatch(format!(
                "embedding gradient {:?} for a forward pass of {} rows",
                d_embeddings.shape(),
                tape.rows
            ))
            .into());
        }
        let d_fused = l2_normalize_backward(&tape.normalize, d_embeddings)?;
        let g = self.fuse_head.backward(&tape.fuse, &d_fused)?;
        accumulate(&mut grads.fuse_head, &g.weights, &g.bias)?;
        let w = self.config.branch_width;
        let mut blocks = g
            .input
            .hsplit(&vec![w; self.branches().count()])?
            .into_iter();

        for (layer, grad, t) in [
            (&self.img_head, &mut grads.img_head, &tape.img),
            (&self.body_head, &mut grads.body_head, &tape.body),
        ] {
            if let (Some(layer), Some(t)) = (layer, t) {
                let d = blocks.next().expect("one block per active branch");
                let g = layer.backward(t, &d)?;
                let acc = grad.as_mut().expect("gradient layout mirrors model");
                accumulate(acc, &g.weights, &g.bias)?;
            }
        }
        if let (Some(hidden), Some(out), Some([t1, t2, t3])) =
            (&self.sem_hidden, &self.sem_out, &tape.sem)
        {
            let d = blocks.next().expect("one block per active branch");
            let g_out = out.backward(t3, &d)?;
            accumulate(
                grads.sem_out.as_mut().expect("layout"),
                &g_out.weights,
                &g_out.bias,
            )?;
            let d_h = relu_backward(t2, &g_out.input)?;
            let g_hidden = hidden.backward(t1, &d_h)?;
            accumulate(
                grads.sem_hidden.as_mut().expect("layout"),
                &g_hidden.weights,
                &g_hidden.bias,
            )?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let parameters = self
            .layers()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    (
                        format!("{name}.weights"),
                        MatrixDoc {
                            rows: l.weights.rows(),
                            cols: l.weights.cols(),
                            data: l.weights.data().to_vec(),
                        },
                    ),
                    (
                        format!("{name}.bias"),
                        MatrixDoc {
                            rows: 1,
                            cols: l.bias.len(),
                            data: l.bias.clone(),
                        },
                    ),
                ]
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            parameters,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::UnsupportedVersion(ckpt.version));
        }
        let mut model = Self::init(ckpt.config, 0)?.zeros_like();
        let mut params = ckpt.parameters;
        let names: Vec<&'static str> = model.layers().into_iter().map(|(n, _)| n).collect();
        for (name, layer) in names.into_iter().zip(model.layers_mut()) {
            let mut take = |suffix: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
                let key = format!("{name}.{suffix}");
                let doc = params
                    .remove(&key)
                    .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {key}")))?;
                if (doc.rows, doc.cols) != (rows, cols) || doc.data.len() != rows * cols {
                    return Err(ModelError::Checkpoint(format!(
                        "{key} is {}x{} with {} values, expected {rows}x{cols}",
                        doc.rows,
                        doc.cols,
                        doc.data.len()
                    )));
                }
                Ok(doc.data)
            };
            let (i, o) = (layer.inputs(), layer.outputs());
            let weights = Matrix::new(i, o, take("weights", i, o)?)?;
            let bias = take("bias", 1, o)?;
            *layer = Linear::new(weights, bias)?;
        }
        if let Some(extra) = params.keys().next() {
            return Err(ModelError::Checkpoint(format!(
                "unexpected parameter {extra}"
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes");
        std::fs::write(path, json).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_checkpoint_json(&text)
    }

    /// Parses a checkpoint document, checking the version before anything else.
    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ModelError::Checkpoint("missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::UnsupportedVersion(version));
        }
        let ckpt: Checkpoint =
            serde_json::from_value(value).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ckpt)
    }
}

impl Parameters for EmbedderModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers()
            .into_iter()
            .flat_map(|(_, l)| l.param_slices())
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| l.param_slices_mut())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// On-disk model: `{version, config, parameters}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u64,
    pub config: ModelConfig,
    pub parameters: BTreeMap<String, MatrixDoc>,
}

fn accumulate(into: &mut Linear, weights: &Matrix, bias: &[f64]) -> Result<()> {
    into.weights.add_assign(weights)?;
    into.bias.iter_mut().zip(bias).for_each(|(a, b)| *a += b);
    Ok(())
}

fn check_width(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(ModelError::Dimension {
            what: what.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_rows(rows: usize, x: &Matrix) -> Result<()> {
    check_width("batch rows", rows, x.rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureRecord;
    use crate::numerics::norm;
    use crate::sem2vec::SemVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn small_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            d_img: 5,
            d_body: 4,
            n_sem: 12,
            branch_width: 6,
            sem_hidden: 7,
            d_emb: 3,
            n_classes: 4,
        }
    }

    fn sample(rng: &mut ChaCha20Rng, cfg: &ModelConfig) -> Sample {
        let present: Vec<usize> = (0..cfg.n_sem).filter(|_| rng.random_bool(0.3)).collect();
        Sample::new(
            FeatureRecord {
                id: format!("x{}", rng.random::<u32>()),
                labels: vec![],
                img_feat: (0..cfg.d_img)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
                body_feat: (0..cfg.d_body)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
                segmap_path: None,
                numeric_levels: None,
            },
            Some(SemVector::from_classes(cfg.n_sem, present).unwrap()),
        )
    }

    #[test]
    fn variants_select_branches() {
        let b = "Sem-IB-DML".parse::<Variant>().unwrap().branches();
        assert!(b.img && b.body && b.sem);
        assert_eq!(
            Variant::IDml.branches(),
            Branches {
                img: true,
                body: false,
                sem: false
            }
        );
        assert_eq!(
            Variant::BDml.branches(),
            Branches {
                img: false,
                body: true,
                sem: false
            }
        );
        assert_eq!(
            Variant::SemIDml.branches(),
            Branches {
                img: true,
                body: false,
                sem: true
            }
        );
        assert_eq!(
            Variant::IbDml.branches(),
            Branches {
                img: true,
                body: true,
                sem: false
            }
        );
        assert_eq!("sem-i-dml".parse::<Variant>().unwrap(), Variant::SemIDml);
        assert!(matches!(
            "X-DML".parse::<Variant>(),
            Err(ModelError::UnknownVariant(_))
        ));
    }

    #[test]
    fn default_widths() {
        let m = EmbedderModel::init(ModelConfig::default(), 1).unwrap();
        assert_eq!(m.fuse_head.inputs(), 1536);
        assert_eq!(m.sem_hidden.as_ref().unwrap().shape_io(), (150, 256));
        assert_eq!(m.sem_out.as_ref().unwrap().shape_io(), (256, 512));
        assert_eq!(m.cls_head.outputs(), 6);
        let m = EmbedderModel::init(
            ModelConfig {
                variant: Variant::SemIDml,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        assert_eq!(m.fuse_head.inputs(), 1024);
        assert!(m.body_head.is_none());
    }

    trait ShapeIo {
        fn shape_io(&self) -> (usize, usize);
    }
    impl ShapeIo for Linear {
        fn shape_io(&self) -> (usize, usize) {
            (self.inputs(), self.outputs())
        }
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let cfg = small_config(Variant::SemIbDml);
        let m = EmbedderModel::init(cfg.clone(), 3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..20 {
            let s = sample(&mut rng, &cfg);
            let z = m.embed(&s).unwrap();
            assert!((norm(&z) - 1.0).abs() < 1e-9);
            assert_eq!(z, m.embed(&s).unwrap());
        }
        assert_eq!(m, EmbedderModel::init(cfg, 3).unwrap());
    }

    #[test]
    fn empty_scene_is_allowed() {
        let cfg = small_config(Variant::SemIDml);
        let m = EmbedderModel::init(cfg.clone(), 3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut s = sample(&mut rng, &cfg);
        s.sem = Some(SemVector::from_classes(cfg.n_sem, []).unwrap());
        assert!(m.embed(&s).is_ok());
        s.sem = None;
        assert!(matches!(m.embed(&s), Err(ModelError::MissingSem(_))));
        s.sem = Some(SemVector::from_classes(3, []).unwrap());
        assert!(matches!(m.embed(&s), Err(ModelError::Dimension { .. })));
    }

    #[test]
    fn zeroed_branch_matches_model_without_it() {
        let full_cfg = small_config(Variant::IbDml);
        let mut full = EmbedderModel::init(full_cfg.clone(), 9).unwrap();
        let body = full.body_head.as_mut().unwrap();
        *body = Linear::zeros(body.inputs(), body.outputs());

        let mut img_only = EmbedderModel::init(small_config(Variant::IDml), 0).unwrap();
        img_only.img_head = full.img_head.clone();
        let w = full_cfg.branch_width;
        let rows: Vec<Vec<f64>> = (0..w)
            .map(|r| full.fuse_head.weights.row(r).to_vec())
            .collect();
        img_only.fuse_head = Linear::new(
            Matrix::from_rows(&rows).unwrap(),
            full.fuse_head.bias.clone(),
        )
        .unwrap();

        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..5 {
            let s = sample(&mut rng, &full_cfg);
            let a = full.embed(&s).unwrap();
            let b = img_only.embed(&s).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn classify_logits_examples() {
        let cfg = small_config(Variant::IDml);
        let mut m = EmbedderModel::init(cfg, 2).unwrap();
        m.cls_head = Linear::zeros(3, 4);
        let z = Matrix::from_rows(&[[0.6, 0.8, 0.0]]).unwrap();
        let (logits, _) = m.classify_logits(&z).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let ce = crate::losses::cross_entropy(&logits, &[2], None).unwrap();
        assert!((ce.value - 4f64.ln()).abs() < 1e-12);

        m.cls_head.bias = vec![1.0, -2.0, 0.5, 3.0];
        let (logits, _) = m.classify_logits(&Matrix::zeros(1, 3)).unwrap();
        assert_eq!(logits.data(), &[1.0, -2.0, 0.5, 3.0]);
        assert!(m.classify_logits(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn segmap_difference_changes_embedding() {
        let cfg = small_config(Variant::SemIDml);
        let m = EmbedderModel::init(cfg.clone(), 4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let a = sample(&mut rng, &cfg);
        let mut b = a.clone();
        b.sem = Some(SemVector::from_classes(cfg.n_sem, [0, 5, 11]).unwrap());
        assert_ne!(m.embed(&a).unwrap(), m.embed(&b).unwrap());
    }

    #[test]
    fn checkpoint_roundtrip_and_version_check() {
        let m = EmbedderModel::init(small_config(Variant::SemIbDml), 6).unwrap();
        let json = serde_json::to_string(&m.to_checkpoint()).unwrap();
        let back = EmbedderModel::from_checkpoint_json(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(serde_json::to_string(&back.to_checkpoint()).unwrap(), json);

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["version"] = 2.into();
        assert!(matches!(
            EmbedderModel::from_checkpoint_json(&v.to_string()),
            Err(ModelError::UnsupportedVersion(2))
        ));
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["parameters"]
            .as_object_mut()
            .unwrap()
            .remove("sem_out.bias");
        assert!(matches!(
            EmbedderModel::from_checkpoint_json(&v.to_string()),
            Err(ModelError::Checkpoint(_))
        ));
    }

    #[test]
    fn batch_width_errors() {
        let cfg = small_config(Variant::IbDml);
        let m = EmbedderModel::init(cfg.clone(), 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut s = sample(&mut rng, &cfg);
        s.record.body_feat.push(0.0);
        assert!(matches!(
            m.batch_input([&s]),
            Err(ModelError::Dimension { .. })
        ));
    }
}
