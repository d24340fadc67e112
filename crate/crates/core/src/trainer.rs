//! Class-balanced batch sampling, the per-batch objective, RMSprop with a
//! step learning-rate schedule, and the training loop.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{OneShotTask, Sample, TaskItem};
use crate::losses::{combined_loss, cross_entropy, triplet_loss, LossConfig, LossError};
use crate::mining::{mine_triplets, EmbeddingBatch, MinedTriplets, MinerRule, MiningError};
use crate::model::{BatchInput, EmbedderModel, ModelError};
use crate::numerics::Parameters;
use crate::rng::{self, streams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("parameter block {block}: expected {expected} entries, found {found}")]
    Shape {
        block: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite loss at step {step}: triplet {triplet}, cross-entropy {ce}")]
    NonFinite { step: usize, triplet: f64, ce: f64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    pub epochs: usize,
    pub lr_decay: f64,
    pub decay_step_epochs: usize,
    pub rmsprop_smoothing: f64,
    pub rmsprop_eps: f64,
    /// L2 penalty coefficient added to every gradient; 0 disables it.
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub miner_epsilon: f64,
    pub miner_rule: MinerRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3.5e-4,
            batch_size: 32,
            classes_per_batch: 8,
            samples_per_class: 4,
            epochs: 20,
            lr_decay: 0.1,
            decay_step_epochs: 4,
            rmsprop_smoothing: 0.99,
            rmsprop_eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            loss: LossConfig::default(),
            miner_epsilon: crate::mining::DEFAULT_EPSILON,
            miner_rule: MinerRule::default(),
        }
    }
}

impl TrainConfig {
    /// Every problem found, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.classes_per_batch * self.samples_per_class != self.batch_size {
            out.push(format!(
                "classes_per_batch × samples_per_class = {} × {} must equal batch_size {}",
                self.classes_per_batch, self.samples_per_class, self.batch_size
            ));
        }
        if self.classes_per_batch < 2 {
            out.push("classes_per_batch must be at least 2".into());
        }
        if self.samples_per_class < 2 {
            out.push("samples_per_class must be at least 2".into());
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("rmsprop_eps", self.rmsprop_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive, got {v}"));
            }
        }
        if self.decay_step_epochs == 0 {
            out.push("decay_step_epochs must be positive".into());
        }
        if !(self.rmsprop_smoothing > 0.0 && self.rmsprop_smoothing < 1.0) {
            out.push(format!(
                "rmsprop_smoothing must lie in (0, 1), got {}",
                self.rmsprop_smoothing
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if !(self.miner_epsilon >= 0.0 && self.miner_epsilon.is_finite()) {
            out.push(format!(
                "miner_epsilon must be non-negative, got {}",
                self.miner_epsilon
            ));
        }
        if let Err(e) = self.loss.validate() {
            out.push(e.to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().as_slice() {
            [] => Ok(()),
            p => Err(TrainError::Config(p.join("; "))),
        }
    }
}

/// `lr · lr_decay^⌊epoch / decay_step_epochs⌋`.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    let exponent = (epoch / config.decay_step_epochs.max(1)) as i32;
    config.lr * config.lr_decay.powi(exponent)
}

/// Draws `min(P, #classes)` distinct classes uniformly, then `K` items of
/// each: without replacement when the class has at least `K` items, with
/// replacement otherwise.
pub fn sample_batch(
    train: &[TaskItem],
    config: &TrainConfig,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<TaskItem>> {
    let by_class = group_by_class(train);
    if by_class.len() < 2 {
        return Err(TrainError::Config(format!(
            "mining needs at least 2 training classes, found {}",
            by_class.len()
        )));
    }
    let classes: Vec<&Vec<TaskItem>> = by_class.values().collect();
    let p = config.classes_per_batch.min(classes.len());
    let k = config.samples_per_class;
    let mut picked = index::sample(rng, classes.len(), p).into_vec();
    picked.sort_unstable();
    let mut batch = Vec::with_capacity(p * k);
    for c in picked {
        let items = classes[c];
        if items.len() >= k {
            batch.extend(
                index::sample(rng, items.len(), k)
                    .into_iter()
                    .map(|i| items[i]),
            );
        } else {
            batch.extend((0..k).map(|_| items[rng.random_range(0..items.len())]));
        }
    }
    Ok(batch)
}

fn group_by_class(items: &[TaskItem]) -> BTreeMap<usize, Vec<TaskItem>> {
    let mut out: BTreeMap<usize, Vec<TaskItem>> = BTreeMap::new();
    for &it in items {
        out.entry(it.class).or_default().push(it);
    }
    out
}

/// Running mean squares, one block per parameter slice.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub mean_square: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<P: Parameters + ?Sized>(params: &P) -> Self {
        Self {
            mean_square: params
                .param_slices()
                .iter()
                .map(|s| vec![0.0; s.len()])
                .collect(),
        }
    }
}

/// `v ← ρ·v + (1−ρ)·g²; p ← p − lr·g / (√v + eps)`, elementwise.
pub fn rmsprop_step<P, G>(
    params: &mut P,
    grads: &G,
    state: &mut OptimizerState,
    lr: f64,
    smoothing: f64,
    eps: f64,
) -> Result<()>
where
    P: Parameters + ?Sized,
    G: Parameters + ?Sized,
{
    let grads = grads.param_slices();
    let mut params = params.param_slices_mut();
    check_blocks(params.len(), grads.len(), state.mean_square.len())?;
    for (block, ((p, g), v)) in params
        .iter()
        .zip(&grads)
        .zip(&state.mean_square)
        .enumerate()
    {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(TrainError::Shape {
                block,
                expected: p.len(),
                found: if g.len() != p.len() { g.len() } else { v.len() },
            });
        }
    }
    for ((p, g), v) in params.iter_mut().zip(&grads).zip(&mut state.mean_square) {
        for ((p, g), v) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *v = smoothing * *v + (1.0 - smoothing) * g * g;
            *p -= lr * g / (v.sqrt() + eps);
        }
    }
    Ok(())
}

fn check_blocks(params: usize, grads: usize, state: usize) -> Result<()> {
    if params != grads || params != state {
        return Err(TrainError::Shape {
            block: params.min(grads).min(state),
            expected: params,
            found: if grads != params { grads } else { state },
        });
    }
    Ok(())
}

/// Loss components of one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub triplet: f64,
    pub ce: f64,
    pub combined: f64,
    pub triplets: usize,
}

/// Forward pass only: the combined objective of `input` for fixed triplets.
/// `targets` index the classification head.
pub fn batch_loss(
    model: &EmbedderModel,
    input: &BatchInput,
    targets: &[usize],
    triplets: &MinedTriplets,
    loss: &LossConfig,
) -> Result<BatchLoss> {
    let (z, _) = model.embed_batch(input)?;
    let (logits, _) = model.classify_logits(&z)?;
    let t = triplet_loss(&z, triplets, loss.margin, loss.triplet_reduction)?;
    let ce = cross_entropy(&logits, targets, loss.class_weights.as_deref())?;
    Ok(BatchLoss {
        triplet: t.value,
        ce: ce.value,
        combined: combined_loss(t.value, ce.value, loss),
        triplets: triplets.len(),
    })
}

/// The combined objective and its gradient for fixed triplets.
pub fn batch_loss_and_grad(
    model: &EmbedderModel,
    input: &BatchInput,
    targets: &[usize],
    triplets: &MinedTriplets,
    loss: &LossConfig,
) -> Result<(BatchLoss, EmbedderModel)> {
    let (z, tape) = model.embed_batch(input)?;
    let (logits, cls_tape) = model.classify_logits(&z)?;
    let t = triplet_loss(&z, triplets, loss.margin, loss.triplet_reduction)?;
    let ce = cross_entropy(&logits, targets, loss.class_weights.as_deref())?;

    let mut grads = model.zeros_like();
    let mut d_logits = ce.grad;
    d_logits.scale(loss.beta);
    let mut d_z = model.classify_backward(&cls_tape, &d_logits, &mut grads)?;
    let mut d_triplet = t.grad;
    d_triplet.scale(loss.alpha);
    d_z.add_assign(&d_triplet).map_err(ModelError::from)?;
    model.backward(&tape, &d_z, &mut grads)?;
    Ok((
        BatchLoss {
            triplet: t.value,
            ce: ce.value,
            combined: combined_loss(t.value, ce.value, loss),
            triplets: triplets.len(),
        },
        grads,
    ))
}

/// Mines triplets on the current embeddings of `input`.
pub fn mine_batch(
    model: &EmbedderModel,
    input: &BatchInput,
    labels: &[usize],
    epsilon: f64,
    rule: MinerRule,
) -> Result<MinedTriplets> {
    let (z, _) = model.embed_batch(input)?;
    Ok(mine_triplets(
        &EmbeddingBatch::new(z, labels.to_vec())?,
        epsilon,
        rule,
    )?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub epoch: usize,
    pub triplet: f64,
    pub ce: f64,
    pub combined: f64,
    pub lr: f64,
    pub triplets: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    /// Mean combined loss over the given epoch, if it ran.
    pub fn epoch_mean(&self, epoch: usize) -> Option<f64> {
        let rows: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| r.combined)
            .collect();
        (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64)
    }

    /// `step,triplet,ce,combined,lr` with one row per optimizer step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,triplet,ce,combined,lr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.triplet, r.ce, r.combined, r.lr
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Optimizer steps per epoch: enough batches to cover the training set once.
pub fn steps_per_epoch(train_len: usize, config: &TrainConfig) -> usize {
    train_len.div_ceil(config.batch_size.max(1)).max(1)
}

/// Trains `model` on the task's training items.
pub fn train(
    model: &mut EmbedderModel,
    task: &OneShotTask,
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    train_with(model, task, samples, config, |_, _| Ok(()))
}

/// Like [`train`], calling `on_epoch(epoch, model)` after every epoch.
pub fn train_with(
    model: &mut EmbedderModel,
    task: &OneShotTask,
    samples: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &EmbedderModel) -> Result<()>,
) -> Result<TrainHistory> {
    config.validate()?;
    let head_classes: BTreeMap<usize, usize> = task
        .seen_classes
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i))
        .collect();
    if head_classes.len() != model.config().n_classes {
        return Err(TrainError::Config(format!(
            "model has {} class outputs but the task has {} seen classes",
            model.config().n_classes,
            head_classes.len()
        )));
    }
    if let Some(w) = &config.loss.class_weights {
        if w.len() != head_classes.len() {
            return Err(TrainError::Config(format!(
                "{} class weights for {} seen classes",
                w.len(),
                head_classes.len()
            )));
        }
    }
    if let Some(bad) = task.train.iter().find(|it| it.index >= samples.len()) {
        return Err(TrainError::Config(format!(
            "training item {} has no sample",
            bad.index
        )));
    }
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok(history);
    }
    if group_by_class(&task.train).len() < 2 {
        return Err(TrainError::Config(
            "mining needs at least 2 training classes".into(),
        ));
    }

    let mut rng = rng::stream(config.seed, streams::SAMPLING);
    let mut state = OptimizerState::new(model);
    let steps = steps_per_epoch(task.train.len(), config);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        for _ in 0..steps {
            let batch = sample_batch(&task.train, config, &mut rng)?;
            let input = model.batch_input(batch.iter().map(|it| &samples[it.index]))?;
            let targets: Vec<usize> = batch.iter().map(|it| head_classes[&it.class]).collect();
            let triplets = mine_batch(
                model,
                &input,
                &targets,
                config.miner_epsilon,
                config.miner_rule,
            )?;
            let (loss, mut grads) =
                batch_loss_and_grad(model, &input, &targets, &triplets, &config.loss)?;
            if !loss.combined.is_finite() {
                return Err(TrainError::NonFinite {
                    step,
                    triplet: loss.triplet,
                    ce: loss.ce,
                });
            }
            if config.weight_decay > 0.0 {
                for (g, p) in grads
                    .param_slices_mut()
                    .into_iter()
                    .zip(model.param_slices())
                {
                    g.iter_mut()
                        .zip(p)
                        .for_each(|(g, p)| *g += config.weight_decay * p);
                }
            }
            rmsprop_step(
                model,
                &grads,
                &mut state,
                lr,
                config.rmsprop_smoothing,
                config.rmsprop_eps,
            )?;
            history.rows.push(HistoryRow {
                step,
                epoch,
                triplet: loss.triplet,
                ce: loss.ce,
                combined: loss.combined,
                lr,
                triplets: loss.triplets,
            });
            step += 1;
        }
        on_epoch(epoch, model)?;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{assemble_task, synth_clusters, SynthConfig, Target};
    use crate::model::{ModelConfig, Variant};
    use crate::numerics::{Linear, Matrix};
    use rand::SeedableRng;

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        for e in 0..4 {
            assert_eq!(lr_at_epoch(&c, e), 3.5e-4);
        }
        assert!((lr_at_epoch(&c, 4) - 3.5e-5).abs() < 1e-18);
        let flat = TrainConfig {
            lr_decay: 1.0,
            ..c.clone()
        };
        assert!((0..40).all(|e| lr_at_epoch(&flat, e) == 3.5e-4));
        assert!((0..40).all(|e| lr_at_epoch(&c, e + 1) <= lr_at_epoch(&c, e)));
    }

    #[test]
    fn rmsprop_examples() {
        let mut p = Linear::new(Matrix::filled(1, 1, 1.0), vec![0.0]).unwrap();
        let g = Linear::new(Matrix::filled(1, 1, 1.0), vec![0.0]).unwrap();
        let mut s = OptimizerState::new(&p);
        rmsprop_step(&mut p, &g, &mut s, 0.1, 0.99, 1e-8).unwrap();
        assert!((s.mean_square[0][0] - 0.01).abs() < 1e-15);
        assert!(p.weights.get(0, 0).abs() < 1e-6);
        assert_eq!(p.bias, vec![0.0]);

        let before = p.clone();
        let zero = Linear::zeros(1, 1);
        let state_before = s.clone();
        let mut s0 = OptimizerState::new(&p);
        rmsprop_step(&mut p, &zero, &mut s0, 0.1, 0.99, 1e-8).unwrap();
        assert_eq!(p, before);
        assert!(s0.mean_square.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(s, state_before);

        let mut q = Linear::new(Matrix::filled(1, 1, 5.0), vec![0.0]).unwrap();
        let mut sq = OptimizerState::new(&q);
        let mut last = 5.0;
        for _ in 0..2 {
            rmsprop_step(&mut q, &g, &mut sq, 0.01, 0.99, 1e-8).unwrap();
            assert!(q.weights.get(0, 0) < last);
            last = q.weights.get(0, 0);
        }
        assert!(sq.mean_square.iter().flatten().all(|v| *v >= 0.0));

        let wrong = Linear::zeros(2, 1);
        assert!(matches!(
            rmsprop_step(&mut q, &wrong, &mut sq, 0.1, 0.9, 1e-8),
            Err(TrainError::Shape { .. })
        ));
    }

    fn items(counts: &[(usize, usize)]) -> Vec<TaskItem> {
        let mut out = Vec::new();
        for &(class, n) in counts {
            for _ in 0..n {
                out.push(TaskItem {
                    index: out.len(),
                    class,
                });
            }
        }
        out
    }

    #[test]
    fn batch_sampling() {
        let train = items(&(0..10).map(|c| (c, 6)).collect::<Vec<_>>());
        let c = TrainConfig::default();
        let mut rng = rng::stream(1, streams::SAMPLING);
        let b = sample_batch(&train, &c, &mut rng).unwrap();
        assert_eq!(b.len(), 32);
        let classes: std::collections::BTreeSet<_> = b.iter().map(|i| i.class).collect();
        assert_eq!(classes.len(), 8);
        for cl in &classes {
            let idx: std::collections::BTreeSet<_> = b
                .iter()
                .filter(|i| i.class == *cl)
                .map(|i| i.index)
                .collect();
            assert_eq!(idx.len(), 4);
        }

        let small = items(&[(0, 2), (1, 5)]);
        let b = sample_batch(&small, &c, &mut rng).unwrap();
        assert_eq!(b.len(), 8);
        assert_eq!(b.iter().filter(|i| i.class == 0).count(), 4);
        assert!(b.iter().filter(|i| i.class == 0).all(|i| i.index < 2));

        let seq = |seed| {
            let mut r = rng::stream(seed, streams::SAMPLING);
            (0..5)
                .map(|_| sample_batch(&train, &c, &mut r).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(3), seq(3));

        assert!(matches!(
            sample_batch(&items(&[(0, 9)]), &c, &mut rng),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn config_problems_are_all_listed() {
        let bad = TrainConfig {
            batch_size: 30,
            lr: -1.0,
            rmsprop_smoothing: 1.5,
            ..TrainConfig::default()
        };
        assert_eq!(bad.problems().len(), 3);
        assert!(TrainConfig::default().validate().is_ok());
    }

    fn small_setup(seed: u64) -> (EmbedderModel, OneShotTask, Vec<Sample>) {
        let cfg = SynthConfig {
            n_classes: 6,
            per_class: 20,
            dim: 6,
            sep: 3.0,
            noise_std: 0.5,
            n_sem: 20,
            seed,
            ..SynthConfig::default()
        };
        let data = synth_clusters(&cfg).unwrap();
        let spec = cfg.split("toy", vec![0, 1, 2, 3], vec![4, 5], 0).unwrap();
        let task = assemble_task(&data.records, &spec, Target::Categorical).unwrap();
        let model = EmbedderModel::init(
            ModelConfig {
                variant: Variant::SemIbDml,
                d_img: 6,
                d_body: 6,
                n_sem: 20,
                branch_width: 8,
                sem_hidden: 5,
                d_emb: 4,
                n_classes: 4,
            },
            seed,
        )
        .unwrap();
        (model, task, data.samples())
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let (mut model, task, samples) = small_setup(1);
        let before = model.clone();
        let h = train(
            &mut model,
            &task,
            &samples,
            &TrainConfig {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(h.rows.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            classes_per_batch: 4,
            samples_per_class: 2,
            lr: 1e-2,
            ..Default::default()
        };
        let run = || {
            let (mut model, task, samples) = small_setup(2);
            let h = train(&mut model, &task, &samples, &cfg).unwrap();
            (h, model)
        };
        let (h1, m1) = run();
        let (h2, m2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert!(h1
            .rows
            .iter()
            .all(|r| r.combined.is_finite() && r.triplet.is_finite() && r.ce.is_finite()));
        assert_eq!(h1.rows.len(), 3 * steps_per_epoch(80, &cfg));
        assert!(h1.to_csv().starts_with("step,triplet,ce,combined,lr\n0,"));
    }

    #[test]
    fn single_small_step_does_not_increase_triplet_loss() {
        let (mut model, task, samples) = small_setup(3);
        let loss = LossConfig {
            beta: 0.0,
            ..Default::default()
        };
        let cfg = TrainConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let head: BTreeMap<usize, usize> = task
            .seen_classes
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect();
        let mut checked = 0;
        for _ in 0..20 {
            let batch = sample_batch(
                &task.train,
                &TrainConfig {
                    batch_size: 16,
                    ..cfg.clone()
                },
                &mut rng,
            )
            .unwrap();
            let input = model
                .batch_input(batch.iter().map(|it| &samples[it.index]))
                .unwrap();
            let targets: Vec<usize> = batch.iter().map(|it| head[&it.class]).collect();
            let triplets =
                mine_batch(&model, &input, &targets, 0.1, MinerRule::Informative).unwrap();
            let (before, grads) =
                batch_loss_and_grad(&model, &input, &targets, &triplets, &loss).unwrap();
            if before.triplet == 0.0 {
                continue;
            }
            let mut stepped = model.clone();
            let mut state = OptimizerState::new(&stepped);
            rmsprop_step(&mut stepped, &grads, &mut state, 1e-6, 0.99, 1e-8).unwrap();
            let after = batch_loss(&stepped, &input, &targets, &triplets, &loss).unwrap();
            assert!(
                after.triplet <= before.triplet,
                "{} > {}",
                after.triplet,
                before.triplet
            );
            checked += 1;
            model = stepped;
        }
        assert!(checked > 0);
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let (model, task, samples) = small_setup(1);
        let mut cfg = model.config().clone();
        cfg.n_classes = 3;
        let mut m = EmbedderModel::init(cfg, 0).unwrap();
        assert!(matches!(
            train(&mut m, &task, &samples, &TrainConfig::default()),
            Err(TrainError::Config(_))
        ));
    }
}
