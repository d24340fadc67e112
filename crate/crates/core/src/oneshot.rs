//! Nearest-neighbour inference against one support embedding per novel
//! class, evaluation reports and the uniform random baseline.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{OneShotTask, Sample, SplitSpec, Target, TaskItem};
use crate::model::{EmbedderModel, ModelError};
use crate::numerics::{euclidean, Matrix};
use crate::rng::{self, streams};

#[derive(Debug, Error)]
pub enum OneShotError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("support index is empty")]
    EmptySupport,
    #[error("class {0} has more than one support embedding")]
    DuplicateSupport(usize),
    #[error("support embedding width {found}, query width {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("task item {index} is outside the {len} loaded samples")]
    MissingSample { index: usize, len: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = OneShotError> = std::result::Result<T, E>;

/// One embedding per class, kept sorted by class index.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportIndex {
    classes: Vec<usize>,
    embeddings: Vec<Vec<f64>>,
}

impl SupportIndex {
    pub fn new(entries: impl IntoIterator<Item = (usize, Vec<f64>)>) -> Result<Self> {
        let mut entries: Vec<(usize, Vec<f64>)> = entries.into_iter().collect();
        entries.sort_by_key(|(c, _)| *c);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(OneShotError::DuplicateSupport(w[0].0));
        }
        if let Some(first) = entries.first() {
            let width = first.1.len();
            if let Some((_, e)) = entries.iter().find(|(_, e)| e.len() != width) {
                return Err(OneShotError::Dimension {
                    expected: width,
                    found: e.len(),
                });
            }
        }
        let (classes, embeddings) = entries.into_iter().unzip();
        Ok(Self {
            classes,
            embeddings,
        })
    }

    /// Embeds the task's support items with `model`.
    pub fn from_task(
        task: &OneShotTask,
        samples: &[Sample],
        model: &EmbedderModel,
    ) -> Result<Self> {
        let z = model.embed_samples(items_to_samples(&task.support, samples)?)?;
        Self::new(
            task.support
                .iter()
                .zip(z.row_iter())
                .map(|(item, e)| (item.class, e.to_vec())),
        )
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    fn check(&self, query: &[f64]) -> Result<()> {
        let Some(first) = self.embeddings.first() else {
            return Err(OneShotError::EmptySupport);
        };
        if first.len() != query.len() {
            return Err(OneShotError::Dimension {
                expected: query.len(),
                found: first.len(),
            });
        }
        Ok(())
    }
}

/// The class of the support embedding nearest to `query`; ties go to the
/// lowest class index.
pub fn predict(query: &[f64], support: &SupportIndex) -> Result<usize> {
    support.check(query)?;
    let mut best = (f64::INFINITY, support.classes[0]);
    for (&class, e) in support.classes.iter().zip(&support.embeddings) {
        let d = euclidean(query, e);
        if d < best.0 {
            best = (d, class);
        }
    }
    Ok(best.1)
}

/// Class posterior `f(‖z−z_i‖) / Σ_j f(‖z−z_j‖)` for a distance density `f`,
/// in support class order.
pub fn posterior(
    query: &[f64],
    support: &SupportIndex,
    density: impl Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    support.check(query)?;
    let likelihood: Vec<f64> = support
        .embeddings
        .iter()
        .map(|e| density(euclidean(query, e)))
        .collect();
    let total: f64 = likelihood.iter().sum();
    Ok(likelihood.into_iter().map(|l| l / total).collect())
}

/// The maximum a posteriori class under [`posterior`]; ties go to the lowest
/// class index.
pub fn bayes_predict(
    query: &[f64],
    support: &SupportIndex,
    density: impl Fn(f64) -> f64,
) -> Result<usize> {
    let post = posterior(query, support, density)?;
    let mut best = 0;
    for (i, p) in post.iter().enumerate() {
        if *p > post[best] {
            best = i;
        }
    }
    Ok(support.classes[best])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class: usize,
    pub name: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Accuracy of one task. `confusion[i][j]` counts queries of
/// `classes[i]` predicted as `classes[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target: Target,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub classes: Vec<usize>,
    pub per_class: Vec<ClassResult>,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    /// Tallies `(truth, prediction)` pairs over the listed classes.
    pub fn from_predictions(
        target: Target,
        classes: &[usize],
        pairs: impl IntoIterator<Item = (usize, usize)>,
        names: impl Fn(usize) -> String,
    ) -> Self {
        let mut classes = classes.to_vec();
        classes.sort_unstable();
        let pos: BTreeMap<usize, usize> =
            classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
        for (truth, pred) in pairs {
            confusion[pos[&truth]][pos[&pred]] += 1;
        }
        let per_class: Vec<ClassResult> = classes
            .iter()
            .enumerate()
            .map(|(i, &class)| {
                let total: usize = confusion[i].iter().sum();
                let correct = confusion[i][i];
                ClassResult {
                    class,
                    name: names(class),
                    correct,
                    total,
                    accuracy: ratio(correct, total),
                }
            })
            .collect();
        let correct = per_class.iter().map(|c| c.correct).sum();
        let total = per_class.iter().map(|c| c.total).sum();
        Self {
            target,
            accuracy: ratio(correct, total),
            correct,
            total,
            classes,
            per_class,
            confusion,
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn items_to_samples<'a>(items: &[TaskItem], samples: &'a [Sample]) -> Result<Vec<&'a Sample>> {
    items
        .iter()
        .map(|item| {
            samples.get(item.index).ok_or(OneShotError::MissingSample {
                index: item.index,
                len: samples.len(),
            })
        })
        .collect()
}

/// Embeds the support set once, then classifies every query.
pub fn evaluate(
    task: &OneShotTask,
    samples: &[Sample],
    model: &EmbedderModel,
    spec: &SplitSpec,
) -> Result<EvalReport> {
    let support = SupportIndex::from_task(task, samples, model)?;
    let queries = model.embed_samples(items_to_samples(&task.query, samples)?)?;
    let pairs = task
        .query
        .iter()
        .zip(queries.row_iter())
        .map(|(item, z)| Ok((item.class, predict(z, &support)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_predictions(
        task.target,
        &task.novel_classes,
        pairs,
        |c| class_label(spec, task.target, c),
    ))
}

/// Draws one novel class uniformly per query from the `baseline` stream.
pub fn random_baseline(task: &OneShotTask, spec: &SplitSpec, seed: u64) -> EvalReport {
    let mut rng = rng::stream(seed, streams::BASELINE);
    let mut classes = task.novel_classes.clone();
    classes.sort_unstable();
    let pairs: Vec<(usize, usize)> = task
        .query
        .iter()
        .map(|item| {
            (
                item.class,
                *classes.choose(&mut rng).expect("task has novel classes"),
            )
        })
        .collect();
    EvalReport::from_predictions(task.target, &classes, pairs, |c| {
        class_label(spec, task.target, c)
    })
}

fn class_label(spec: &SplitSpec, target: Target, class: usize) -> String {
    match target {
        Target::Categorical => spec.class_name(class),
        Target::Level(_) => format!("level-{class}"),
    }
}

/// Reports for every task of a split. For level splits the per-dimension
/// accuracies and their mean are filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub split: String,
    pub method: String,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dimension_accuracy: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_accuracy: Option<f64>,
    pub tasks: Vec<EvalReport>,
}

impl RunReport {
    pub fn new(split: &str, method: &str, tasks: Vec<EvalReport>) -> Self {
        let dimension_accuracy: BTreeMap<String, f64> = tasks
            .iter()
            .filter_map(|t| match t.target {
                Target::Level(d) => Some((d.name().to_string(), t.accuracy)),
                Target::Categorical => None,
            })
            .collect();
        let average_accuracy = (!dimension_accuracy.is_empty())
            .then(|| dimension_accuracy.values().sum::<f64>() / dimension_accuracy.len() as f64);
        let accuracy =
            average_accuracy.unwrap_or_else(|| tasks.first().map_or(0.0, |t| t.accuracy));
        Self {
            split: split.to_string(),
            method: method.to_string(),
            accuracy,
            dimension_accuracy,
            average_accuracy,
            tasks,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// CSV with header `id,class,e0,…` and one row per embedding.
pub fn write_embeddings_csv(
    path: &Path,
    rows: impl IntoIterator<Item = (String, usize)>,
    embeddings: &Matrix,
) -> Result<()> {
    let mut out = String::from("id,class");
    for c in 0..embeddings.cols() {
        out.push_str(&format!(",e{c}"));
    }
    out.push('\n');
    for ((id, class), z) in rows.into_iter().zip(embeddings.row_iter()) {
        out.push_str(&csv_field(&id));
        out.push_str(&format!(",{class}"));
        for v in z {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|source| OneShotError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_split, Dimension};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn index(entries: &[(usize, &[f64])]) -> SupportIndex {
        SupportIndex::new(entries.iter().map(|(c, e)| (*c, e.to_vec()))).unwrap()
    }

    #[test]
    fn predict_examples() {
        let s = index(&[(0, &[1.0, 0.0]), (1, &[0.0, 1.0])]);
        assert_eq!(predict(&[0.8, 0.6], &s).unwrap(), 0);
        assert!((euclidean(&[0.8, 0.6], &[1.0, 0.0]) - 0.632).abs() < 1e-3);
        assert!((euclidean(&[0.8, 0.6], &[0.0, 1.0]) - 0.894).abs() < 1e-3);
        assert_eq!(predict(&[0.0, 1.0], &s).unwrap(), 1);
        let tie = index(&[(7, &[1.0, 0.0]), (3, &[-1.0, 0.0])]);
        assert_eq!(predict(&[0.0, 1.0], &tie).unwrap(), 3);
    }

    #[test]
    fn predict_errors() {
        let empty = SupportIndex::new([]).unwrap();
        assert!(matches!(
            predict(&[1.0], &empty),
            Err(OneShotError::EmptySupport)
        ));
        assert!(matches!(
            SupportIndex::new([(1, vec![1.0]), (1, vec![0.0])]),
            Err(OneShotError::DuplicateSupport(1))
        ));
        let s = index(&[(0, &[1.0, 0.0])]);
        assert!(matches!(
            predict(&[1.0], &s),
            Err(OneShotError::Dimension { .. })
        ));
    }

    fn unit(rng: &mut ChaCha20Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = crate::numerics::norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn bayes_matches_nearest_neighbour() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        for _ in 0..100 {
            let k = rng.random_range(2..8);
            let s = SupportIndex::new((0..k).map(|c| (c, unit(&mut rng, 5)))).unwrap();
            let q = unit(&mut rng, 5);
            let post = posterior(&q, &s, |d| (-d * d).exp()).unwrap();
            assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(
                bayes_predict(&q, &s, |d| (-d * d).exp()).unwrap(),
                predict(&q, &s).unwrap()
            );
        }
    }

    proptest! {
        #[test]
        fn rotation_and_monotone_invariance(seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let s = SupportIndex::new((0..4).map(|c| (c, unit(&mut rng, 2)))).unwrap();
            let q = unit(&mut rng, 2);
            let rot = |v: &[f64]| vec![angle.cos() * v[0] - angle.sin() * v[1], angle.sin() * v[0] + angle.cos() * v[1]];
            let rs = SupportIndex::new(s.classes().iter().zip(s.embeddings()).map(|(c, e)| (*c, rot(e)))).unwrap();
            let nn = predict(&q, &s).unwrap();
            let margin = {
                let mut d: Vec<f64> = s.embeddings().iter().map(|e| euclidean(&q, e)).collect();
                d.sort_by(f64::total_cmp);
                d[1] - d[0]
            };
            prop_assume!(margin > 1e-9);
            prop_assert_eq!(predict(&rot(&q), &rs).unwrap(), nn);
            prop_assert_eq!(bayes_predict(&q, &s, |d| 1.0 / (1.0 + d.powi(3))).unwrap(), nn);
        }
    }

    fn toy_task(novel: &[usize], per_class: usize) -> OneShotTask {
        let mut query = Vec::new();
        for (i, &c) in novel.iter().enumerate() {
            for k in 0..per_class {
                query.push(TaskItem {
                    index: i * per_class + k,
                    class: c,
                });
            }
        }
        OneShotTask {
            split: "CAT-6:6".into(),
            target: Target::Categorical,
            seen_classes: vec![],
            novel_classes: novel.to_vec(),
            train: vec![],
            support: vec![],
            query,
        }
    }

    #[test]
    fn random_baseline_examples() {
        let spec = build_split("CAT-6:6").unwrap();
        let task = toy_task(&[6, 7, 8, 9, 10, 11], 300);
        let a = random_baseline(&task, &spec, 5);
        assert_eq!(a, random_baseline(&task, &spec, 5));
        let p = 1.0 / 6.0;
        let sigma = (p * (1.0 - p) / a.total as f64).sqrt();
        assert!((a.accuracy - p).abs() <= 3.0 * sigma, "{}", a.accuracy);
        assert_eq!(a.confusion.iter().flatten().sum::<usize>(), a.total);
        for (row, pc) in a.confusion.iter().zip(&a.per_class) {
            assert_eq!(row.iter().sum::<usize>(), pc.total);
        }
        let one = random_baseline(&toy_task(&[4], 10), &spec, 1);
        assert_eq!(one.accuracy, 1.0);
    }

    #[test]
    fn random_weights_on_signal_free_features_score_chance() {
        use crate::dataset::{assemble_task, synth_clusters, SynthConfig, Target};
        use crate::model::{ModelConfig, Variant};
        let synth = SynthConfig {
            n_classes: 12,
            per_class: 200,
            sep: 1e-9,
            noise_std: 1.0,
            seed: 3,
            ..SynthConfig::default()
        };
        let data = synth_clusters(&synth).unwrap();
        let spec = synth
            .split("noise-6:6", (0..6).collect(), (6..12).collect(), 3)
            .unwrap();
        let task = assemble_task(&data.records, &spec, Target::Categorical).unwrap();
        let model = EmbedderModel::init(
            ModelConfig {
                variant: Variant::IbDml,
                d_img: synth.dim,
                d_body: synth.dim,
                n_classes: 6,
                ..ModelConfig::default()
            },
            3,
        )
        .unwrap();
        let report = evaluate(&task, &data.samples(), &model, &spec).unwrap();
        let p = 1.0 / 6.0;
        let sigma = (p * (1.0 - p) / report.total as f64).sqrt();
        assert!(report.total >= 1000);
        assert!(
            (report.accuracy - p).abs() <= 3.0 * sigma,
            "{}",
            report.accuracy
        );
    }

    #[test]
    fn level_report_averages_dimensions() {
        let mk = |d, acc: usize| {
            EvalReport::from_predictions(
                Target::Level(d),
                &[1, 2],
                (0..4).map(|i| (1, if i < acc { 1 } else { 2 })),
                |c| c.to_string(),
            )
        };
        let r = RunReport::new(
            "LEV-7:3",
            "model",
            vec![
                mk(Dimension::Valence, 4),
                mk(Dimension::Arousal, 2),
                mk(Dimension::Dominance, 0),
            ],
        );
        assert_eq!(r.dimension_accuracy["valence"], 1.0);
        assert_eq!(r.dimension_accuracy["arousal"], 0.5);
        assert_eq!(r.average_accuracy, Some(0.5));
        assert_eq!(r.accuracy, 0.5);
        let json = r.to_json();
        assert!(json.contains("\"dominance\": 0.0"));
        assert_eq!(serde_json::from_str::<RunReport>(&json).unwrap(), r);
    }

    #[test]
    fn embeddings_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let z = Matrix::from_rows(&[[0.6, 0.8], [1.0, 0.0]]).unwrap();
        write_embeddings_csv(&path, [("a".to_string(), 3), ("b,c".to_string(), 4)], &z).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text, "id,class,e0,e1\na,3,0.6,0.8\n\"b,c\",4,1,0\n");
    }
}
