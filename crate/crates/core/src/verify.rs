//! Self-checks against independent oracles: an exhaustive triplet
//! enumeration for the miner, central differences for the full training
//! objective, the Bayes posterior for nearest-neighbour prediction, and
//! closed-form loss identities.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dataset::{FeatureRecord, Sample};
use crate::losses::{cross_entropy, triplet_loss, LossConfig, Reduction};
use crate::mining::{mine_triplets, EmbeddingBatch, MinedTriplets, MinerRule, Triplet};
use crate::model::{EmbedderModel, ModelConfig, Variant};
use crate::numerics::{grad_check, norm, Matrix, Parameters};
use crate::oneshot::{bayes_predict, predict, SupportIndex};
use crate::sem2vec::SemVector;
use crate::trainer::{batch_loss, batch_loss_and_grad, mine_batch};

/// Largest tolerated relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Outcome of one named check; `detail` holds a counterexample on failure.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &str, failure: Option<String>, success: String) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed: failure.is_none(),
        detail: failure.unwrap_or(success),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub rule: MinerRule,
    /// Scales the largest analytic gradient entry by this factor before
    /// comparing, to confirm that the checker catches a wrong gradient.
    pub corrupt_gradient: Option<f64>,
    pub miner_batches: usize,
    pub gradient_instances: usize,
    pub bayes_cases: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            rule: MinerRule::Informative,
            corrupt_gradient: None,
            miner_batches: 200,
            gradient_instances: 50,
            bayes_cases: 100,
        }
    }
}

/// Runs every check.
pub fn run_all(options: &VerifyOptions) -> Vec<CheckOutcome> {
    vec![
        check_miner(options.miner_batches, options.seed, options.rule),
        check_gradients(
            options.gradient_instances,
            options.seed,
            options.corrupt_gradient,
        ),
        check_nn_bayes(options.bayes_cases, options.seed),
        check_loss_invariants(options.seed),
    ]
}

/// Every triplet `(a, p, n)` whose positive and negative both pass the
/// filter, decided pair by pair from the quantified form of each rule.
pub fn brute_force_triplets(
    z: &Matrix,
    labels: &[usize],
    epsilon: f64,
    rule: MinerRule,
) -> BTreeSet<Triplet> {
    let n = labels.len();
    let sim = |i: usize, j: usize| {
        let mut s = 0.0;
        for c in 0..z.cols() {
            s += z.get(i, c) * z.get(j, c);
        }
        s
    };
    let positives = |a: usize| (0..n).filter(move |&k| k != a && labels[k] == labels[a]);
    let negatives = |a: usize| (0..n).filter(move |&k| labels[k] != labels[a]);
    let keep_pos = |a: usize, p: usize| match rule {
        MinerRule::Informative => negatives(a).any(|k| sim(a, p) < sim(a, k) + epsilon),
        MinerRule::Flipped => negatives(a).all(|k| sim(a, p) > sim(a, k) + epsilon),
    };
    let keep_neg = |a: usize, m: usize| match rule {
        MinerRule::Informative => positives(a).any(|k| sim(a, m) > sim(a, k) - epsilon),
        MinerRule::Flipped => positives(a).all(|k| sim(a, m) < sim(a, k) - epsilon),
    };
    let mut out = BTreeSet::new();
    for a in 0..n {
        for p in positives(a) {
            for m in negatives(a) {
                if keep_pos(a, p) && keep_neg(a, m) {
                    out.insert(Triplet {
                        anchor: a,
                        positive: p,
                        negative: m,
                    });
                }
            }
        }
    }
    out
}

fn random_unit(rng: &mut ChaCha20Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A random batch of at most 16 unit rows over at most 4 classes. Some rows
/// are exact copies so that ties occur.
pub fn random_batch(rng: &mut ChaCha20Rng) -> (Matrix, Vec<usize>) {
    let n = rng.random_range(2..=16);
    let classes = rng.random_range(1..=4);
    let dim = rng.random_range(2..=8);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        if !rows.is_empty() && rng.random_bool(0.15) {
            let i = rng.random_range(0..rows.len());
            rows.push(rows[i].clone());
        } else {
            rows.push(random_unit(rng, dim));
        }
    }
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (Matrix::from_rows(&rows).expect("equal widths"), labels)
}

/// Compares the miner with [`brute_force_triplets`] on `batches` random batches.
pub fn check_miner(batches: usize, seed: u64, rule: MinerRule) -> CheckOutcome {
    let name = format!("miner oracle ({})", rule_name(rule));
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut total = 0;
    for case in 0..batches {
        let (z, labels) = random_batch(&mut rng);
        let epsilon = [0.0, 0.05, 0.1, 0.3, 1.0][case % 5];
        let batch = match EmbeddingBatch::new(z.clone(), labels.clone()) {
            Ok(b) => b,
            Err(e) => return outcome(&name, Some(format!("case {case}: {e}")), String::new()),
        };
        let mined: BTreeSet<Triplet> = match mine_triplets(&batch, epsilon, rule) {
            Ok(t) => t.triples.into_iter().collect(),
            Err(e) => return outcome(&name, Some(format!("case {case}: {e}")), String::new()),
        };
        let oracle = brute_force_triplets(&z, &labels, epsilon, rule);
        if mined != oracle {
            let only_mined: Vec<_> = mined.difference(&oracle).collect();
            let only_oracle: Vec<_> = oracle.difference(&mined).collect();
            return outcome(
                &name,
                Some(format!(
                    "case {case}, epsilon {epsilon}, labels {labels:?}, embeddings {:?}: miner-only {only_mined:?}, oracle-only {only_oracle:?}",
                    z.data()
                )),
                String::new(),
            );
        }
        total += oracle.len();
    }
    outcome(
        &name,
        None,
        format!("{batches} batches, {total} triplets, exact set equality"),
    )
}

fn rule_name(rule: MinerRule) -> &'static str {
    match rule {
        MinerRule::Informative => "informative",
        MinerRule::Flipped => "flipped",
    }
}

/// A small random three-branch model with a random batch of 9 samples over
/// 3 seen classes and triplets mined on its current embeddings.
pub struct GradientInstance {
    pub model: EmbedderModel,
    pub input: crate::model::BatchInput,
    pub targets: Vec<usize>,
    pub triplets: MinedTriplets,
    pub loss: LossConfig,
}

pub fn gradient_instance(seed: u64) -> GradientInstance {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let config = ModelConfig {
        variant: Variant::SemIbDml,
        d_img: 5,
        d_body: 4,
        n_sem: 12,
        branch_width: 6,
        sem_hidden: 5,
        d_emb: 4,
        n_classes: 3,
    };
    let mut model = EmbedderModel::init(config.clone(), seed).expect("valid config");
    for layer in [
        model.img_head.as_mut(),
        model.body_head.as_mut(),
        model.sem_hidden.as_mut(),
        model.sem_out.as_mut(),
    ]
    .into_iter()
    .flatten()
    .chain([&mut model.fuse_head, &mut model.cls_head])
    {
        layer
            .bias
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.3..0.3));
    }
    let targets: Vec<usize> = (0..9).map(|i| i % 3).collect();
    let samples: Vec<Sample> = targets
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let present: Vec<usize> = (0..config.n_sem).filter(|_| rng.random_bool(0.3)).collect();
            Sample::new(
                FeatureRecord {
                    id: format!("g{i}"),
                    labels: vec![],
                    img_feat: (0..config.d_img)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                    body_feat: (0..config.d_body)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                    segmap_path: None,
                    numeric_levels: None,
                },
                Some(SemVector::from_classes(config.n_sem, present).expect("ids below n_sem")),
            )
        })
        .collect();
    let input = model.batch_input(&samples).expect("widths match");
    let triplets =
        mine_batch(&model, &input, &targets, 1.0, MinerRule::Informative).expect("unit embeddings");
    GradientInstance {
        model,
        input,
        targets,
        triplets,
        loss: LossConfig {
            margin: 0.5,
            ..LossConfig::default()
        },
    }
}

/// Full-pipeline gradient check on `instances` random instances, probing
/// every parameter.
pub fn check_gradients(instances: usize, seed: u64, corrupt: Option<f64>) -> CheckOutcome {
    let name = "gradient check (embed, frozen triplets, combined loss)";
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    for i in 0..instances {
        let mut inst = gradient_instance(seed.wrapping_add(i as u64));
        let (_, grads) = match batch_loss_and_grad(
            &inst.model,
            &inst.input,
            &inst.targets,
            &inst.triplets,
            &inst.loss,
        ) {
            Ok(v) => v,
            Err(e) => return outcome(name, Some(format!("instance {i}: {e}")), String::new()),
        };
        let mut analytic = grads.flat_params();
        if let Some(factor) = corrupt {
            let largest = (0..analytic.len())
                .max_by(|&a, &b| analytic[a].abs().total_cmp(&analytic[b].abs()))
                .expect("model has parameters");
            analytic[largest] *= factor;
        }
        let (input, targets, triplets, loss) =
            (&inst.input, &inst.targets, &inst.triplets, &inst.loss);
        let report = grad_check(
            &mut inst.model,
            &analytic,
            |m| batch_loss(m, input, targets, triplets, loss).map_or(f64::NAN, |l| l.combined),
            usize::MAX,
            seed,
        );
        match report {
            Ok(r) => {
                probes += r.probes;
                worst = worst.max(r.max_relative_error);
                if r.max_relative_error > GRAD_TOLERANCE {
                    return outcome(
                        name,
                        Some(format!(
                            "instance {i}, parameter {:?}: analytic {} vs numeric {} (relative error {:.3e}, {} triplets)",
                            r.worst_index,
                            r.analytic,
                            r.numeric,
                            r.max_relative_error,
                            triplets.len()
                        )),
                        String::new(),
                    );
                }
            }
            Err(e) => return outcome(name, Some(format!("instance {i}: {e}")), String::new()),
        }
    }
    outcome(
        name,
        None,
        format!("{instances} instances, {probes} probes, max relative error {worst:.3e}"),
    )
}

/// Nearest-neighbour prediction against the maximum-posterior class under
/// the density `exp(−d²)`.
pub fn check_nn_bayes(cases: usize, seed: u64) -> CheckOutcome {
    let name = "nearest neighbour equals Bayes posterior argmax";
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    for case in 0..cases {
        let dim = rng.random_range(2..=16);
        let k = rng.random_range(1..=10);
        let support = SupportIndex::new((0..k).map(|c| (c * 3 + 1, random_unit(&mut rng, dim))))
            .expect("distinct classes");
        let query = random_unit(&mut rng, dim);
        let nn = predict(&query, &support);
        let bayes = bayes_predict(&query, &support, |d| (-d * d).exp());
        match (nn, bayes) {
            (Ok(a), Ok(b)) if a == b => {}
            (a, b) => {
                return outcome(
                    name,
                    Some(format!(
                        "case {case}: nearest {a:?}, posterior {b:?}, query {query:?}"
                    )),
                    String::new(),
                )
            }
        }
    }
    outcome(name, None, format!("{cases}/{cases} cases agree"))
}

/// Closed-form identities of the two losses on random inputs.
pub fn check_loss_invariants(seed: u64) -> CheckOutcome {
    let name = "loss invariants";
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x1055);
    for case in 0..100 {
        let (z, labels) = random_batch(&mut rng);
        let batch = EmbeddingBatch::new(z.clone(), labels.clone()).expect("unit rows");
        let triplets = mine_triplets(&batch, 0.5, MinerRule::Informative).expect("valid epsilon");
        let margin = rng.random_range(0.0..1.0);
        let t = triplet_loss(&z, &triplets, margin, Reduction::Mean).expect("indices in range");
        let t_sum = triplet_loss(&z, &triplets, margin, Reduction::Sum).expect("indices in range");
        let k = rng.random_range(2..6);
        let logits = Matrix::new(
            z.rows(),
            k,
            (0..z.rows() * k)
                .map(|_| rng.random_range(-5.0..5.0))
                .collect(),
        )
        .expect("sized");
        let targets: Vec<usize> = (0..z.rows()).map(|_| rng.random_range(0..k)).collect();
        let ce = cross_entropy(&logits, &targets, None).expect("targets in range");
        let mut shifted = logits.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += 7.5);
        let ce_shifted = cross_entropy(&shifted, &targets, None).expect("targets in range");
        let zero =
            cross_entropy(&Matrix::zeros(z.rows(), k), &targets, None).expect("targets in range");

        let failures = [
            (t.value >= 0.0, "triplet loss is negative"),
            (
                triplets.is_empty()
                    || (t_sum.value - t.value * triplets.len() as f64).abs()
                        <= 1e-9 * (1.0 + t_sum.value),
                "sum reduction is not count times mean",
            ),
            (
                triplets.triples.iter().all(|tr| {
                    tr.anchor != tr.positive
                        && labels[tr.anchor] == labels[tr.positive]
                        && labels[tr.anchor] != labels[tr.negative]
                }),
                "mined triplet violates label structure",
            ),
            (ce.value >= 0.0, "cross-entropy is negative"),
            (
                (ce.value - ce_shifted.value).abs() <= 1e-9,
                "cross-entropy changes under a logit shift",
            ),
            (
                (zero.value - (k as f64).ln()).abs() <= 1e-12,
                "uniform logits do not give ln K",
            ),
            (
                ce.grad
                    .row_iter()
                    .all(|r| r.iter().sum::<f64>().abs() <= 1e-12),
                "cross-entropy gradient rows do not sum to zero",
            ),
        ];
        if let Some((_, what)) = failures.iter().find(|(ok, _)| !ok) {
            return outcome(
                name,
                Some(format!("case {case}: {what} (labels {labels:?})")),
                String::new(),
            );
        }
    }
    outcome(name, None, "100 random cases".into())
}
