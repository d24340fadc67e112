//! Trains the full three-branch model on synthetic clusters and evaluates it
//! on four categories it never saw, with one support example each.
//!
//! Run with `cargo run --release --example train_one_shot`.

use std::time::Instant;

use oneshot_dml::dataset::{assemble_task, synth_clusters, SynthConfig, Target};
use oneshot_dml::model::{EmbedderModel, ModelConfig, Variant};
use oneshot_dml::oneshot::{evaluate, random_baseline};
use oneshot_dml::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig {
        n_classes: 10,
        per_class: 200,
        dim: 16,
        sep: 10.0,
        noise_std: 0.3,
        seed: 7,
        ..SynthConfig::default()
    };
    let data = synth_clusters(&synth)?;
    let spec = synth.split("synthetic-6:4", (0..6).collect(), (6..10).collect(), 0)?;
    let task = assemble_task(&data.records, &spec, Target::Categorical)?;
    let samples = data.samples();

    let config = ModelConfig {
        variant: Variant::SemIbDml,
        d_img: synth.dim,
        d_body: synth.dim,
        n_sem: synth.n_sem,
        n_classes: task.seen_classes.len(),
        ..ModelConfig::default()
    };
    let mut model = EmbedderModel::init(config, 7)?;

    let untrained = evaluate(&task, &samples, &model, &spec)?;
    let chance = random_baseline(&task, &spec, 7);

    let start = Instant::now();
    let history = train(
        &mut model,
        &task,
        &samples,
        &TrainConfig {
            seed: 7,
            ..TrainConfig::default()
        },
    )?;
    let elapsed = start.elapsed();
    let trained = evaluate(&task, &samples, &model, &spec)?;

    let last_epoch = history.rows.last().map_or(0, |r| r.epoch);
    println!("queries:            {}", trained.total);
    println!("random baseline:    {:.3}", chance.accuracy);
    println!("untrained model:    {:.3}", untrained.accuracy);
    println!("trained model:      {:.3}", trained.accuracy);
    println!(
        "mean loss epoch 0:  {:.4}  epoch {last_epoch}: {:.4}",
        history.epoch_mean(0).unwrap_or(f64::NAN),
        history.epoch_mean(last_epoch).unwrap_or(f64::NAN)
    );
    println!(
        "training time:      {:.1?} for {} steps",
        elapsed,
        history.rows.len()
    );
    for class in &trained.per_class {
        println!(
            "  {:<10} {:>4}/{:<4} {:.3}",
            class.name, class.correct, class.total, class.accuracy
        );
    }
    Ok(())
}
