//! Mines informative triplets from a tiny batch of unit embeddings and
//! compares both filter rules at a few margins.
//!
//! Run with `cargo run --example mining`.

use oneshot_dml::mining::{assemble_triplets, cosine_matrix, ms_mine, EmbeddingBatch, MinerRule};
use oneshot_dml::numerics::Matrix;

fn unit(angle_deg: f64) -> Vec<f64> {
    let a = angle_deg.to_radians();
    vec![a.cos(), a.sin()]
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let angles = [0.0, 20.0, 70.0, 90.0, 100.0, 180.0];
    let labels = vec![0, 0, 0, 1, 1, 1];
    let rows: Vec<Vec<f64>> = angles.iter().map(|&a| unit(a)).collect();
    let batch = EmbeddingBatch::new(Matrix::from_rows(&rows)?, labels)?;

    let s = cosine_matrix(&batch);
    println!("cosine similarities:");
    for a in 0..batch.len() {
        let row: Vec<String> = (0..batch.len())
            .map(|k| format!("{:+.2}", s.get(a, k)))
            .collect();
        println!("  {}", row.join(" "));
    }

    for rule in [MinerRule::Informative, MinerRule::Flipped] {
        for epsilon in [0.0, 0.1, 0.5] {
            let pairs = ms_mine(&batch, epsilon, rule)?;
            let triplets = assemble_triplets(&pairs);
            println!(
                "{rule:?} eps={epsilon}: {} positive pairs, {} negative pairs, {} triplets",
                pairs.positives.len(),
                pairs.negatives.len(),
                triplets.len()
            );
        }
    }
    let pairs = ms_mine(&batch, 0.1, MinerRule::Informative)?;
    println!("informative triplets at eps=0.1:");
    for t in assemble_triplets(&pairs).triples {
        println!(
            "  anchor {} positive {} negative {}",
            t.anchor, t.positive, t.negative
        );
    }
    Ok(())
}
