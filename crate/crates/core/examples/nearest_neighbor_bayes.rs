//! One-shot classification by nearest support embedding, shown next to the
//! posterior it maximizes under an isotropic Gaussian class density.
//!
//! Run with `cargo run --example nearest_neighbor_bayes`.

use oneshot_dml::oneshot::{bayes_predict, posterior, predict, SupportIndex};
use oneshot_dml::verify::check_nn_bayes;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let support = SupportIndex::new([
        (2, vec![1.0, 0.0, 0.0]),
        (5, vec![0.0, 1.0, 0.0]),
        (9, vec![0.0, 0.0, 1.0]),
    ])?;
    let density = |d: f64| (-d * d).exp();
    let norm = (0.6f64 * 0.6 + 0.7 * 0.7 + 0.2 * 0.2).sqrt();
    let query: Vec<f64> = [0.6, 0.7, 0.2].iter().map(|v| v / norm).collect();
    println!("support classes {:?}", support.classes());
    println!("query {query:.3?}");
    println!("posterior {:.3?}", posterior(&query, &support, density)?);
    println!("nearest neighbour -> class {}", predict(&query, &support)?);
    println!(
        "posterior argmax  -> class {}",
        bayes_predict(&query, &support, density)?
    );
    println!("{}", check_nn_bayes(100, 0));
    Ok(())
}
