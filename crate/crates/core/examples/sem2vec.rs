//! Parses a small segmentation map and prints its class-presence vector.
//!
//! Run with `cargo run --example sem2vec`.

use oneshot_dml::sem2vec::{sem2vec, SegMap};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = "3 4 150\n0 0 12 12\n0 7 7 12\n149 7 7 0\n";
    let map = SegMap::parse(text)?;
    let vector = sem2vec(&map);
    println!(
        "map: {}x{} cells over {} categories",
        map.height(),
        map.width(),
        map.n_sem()
    );
    println!("present ids: {:?}", vector.present().collect::<Vec<_>>());
    println!("vector length {}, ones {}", vector.len(), vector.count());
    println!("re-encoded map:\n{}", map.to_text());
    Ok(())
}
