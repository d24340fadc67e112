//! Prints the built-in benchmark protocols: the label to class mapping, the
//! seen and novel classes, and the learning rate each split trains with.
//!
//! Run with `cargo run --example splits`.

use oneshot_dml::dataset::{build_split, encode_label, Protocol, EMOTIC_LABELS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for protocol in Protocol::ALL {
        let spec = build_split(protocol.name())?;
        let names = |classes: &[usize]| {
            classes
                .iter()
                .map(|&c| spec.class_name(c))
                .collect::<Vec<_>>()
                .join(", ")
        };
        println!("{} (lr {:e})", spec.name, protocol.learning_rate());
        println!("  seen:  {}", names(&spec.seen_classes));
        println!("  novel: {}", names(&spec.novel_classes));
        if !spec.levels {
            for label in EMOTIC_LABELS {
                let class = encode_label(&[label], &spec)?;
                let role = if spec.is_seen(class) { "seen" } else { "novel" };
                println!(
                    "    {label:<15} -> {class:>2} {:<14} {role}",
                    spec.class_name(class)
                );
            }
        }
    }
    Ok(())
}
