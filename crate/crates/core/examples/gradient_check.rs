//! Compares the analytic gradient of the combined training loss with central
//! finite differences on small random three-branch models, then shows that a
//! deliberately corrupted gradient is caught.
//!
//! Run with `cargo run --release --example gradient_check`.

use oneshot_dml::verify::{check_gradients, gradient_instance, GRAD_TOLERANCE};

fn main() {
    let instance = gradient_instance(3);
    println!(
        "instance: {} samples, {} mined triplets, margin {}",
        instance.targets.len(),
        instance.triplets.len(),
        instance.loss.margin
    );
    println!("tolerance {GRAD_TOLERANCE:e}");
    println!("{}", check_gradients(10, 3, None));
    println!("with the largest gradient entry scaled by 1.01, the check must fail:");
    println!("{}", check_gradients(1, 3, Some(1.01)));
}
