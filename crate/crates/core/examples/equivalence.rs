//! A random-feature layer with a Gaussian weight posterior and the matching
//! inducing-point layer give the same posterior over function values.

use bnn_skeleton::activation::ActivationKind;
use bnn_skeleton::kernels::{equivalence_check, EquivalenceConfig};

fn main() -> bnn_skeleton::error::Result<()> {
    for activation in [ActivationKind::Relu, ActivationKind::Tanh] {
        let rows = equivalence_check(&EquivalenceConfig {
            activation,
            ..EquivalenceConfig::default()
        })?;
        println!("{activation}:");
        for r in &rows {
            println!("  {:<24} {:.2e}", r.case, r.max_abs_discrepancy);
        }
    }
    Ok(())
}
