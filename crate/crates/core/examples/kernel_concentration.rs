//! Empirical random-feature kernels converge to their expectation at the
//! `r^{-1/2}` rate, for ReLU (arc-cosine) and tanh features.

use bnn_skeleton::activation::ActivationKind;
use bnn_skeleton::kernels::{concentration_experiment, ConcentrationConfig};

fn main() -> bnn_skeleton::error::Result<()> {
    for activation in [ActivationKind::Relu, ActivationKind::Tanh] {
        let cfg = ConcentrationConfig {
            activation,
            ..ConcentrationConfig::default()
        };
        let table = concentration_experiment(&cfg)?;
        println!("{activation}");
        for (r, err) in table.mean_by_r() {
            println!("  r = {r:>6}  mean sup error = {err:.4}");
        }
        println!("  log-log slope = {:.3}", table.log_log_slope());
    }
    Ok(())
}
