//! A single identity-activation FB with a standard normal prior is Bayesian
//! linear regression; VI recovers the closed-form posterior mean.

use bnn_skeleton::bench::Dataset;
use bnn_skeleton::blocks::BuildPolicy;
use bnn_skeleton::skeleton::Skeleton;
use bnn_skeleton::tensor::{spd_solve, Matrix};
use bnn_skeleton::vi::{FamilyKind, GroupSpec, Likelihood, PosteriorPlan, Prior, Scaling, TrainConfig, TrainedModel};

fn main() -> bnn_skeleton::error::Result<()> {
    let noise = 0.25;
    let x = Matrix::from_fn(20, 3, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin() * 1.5);
    let w_true = [1.0, -2.0, 0.5];
    let y: Vec<f64> = (0..20)
        .map(|i| x.row(i).iter().zip(w_true).map(|(a, b)| a * b).sum::<f64>() + 0.3 * ((i as f64) * 1.3).cos())
        .collect();

    // Posterior mean (XᵀX/δ² + I)⁻¹ Xᵀy/δ².
    let mut a = x.t_matmul(&x)?.scale(1.0 / noise);
    for i in 0..3 {
        a.set(i, i, a.get(i, i) + 1.0);
    }
    let exact = spd_solve(&a, &x.t_matmul(&Matrix::column(y.clone()))?.scale(1.0 / noise))?;

    let sk = Skeleton::parse("layers = [1, 1]\nwidths = [3, 1]\n")?;
    let plan = PosteriorPlan::uniform(GroupSpec::new(FamilyKind::gaussian(), Prior::StandardNormal));
    let data = Dataset::new(x, y, vec!["a".into(), "b".into(), "c".into()], "y")?;
    let config = TrainConfig {
        steps: 12000,
        batch_size: 20,
        lr: 0.02,
        decay_steps: 2000,
        mc_samples: 32,
        ..TrainConfig::default()
    };
    let scaling = Scaling { inputs: false, target: false };
    let (model, _) = TrainedModel::fit(&sk, &BuildPolicy::default(), &plan, Likelihood::gaussian(noise, false)?, &data, &config, scaling)?;

    let vi = model.q.means().remove(0);
    for k in 0..3 {
        println!("w{k}: VI {:+.4}  exact {:+.4}", vi.get(k, 0), exact.get(k, 0));
    }
    Ok(())
}
