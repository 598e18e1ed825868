//! Trains an AddNN on the first synthetic function and reports test
//! accuracy and the strongest interactions.
//!
//! cargo run --release --example train_addnn_f1 -- [variant] [seed] [steps] [lambda]

use std::time::Instant;

use bnn_skeleton::addnn::{interaction_strengths, model_clusters, AddNnConfig, InteractionConfig, Threshold, Variant};
use bnn_skeleton::bench::{generate_train_test, metrics};
use bnn_skeleton::vi::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: Variant = args.first().map_or(Ok(Variant::McDropout), |s| s.parse())?;
    let seed: u64 = args.get(1).map_or(Ok(0), |s| s.parse())?;
    let steps: usize = args.get(2).map_or(Ok(15_000), |s| s.parse())?;
    let lambda: f64 = args.get(3).map_or(Ok(AddNnConfig::default().lambda), |s| s.parse())?;

    let (train, test, truth) = generate_train_test(1, 5000, 5000, 1.0, seed)?;
    let cfg = AddNnConfig {
        variant,
        seed,
        lambda,
        ..AddNnConfig::default()
    };
    let tc = TrainConfig { steps, ..cfg.training() };
    let t0 = Instant::now();
    let (model, _trace) = cfg.fit(&train, &tc)?;
    println!("trained {variant} for {steps} steps in {:.1}s", t0.elapsed().as_secs_f64());

    let pred = model.predict(&test.raw_x(), 50, seed)?;
    let clusters = model_clusters(&model, Threshold::default())?;
    for c in clusters.iter().filter(|c| !c.features.is_empty()) {
        println!("subnet {}: {:?}", c.subnet, c.features.iter().map(|i| i + 1).collect::<Vec<_>>());
    }
    let t1 = Instant::now();
    let report = interaction_strengths(
        &model,
        &train,
        &clusters,
        &InteractionConfig {
            mc_draws: 20,
            heatmap_grid: 0,
            ..InteractionConfig::default()
        },
    )?;
    println!("interactions in {:.1}s", t1.elapsed().as_secs_f64());
    let m = metrics(&pred.mean_vec(), &pred.predictive_variance(), &test.y, Some(&truth.interactions), Some(&report.ranking()))?;
    println!("test rmse {:.4}  mll {:.4}  top-rank recall {:?}", m.rmse, m.mll, m.top_rank_recall);
    for e in report.entries.iter().take(12) {
        println!("{:>12}  {:.3} ± {:.3}", report.label(&e.subset), e.strength, e.strength_std);
    }
    Ok(())
}
