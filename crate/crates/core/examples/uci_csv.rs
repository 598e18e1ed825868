//! CSV pipeline: ingest a headed file, evaluate a small BNN over random
//! 90/10 splits, and report RMSE ± standard error.
//!
//! cargo run --release --example uci_csv -- [file.csv target]
//!
//! Without arguments a synthetic CSV is written to the temp directory first.

use std::path::PathBuf;

use bnn_skeleton::activation::ActivationKind;
use bnn_skeleton::bench::{generate_synthetic, ingest_csv, metrics, DatasetManifest};
use bnn_skeleton::blocks::{BuildPolicy, NodeRecipe};
use bnn_skeleton::skeleton::Skeleton;
use bnn_skeleton::vi::{FamilyKind, GroupSpec, Likelihood, PosteriorPlan, Prior, Scaling, TrainConfig, TrainedModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (path, target) = match args.as_slice() {
        [p, t, ..] => (PathBuf::from(p), t.clone()),
        _ => {
            let p = std::env::temp_dir().join("bnn_f3.csv");
            generate_synthetic(3, 600, 0.1, 0)?.0.write_csv(&p)?;
            (p, "y".to_string())
        }
    };
    let mut manifest = DatasetManifest::new(&path, &target);
    manifest.split_seeds = (0..5).collect();
    println!("{}", manifest.to_toml());

    let data = ingest_csv(&manifest.path, &manifest.target, false)?;
    let sk = Skeleton::parse(&format!("layers = [1, 1, 1]\nwidths = [{}, 8, 1]\n", data.dim()))?;
    let policy = BuildPolicy::uniform(NodeRecipe::plain(), 0).with_layer(2, NodeRecipe::random(64, ActivationKind::Relu));
    let plan = PosteriorPlan::uniform(GroupSpec::new(FamilyKind::gaussian(), Prior::StandardNormal));
    let config = TrainConfig { steps: 2000, ..TrainConfig::default() };

    let mut rmses = Vec::new();
    for &seed in &manifest.split_seeds {
        let (train, test) = data.apply_split(&data.random_split(manifest.test_fraction, seed)?);
        let (model, _) = TrainedModel::fit(&sk, &policy, &plan, Likelihood::default(), &train, &TrainConfig { seed, ..config.clone() }, Scaling::default())?;
        let pred = model.predict(&test.raw_x(), 50, seed)?;
        let m = metrics(&pred.mean_vec(), &pred.predictive_variance(), &test.y, None, None)?;
        println!("split {seed}: rmse {:.4}  mll {:.4}", m.rmse, m.mll);
        rmses.push(m.rmse);
    }
    let n = rmses.len() as f64;
    let mean = rmses.iter().sum::<f64>() / n;
    let se = (rmses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
    println!("rmse {mean:.4} ± {se:.4}");
    Ok(())
}
