//! Fits an AddNN to the first synthetic function, extracts input clusters,
//! ranks interactions, and writes heatmap grids for the strongest pairs.
//!
//! cargo run --release --example interactions -- [output dir]

use std::fs::{self, File};
use std::path::PathBuf;

use bnn_skeleton::addnn::{interaction_strengths, model_clusters, AddNnConfig, InteractionConfig, Threshold};
use bnn_skeleton::bench::{generate_synthetic, top_rank_recall};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("bnn_interactions"), PathBuf::from);
    fs::create_dir_all(&out)?;

    let (train, truth) = generate_synthetic(1, 5000, 1.0, 3)?;
    let cfg = AddNnConfig { seed: 3, ..AddNnConfig::default() };
    let (model, _) = cfg.fit(&train, &cfg.training())?;

    let clusters = model_clusters(&model, Threshold::default())?;
    for c in clusters.iter().filter(|c| !c.features.is_empty()) {
        println!("subnet {} reads {:?}", c.subnet, c.features.iter().map(|i| i + 1).collect::<Vec<_>>());
    }
    let config = InteractionConfig {
        mc_draws: 20,
        heatmap_pairs: 2,
        heatmap_grid: 25,
        ..InteractionConfig::default()
    };
    let report = interaction_strengths(&model, &train, &clusters, &config)?;
    for e in report.entries.iter().take(8) {
        println!("{:>10}  {:.3} ± {:.3}", report.label(&e.subset), e.strength, e.strength_std);
    }
    println!("top-rank recall {}", top_rank_recall(&truth.interactions, &report.ranking()));

    report.write_csv(File::create(out.join("interactions.csv"))?)?;
    for h in report.heatmaps() {
        h.write_csv(File::create(out.join(h.file_name()))?)?;
        println!("wrote {}", out.join(h.file_name()).display());
    }
    Ok(())
}
