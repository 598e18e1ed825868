//! Command-line front end. Every subcommand writes `manifest.toml` into its
//! output directory; `bnn replay manifest.toml` re-runs it.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::addnn::{interaction_strengths, model_clusters, AddNnConfig, InteractionConfig, NormPoints, Threshold, Variant};
use crate::bench::{generate_train_test, ingest_csv, metrics, Dataset, GroundTruth, Metrics};
use crate::blocks::{BuildPolicy, StageSpec};
use crate::error::{Error, Result};
use crate::kernels::{concentration_experiment, equivalence_check, write_equivalence_csv, ConcentrationConfig, EquivalenceConfig};
use crate::skeleton::Skeleton;
use crate::vi::{write_trace_csv, Covariance, FamilyKind, GroupSpec, Likelihood, PosteriorPlan, Prior, Scaling, TraceRow, TrainConfig, TrainedModel, MODEL_TOML};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Parser, Debug)]
#[command(name = "bnn", version, about = "Bayesian neural networks from computation skeletons")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Validate a skeleton config and print it in canonical form.
    Skeleton(SkeletonArgs),
    /// Fit a model and save it.
    Train(TrainArgs),
    /// Posterior-predictive mean and variance of a saved model.
    Predict(PredictArgs),
    /// Interaction strengths and heatmaps of a saved AddNN.
    Interactions(InteractionArgs),
    /// Concentration of the empirical random-feature kernel.
    KernelCheck(KernelCheckArgs),
    /// Random-feature vs inducing-point posterior agreement.
    EquivCheck(EquivCheckArgs),
    /// Benchmark data generation and repeated-split evaluation.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Re-run the command recorded in a manifest.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BenchCommand {
    /// Write a synthetic train/test pair.
    Synth(SynthArgs),
    /// RMSE ± stderr over random splits of a CSV.
    Csv(BenchCsvArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonArgs {
    /// Skeleton config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the AddNN skeleton instead of a file.
    #[arg(long, value_enum, conflicts_with = "config")]
    pub preset: Option<PresetName>,
    /// Input dimension of a preset.
    #[arg(long, default_value_t = 10)]
    pub input_dim: usize,
    /// Write the canonical config here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    Addnn,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Gaussian,
    GaussianFull,
    PointMass,
    Mixture,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorName {
    Normal,
    GroupLasso,
}

/// Where the data comes from: a synthetic function or a CSV file.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct DataArgs {
    /// Synthetic benchmark function (1-10).
    #[arg(long, conflicts_with = "data")]
    pub fid: Option<u8>,
    #[arg(long, default_value_t = 5000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 5000)]
    pub n_test: usize,
    /// Noise variance of synthetic targets.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Seed of the synthetic draw (defaults to --seed).
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Headed numeric CSV.
    #[arg(long, requires = "target")]
    pub data: Option<PathBuf>,
    /// Response column of --data.
    #[arg(long)]
    pub target: Option<String>,
    /// Held-out CSV with the same columns.
    #[arg(long, requires = "data", conflicts_with = "test_fraction")]
    pub test_data: Option<PathBuf>,
    /// Hold out this fraction of --data instead.
    #[arg(long, requires = "data")]
    pub test_fraction: Option<f64>,
}

impl DataArgs {
    fn is_set(&self) -> bool {
        self.fid.is_some() || self.data.is_some()
    }

    fn resolve(&mut self, seed: u64) {
        if self.fid.is_some() && self.data_seed.is_none() {
            self.data_seed = Some(seed);
        }
    }

    /// Training data, optional test data, and the ground truth of synthetic
    /// functions.
    fn load(&self) -> Result<(Dataset, Option<Dataset>, Option<GroundTruth>)> {
        if let Some(fid) = self.fid {
            let (train, test, truth) = generate_train_test(fid, self.n_train, self.n_test, self.noise, self.data_seed.unwrap_or(0))?;
            return Ok((train, (self.n_test > 0).then_some(test), Some(truth)));
        }
        let (path, target) = match (&self.data, &self.target) {
            (Some(p), Some(t)) => (p, t),
            _ => return Err(Error::InvalidArgument("no data: pass --fid or --data with --target".into())),
        };
        let data = read_csv(path, target)?;
        if let Some(tp) = &self.test_data {
            let test = read_csv(tp, target)?;
            check_columns(&data.feature_names, &test.feature_names)?;
            return Ok((data, Some(test), None));
        }
        if let Some(f) = self.test_fraction {
            let split = data.random_split(f, self.data_seed.unwrap_or(0))?;
            let (train, test) = data.apply_split(&split);
            return Ok((train, Some(test), None));
        }
        Ok((data, None, None))
    }
}

fn read_csv(path: &Path, target: &str) -> Result<Dataset> {
    if !path.is_file() {
        return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{}: no such file", path.display()))));
    }
    ingest_csv(path, target, false)
}

fn load_model(dir: &Path) -> Result<TrainedModel> {
    if !dir.join(MODEL_TOML).is_file() {
        return Err(Error::ModelFile {
            path: dir.join(MODEL_TOML),
            msg: "not found".into(),
        });
    }
    TrainedModel::load(dir)
}

fn check_columns(expected: &[String], found: &[String]) -> Result<()> {
    if expected != found {
        return Err(Error::Data(format!("feature columns {found:?} do not match the model's {expected:?}")));
    }
    Ok(())
}

/// Network choice: the AddNN preset or a skeleton file with a build policy.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct NetArgs {
    #[arg(long, value_enum, conflicts_with = "skeleton")]
    pub preset: Option<PresetName>,
    /// Skeleton config file.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Build policy (node recipes) for --skeleton, as TOML.
    #[arg(long, requires = "skeleton")]
    pub policy: Option<PathBuf>,
    /// Variational family of every FB of a --skeleton network.
    #[arg(long, value_enum, default_value_t = FamilyName::Gaussian)]
    pub family: FamilyName,
    /// Prior of every FB of a --skeleton network.
    #[arg(long, value_enum, default_value_t = PriorName::Normal)]
    pub prior: PriorName,
    #[arg(long, default_value_t = Variant::McDropout, conflicts_with = "skeleton")]
    pub variant: Variant,
    #[arg(long, default_value_t = 10)]
    pub subnets: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [5, 20])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = ActivationKind::Relu)]
    pub activation: ActivationKind,
    /// Group-Lasso strength per training example.
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    /// Keep probability of mixture posteriors.
    #[arg(long, default_value_t = 0.9)]
    pub keep: f64,
    #[arg(long, default_value_t = 16)]
    pub rf_features: usize,
}

/// Optimizer settings; unset values take the network's defaults.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainOverrides {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub decay_steps: Option<usize>,
    /// Disable the proximal group-Lasso step.
    #[arg(long)]
    pub no_proximal: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainOverrides,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Posterior draws for test metrics.
    #[arg(long, default_value_t = 50)]
    pub eval_samples: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PredictArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Synthetic test set or a CSV with the target column.
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 50)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct InteractionArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Background data; defaults to the training data recorded in the
    /// model's manifest.
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Cluster threshold relative to the largest first-layer row norm.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    /// Absolute row-norm threshold instead.
    #[arg(long, conflicts_with = "threshold")]
    pub abs_threshold: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub draws: usize,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub background: usize,
    /// Evaluate norms at training points instead of the background grid.
    #[arg(long)]
    pub training_points: bool,
    #[arg(long, default_value_t = 500)]
    pub eval_points: usize,
    #[arg(long, default_value_t = 50)]
    pub heatmap_grid: usize,
    #[arg(long, default_value_t = 3)]
    pub heatmap_pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct KernelCheckArgs {
    #[arg(long, default_value_t = ActivationKind::Relu)]
    pub sigma: ActivationKind,
    #[arg(long, value_delimiter = ',', default_values_t = [64, 256, 1024, 4096, 16384])]
    pub r: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 50)]
    pub pairs: usize,
    /// Number of feature draws per r.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 2024)]
    pub pair_seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EquivCheckArgs {
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub r: usize,
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    #[arg(long, default_value_t = ActivationKind::Relu)]
    pub sigma: ActivationKind,
    #[arg(long, default_value_t = 1.0)]
    pub lengthscale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub fid: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 5000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BenchCsvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 20)]
    pub splits: usize,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainOverrides,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub eval_samples: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Output directory (defaults to the recorded one).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contents of `manifest.toml`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub run: Command,
    /// Settings derived from the command, for reference.
    #[serde(default)]
    pub resolved: toml::Table,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::ModelFile {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

fn to_table<T: Serialize>(value: &T) -> Result<toml::Table> {
    toml::Table::try_from(value).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn write_manifest(out: &Path, run: &Command, resolved: toml::Table) -> Result<()> {
    let m = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        run: run.clone(),
        resolved,
    };
    let text = toml::to_string(&m).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(out.join(MANIFEST), text)?;
    Ok(())
}

fn create(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn csv_file(path: PathBuf) -> Result<fs::File> {
    Ok(fs::File::create(path)?)
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Skeleton(a) => skeleton(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Interactions(a) => interactions(a),
        Command::KernelCheck(a) => kernel_check(a),
        Command::EquivCheck(a) => equiv_check(a),
        Command::Bench(BenchCommand::Synth(a)) => bench_synth(a),
        Command::Bench(BenchCommand::Csv(a)) => bench_csv(a),
        Command::Replay(a) => replay(a),
    }
}

fn replay(args: ReplayArgs) -> Result<()> {
    let mut run = Manifest::read(&args.manifest)?.run;
    if let Some(out) = args.out {
        match &mut run {
            Command::Skeleton(a) => a.out = Some(out.join("skeleton.toml")),
            Command::Train(a) => a.out = out,
            Command::Predict(a) => a.out = out,
            Command::Interactions(a) => a.out = out,
            Command::KernelCheck(a) => a.out = out,
            Command::EquivCheck(a) => a.out = out,
            Command::Bench(BenchCommand::Synth(a)) => a.out = out,
            Command::Bench(BenchCommand::Csv(a)) => a.out = out,
            Command::Replay(_) => {}
        }
    }
    execute(run)
}

fn skeleton(args: SkeletonArgs) -> Result<()> {
    let sk = match (&args.config, args.preset) {
        (Some(path), _) => Skeleton::parse(&fs::read_to_string(path)?)?,
        (None, Some(PresetName::Addnn)) => AddNnConfig::default().skeleton(args.input_dim)?,
        (None, None) => return Err(Error::InvalidArgument("pass --config or --preset".into())),
    };
    let text = sk.to_toml();
    match &args.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                create(dir)?;
                write_manifest(dir, &Command::Skeleton(args.clone()), toml::Table::new())?;
            }
            fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    eprintln!(
        "skeleton: {} layers, input dim {}, {} outputs",
        sk.depth(),
        sk.input_dim(),
        sk.output_count()
    );
    Ok(())
}

/// Everything needed to build and fit a network.
struct Recipe {
    skeleton: Skeleton,
    policy: BuildPolicy,
    plan: PosteriorPlan,
    train: TrainConfig,
    addnn: Option<AddNnConfig>,
}

impl Recipe {
    fn resolve(net: &NetArgs, overrides: &TrainOverrides, seed: u64, input_dim: usize, n_train: usize) -> Result<Recipe> {
        let (skeleton, policy, plan, base, addnn) = match &net.skeleton {
            None => {
                let cfg = AddNnConfig {
                    subnets: net.subnets,
                    hidden: net.hidden.clone(),
                    activation: net.activation,
                    variant: net.variant,
                    lambda: net.lambda,
                    keep: net.keep,
                    rf_features: net.rf_features,
                    seed,
                };
                (cfg.skeleton(input_dim)?, cfg.policy(), cfg.plan(n_train), cfg.training(), Some(cfg))
            }
            Some(path) => {
                let skeleton = Skeleton::parse(&fs::read_to_string(path)?)?;
                if skeleton.input_dim() != input_dim {
                    return Err(Error::InvalidArgument(format!(
                        "skeleton expects {} inputs but the data has {input_dim} features",
                        skeleton.input_dim()
                    )));
                }
                let policy = match &net.policy {
                    Some(p) => parse_policy(&fs::read_to_string(p)?)?,
                    None => BuildPolicy::default(),
                };
                let policy = BuildPolicy { seed, ..policy };
                let family = match net.family {
                    FamilyName::Gaussian => FamilyKind::gaussian(),
                    FamilyName::GaussianFull => FamilyKind::Gaussian {
                        covariance: Covariance::Full,
                        init_std: 0.05,
                    },
                    FamilyName::PointMass => FamilyKind::PointMass,
                    FamilyName::Mixture => FamilyKind::Mixture { keep: net.keep },
                };
                let prior = match net.prior {
                    PriorName::Normal => Prior::StandardNormal,
                    PriorName::GroupLasso => Prior::GroupLassoLaplace {
                        lambda: net.lambda * n_train as f64,
                    },
                };
                let plan = PosteriorPlan::uniform(GroupSpec::new(family, prior));
                (skeleton, policy, plan, TrainConfig::default(), None)
            }
        };
        let train = TrainConfig {
            steps: overrides.steps.unwrap_or(base.steps),
            lr: overrides.lr.unwrap_or(base.lr),
            batch_size: overrides.batch.unwrap_or(base.batch_size),
            mc_samples: overrides.mc_samples.unwrap_or(base.mc_samples),
            decay_steps: overrides.decay_steps.unwrap_or(base.decay_steps),
            proximal: !overrides.no_proximal,
            seed,
            ..base
        };
        Ok(Recipe {
            skeleton,
            policy,
            plan,
            train,
            addnn,
        })
    }

    fn fit(&self, data: &Dataset) -> Result<(TrainedModel, Vec<TraceRow>)> {
        TrainedModel::fit(&self.skeleton, &self.policy, &self.plan, Likelihood::default(), data, &self.train, Scaling::default())
    }

    fn table(&self) -> Result<toml::Table> {
        let mut t = toml::Table::new();
        t.insert("skeleton".into(), toml::Value::String(self.skeleton.to_toml()));
        t.insert("policy".into(), toml::Value::Table(to_table(&self.policy)?));
        t.insert("posterior".into(), toml::Value::Table(to_table(&self.plan)?));
        t.insert("train".into(), toml::Value::Table(to_table(&self.train)?));
        if let Some(a) = &self.addnn {
            t.insert("addnn".into(), toml::Value::Table(to_table(a)?));
        }
        Ok(t)
    }
}

/// Reads a build policy, rejecting inducing-point stages without a kernel.
pub fn parse_policy(text: &str) -> Result<BuildPolicy> {
    let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config {
        field: "policy".into(),
        line: None,
        msg: e.message().to_string(),
    })?;
    let mut recipes: Vec<(String, &toml::Value)> = Vec::new();
    if let Some(d) = raw.get("default") {
        recipes.push(("default".into(), d));
    }
    if let Some(toml::Value::Array(os)) = raw.get("overrides") {
        for (k, o) in os.iter().enumerate() {
            if let Some(r) = o.get("recipe") {
                recipes.push((format!("overrides[{k}].recipe"), r));
            }
        }
    }
    for (field, r) in recipes {
        if let Some(toml::Value::Array(stages)) = r.get("stages") {
            for (s, st) in stages.iter().enumerate() {
                if st.get("kind").and_then(toml::Value::as_str) == Some("inducing") && st.get("kernel").is_none() {
                    return Err(Error::Config {
                        field: format!("{field}.stages[{s}]"),
                        line: None,
                        msg: "inducing-point stage without a kernel spec".into(),
                    });
                }
            }
        }
    }
    let mut raw = raw;
    raw.entry("seed").or_insert(toml::Value::Integer(0));
    let policy: BuildPolicy = raw.try_into().map_err(|e: toml::de::Error| Error::Config {
        field: "policy".into(),
        line: None,
        msg: e.message().to_string(),
    })?;
    if policy.default.stages.iter().any(|s| matches!(s, StageSpec::Random { features: 0, .. })) {
        return Err(Error::Config {
            field: "default.stages".into(),
            line: None,
            msg: "random feature stage with zero features".into(),
        });
    }
    Ok(policy)
}

fn write_metrics(path: PathBuf, rows: &[(String, Metrics)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(csv_file(path)?);
    w.write_record(["split", "rmse", "mll", "top_rank_recall"])?;
    for (name, m) in rows {
        let recall = m.top_rank_recall.map(|r| r.to_string()).unwrap_or_default();
        w.write_record([name.clone(), m.rmse.to_string(), m.mll.to_string(), recall])?;
    }
    w.flush()?;
    Ok(())
}

fn evaluate(model: &TrainedModel, test: &Dataset, samples: usize, seed: u64) -> Result<Metrics> {
    let pred = model.predict(&test.raw_x(), samples, seed)?;
    metrics(&pred.mean_vec(), &pred.predictive_variance(), &test.y, None, None)
}

fn train(mut args: TrainArgs) -> Result<()> {
    args.data.resolve(args.seed);
    let (data, test, _) = args.data.load()?;
    let recipe = Recipe::resolve(&args.net, &args.train, args.seed, data.dim(), data.len())?;
    create(&args.out)?;
    write_manifest(&args.out, &Command::Train(args.clone()), recipe.table()?)?;
    info!("training on {} rows, {} features", data.len(), data.dim());
    let (model, trace) = recipe.fit(&data)?;
    model.save(&args.out)?;
    write_trace_csv(&trace, csv_file(args.out.join("trace.csv"))?)?;
    if let Some(test) = test {
        let m = evaluate(&model, &test, args.eval_samples, args.seed)?;
        println!("test rmse {:.4}  mll {:.4}", m.rmse, m.mll);
        write_metrics(args.out.join("metrics.csv"), &[("test".into(), m)])?;
    }
    println!("model written to {}", args.out.display());
    Ok(())
}

fn predict(mut args: PredictArgs) -> Result<()> {
    args.data.resolve(args.seed);
    let model = load_model(&args.model)?;
    let (data, test, _) = args.data.load()?;
    // Synthetic sources predict on their test half; CSVs on the whole file.
    let data = match (args.data.fid, test) {
        (Some(_), Some(t)) => t,
        _ => data,
    };
    check_columns(&model.feature_names, &data.feature_names)?;
    create(&args.out)?;
    write_manifest(&args.out, &Command::Predict(args.clone()), toml::Table::new())?;
    let pred = model.predict(&data.raw_x(), args.mc_samples, args.seed)?;
    let (mean, var) = (pred.mean_vec(), pred.predictive_variance());
    let mut w = csv::Writer::from_writer(csv_file(args.out.join("predictions.csv"))?);
    w.write_record(["mean", "predictive_variance", "target"])?;
    for i in 0..mean.len() {
        w.write_record([mean[i].to_string(), var[i].to_string(), data.y[i].to_string()])?;
    }
    w.flush()?;
    let m = metrics(&mean, &var, &data.y, None, None)?;
    println!("rmse {:.4}  mll {:.4}", m.rmse, m.mll);
    write_metrics(args.out.join("metrics.csv"), &[("predict".into(), m)])?;
    Ok(())
}

fn interactions(mut args: InteractionArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    if !args.data.is_set() {
        let recorded = Manifest::read(&args.model.join(MANIFEST))?;
        match recorded.run {
            Command::Train(t) => args.data = t.data,
            _ => return Err(Error::InvalidArgument("model manifest does not record a training run; pass data flags".into())),
        }
    }
    args.data.resolve(args.seed);
    let (data, _, truth) = args.data.load()?;
    check_columns(&model.feature_names, &data.feature_names)?;
    let threshold = match args.abs_threshold {
        Some(t) => Threshold::Absolute(t),
        None => Threshold::RelativeToMax(args.threshold),
    };
    let config = InteractionConfig {
        mc_draws: args.draws,
        top_k: args.top_k,
        background: Some(args.background),
        norm_points: if args.training_points { NormPoints::TrainingPoints } else { NormPoints::ProductGrid },
        eval_points: Some(args.eval_points),
        heatmap_grid: args.heatmap_grid,
        heatmap_pairs: args.heatmap_pairs,
        seed: args.seed,
        ..InteractionConfig::default()
    };
    create(&args.out)?;
    let mut resolved = toml::Table::new();
    resolved.insert("interactions".into(), toml::Value::Table(to_table(&config)?));
    resolved.insert("threshold".into(), toml::Value::Table(to_table(&threshold)?));
    write_manifest(&args.out, &Command::Interactions(args.clone()), resolved)?;

    let clusters = model_clusters(&model, threshold)?;
    let report = interaction_strengths(&model, &data, &clusters, &config)?;
    report.write_csv(csv_file(args.out.join("interactions.csv"))?)?;
    for h in report.heatmaps() {
        h.write_csv(csv_file(args.out.join(h.file_name()))?)?;
    }
    let mut stdout = std::io::stdout().lock();
    for e in report.entries.iter().take(10) {
        writeln!(stdout, "{:>16}  {:.4} ± {:.4}", report.label(&e.subset), e.strength, e.strength_std)?;
    }
    if let Some(t) = truth {
        let r = crate::bench::top_rank_recall(&t.interactions, &report.ranking());
        writeln!(stdout, "top-rank recall {r}")?;
    }
    Ok(())
}

fn kernel_check(args: KernelCheckArgs) -> Result<()> {
    let config = ConcentrationConfig {
        activation: args.sigma,
        dim: args.dim,
        r_grid: args.r.clone(),
        n_pairs: args.pairs,
        seeds: (0..args.seeds).collect(),
        pair_seed: args.pair_seed,
    };
    create(&args.out)?;
    write_manifest(&args.out, &Command::KernelCheck(args.clone()), toml::Table::new())?;
    let table = concentration_experiment(&config)?;
    table.write_csv(csv_file(args.out.join("kernel_check.csv"))?)?;
    for (r, e) in table.mean_by_r() {
        println!("r {r:>6}  mean sup error {e:.5}");
    }
    println!("log-log slope {:.3}", table.log_log_slope());
    Ok(())
}

fn equiv_check(args: EquivCheckArgs) -> Result<()> {
    let config = EquivalenceConfig {
        n: args.n,
        r: args.r,
        dim: args.dim,
        instances: args.instances,
        activation: args.sigma,
        lengthscale: args.lengthscale,
        seed: args.seed,
    };
    create(&args.out)?;
    write_manifest(&args.out, &Command::EquivCheck(args.clone()), toml::Table::new())?;
    let rows = equivalence_check(&config)?;
    write_equivalence_csv(&rows, csv_file(args.out.join("equiv_check.csv"))?)?;
    let worst = rows.iter().map(|r| r.max_abs_discrepancy).fold(0.0, f64::max);
    println!("{} cases, max abs discrepancy {worst:e}", rows.len());
    Ok(())
}

fn bench_synth(args: SynthArgs) -> Result<()> {
    let (train, test, truth) = generate_train_test(args.fid, args.n_train, args.n_test, args.noise, args.seed)?;
    create(&args.out)?;
    let mut resolved = toml::Table::new();
    let sets: Vec<toml::Value> = truth
        .interactions
        .iter()
        .map(|s| toml::Value::Array(s.iter().map(|&i| toml::Value::Integer(i as i64 + 1)).collect()))
        .collect();
    resolved.insert("interactions".into(), toml::Value::Array(sets));
    write_manifest(&args.out, &Command::Bench(BenchCommand::Synth(args.clone())), resolved)?;
    train.write_csv(&args.out.join("train.csv"))?;
    test.write_csv(&args.out.join("test.csv"))?;
    println!("wrote {} train and {} test rows to {}", train.len(), test.len(), args.out.display());
    Ok(())
}

fn bench_csv(args: BenchCsvArgs) -> Result<()> {
    if args.splits == 0 {
        return Err(Error::InvalidArgument("need at least one split".into()));
    }
    let data = read_csv(&args.data, &args.target)?;
    let n_train = data.len() - (args.test_fraction * data.len() as f64).round() as usize;
    let recipe = Recipe::resolve(&args.net, &args.train, args.seed, data.dim(), n_train)?;
    create(&args.out)?;
    write_manifest(&args.out, &Command::Bench(BenchCommand::Csv(args.clone())), recipe.table()?)?;
    let mut rows = Vec::with_capacity(args.splits + 2);
    for s in 0..args.splits as u64 {
        let split = data.random_split(args.test_fraction, args.seed + s)?;
        let (train, test) = data.apply_split(&split);
        let (model, _) = recipe.fit(&train)?;
        let m = evaluate(&model, &test, args.eval_samples, args.seed + s)?;
        info!("split {s}: rmse {:.4} mll {:.4}", m.rmse, m.mll);
        rows.push((s.to_string(), m));
    }
    let summary = |f: fn(&Metrics) -> f64| {
        let v: Vec<f64> = rows.iter().map(|(_, m)| f(m)).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        (mean, sd / n.sqrt())
    };
    let (rm, rs) = summary(|m| m.rmse);
    let (lm, ls) = summary(|m| m.mll);
    println!("rmse {rm:.4} ± {rs:.4}  mll {lm:.4} ± {ls:.4}  over {} splits", args.splits);
    rows.push((
        "mean".into(),
        Metrics {
            rmse: rm,
            mll: lm,
            top_rank_recall: None,
        },
    ));
    rows.push((
        "stderr".into(),
        Metrics {
            rmse: rs,
            mll: ls,
            top_rank_recall: None,
        },
    ));
    write_metrics(args.out.join("metrics.csv"), &rows)?;
    Ok(())
}
