use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{Dataset, Standardization};
use crate::blocks::{build_network, BayesNet, BuildPolicy};
use crate::error::{Error, Result};
use crate::skeleton::Skeleton;
use crate::tensor::Matrix;
use crate::vi::posterior::{FamilyKind, GroupPosterior, PosteriorPlan, Prior, VariationalState};
use crate::vi::predict::{predict, Prediction};
use crate::vi::train::{train, TraceRow, TrainConfig};
use crate::vi::Likelihood;

pub const MODEL_TOML: &str = "model.toml";
pub const MODEL_BIN: &str = "model.bin";

/// Whether inputs and the regression target are standardized before
/// training. Predictions are always returned in original units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scaling {
    pub inputs: bool,
    pub target: bool,
}

impl Default for Scaling {
    fn default() -> Self {
        Self { inputs: true, target: true }
    }
}

/// A network together with its fitted posterior and data scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub net: BayesNet,
    pub q: VariationalState,
    pub likelihood: Likelihood,
    pub x_scale: Standardization,
    pub y_scale: Standardization,
    pub feature_names: Vec<String>,
    pub train_config: TrainConfig,
}

impl TrainedModel {
    /// Standardizes `data` as requested, builds the network on the scaled
    /// inputs, and trains it.
    pub fn fit(
        skeleton: &Skeleton,
        policy: &BuildPolicy,
        plan: &PosteriorPlan,
        likelihood: Likelihood,
        data: &Dataset,
        config: &TrainConfig,
        scaling: Scaling,
    ) -> Result<(TrainedModel, Vec<TraceRow>)> {
        let raw = data.raw_x();
        let x_scale = if scaling.inputs {
            Standardization::fit(&raw, Some(&data.feature_names))?
        } else {
            Standardization::identity(raw.cols())
        };
        let gaussian = matches!(likelihood, Likelihood::Gaussian { .. });
        let y_scale = if scaling.target && gaussian {
            Standardization::fit_vector(&data.y)?
        } else {
            Standardization::identity(1)
        };
        let x = x_scale.apply(&raw);
        let y = Matrix::column(data.y.iter().map(|&v| y_scale.apply_scalar(v)).collect());
        let net = build_network(skeleton, policy, Some(&x))?;
        let q = VariationalState::init(&net, plan)?;
        let outcome = train(&net, q, likelihood, &x, &y, config)?;
        Ok((
            TrainedModel {
                net,
                q: outcome.q,
                likelihood: outcome.likelihood,
                x_scale,
                y_scale,
                feature_names: data.feature_names.clone(),
                train_config: config.clone(),
            },
            outcome.trace,
        ))
    }

    pub fn scale_inputs(&self, x_raw: &Matrix) -> Matrix {
        self.x_scale.apply(x_raw)
    }

    /// Predictive draws in original target units.
    pub fn predict(&self, x_raw: &Matrix, mc_samples: usize, seed: u64) -> Result<Prediction> {
        if x_raw.cols() != self.x_scale.dim() {
            return Err(Error::shape("prediction inputs", x_raw.shape(), (x_raw.rows(), self.x_scale.dim())));
        }
        let p = predict(&self.net, &self.q, &self.likelihood, &self.scale_inputs(x_raw), mc_samples, seed)?;
        Ok(match self.likelihood {
            Likelihood::Gaussian { .. } => p.rescale(self.y_scale.mean[0], self.y_scale.std[0]),
            Likelihood::Softmax { .. } => p,
        })
    }

    /// Observation noise variance in original target units.
    pub fn noise_variance(&self) -> Option<f64> {
        self.likelihood.noise_variance().map(|v| v * self.y_scale.std[0].powi(2))
    }

    /// Writes `model.toml` and `model.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let inducing = self.net.inducing_points();
        let mut blob = Vec::new();
        for m in inducing.iter().chain(self.q.params()) {
            for v in m.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let (rb, z) = self.net.checksums();
        let file = ModelFile {
            format: 1,
            feature_names: self.feature_names.clone(),
            skeleton: self.net.skeleton().to_toml(),
            policy: self.net.policy().clone(),
            likelihood: self.likelihood,
            x_scale: self.x_scale.clone(),
            y_scale: self.y_scale.clone(),
            train: self.train_config.clone(),
            groups: self
                .q
                .groups
                .iter()
                .zip(&self.q.priors)
                .zip(&self.q.bias_rows)
                .zip(self.net.weight_shapes())
                .map(|(((g, p), b), (rows, cols))| GroupMeta {
                    rows,
                    cols,
                    bias: *b,
                    family: g.family(),
                    prior: *p,
                })
                .collect(),
            inducing_shapes: inducing.iter().map(|m| [m.rows(), m.cols()]).collect(),
            checksums: Checksums {
                random_features: rb,
                inducing_points: z,
                blob: hex::encode(Sha256::digest(&blob)),
            },
        };
        let text = toml::to_string(&file).map_err(|e| Error::ModelFile {
            path: dir.join(MODEL_TOML),
            msg: e.to_string(),
        })?;
        fs::write(dir.join(MODEL_TOML), text)?;
        fs::write(dir.join(MODEL_BIN), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<TrainedModel> {
        let path = dir.join(MODEL_TOML);
        let bad = |msg: String| Error::ModelFile {
            path: path.clone(),
            msg,
        };
        let text = fs::read_to_string(&path)?;
        let file: ModelFile = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if file.format != 1 {
            return Err(bad(format!("unsupported format version {}", file.format)));
        }
        let blob = fs::read(dir.join(MODEL_BIN))?;
        if hex::encode(Sha256::digest(&blob)) != file.checksums.blob {
            return Err(bad("weight blob checksum mismatch".into()));
        }
        if blob.len() % 8 != 0 {
            return Err(bad("weight blob length is not a multiple of 8".into()));
        }
        let values: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let mut cursor = 0usize;
        let mut take = |rows: usize, cols: usize| -> Result<Matrix> {
            let end = cursor + rows * cols;
            if end > values.len() {
                return Err(bad("weight blob is shorter than the declared shapes".into()));
            }
            let m = Matrix::new(rows, cols, values[cursor..end].to_vec())?;
            cursor = end;
            Ok(m)
        };
        let inducing: Vec<Matrix> = file.inducing_shapes.iter().map(|&[r, c]| take(r, c)).collect::<Result<_>>()?;
        let skeleton = Skeleton::parse(&file.skeleton)?;
        let net = BayesNet::rebuild(&skeleton, &file.policy, &inducing)?;
        let (rb, z) = net.checksums();
        if rb != file.checksums.random_features || z != file.checksums.inducing_points {
            return Err(bad("rebuilt feature blocks do not match the stored checksums".into()));
        }
        if net.weight_shapes().len() != file.groups.len() {
            return Err(bad("number of weight groups differs from the network".into()));
        }
        let mut groups = Vec::with_capacity(file.groups.len());
        for (meta, shape) in file.groups.iter().zip(net.weight_shapes()) {
            if (meta.rows, meta.cols) != shape {
                return Err(bad(format!("weight group shape {:?} differs from network shape {shape:?}", (meta.rows, meta.cols))));
            }
            let family = match meta.family {
                FamilyKind::Gaussian { covariance, .. } => FamilyKind::Gaussian { covariance, init_std: 1.0 },
                f => f,
            };
            let mut g = GroupPosterior::init(family, Matrix::zeros(meta.rows, meta.cols))?;
            for p in g.params_mut() {
                *p = take(p.rows(), p.cols())?;
            }
            groups.push(g);
        }
        if cursor != values.len() {
            return Err(bad("weight blob has trailing values".into()));
        }
        let q = VariationalState {
            groups,
            priors: file.groups.iter().map(|g| g.prior).collect(),
            bias_rows: file.groups.iter().map(|g| g.bias).collect(),
        };
        Ok(TrainedModel {
            net,
            q,
            likelihood: file.likelihood,
            x_scale: file.x_scale,
            y_scale: file.y_scale,
            feature_names: file.feature_names,
            train_config: file.train,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: u32,
    feature_names: Vec<String>,
    skeleton: String,
    likelihood: Likelihood,
    train: TrainConfig,
    x_scale: Standardization,
    y_scale: Standardization,
    inducing_shapes: Vec<[usize; 2]>,
    checksums: Checksums,
    policy: BuildPolicy,
    groups: Vec<GroupMeta>,
}

#[derive(Serialize, Deserialize)]
struct Checksums {
    random_features: String,
    inducing_points: String,
    blob: String,
}

#[derive(Serialize, Deserialize)]
struct GroupMeta {
    rows: usize,
    cols: usize,
    bias: bool,
    family: FamilyKind,
    prior: Prior,
}
