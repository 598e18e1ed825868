use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::blocks::BayesNet;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Matrix, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Prior {
    /// Independent `N(0, 1)` on every weight.
    StandardNormal,
    /// `p(V) ∝ exp(−λ Σ_i ‖v_i‖₂)` over the rows of the weight matrix (one
    /// row per incoming feature). A bias row is excluded from the groups and
    /// gets a standard normal penalty.
    GroupLassoLaplace { lambda: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Covariance {
    #[default]
    Diagonal,
    Full,
}

/// Variational family of one FB weight matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FamilyKind {
    Gaussian { covariance: Covariance, init_std: f64 },
    PointMass,
    /// Row `i` of the weights is `μ_i` with probability `keep`, else zero.
    Mixture { keep: f64 },
}

impl FamilyKind {
    pub fn gaussian() -> Self {
        FamilyKind::Gaussian {
            covariance: Covariance::Diagonal,
            init_std: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub family: FamilyKind,
    pub prior: Prior,
}

impl GroupSpec {
    pub fn new(family: FamilyKind, prior: Prior) -> Self {
        Self { family, prior }
    }
}

/// Which family and prior each FB gets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPlan {
    pub default: GroupSpec,
    /// `(layer, spec)`; later entries win.
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub layer: usize,
    #[serde(flatten)]
    pub spec: GroupSpec,
}

impl PosteriorPlan {
    pub fn uniform(spec: GroupSpec) -> Self {
        Self {
            default: spec,
            layers: Vec::new(),
        }
    }

    pub fn with_layer(mut self, layer: usize, spec: GroupSpec) -> Self {
        self.layers.push(LayerSpec { layer, spec });
        self
    }

    pub fn spec_for(&self, layer: usize) -> GroupSpec {
        self.layers.iter().rev().find(|l| l.layer == layer).map_or(self.default, |l| l.spec)
    }
}

/// Variational parameters of one FB weight matrix (`rows x cols`, one
/// column per output unit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GroupPosterior {
    /// `v = μ + exp(s) ⊙ ε`.
    Gaussian { mean: Matrix, log_std: Matrix },
    /// Column `k` is `μ_k + L_k ε_k`, `L_k` the lower-triangular factor with
    /// exponentiated diagonal built from `factors[k]`.
    GaussianFull { mean: Matrix, factors: Vec<Matrix> },
    PointMass { mean: Matrix },
    Mixture { mean: Matrix, keep: f64 },
}

/// Random numbers consumed by one draw of one group.
enum Noise {
    None,
    Gaussian(Matrix),
    Mask(Vec<f64>),
}

impl GroupPosterior {
    pub fn init(family: FamilyKind, mean: Matrix) -> Result<Self> {
        Ok(match family {
            FamilyKind::Gaussian { covariance, init_std } => {
                if !(init_std > 0.0) {
                    return Err(Error::InvalidArgument(format!("initial std {init_std} must be positive")));
                }
                match covariance {
                    Covariance::Diagonal => GroupPosterior::Gaussian {
                        log_std: Matrix::filled(mean.rows(), mean.cols(), init_std.ln()),
                        mean,
                    },
                    Covariance::Full => GroupPosterior::GaussianFull {
                        factors: (0..mean.cols())
                            .map(|_| Matrix::from_fn(mean.rows(), mean.rows(), |i, j| if i == j { init_std.ln() } else { 0.0 }))
                            .collect(),
                        mean,
                    },
                }
            }
            FamilyKind::PointMass => GroupPosterior::PointMass { mean },
            FamilyKind::Mixture { keep } => {
                if !(0.0..=1.0).contains(&keep) {
                    return Err(Error::InvalidArgument(format!("keep probability {keep} outside [0, 1]")));
                }
                GroupPosterior::Mixture { mean, keep }
            }
        })
    }

    pub fn mean(&self) -> &Matrix {
        match self {
            GroupPosterior::Gaussian { mean, .. }
            | GroupPosterior::GaussianFull { mean, .. }
            | GroupPosterior::PointMass { mean }
            | GroupPosterior::Mixture { mean, .. } => mean,
        }
    }

    pub fn family(&self) -> FamilyKind {
        match self {
            GroupPosterior::Gaussian { log_std, .. } => FamilyKind::Gaussian {
                covariance: Covariance::Diagonal,
                init_std: log_std.data().first().map_or(1.0, |s| s.exp()),
            },
            GroupPosterior::GaussianFull { .. } => FamilyKind::Gaussian {
                covariance: Covariance::Full,
                init_std: 1.0,
            },
            GroupPosterior::PointMass { .. } => FamilyKind::PointMass,
            GroupPosterior::Mixture { keep, .. } => FamilyKind::Mixture { keep: *keep },
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            GroupPosterior::PointMass { .. } => true,
            GroupPosterior::Mixture { keep, .. } => *keep >= 1.0,
            _ => false,
        }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        match self {
            GroupPosterior::Gaussian { mean, log_std } => vec![mean, log_std],
            GroupPosterior::GaussianFull { mean, factors } => std::iter::once(mean).chain(factors).collect(),
            GroupPosterior::PointMass { mean } | GroupPosterior::Mixture { mean, .. } => vec![mean],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            GroupPosterior::Gaussian { mean, log_std } => vec![mean, log_std],
            GroupPosterior::GaussianFull { mean, factors } => std::iter::once(mean).chain(factors.iter_mut()).collect(),
            GroupPosterior::PointMass { mean } | GroupPosterior::Mixture { mean, .. } => vec![mean],
        }
    }

    fn draw_noise(&self, rng: &mut dyn RngCore, bias_row: bool) -> Noise {
        match self {
            GroupPosterior::Gaussian { mean, .. } | GroupPosterior::GaussianFull { mean, .. } => {
                Noise::Gaussian(rng::normal_matrix(rng, mean.rows(), mean.cols()))
            }
            GroupPosterior::PointMass { .. } => Noise::None,
            GroupPosterior::Mixture { mean, keep } => {
                let rows = mean.rows();
                Noise::Mask(
                    (0..rows)
                        .map(|i| {
                            let u: f64 = rng.gen();
                            if (bias_row && i + 1 == rows) || u < *keep {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                )
            }
        }
    }

    fn apply_noise(&self, noise: &Noise) -> Matrix {
        match (self, noise) {
            (GroupPosterior::Gaussian { mean, log_std }, Noise::Gaussian(eps)) => {
                Matrix::from_fn(mean.rows(), mean.cols(), |i, j| mean.get(i, j) + log_std.get(i, j).exp() * eps.get(i, j))
            }
            (GroupPosterior::GaussianFull { mean, factors }, Noise::Gaussian(eps)) => {
                let r = mean.rows();
                Matrix::from_fn(r, mean.cols(), |i, k| {
                    let raw = &factors[k];
                    let mut v = mean.get(i, k) + raw.get(i, i).exp() * eps.get(i, k);
                    for j in 0..i {
                        v += raw.get(i, j) * eps.get(j, k);
                    }
                    v
                })
            }
            (GroupPosterior::Mixture { mean, .. }, Noise::Mask(m)) => Matrix::from_fn(mean.rows(), mean.cols(), |i, j| m[i] * mean.get(i, j)),
            (p, _) => p.mean().clone(),
        }
    }

    fn apply_noise_on_tape<'t>(&self, leaves: &[Var<'t>], noise: Noise) -> Result<Var<'t>> {
        let tape = leaves[0].tape();
        match (self, noise) {
            (GroupPosterior::Gaussian { .. }, Noise::Gaussian(eps)) => leaves[0].add(leaves[1].exp().mul(tape.constant(eps))?),
            (GroupPosterior::GaussianFull { mean, .. }, Noise::Gaussian(eps)) => {
                let cols: Vec<Var<'t>> = (0..mean.cols())
                    .map(|k| {
                        let l = leaves[1 + k].tril_factor()?;
                        leaves[0].col_range(k, 1)?.add(l.matmul(tape.constant(eps.col_range(k, 1)))?)
                    })
                    .collect::<Result<_>>()?;
                Var::hcat(&cols)
            }
            (GroupPosterior::Mixture { mean, .. }, Noise::Mask(m)) => {
                let mask = Matrix::from_fn(mean.rows(), mean.cols(), |i, _| m[i]);
                leaves[0].mul(tape.constant(mask))
            }
            _ => Ok(leaves[0]),
        }
    }
}

/// Variational posterior over all FB weights of a network, with the prior
/// of each group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub groups: Vec<GroupPosterior>,
    pub priors: Vec<Prior>,
    /// Whether the last row of each group is a bias row.
    pub bias_rows: Vec<bool>,
}

/// Tape leaves for every variational parameter, grouped like
/// [`VariationalState::groups`].
pub type GroupLeaves<'t> = Vec<Vec<Var<'t>>>;

impl VariationalState {
    /// Means start at the network's deterministic initial weights.
    pub fn init(net: &BayesNet, plan: &PosteriorPlan) -> Result<Self> {
        let init = net.initial_weights();
        let owners = net.group_owners();
        let fbs = net.function_blocks();
        let mut groups = Vec::with_capacity(init.len());
        let mut priors = Vec::with_capacity(init.len());
        for (mean, (layer, _)) in init.into_iter().zip(owners) {
            let spec = plan.spec_for(layer);
            if let Prior::GroupLassoLaplace { lambda } = spec.prior {
                if !(lambda >= 0.0) {
                    return Err(Error::InvalidArgument(format!("group lasso λ = {lambda} must be nonnegative")));
                }
            }
            groups.push(GroupPosterior::init(spec.family, mean)?);
            priors.push(spec.prior);
        }
        Ok(Self {
            groups,
            priors,
            bias_rows: fbs.iter().map(|fb| fb.bias).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.groups.iter().flat_map(GroupPosterior::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.groups.iter_mut().flat_map(GroupPosterior::params_mut).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    pub fn is_deterministic(&self) -> bool {
        self.groups.iter().all(GroupPosterior::is_deterministic)
    }

    pub fn leaves<'t>(&self, tape: &'t Tape) -> GroupLeaves<'t> {
        self.groups
            .iter()
            .map(|g| g.params().into_iter().map(|p| tape.var(p.clone())).collect())
            .collect()
    }

    /// One reparameterized draw of every group, on the tape.
    pub fn sample_on_tape<'t>(&self, leaves: &GroupLeaves<'t>, rng: &mut dyn RngCore) -> Result<Vec<Var<'t>>> {
        self.groups
            .iter()
            .zip(leaves)
            .zip(&self.bias_rows)
            .map(|((g, l), &bias)| g.apply_noise_on_tape(l, g.draw_noise(rng, bias)))
            .collect()
    }

    /// One draw of every group, without a tape. Consumes the random stream
    /// exactly like [`Self::sample_on_tape`].
    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<Matrix> {
        self.groups
            .iter()
            .zip(&self.bias_rows)
            .map(|(g, &bias)| g.apply_noise(&g.draw_noise(rng, bias)))
            .collect()
    }

    pub fn means(&self) -> Vec<Matrix> {
        self.groups.iter().map(|g| g.mean().clone()).collect()
    }

    /// `KL(q ‖ p)` (or the penalty standing in for it) on the tape.
    pub fn kl_on_tape<'t>(&self, leaves: &GroupLeaves<'t>) -> Result<Var<'t>> {
        self.kl_terms_on_tape(leaves, false)
    }

    /// The KL without the group-Lasso norms of point-mass groups, which
    /// are not differentiable at zero and are handled by a proximal step.
    pub fn smooth_kl_on_tape<'t>(&self, leaves: &GroupLeaves<'t>) -> Result<Var<'t>> {
        self.kl_terms_on_tape(leaves, true)
    }

    /// `λ` of every point-mass group under a group-Lasso prior.
    pub fn proximal_groups(&self) -> Vec<Option<f64>> {
        self.groups
            .iter()
            .zip(&self.priors)
            .map(|(q, p)| match (q, p) {
                (GroupPosterior::PointMass { .. }, Prior::GroupLassoLaplace { lambda }) => Some(*lambda),
                _ => None,
            })
            .collect()
    }

    /// `λ Σ ‖row‖₂` over the non-bias rows of the proximal groups.
    pub fn lasso_penalty(&self) -> f64 {
        self.groups
            .iter()
            .zip(self.proximal_groups())
            .zip(&self.bias_rows)
            .filter_map(|((q, lambda), &bias)| {
                let m = q.mean();
                let rows = if bias { m.rows() - 1 } else { m.rows() };
                lambda.map(|l| l * (0..rows).map(|i| m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>())
            })
            .sum()
    }

    fn kl_terms_on_tape<'t>(&self, leaves: &GroupLeaves<'t>, smooth: bool) -> Result<Var<'t>> {
        let tape = leaves[0][0].tape();
        let mut total = tape.scalar(0.0);
        for (g, ((q, l), (&p, &bias))) in self.groups.iter().zip(leaves).zip(self.priors.iter().zip(&self.bias_rows)).enumerate() {
            total = total.add(group_kl(q, l, p, bias, smooth).map_err(|e| match e {
                Error::Unsupported(m) => Error::Unsupported(format!("weight group {g}: {m}")),
                other => other,
            })?)?;
        }
        Ok(total)
    }
}

fn row_mask(rows: usize, cols: usize, bias: bool, want_bias: bool) -> Matrix {
    Matrix::from_fn(rows, cols, |i, _| {
        let is_bias = bias && i + 1 == rows;
        if is_bias == want_bias {
            1.0
        } else {
            0.0
        }
    })
}

fn group_kl<'t>(q: &GroupPosterior, l: &[Var<'t>], prior: Prior, bias: bool, smooth: bool) -> Result<Var<'t>> {
    let tape = l[0].tape();
    match (q, prior) {
        (GroupPosterior::Gaussian { .. }, Prior::StandardNormal) => {
            // ½ Σ (σ² + μ² − 1 − log σ²)
            let s = l[1];
            let t = s.scale(2.0).exp().add(l[0].square())?.sub(s.scale(2.0))?.offset(-1.0);
            Ok(t.sum().scale(0.5))
        }
        (GroupPosterior::GaussianFull { mean, .. }, Prior::StandardNormal) => {
            let r = mean.rows();
            let eye = tape.constant(Matrix::identity(r));
            let mut total = l[0].square().sum();
            for raw in &l[1..] {
                let factor = raw.tril_factor()?;
                let log_det = raw.mul(eye)?.sum().scale(2.0);
                total = total.add(factor.square().sum())?.sub(log_det)?.offset(-(r as f64));
            }
            Ok(total.scale(0.5))
        }
        (GroupPosterior::PointMass { .. }, Prior::StandardNormal) => Ok(l[0].square().sum().scale(0.5)),
        (GroupPosterior::PointMass { mean }, Prior::GroupLassoLaplace { lambda }) => {
            let (r, c) = mean.shape();
            let lasso = if smooth {
                tape.scalar(0.0)
            } else {
                let rows = l[0].square().row_sum();
                let row_sel = tape.constant(row_mask(r, 1, bias, false));
                rows.sqrt().mul(row_sel)?.sum().scale(lambda)
            };
            if bias {
                let b = l[0].mul(tape.constant(row_mask(r, c, bias, true)))?.square().sum().scale(0.5);
                lasso.add(b)
            } else {
                Ok(lasso)
            }
        }
        (GroupPosterior::Mixture { keep, .. }, Prior::StandardNormal) => Ok(l[0].square().sum().scale(0.5 * keep)),
        (q, p) => Err(Error::Unsupported(format!("no KL term for family {:?} against prior {p:?}", q.family()))),
    }
}

/// Closed-form `KL(q ‖ p)` summed over groups (penalty form for point
/// masses and mixtures).
pub fn kl_term(q: &VariationalState) -> Result<f64> {
    let tape = Tape::new();
    let leaves = q.leaves(&tape);
    Ok(q.kl_on_tape(&leaves)?.item())
}
