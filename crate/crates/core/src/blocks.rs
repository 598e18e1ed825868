//! Feature and function blocks, and the bottom-up expansion of a skeleton
//! into a concrete network.
//!
//! Every non-input skeleton node `i` of layer `l` becomes
//!
//! ```text
//! h = [σ(f_j)]_{j ∈ In(i)}  →  zero or more feature stages (RB / IPB)  →  FB  →  f_i
//! ```
//!
//! where RB is a fixed random projection followed by `σ_K` and `1/√r`
//! scaling, IPB maps `x ↦ K(x, Z) K(Z, Z)^{-1/2}`, and FB is the linear map
//! whose weight columns carry the variational posterior. The FB weights of
//! all nodes are the only trainable quantities.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::rng::{self, streams};
use crate::skeleton::Skeleton;
use crate::tensor::{chol_inverse_sqrt, linalg::DEFAULT_JITTER, Matrix, Tape, Var};

/// Where bias terms live, if anywhere.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasMode {
    #[default]
    None,
    /// Each random feature gets a fixed random offset, `σ_K(xᵀw_j + b_j)`.
    RandomInRb,
    /// Every FB gets a constant-one input row, so its weights include a bias.
    TrainableInFb,
}

/// One feature stage of a node recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StageSpec {
    Random {
        features: usize,
        activation: ActivationKind,
        /// Weight scale `ρ`; `None` means `1/√d_in`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    Inducing { points: usize, kernel: KernelSpec },
}

/// Sequence of feature stages placed before a node's FB.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeRecipe {
    pub stages: Vec<StageSpec>,
}

impl NodeRecipe {
    /// FB only.
    pub fn plain() -> Self {
        Self { stages: Vec::new() }
    }

    pub fn random(features: usize, activation: ActivationKind) -> Self {
        Self {
            stages: vec![StageSpec::Random {
                features,
                activation,
                scale: None,
            }],
        }
    }

    pub fn then_random(mut self, features: usize, activation: ActivationKind) -> Self {
        self.stages.push(StageSpec::Random {
            features,
            activation,
            scale: None,
        });
        self
    }

    pub fn inducing(points: usize, kernel: KernelSpec) -> Self {
        Self {
            stages: vec![StageSpec::Inducing { points, kernel }],
        }
    }
}

/// Assigns a recipe to every skeleton node.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildPolicy {
    pub default: NodeRecipe,
    /// Later entries win; node-specific entries win over layer-wide ones.
    #[serde(default)]
    pub overrides: Vec<RecipeOverride>,
    #[serde(default)]
    pub bias: BiasMode,
    /// Adds the conditional-variance offset `k(h,h) - ‖φ(h)‖²` of IPB stages
    /// as sampled noise in forward passes.
    #[serde(default)]
    pub offset_correction: bool,
    pub seed: u64,
}

impl BuildPolicy {
    pub fn uniform(recipe: NodeRecipe, seed: u64) -> Self {
        Self {
            default: recipe,
            seed,
            ..Self::default()
        }
    }

    pub fn with_layer(mut self, layer: usize, recipe: NodeRecipe) -> Self {
        self.overrides.push(RecipeOverride { layer, node: None, recipe });
        self
    }

    pub fn with_node(mut self, layer: usize, node: usize, recipe: NodeRecipe) -> Self {
        self.overrides.push(RecipeOverride {
            layer,
            node: Some(node),
            recipe,
        });
        self
    }

    pub fn with_bias(mut self, bias: BiasMode) -> Self {
        self.bias = bias;
        self
    }

    pub fn recipe_for(&self, layer: usize, node: usize) -> &NodeRecipe {
        let specific = self.overrides.iter().rev().find(|o| o.layer == layer && o.node == Some(node));
        let layer_wide = || self.overrides.iter().rev().find(|o| o.layer == layer && o.node.is_none());
        specific.or_else(layer_wide).map_or(&self.default, |o| &o.recipe)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeOverride {
    pub layer: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
    pub recipe: NodeRecipe,
}

/// Fixed random projection followed by `σ_K` and `1/√r` scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomFeatureBlock {
    input_dim: usize,
    activation: ActivationKind,
    scale: f64,
    seed: u64,
    /// `r x d`, rows are the `w_j`.
    weights: Matrix,
    offsets: Option<Vec<f64>>,
}

impl RandomFeatureBlock {
    /// Draws `W` with rows `w_j ~ ρ N(0, I)` from the given seed.
    pub fn new(input_dim: usize, features: usize, activation: ActivationKind, scale: f64, seed: u64, with_offsets: bool) -> Result<Self> {
        if input_dim == 0 || features == 0 {
            return Err(Error::Build(format!("random feature block needs positive sizes (d={input_dim}, r={features})")));
        }
        let mut rng = rng::stream(seed, streams::BUILD);
        let weights = rng::normal_matrix(&mut rng, features, input_dim).scale(scale);
        let offsets = with_offsets.then(|| (0..features).map(|_| scale * rng::normal(&mut rng)).collect());
        Ok(Self {
            input_dim,
            activation,
            scale,
            seed,
            weights,
            offsets,
        })
    }

    /// Uses an explicit weight matrix (`r x d`).
    pub fn from_weights(weights: Matrix, activation: ActivationKind) -> Self {
        Self {
            input_dim: weights.cols(),
            activation,
            scale: f64::NAN,
            seed: 0,
            weights,
            offsets: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn features(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn offsets(&self) -> Option<&[f64]> {
        self.offsets.as_deref()
    }

    /// `φ(x)_j = σ_K(xᵀw_j [+ b_j]) / √r` for every row of `x`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim {
            return Err(Error::shape("random feature block", x.shape(), (x.rows(), self.input_dim)));
        }
        let norm = 1.0 / (self.features() as f64).sqrt();
        let mut pre = x.matmul_t(&self.weights)?;
        if let Some(b) = &self.offsets {
            for i in 0..pre.rows() {
                for (v, o) in pre.row_mut(i).iter_mut().zip(b) {
                    *v += o;
                }
            }
        }
        Ok(pre.map(|v| self.activation.apply(v) * norm))
    }

    /// Single-vector feature map.
    pub fn feature_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply(&Matrix::row_vector(x.to_vec()))?.into_data())
    }

    pub fn apply_on_tape<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        let (_, d) = x.shape();
        if d != self.input_dim {
            return Err(Error::shape("random feature block", x.shape(), (0, self.input_dim)));
        }
        let wt = tape.constant(self.weights.transpose());
        let mut pre = x.matmul(wt)?;
        if let Some(b) = &self.offsets {
            pre = pre.add_row(tape.constant(Matrix::row_vector(b.clone())))?;
        }
        Ok(pre.activation(self.activation).scale(1.0 / (self.features() as f64).sqrt()))
    }

    fn checksum(&self) -> String {
        checksum(&[&self.weights])
    }
}

/// `x ↦ K(x, Z) K(Z, Z)^{-1/2}` for a fixed set of inducing points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducingPointBlock {
    kernel: KernelSpec,
    points: Matrix,
    /// Lower-triangular `L⁻¹` where `L Lᵀ = K(Z, Z)`.
    inv_sqrt: Matrix,
}

impl InducingPointBlock {
    pub fn new(kernel: KernelSpec, points: Matrix) -> Result<Self> {
        let kzz = kernel.gram(&points, &points)?;
        let inv_sqrt = chol_inverse_sqrt(&kzz, DEFAULT_JITTER)?;
        Ok(Self { kernel, points, inv_sqrt })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn inv_sqrt(&self) -> &Matrix {
        &self.inv_sqrt
    }

    pub fn features(&self) -> usize {
        self.points.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.points.cols()
    }

    /// Row `i` is `K(x_i, Z) K(Z, Z)^{-1/2}`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape("inducing point block", x.shape(), (x.rows(), self.input_dim())));
        }
        self.kernel.gram(x, &self.points)?.matmul_t(&self.inv_sqrt)
    }

    /// `k(x, x) - ‖φ(x)‖²`, the variance the rank-r basis leaves out.
    pub fn residual_variance(&self, x: &Matrix) -> Result<Vec<f64>> {
        let phi = self.apply(x)?;
        (0..x.rows())
            .map(|i| {
                let kxx = self.kernel.eval(x.row(i), x.row(i))?;
                Ok(kxx - phi.row(i).iter().map(|v| v * v).sum::<f64>())
            })
            .collect()
    }

    pub fn apply_on_tape<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let k = self.kernel.cross_on_tape(x, &self.points)?;
        let tape = x.tape();
        k.matmul(tape.constant(self.inv_sqrt.transpose()))
    }

    fn residual_on_tape<'t>(&self, x: Var<'t>, phi: Var<'t>) -> Result<Var<'t>> {
        let kxx = self.kernel.diag_on_tape(x)?;
        Ok(kxx.sub(phi.square().row_sum())?.relu())
    }
}

/// Applies `ipb_features`; free-function form of [`InducingPointBlock::apply`].
pub fn ipb_features(block: &InducingPointBlock, x: &Matrix) -> Result<Matrix> {
    block.apply(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureStage {
    Random(RandomFeatureBlock),
    Inducing(InducingPointBlock),
}

impl FeatureStage {
    pub fn output_dim(&self) -> usize {
        match self {
            FeatureStage::Random(b) => b.features(),
            FeatureStage::Inducing(b) => b.features(),
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            FeatureStage::Random(b) => b.apply(x),
            FeatureStage::Inducing(b) => b.apply(x),
        }
    }

    fn apply_on_tape<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            FeatureStage::Random(b) => b.apply_on_tape(x),
            FeatureStage::Inducing(b) => b.apply_on_tape(x),
        }
    }
}

/// Linear map `f_k = φᵀ v_k`; its `rows x cols` weight matrix is variational
/// group `group`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionBlock {
    /// Width of the incoming feature vector (without the bias row).
    pub input_width: usize,
    pub output_width: usize,
    pub group: usize,
    pub bias: bool,
}

impl FunctionBlock {
    /// Shape of the weight matrix, bias row included.
    pub fn weight_shape(&self) -> (usize, usize) {
        (self.input_width + usize::from(self.bias), self.output_width)
    }
}

/// Expanded blocks of one skeleton node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeBlocks {
    pub stages: Vec<FeatureStage>,
    pub fb: FunctionBlock,
}

impl NodeBlocks {
    /// Runs feature stages and the FB on an already concatenated input.
    pub fn forward<'t>(&self, input: Var<'t>, weights: Var<'t>, noise: Option<&mut dyn RngCore>, offset_correction: bool) -> Result<Var<'t>> {
        let tape = input.tape();
        let mut h = input;
        for stage in &self.stages {
            h = stage.apply_on_tape(h)?;
        }
        let stage_in = h;
        if self.fb.bias {
            let ones = tape.constant(Matrix::filled(h.shape().0, 1, 1.0));
            h = Var::hcat(&[h, ones])?;
        }
        let (wr, wc) = weights.shape();
        if (wr, wc) != self.fb.weight_shape() {
            return Err(Error::shape("function block weights", (wr, wc), self.fb.weight_shape()));
        }
        let mut f = h.matmul(weights)?;
        if offset_correction {
            if let (Some(rng), Some(FeatureStage::Inducing(ipb))) = (noise, self.stages.last()) {
                // input of the last stage
                let mut pre = input;
                for stage in &self.stages[..self.stages.len() - 1] {
                    pre = stage.apply_on_tape(pre)?;
                }
                let resid = ipb.residual_on_tape(pre, stage_in)?.sqrt();
                let n = f.shape().0;
                let eps = tape.constant(rng::normal_matrix(rng, n, self.fb.output_width));
                let ones = tape.constant(Matrix::filled(1, self.fb.output_width, 1.0));
                f = f.add(resid.matmul(ones)?.mul(eps)?)?;
            }
        }
        Ok(f)
    }
}

/// The expanded network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesNet {
    skeleton: Skeleton,
    policy: BuildPolicy,
    /// `nodes[l - 1][i]` for layer `l >= 1`.
    nodes: Vec<Vec<NodeBlocks>>,
}

/// Per-layer outputs `F^0 … F^L`; `F^0` is the input.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub layers: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.layers.last().expect("at least the input layer")
    }
}

/// Deterministic initial mean for FB group `group`: `N(0, 1/rows)` entries.
pub fn initial_weights(seed: u64, group: usize, rows: usize, cols: usize) -> Matrix {
    let mut r = rng::stream(rng::derive_seed(seed, &[group as u64]), streams::INIT);
    rng::normal_matrix(&mut r, rows, cols).scale(1.0 / (rows as f64).sqrt())
}

/// Expands `skeleton` into a network.
///
/// `data` is required only when some recipe contains an inducing-point
/// stage: inducing points are a uniform random subset of its rows,
/// propagated through the preceding layers with the initial weights.
pub fn build_network(skeleton: &Skeleton, policy: &BuildPolicy, data: Option<&Matrix>) -> Result<BayesNet> {
    for o in &policy.overrides {
        let bad_node = o.node.is_some_and(|i| o.layer >= 1 && o.layer <= skeleton.depth() && i >= skeleton.layer_size(o.layer));
        if o.layer == 0 || o.layer > skeleton.depth() || bad_node {
            return Err(Error::Build(format!("recipe given for nonexistent node (layer {}, node {:?})", o.layer, o.node)));
        }
    }
    let needs_data = (1..=skeleton.depth()).any(|l| {
        (0..skeleton.layer_size(l)).any(|i| policy.recipe_for(l, i).stages.iter().any(|s| matches!(s, StageSpec::Inducing { .. })))
    });
    let probe = if needs_data {
        let x = data.ok_or_else(|| Error::Build("an inducing point block was requested but no inputs were provided to place inducing points".into()))?;
        if x.cols() != skeleton.input_dim() {
            return Err(Error::shape("inducing point data", x.shape(), (x.rows(), skeleton.input_dim())));
        }
        let mut r = rng::stream(policy.seed, streams::INDUCING);
        let perm = rng::permutation(&mut r, x.rows());
        Some(x.select_rows(&perm))
    } else {
        None
    };

    let mut nodes: Vec<Vec<NodeBlocks>> = Vec::with_capacity(skeleton.depth());
    let mut group = 0;
    // probe outputs of the previous layer, per node
    let mut probe_prev: Option<Vec<Matrix>> = probe.as_ref().map(|x| {
        let offs = skeleton.input_offsets();
        skeleton.input_widths().iter().zip(offs).map(|(&w, o)| x.col_range(o, w)).collect()
    });

    for l in 1..=skeleton.depth() {
        let mut layer = Vec::with_capacity(skeleton.layer_size(l));
        let mut probe_layer = Vec::new();
        for i in 0..skeleton.layer_size(l) {
            let recipe = policy.recipe_for(l, i);
            let node = skeleton.node(l, i);
            let mut width = skeleton.fan_in(l, i);
            let probe_in = match &probe_prev {
                Some(prev) => {
                    let parts: Vec<Matrix> = node
                        .inputs
                        .iter()
                        .map(|&j| prev[j].map(|v| skeleton.node_activation(l - 1, j).apply(v)))
                        .collect();
                    let refs: Vec<&Matrix> = parts.iter().collect();
                    Some(Matrix::hcat(&refs)?)
                }
                None => None,
            };
            let mut h = probe_in;
            let mut stages = Vec::with_capacity(recipe.stages.len());
            for (s, spec) in recipe.stages.iter().enumerate() {
                let stage = match spec {
                    StageSpec::Random {
                        features,
                        activation,
                        scale,
                    } => {
                        let rho = scale.unwrap_or(1.0 / (width as f64).sqrt());
                        let seed = rng::derive_seed(policy.seed, &[l as u64, i as u64, s as u64]);
                        FeatureStage::Random(RandomFeatureBlock::new(
                            width,
                            *features,
                            *activation,
                            rho,
                            seed,
                            policy.bias == BiasMode::RandomInRb,
                        )?)
                    }
                    StageSpec::Inducing { points, kernel } => {
                        let x = h.as_ref().expect("probe data present when inducing stages exist");
                        if *points == 0 || *points > x.rows() {
                            return Err(Error::Build(format!(
                                "node ({l}, {i}) asks for {points} inducing points but {} inputs are available",
                                x.rows()
                            )));
                        }
                        if kernel.input_dim().is_some_and(|d| d != width) {
                            return Err(Error::Build(format!("kernel of node ({l}, {i}) expects another input width than {width}")));
                        }
                        let z = x.select_rows(&(0..*points).collect::<Vec<_>>());
                        FeatureStage::Inducing(InducingPointBlock::new(kernel.clone(), z)?)
                    }
                };
                if let Some(x) = &h {
                    h = Some(stage.apply(x)?);
                }
                width = stage.output_dim();
                stages.push(stage);
            }
            let fb = FunctionBlock {
                input_width: width,
                output_width: node.width,
                group,
                bias: policy.bias == BiasMode::TrainableInFb,
            };
            if let Some(x) = h {
                let (r, c) = fb.weight_shape();
                let v = initial_weights(policy.seed, group, r, c);
                let x = if fb.bias {
                    Matrix::hcat(&[&x, &Matrix::filled(x.rows(), 1, 1.0)])?
                } else {
                    x
                };
                probe_layer.push(x.matmul(&v)?);
            }
            group += 1;
            layer.push(NodeBlocks { stages, fb });
        }
        if probe_prev.is_some() {
            probe_prev = Some(probe_layer);
        }
        nodes.push(layer);
    }
    Ok(BayesNet {
        skeleton: skeleton.clone(),
        policy: policy.clone(),
        nodes,
    })
}

impl BayesNet {
    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn policy(&self) -> &BuildPolicy {
        &self.policy
    }

    pub fn seed(&self) -> u64 {
        self.policy.seed
    }

    pub fn node(&self, l: usize, i: usize) -> &NodeBlocks {
        &self.nodes[l - 1][i]
    }

    pub fn input_dim(&self) -> usize {
        self.skeleton.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.skeleton.output_count()
    }

    /// All function blocks in group order (layer by layer, node by node).
    pub fn function_blocks(&self) -> Vec<FunctionBlock> {
        self.nodes.iter().flatten().map(|n| n.fb).collect()
    }

    /// `(layer, node)` owning each FB group.
    pub fn group_owners(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(li, layer)| (0..layer.len()).map(move |i| (li + 1, i)))
            .collect()
    }

    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.function_blocks().iter().map(FunctionBlock::weight_shape).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight_shapes().iter().map(|(r, c)| r * c).sum()
    }

    pub fn stages(&self) -> impl Iterator<Item = ((usize, usize), &FeatureStage)> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(li, layer)| layer.iter().enumerate().flat_map(move |(i, n)| n.stages.iter().map(move |s| ((li + 1, i), s))))
    }

    /// Hex SHA-256 over all RB weights and over all inducing points.
    pub fn checksums(&self) -> (String, String) {
        let mut w = Vec::new();
        let mut z = Vec::new();
        for (_, s) in self.stages() {
            match s {
                FeatureStage::Random(b) => w.push(b.checksum()),
                FeatureStage::Inducing(b) => z.push(checksum(&[&b.points])),
            }
        }
        let join = |v: Vec<String>| {
            let mut h = Sha256::new();
            for s in v {
                h.update(s.as_bytes());
            }
            hex::encode(h.finalize())
        };
        (join(w), join(z))
    }

    /// Inducing points of every IPB stage, in stage order.
    pub fn inducing_points(&self) -> Vec<Matrix> {
        self.stages()
            .filter_map(|(_, s)| match s {
                FeatureStage::Inducing(b) => Some(b.points.clone()),
                _ => None,
            })
            .collect()
    }

    /// Rebuilds a network from its skeleton and policy, reusing stored
    /// inducing points (no data needed).
    pub fn rebuild(skeleton: &Skeleton, policy: &BuildPolicy, inducing: &[Matrix]) -> Result<BayesNet> {
        let mut stripped = policy.clone();
        let to_plain = |r: &NodeRecipe| NodeRecipe {
            stages: r
                .stages
                .iter()
                .map(|s| match s {
                    StageSpec::Inducing { points, .. } => StageSpec::Random {
                        features: *points,
                        activation: ActivationKind::Identity,
                        scale: Some(1.0),
                    },
                    other => other.clone(),
                })
                .collect(),
        };
        stripped.default = to_plain(&policy.default);
        for o in &mut stripped.overrides {
            o.recipe = to_plain(&o.recipe);
        }
        let mut net = build_network(skeleton, &stripped, None)?;
        let mut z_iter = inducing.iter();
        for (li, layer) in net.nodes.iter_mut().enumerate() {
            for (i, node) in layer.iter_mut().enumerate() {
                let recipe = policy.recipe_for(li + 1, i);
                for (stage, spec) in node.stages.iter_mut().zip(&recipe.stages) {
                    if let StageSpec::Inducing { kernel, .. } = spec {
                        let z = z_iter
                            .next()
                            .ok_or_else(|| Error::Build("fewer stored inducing sets than inducing stages".into()))?;
                        *stage = FeatureStage::Inducing(InducingPointBlock::new(kernel.clone(), z.clone())?);
                    }
                }
            }
        }
        net.policy = policy.clone();
        Ok(net)
    }

    /// Forward pass on `tape`. Returns `F^0 … F^L`.
    ///
    /// `weights` holds one sampled matrix per FB group. `noise` is only
    /// consumed when the policy enables the IPB offset correction.
    pub fn forward_tape<'t>(&self, x: Var<'t>, weights: &[Var<'t>], noise: Option<&mut dyn RngCore>) -> Result<Vec<Var<'t>>> {
        let nodes = self.forward_nodes(x, weights, noise, None)?;
        let mut layers = vec![x];
        for layer in nodes {
            let parts: Vec<Var<'t>> = layer.into_iter().flatten().collect();
            layers.push(Var::hcat(&parts)?);
        }
        Ok(layers)
    }

    /// Per-node outputs `out[l - 1][i]`. With a mask only nodes with
    /// `mask[l - 1][i]` set are evaluated; the rest are `None`.
    pub(crate) fn forward_nodes<'t>(
        &self,
        x: Var<'t>,
        weights: &[Var<'t>],
        mut noise: Option<&mut dyn RngCore>,
        mask: Option<&[Vec<bool>]>,
    ) -> Result<Vec<Vec<Option<Var<'t>>>>> {
        let s = &self.skeleton;
        if x.shape().1 != s.input_dim() {
            return Err(Error::shape("forward input", x.shape(), (x.shape().0, s.input_dim())));
        }
        let n_groups: usize = self.nodes.iter().map(Vec::len).sum();
        if weights.len() != n_groups {
            return Err(Error::InvalidArgument(format!("expected {n_groups} weight groups, got {}", weights.len())));
        }
        let offs = s.input_offsets();
        let mut prev: Vec<Option<Var<'t>>> = s
            .input_widths()
            .iter()
            .zip(&offs)
            .map(|(&w, &o)| x.col_range(o, w).map(Some))
            .collect::<Result<_>>()?;
        let mut all = Vec::with_capacity(s.depth());
        for l in 1..=s.depth() {
            let mut cur: Vec<Option<Var<'t>>> = Vec::with_capacity(s.layer_size(l));
            for (i, node) in self.nodes[l - 1].iter().enumerate() {
                if mask.is_some_and(|m| !m[l - 1][i]) {
                    cur.push(None);
                    continue;
                }
                let parts: Vec<Var<'t>> = s
                    .node(l, i)
                    .inputs
                    .iter()
                    .map(|&j| {
                        prev[j]
                            .map(|v| v.activation(s.node_activation(l - 1, j)))
                            .ok_or_else(|| Error::InvalidArgument(format!("node ({l}, {i}) reads a masked node ({}, {j})", l - 1)))
                    })
                    .collect::<Result<_>>()?;
                let input = Var::hcat(&parts)?;
                let rng: Option<&mut dyn RngCore> = match noise.as_mut() {
                    Some(r) => Some(&mut **r),
                    None => None,
                };
                cur.push(Some(node.forward(input, weights[node.fb.group], rng, self.policy.offset_correction)?));
            }
            all.push(cur.clone());
            prev = cur;
        }
        Ok(all)
    }

    /// Convenience forward pass without gradients.
    pub fn forward(&self, x: &Matrix, weights: &[Matrix]) -> Result<ForwardTrace> {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv: Vec<Var<'_>> = weights.iter().map(|w| tape.constant(w.clone())).collect();
        let layers = self.forward_tape(xv, &wv, None)?;
        Ok(ForwardTrace {
            layers: layers.iter().map(Var::to_matrix).collect(),
        })
    }

    /// Weights equal to the deterministic initial means.
    pub fn initial_weights(&self) -> Vec<Matrix> {
        self.weight_shapes()
            .iter()
            .enumerate()
            .map(|(g, &(r, c))| initial_weights(self.policy.seed, g, r, c))
            .collect()
    }
}

fn checksum(ms: &[&Matrix]) -> String {
    let mut h = Sha256::new();
    for m in ms {
        h.update((m.rows() as u64).to_le_bytes());
        h.update((m.cols() as u64).to_le_bytes());
        for v in m.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Preset;

    fn two_layer_skeleton() -> Skeleton {
        Skeleton::parse("layers = [1, 1, 1]\nwidths = [4, 2, 1]\nactivations = [\"none\", \"relu\", \"identity\"]\n").unwrap()
    }

    #[test]
    fn expanded_widths_follow_recipes() {
        let net = build_network(&two_layer_skeleton(), &BuildPolicy::uniform(NodeRecipe::random(3, ActivationKind::Relu), 1), None).unwrap();
        // 4 → RB 3 → FB 2 → RB 3 → FB 1
        let n1 = net.node(1, 0);
        let n2 = net.node(2, 0);
        assert_eq!(n1.stages[0].output_dim(), 3);
        assert_eq!(n1.fb.weight_shape(), (3, 2));
        assert_eq!(n2.stages[0].output_dim(), 3);
        assert_eq!(n2.fb.weight_shape(), (3, 1));
        match &n1.stages[0] {
            FeatureStage::Random(b) => assert_eq!(b.input_dim(), 4),
            _ => unreachable!(),
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = build_network(&two_layer_skeleton(), &BuildPolicy::uniform(NodeRecipe::random(3, ActivationKind::Relu), 1), None).unwrap();
        let x = Matrix::from_fn(5, 4, |i, j| (i + j) as f64 * 0.1);
        let v: Vec<Matrix> = net.weight_shapes().iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        let out = net.forward(&x, &v).unwrap();
        assert_eq!(out.output(), &Matrix::zeros(5, 1));
    }

    #[test]
    fn fb_only_identity_extracts_features() {
        let s = Skeleton::parse("layers = [1, 1]\nwidths = [3, 1]\n").unwrap();
        let net = build_network(&s, &BuildPolicy::uniform(NodeRecipe::plain(), 0), None).unwrap();
        let x = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let v = Matrix::column(vec![0.0, 1.0, 0.0]);
        let out = net.forward(&x, &[v]).unwrap();
        assert_eq!(out.output().col(0), x.col(1));
    }

    #[test]
    fn same_seed_same_blocks() {
        let p = BuildPolicy::uniform(NodeRecipe::random(5, ActivationKind::Tanh).then_random(4, ActivationKind::Relu), 9);
        let a = build_network(&two_layer_skeleton(), &p, None).unwrap();
        let b = build_network(&two_layer_skeleton(), &p, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksums(), b.checksums());
        let c = build_network(&two_layer_skeleton(), &BuildPolicy { seed: 10, ..p }, None).unwrap();
        assert_ne!(a.checksums().0, c.checksums().0);
    }

    #[test]
    fn ipb_without_data_is_an_error() {
        let p = BuildPolicy::uniform(NodeRecipe::inducing(3, KernelSpec::Rbf { lengthscale: 1.0 }), 0);
        assert!(matches!(build_network(&two_layer_skeleton(), &p, None), Err(Error::Build(_))));
    }

    #[test]
    fn too_many_inducing_points_is_an_error() {
        let p = BuildPolicy::uniform(NodeRecipe::inducing(30, KernelSpec::Rbf { lengthscale: 1.0 }), 0);
        let x = Matrix::from_fn(10, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        assert!(build_network(&two_layer_skeleton(), &p, Some(&x)).is_err());
    }

    #[test]
    fn unknown_node_override_is_an_error() {
        let p = BuildPolicy::uniform(NodeRecipe::plain(), 0).with_node(3, 0, NodeRecipe::plain());
        assert!(build_network(&two_layer_skeleton(), &p, None).is_err());
    }

    #[test]
    fn scalar_linear_ipb() {
        let ipb = InducingPointBlock::new(KernelSpec::Linear, Matrix::scalar(2.0)).unwrap();
        let phi = ipb.apply(&Matrix::scalar(3.0)).unwrap();
        assert!((phi.item() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ipb_at_inducing_points_is_a_square_root() {
        let z = Matrix::from_fn(4, 2, |i, j| (i as f64 * 0.7 + j as f64 * 0.3).sin());
        let ipb = InducingPointBlock::new(KernelSpec::Rbf { lengthscale: 0.8 }, z.clone()).unwrap();
        let phi = ipb.apply(&z).unwrap();
        let kzz = ipb.kernel().gram(&z, &z).unwrap();
        assert!(phi.matmul_t(&phi).unwrap().sub(&kzz).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn trainable_bias_adds_a_row() {
        let s = Preset::additive_full(3, 2, vec![2], ActivationKind::Relu).build().unwrap();
        let p = BuildPolicy::uniform(NodeRecipe::plain(), 0).with_bias(BiasMode::TrainableInFb);
        let net = build_network(&s, &p, None).unwrap();
        assert_eq!(net.node(1, 0).fb.weight_shape(), (4, 2));
    }

    #[test]
    fn forward_rejects_wrong_weight_shape() {
        let net = build_network(&two_layer_skeleton(), &BuildPolicy::uniform(NodeRecipe::plain(), 0), None).unwrap();
        let x = Matrix::zeros(2, 4);
        let v = vec![Matrix::zeros(4, 2), Matrix::zeros(3, 1)];
        assert!(matches!(net.forward(&x, &v), Err(Error::Shape { .. })));
    }
}
