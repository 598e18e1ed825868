//! Additive networks `f = Σ_j g_j` and post-training ANOVA analysis.
//!
//! The interaction component of a feature subset `T` is
//! `I_T = Π_{i∈T} (I − E_i) Π_{j∉T} E_j f`, where `E_j` averages feature `j`
//! over a background sample. For an additive network only the subnets whose
//! input cluster contains `T` contribute, and each of them only needs the
//! averages over its own cluster.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::bench::Dataset;
use crate::blocks::{BayesNet, BiasMode, BuildPolicy, NodeRecipe, StageSpec};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::skeleton::{Branch, Preset, Skeleton};
use crate::tensor::{Matrix, Tape, Var};
use crate::vi::{sample_weights, FamilyKind, GroupSpec, Likelihood, PosteriorPlan, Prior, Scaling, TraceRow, TrainConfig, TrainedModel};

/// Default cap on the number of candidate subsets.
pub const DEFAULT_BUDGET_CAP: u128 = 100_000;

/// Rows per batched forward pass during ANOVA evaluation.
const CHUNK_ROWS: usize = 1 << 15;
/// Largest background grid evaluated for a single point.
const MAX_GRID: usize = 1 << 22;

/// Uncertainty scheme of an AddNN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Two-point mixture posteriors on the upper layers.
    McDropout,
    /// One random feature block before each upper FB, Gaussian posteriors.
    Rf,
    /// Point estimates everywhere except a Gaussian branch output layer.
    Dkl,
    /// Two stacked random feature blocks before each upper FB.
    Drf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::McDropout, Variant::Rf, Variant::Dkl, Variant::Drf];

    pub fn name(self) -> &'static str {
        match self {
            Variant::McDropout => "mcdropout",
            Variant::Rf => "rf",
            Variant::Dkl => "dkl",
            Variant::Drf => "drf",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcdropout" | "mc-dropout" | "dropout" => Ok(Variant::McDropout),
            "rf" => Ok(Variant::Rf),
            "dkl" => Ok(Variant::Dkl),
            "drf" => Ok(Variant::Drf),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}` (expected mcdropout, rf, dkl or drf)"))),
        }
    }
}

/// Shape and priors of an additive network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddNnConfig {
    pub subnets: usize,
    /// Hidden widths of every subnet.
    pub hidden: Vec<usize>,
    pub activation: ActivationKind,
    pub variant: Variant,
    /// Group-Lasso strength on the first layer, per training example.
    pub lambda: f64,
    /// Keep probability of the dropout variant.
    pub keep: f64,
    /// Random features per block in the rf and drf variants.
    pub rf_features: usize,
    pub seed: u64,
}

impl Default for AddNnConfig {
    fn default() -> Self {
        Self {
            subnets: 10,
            hidden: vec![5, 20],
            activation: ActivationKind::Relu,
            variant: Variant::McDropout,
            lambda: 0.01,
            keep: 0.9,
            rf_features: 16,
            seed: 0,
        }
    }
}

impl AddNnConfig {
    fn validate(&self) -> Result<()> {
        if self.subnets == 0 || self.hidden.is_empty() {
            return Err(Error::InvalidArgument("an AddNN needs at least one subnet and one hidden layer".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("group-Lasso strength {} must be non-negative", self.lambda)));
        }
        if !(self.keep > 0.0 && self.keep <= 1.0) {
            return Err(Error::InvalidArgument(format!("keep probability {} must lie in (0, 1]", self.keep)));
        }
        if self.rf_features == 0 {
            return Err(Error::InvalidArgument("rf_features must be positive".into()));
        }
        Ok(())
    }

    /// Index of the final sum layer.
    pub fn depth(&self) -> usize {
        self.hidden.len() + 2
    }

    pub fn skeleton(&self, input_dim: usize) -> Result<Skeleton> {
        self.validate()?;
        Preset::additive_full(input_dim, self.subnets, self.hidden.clone(), self.activation).build()
    }

    pub fn policy(&self) -> BuildPolicy {
        let mut policy = BuildPolicy::uniform(NodeRecipe::plain(), self.seed).with_bias(BiasMode::TrainableInFb);
        // ρ = √2 keeps ‖φ(h)‖ ≈ ‖h‖ for ReLU features, so stacked blocks
        // do not shrink the signal
        let block = StageSpec::Random {
            features: self.rf_features,
            activation: self.activation,
            scale: Some(std::f64::consts::SQRT_2),
        };
        let recipe = match self.variant {
            Variant::Rf => Some(NodeRecipe { stages: vec![block] }),
            Variant::Drf => Some(NodeRecipe {
                stages: vec![block.clone(), block],
            }),
            Variant::McDropout | Variant::Dkl => None,
        };
        if let Some(r) = recipe {
            for l in 2..self.depth() {
                policy = policy.with_layer(l, r.clone());
            }
        }
        policy
    }

    /// Posterior plan for `n_train` examples (the group-Lasso term is
    /// scaled to the full data log-likelihood).
    pub fn plan(&self, n_train: usize) -> PosteriorPlan {
        let d = self.depth();
        let normal = |family| GroupSpec::new(family, Prior::StandardNormal);
        let upper = match self.variant {
            Variant::McDropout => FamilyKind::Mixture { keep: self.keep },
            Variant::Rf | Variant::Drf => FamilyKind::gaussian(),
            Variant::Dkl => FamilyKind::PointMass,
        };
        let mut plan = PosteriorPlan::uniform(normal(upper))
            .with_layer(
                1,
                GroupSpec::new(
                    FamilyKind::PointMass,
                    Prior::GroupLassoLaplace {
                        lambda: self.lambda * n_train as f64,
                    },
                ),
            )
            .with_layer(d, normal(FamilyKind::PointMass));
        if self.variant == Variant::Dkl && d - 1 > 1 {
            plan = plan.with_layer(d - 1, normal(FamilyKind::gaussian()));
        }
        plan
    }

    /// Training schedule that converges on the synthetic benchmarks:
    /// 15000 Adam steps, halving the learning rate every 5000.
    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            steps: 15_000,
            decay_steps: 5_000,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    /// Builds and trains the network on `data` (standardized internally).
    pub fn fit(&self, data: &Dataset, train: &TrainConfig) -> Result<(TrainedModel, Vec<TraceRow>)> {
        let skeleton = self.skeleton(data.dim())?;
        TrainedModel::fit(
            &skeleton,
            &self.policy(),
            &self.plan(data.len()),
            Likelihood::default(),
            data,
            train,
            Scaling::default(),
        )
    }
}

/// Features (0-based) a subnet depends on after thresholding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputCluster {
    pub subnet: usize,
    pub features: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Threshold {
    Absolute(f64),
    /// Fraction of the largest first-layer group norm.
    RelativeToMax(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::RelativeToMax(0.05)
    }
}

/// A network read as a sum of branch outputs plus a constant.
pub struct AdditiveView<'a> {
    net: &'a BayesNet,
    branches: Vec<Branch>,
    /// Per branch, per layer-1 node: weight group and the feature of each row.
    first: Vec<Vec<(usize, Vec<usize>)>>,
    /// Per branch: `(node, first weight row, width)` of its output nodes.
    outputs: Vec<Vec<(usize, usize, usize)>>,
    out_group: usize,
    out_bias_row: Option<usize>,
    masks: Vec<Vec<Vec<bool>>>,
}

impl<'a> AdditiveView<'a> {
    pub fn new(net: &'a BayesNet) -> Result<Self> {
        let s = net.skeleton();
        let not_additive = |why: &str| Error::Unsupported(format!("ANOVA needs an additive network: {why}"));
        let branches = s.additive_branches().ok_or_else(|| not_additive("skeleton has no branch structure"))?;
        if s.input_widths().iter().any(|&w| w != 1) {
            return Err(not_additive("every input node must be a single feature"));
        }
        let depth = s.depth();
        let last = net.node(depth, 0);
        if !last.stages.is_empty() {
            return Err(not_additive("the sum node has feature stages"));
        }
        let mut offsets = Vec::new();
        let mut off = 0;
        for &j in &s.node(depth, 0).inputs {
            offsets.push((j, off));
            off += s.node_width(depth - 1, j);
        }
        let mut first = Vec::new();
        let mut outputs = Vec::new();
        let mut masks = Vec::new();
        for br in &branches {
            let mut f = Vec::new();
            for &(l, i) in br.nodes.iter().filter(|(l, _)| *l == 1) {
                let node = net.node(l, i);
                if !node.stages.is_empty() {
                    return Err(not_additive("first-layer nodes must be plain function blocks"));
                }
                f.push((node.fb.group, s.node(1, i).inputs.clone()));
            }
            first.push(f);
            outputs.push(
                offsets
                    .iter()
                    .filter(|(j, _)| br.outputs.contains(j))
                    .map(|&(j, o)| (j, o, s.node_width(depth - 1, j)))
                    .collect(),
            );
            let mut mask: Vec<Vec<bool>> = (1..=depth).map(|l| vec![false; s.layer_size(l)]).collect();
            for &(l, i) in &br.nodes {
                mask[l - 1][i] = true;
            }
            masks.push(mask);
        }
        Ok(Self {
            net,
            branches,
            first,
            outputs,
            out_group: last.fb.group,
            out_bias_row: last.fb.bias.then_some(last.fb.weight_shape().0 - 1),
            masks,
        })
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// `norms[b][i]`: ℓ2 norm of the first-layer weights leaving feature
    /// `i` into branch `b`.
    pub fn feature_norms(&self, weights: &[Matrix]) -> Vec<Vec<f64>> {
        self.first
            .iter()
            .map(|nodes| {
                let mut sq = vec![0.0; self.input_dim()];
                for (g, feats) in nodes {
                    for (row, &i) in feats.iter().enumerate() {
                        sq[i] += weights[*g].row(row).iter().map(|v| v * v).sum::<f64>();
                    }
                }
                sq.into_iter().map(f64::sqrt).collect()
            })
            .collect()
    }

    /// Zeroes first-layer rows of features outside each branch's cluster.
    pub fn prune(&self, weights: &[Matrix], clusters: &[InputCluster]) -> Vec<Matrix> {
        let mut w = weights.to_vec();
        for c in clusters {
            for (g, feats) in &self.first[c.subnet] {
                for (row, i) in feats.iter().enumerate() {
                    if !c.features.contains(i) {
                        w[*g].row_mut(row).iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        }
        w
    }

    /// Contribution of branch `b` to the output at the rows of `x`.
    pub fn branch_values(&self, weights: &[Matrix], b: usize, x: &Matrix) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv: Vec<Var<'_>> = weights.iter().map(|w| tape.constant(w.clone())).collect();
        let nodes = self.net.forward_nodes(xv, &wv, None, Some(&self.masks[b]))?;
        let out_w = &weights[self.out_group];
        let top = &nodes[nodes.len() - 2];
        let mut acc = vec![0.0; x.rows()];
        for &(j, off, width) in &self.outputs[b] {
            let f = top[j].expect("branch output is evaluated").to_matrix();
            for (r, a) in acc.iter_mut().enumerate() {
                for c in 0..width {
                    *a += f.get(r, c) * out_w.get(off + c, 0);
                }
            }
        }
        Ok(acc)
    }

    pub fn constant(&self, weights: &[Matrix]) -> f64 {
        self.out_bias_row.map_or(0.0, |r| weights[self.out_group].get(r, 0))
    }

    /// Branch functions restricted to their clusters, plus the constant
    /// term. `weights` should already be pruned to the clusters.
    pub fn parts<'w>(&'w self, weights: &'w [Matrix], clusters: &[InputCluster]) -> Vec<AdditivePart<'w>> {
        let mut parts: Vec<AdditivePart<'w>> = clusters
            .iter()
            .filter(|c| !c.features.is_empty())
            .map(|c| {
                let b = c.subnet;
                AdditivePart {
                    support: c.features.clone(),
                    f: Box::new(move |x: &Matrix| self.branch_values(weights, b, x)),
                }
            })
            .collect();
        let c = self.constant(weights);
        parts.push(AdditivePart {
            support: Vec::new(),
            f: Box::new(move |x: &Matrix| Ok(vec![c; x.rows()])),
        });
        parts
    }
}

/// Input clusters from first-layer weights: feature `i` belongs to subnet
/// `j` when its weight group norm exceeds the threshold.
pub fn extract_clusters(net: &BayesNet, weights: &[Matrix], threshold: Threshold) -> Result<Vec<InputCluster>> {
    let view = AdditiveView::new(net)?;
    let norms = view.feature_norms(weights);
    let cut = match threshold {
        Threshold::Absolute(t) => t,
        Threshold::RelativeToMax(frac) => frac * norms.iter().flatten().fold(0.0f64, |m, &v| m.max(v)),
    };
    Ok(norms
        .iter()
        .enumerate()
        .map(|(subnet, n)| InputCluster {
            subnet,
            features: (0..n.len()).filter(|&i| n[i] > cut).collect(),
        })
        .collect())
}

/// Clusters of a trained model, read from the posterior means.
pub fn model_clusters(model: &TrainedModel, threshold: Threshold) -> Result<Vec<InputCluster>> {
    extract_clusters(&model.net, &model.q.means(), threshold)
}

/// Number of distinct nonempty candidate subsets. Fails before enumerating
/// when `Σ_j 2^{|T_j|}` exceeds `cap`.
pub fn enumeration_budget(clusters: &[InputCluster], cap: u128) -> Result<u128> {
    Ok(candidate_subsets(clusters, cap)?.len() as u128)
}

/// All distinct nonempty subsets of the clusters, ordered by size and then
/// lexicographically.
pub fn candidate_subsets(clusters: &[InputCluster], cap: u128) -> Result<Vec<Vec<usize>>> {
    let budget = clusters
        .iter()
        .map(|c| if c.features.len() >= 127 { u128::MAX } else { 1u128 << c.features.len() })
        .fold(0u128, u128::saturating_add);
    if budget > cap {
        return Err(Error::Budget { budget, cap });
    }
    let mut set = BTreeSet::new();
    for c in clusters {
        for s in subsets_of(&c.features).into_iter().filter(|s| !s.is_empty()) {
            set.insert(s);
        }
    }
    let mut out: Vec<Vec<usize>> = set.into_iter().collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}

fn subsets_of(items: &[usize]) -> Vec<Vec<usize>> {
    (0u64..1 << items.len())
        .map(|mask| items.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &v)| v).collect())
        .collect()
}

/// A function of the full input that only depends on `support`.
pub struct AdditivePart<'a> {
    pub support: Vec<usize>,
    #[allow(clippy::type_complexity)]
    pub f: Box<dyn Fn(&Matrix) -> Result<Vec<f64>> + Sync + 'a>,
}

/// `E_B f(x_A, ·)`: averages `f` over the product grid of background values
/// of the features in `support \ a`, for every row of `eval`.
fn marginal(part: &AdditivePart<'_>, a: &[usize], eval: &Matrix, background: &Matrix) -> Result<Vec<f64>> {
    let p = eval.cols();
    let b: Vec<usize> = part.support.iter().copied().filter(|j| !a.contains(j)).collect();
    let nb = background.rows();
    let combos = u32::try_from(b.len())
        .ok()
        .and_then(|e| nb.checked_pow(e))
        .filter(|&c| c <= MAX_GRID)
        .ok_or_else(|| Error::InvalidArgument(format!("background grid of {nb}^{} points is too large; use a smaller background sample", b.len())))?;
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut uniq = Vec::new();
    let which: Vec<usize> = (0..eval.rows())
        .map(|r| {
            let key: Vec<u64> = a.iter().map(|&j| eval.get(r, j).to_bits()).collect();
            *index.entry(key).or_insert_with(|| {
                uniq.push(r);
                uniq.len() - 1
            })
        })
        .collect();
    let per_chunk = (CHUNK_ROWS / combos).max(1);
    let mut vals = Vec::with_capacity(uniq.len());
    for chunk in uniq.chunks(per_chunk) {
        let mut x = Matrix::zeros(chunk.len() * combos, p);
        for (u, &r) in chunk.iter().enumerate() {
            for c in 0..combos {
                let row = x.row_mut(u * combos + c);
                for &j in a {
                    row[j] = eval.get(r, j);
                }
                let mut rem = c;
                for &j in &b {
                    row[j] = background.get(rem % nb, j);
                    rem /= nb;
                }
            }
        }
        let y = (part.f)(&x)?;
        vals.extend(y.chunks(combos).map(|block| block.iter().sum::<f64>() / combos as f64));
    }
    Ok(which.into_iter().map(|u| vals[u]).collect())
}

/// `I_T` at the rows of `eval` for every subset in `subsets`, for the sum
/// of `parts`. A part contributes to `T` only when `T ⊆ support`, and its
/// averages are shared across subsets.
pub fn additive_components(parts: &[AdditivePart<'_>], subsets: &[Vec<usize>], eval: &Matrix, background: &Matrix) -> Result<Vec<Vec<f64>>> {
    if background.rows() == 0 {
        return Err(Error::InvalidArgument("empty background sample".into()));
    }
    if background.cols() != eval.cols() {
        return Err(Error::shape("background sample", background.shape(), eval.shape()));
    }
    let m = eval.rows();
    let mut out = vec![vec![0.0; m]; subsets.len()];
    for part in parts {
        let mut cache: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
        for (t, acc) in subsets.iter().zip(out.iter_mut()) {
            if !t.iter().all(|i| part.support.contains(i)) {
                continue;
            }
            for a in subsets_of(t) {
                if !cache.contains_key(&a) {
                    let h = marginal(part, &a, eval, background)?;
                    cache.insert(a.clone(), h);
                }
                let sign = if (t.len() - a.len()) % 2 == 0 { 1.0 } else { -1.0 };
                for (o, h) in acc.iter_mut().zip(&cache[&a]) {
                    *o += sign * h;
                }
            }
        }
    }
    Ok(out)
}

fn check_subset(t: &[usize], p: usize) -> Result<Vec<usize>> {
    let mut s = t.to_vec();
    s.sort_unstable();
    s.dedup();
    if let Some(&bad) = s.iter().find(|&&i| i >= p) {
        return Err(Error::InvalidArgument(format!("feature {bad} out of range for {p} inputs")));
    }
    Ok(s)
}

/// `I_T` of the network output at the rows of `eval`, with expectations
/// over the rows of `background` (inputs in network units). Without
/// `force`, `T` must lie inside some cluster.
pub fn anova_component(
    net: &BayesNet,
    weights: &[Matrix],
    clusters: &[InputCluster],
    t: &[usize],
    eval: &Matrix,
    background: &Matrix,
    force: bool,
) -> Result<Vec<f64>> {
    let view = AdditiveView::new(net)?;
    let t = check_subset(t, view.input_dim())?;
    if !force && !t.is_empty() && !clusters.iter().any(|c| t.iter().all(|i| c.features.contains(i))) {
        return Err(Error::OutsideClusters { subset: t });
    }
    let pruned = view.prune(weights, clusters);
    let parts = view.parts(&pruned, clusters);
    Ok(additive_components(&parts, &[t], eval, background)?.remove(0))
}

/// Points over which component norms are taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPoints {
    /// Every point of the product grid of the background sample. Each
    /// branch is evaluated once on its grid and all averages are exact
    /// tensor marginals.
    #[default]
    ProductGrid,
    /// A sample of training points, each averaged separately over the
    /// background grid. Much slower for clusters of more than two features.
    TrainingPoints,
}

/// Settings of [`interaction_strengths`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionConfig {
    pub mc_draws: usize,
    pub top_k: Option<usize>,
    /// Background rows per expectation; `None` uses all training points.
    /// Reduced further when a branch grid would exceed `grid_limit`.
    pub background: Option<usize>,
    pub norm_points: NormPoints,
    /// Training points sampled in [`NormPoints::TrainingPoints`] mode.
    pub eval_points: Option<usize>,
    /// Replace the averages by one reference sample (training-point mode).
    pub single_baseline: bool,
    /// Quantile grid size of pair heatmaps; 0 disables them.
    pub heatmap_grid: usize,
    /// Heatmaps are produced for this many of the strongest pairs.
    pub heatmap_pairs: usize,
    /// Largest number of network evaluations per branch grid.
    pub grid_limit: usize,
    pub budget_cap: u64,
    pub seed: u64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            mc_draws: 50,
            top_k: None,
            background: Some(16),
            norm_points: NormPoints::ProductGrid,
            eval_points: Some(500),
            single_baseline: false,
            heatmap_grid: 50,
            heatmap_pairs: 3,
            grid_limit: 1 << 20,
            budget_cap: DEFAULT_BUDGET_CAP as u64,
            seed: 0,
        }
    }
}

/// Mean and std of a pair component on a quantile grid, in target units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub features: (usize, usize),
    /// Grid values of the two features in original units.
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// `mean[(a, b)]` at `(x1[a], x2[b])`.
    pub mean: Matrix,
    pub std: Matrix,
}

impl Heatmap {
    /// `heatmap_<i>_<j>.csv` with 1-based feature numbers.
    pub fn file_name(&self) -> String {
        format!("heatmap_{}_{}.csv", self.features.0 + 1, self.features.1 + 1)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x1_quantile", "x2_quantile", "mean", "std"])?;
        for (a, &u) in self.x1.iter().enumerate() {
            for (b, &v) in self.x2.iter().enumerate() {
                w.write_record([u, v, self.mean.get(a, b), self.std.get(a, b)].map(|x| x.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEntry {
    /// 0-based features.
    pub subset: Vec<usize>,
    pub strength: f64,
    pub strength_std: f64,
    pub grid: Option<Heatmap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    pub feature_names: Vec<String>,
    pub clusters: Vec<InputCluster>,
    /// Descending strength, ties in lexicographic subset order.
    pub entries: Vec<InteractionEntry>,
}

impl InteractionReport {
    pub fn get(&self, subset: &[usize]) -> Option<&InteractionEntry> {
        self.entries.iter().find(|e| e.subset == subset)
    }

    /// Strength of `subset`, zero when it is not a candidate.
    pub fn strength(&self, subset: &[usize]) -> f64 {
        self.get(subset).map_or(0.0, |e| e.strength)
    }

    pub fn ranking(&self) -> Vec<Vec<usize>> {
        self.entries.iter().map(|e| e.subset.clone()).collect()
    }

    pub fn label(&self, subset: &[usize]) -> String {
        subset.iter().map(|&i| self.feature_names.get(i).cloned().unwrap_or_else(|| format!("x{}", i + 1))).collect::<Vec<_>>().join(":")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "subset", "order", "strength", "strength_std"])?;
        for (k, e) in self.entries.iter().enumerate() {
            w.write_record([
                (k + 1).to_string(),
                self.label(&e.subset),
                e.subset.len().to_string(),
                e.strength.to_string(),
                e.strength_std.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn heatmaps(&self) -> impl Iterator<Item = &Heatmap> {
        self.entries.iter().filter_map(|e| e.grid.as_ref())
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn quantiles(mut v: Vec<f64>, g: usize) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    (0..g)
        .map(|k| {
            let pos = (k as f64 + 0.5) / g as f64 * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(v.len() - 1);
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        })
        .collect()
}

/// Tensor over a grid with per-axis lengths `dims`; axis `k` has stride
/// `dims[0] ⋯ dims[k-1]`.
#[derive(Clone, Debug)]
struct GridTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl GridTensor {
    fn digits(&self, mut idx: usize, out: &mut [usize]) {
        for (k, &d) in self.dims.iter().enumerate() {
            out[k] = idx % d;
            idx /= d;
        }
    }

    /// Averages out axis `k`.
    fn mean_axis(&self, k: usize) -> GridTensor {
        let d = self.dims[k];
        let stride: usize = self.dims[..k].iter().product();
        let mut data = vec![0.0; self.data.len() / d];
        for (o, outer) in (0..self.data.len()).step_by(stride * d).enumerate() {
            for j in 0..d {
                let src = &self.data[outer + j * stride..outer + (j + 1) * stride];
                data[o * stride..(o + 1) * stride].iter_mut().zip(src).for_each(|(a, v)| *a += v);
            }
        }
        data.iter_mut().for_each(|v| *v /= d as f64);
        let mut dims = self.dims.clone();
        dims.remove(k);
        GridTensor { dims, data }
    }

    /// Averages out every axis not flagged in `keep`.
    fn mean_out(&self, keep: &[bool]) -> GridTensor {
        let mut t = self.clone();
        for k in (0..keep.len()).rev().filter(|&k| !keep[k]) {
            t = t.mean_axis(k);
        }
        t
    }

    /// Subtracts the mean along axis `k`.
    fn center(&mut self, k: usize) {
        let d = self.dims[k];
        let stride: usize = self.dims[..k].iter().product();
        let block = stride * d;
        for outer in (0..self.data.len()).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                let m = (0..d).map(|j| self.data[base + j * stride]).sum::<f64>() / d as f64;
                (0..d).for_each(|j| self.data[base + j * stride] -= m);
            }
        }
    }
}

/// Evaluates branch `b` on the product grid `values[k]` of its support.
fn branch_grid(view: &AdditiveView<'_>, weights: &[Matrix], b: usize, support: &[usize], values: &[Vec<f64>]) -> Result<GridTensor> {
    let dims: Vec<usize> = values.iter().map(Vec::len).collect();
    let len: usize = dims.iter().product();
    let mut data = Vec::with_capacity(len);
    let p = view.input_dim();
    let mut dig = vec![0; dims.len()];
    let t = GridTensor { dims, data: Vec::new() };
    for start in (0..len).step_by(CHUNK_ROWS) {
        let rows = CHUNK_ROWS.min(len - start);
        let mut x = Matrix::zeros(rows, p);
        for r in 0..rows {
            t.digits(start + r, &mut dig);
            let row = x.row_mut(r);
            for (k, &f) in support.iter().enumerate() {
                row[f] = values[k][dig[k]];
            }
        }
        data.extend(view.branch_values(weights, b, &x)?);
    }
    Ok(GridTensor { dims: t.dims, data })
}

/// Largest background size `b ≤ cap` with `fixed · b^free ≤ limit`.
fn fit_background(cap: usize, fixed: usize, free: usize, limit: usize) -> usize {
    let mut b = cap.max(1);
    while b > 1 && (b as f64).powi(free as i32) * fixed as f64 > limit as f64 {
        b -= 1;
    }
    b
}

/// Per-draw strengths on the product grid of `background`.
fn grid_strengths(view: &AdditiveView<'_>, weights: &[Matrix], clusters: &[InputCluster], subsets: &[Vec<usize>], background: &Matrix) -> Result<Vec<f64>> {
    let position: HashMap<&[usize], usize> = subsets.iter().enumerate().map(|(k, s)| (s.as_slice(), k)).collect();
    let mut acc: Vec<Option<GridTensor>> = vec![None; subsets.len()];
    for c in clusters.iter().filter(|c| !c.features.is_empty()) {
        let values: Vec<Vec<f64>> = c.features.iter().map(|&f| background.col(f)).collect();
        let g = branch_grid(view, weights, c.subnet, &c.features, &values)?;
        let s = c.features.len();
        let full = (1u64 << s) - 1;
        // every marginal is one axis-average away from a parent with one more axis
        let mut masks: Vec<u64> = (1..=full).collect();
        masks.sort_by_key(|m| std::cmp::Reverse(m.count_ones()));
        let mut marginals: HashMap<u64, GridTensor> = HashMap::new();
        marginals.insert(full, g);
        for mask in masks {
            if !marginals.contains_key(&mask) {
                let k = (0..s).find(|k| mask >> k & 1 == 0).expect("mask is not full");
                let parent = &marginals[&(mask | 1 << k)];
                let axis = (mask & ((1 << k) - 1)).count_ones() as usize;
                let m = parent.mean_axis(axis);
                marginals.insert(mask, m);
            }
            let t: Vec<usize> = (0..s).filter(|k| mask >> k & 1 == 1).map(|k| c.features[k]).collect();
            let Some(&slot) = position.get(t.as_slice()) else { continue };
            let mut m = marginals[&mask].clone();
            for k in 0..m.dims.len() {
                m.center(k);
            }
            match &mut acc[slot] {
                Some(a) => a.data.iter_mut().zip(&m.data).for_each(|(x, y)| *x += y),
                none => *none = Some(m),
            }
        }
    }
    Ok(acc
        .iter()
        .map(|a| a.as_ref().map_or(0.0, |a| (a.data.iter().map(|v| v * v).sum::<f64>() / a.data.len() as f64).sqrt()))
        .collect())
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Empirical ℓ2 norms of every candidate component, averaged over
/// posterior draws, in target units.
pub fn interaction_strengths(model: &TrainedModel, data: &Dataset, clusters: &[InputCluster], config: &InteractionConfig) -> Result<InteractionReport> {
    if config.mc_draws == 0 {
        return Err(Error::InvalidArgument("mc_draws must be at least 1".into()));
    }
    let view = AdditiveView::new(&model.net)?;
    let x = model.scale_inputs(&data.raw_x());
    let n = x.rows();
    if n == 0 {
        return Err(Error::Data("no data for interaction analysis".into()));
    }
    let subsets = candidate_subsets(clusters, u128::from(config.budget_cap))?;
    let widest = clusters.iter().map(|c| c.features.len()).max().unwrap_or(0);
    let mut r = rng::stream(config.seed, streams::ANOVA);
    let mut sample = |k: usize| x.select_rows(&rng::permutation(&mut r, n)[..k.min(n)]);
    let pointwise = config.single_baseline || config.norm_points == NormPoints::TrainingPoints;
    let eval = if pointwise { Some(sample(config.eval_points.unwrap_or(n))) } else { None };
    let nb = if config.single_baseline {
        1
    } else {
        let want = config.background.unwrap_or(n);
        if pointwise {
            want
        } else {
            fit_background(want, 1, widest, config.grid_limit)
        }
    };
    let background = sample(nb);
    let y_std = model.y_scale.std[0];

    let per_draw: Vec<Vec<f64>> = (0..config.mc_draws)
        .into_par_iter()
        .map(|d| {
            let w = view.prune(&sample_weights(&model.q, config.seed, d), clusters);
            let s = match &eval {
                Some(e) => additive_components(&view.parts(&w, clusters), &subsets, e, &background)?.iter().map(|c| rms(c)).collect(),
                None => grid_strengths(&view, &w, clusters, &subsets, &background)?,
            };
            Ok(s.into_iter().map(|v: f64| v * y_std).collect())
        })
        .collect::<Result<_>>()?;

    let mut entries: Vec<InteractionEntry> = subsets
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let (m, sd) = mean_std(&per_draw.iter().map(|d| d[k]).collect::<Vec<_>>());
            InteractionEntry {
                subset: s.clone(),
                strength: m,
                strength_std: sd,
                grid: None,
            }
        })
        .collect();
    entries.sort_by(|a, b| b.strength.total_cmp(&a.strength).then_with(|| a.subset.cmp(&b.subset)));
    if let Some(k) = config.top_k {
        entries.truncate(k);
    }
    if config.heatmap_grid > 0 {
        let raw = data.raw_x();
        for e in entries.iter_mut().filter(|e| e.subset.len() == 2).take(config.heatmap_pairs) {
            e.grid = Some(pair_heatmap(&view, model, &raw, &x, clusters, (e.subset[0], e.subset[1]), config)?);
        }
    }
    Ok(InteractionReport {
        feature_names: model.feature_names.clone(),
        clusters: clusters.to_vec(),
        entries,
    })
}

/// `I_{ij}` on a quantile grid of the two features. The grid axes of
/// `i` and `j` hold the quantiles followed by the background values, so
/// that `(I − E)` along them is read off the same tensor.
fn pair_heatmap(
    view: &AdditiveView<'_>,
    model: &TrainedModel,
    raw: &Matrix,
    x: &Matrix,
    clusters: &[InputCluster],
    (i, j): (usize, usize),
    config: &InteractionConfig,
) -> Result<Heatmap> {
    let g = config.heatmap_grid;
    let x1 = quantiles(raw.col(i), g);
    let x2 = quantiles(raw.col(j), g);
    let sx = &model.x_scale;
    let owners: Vec<&InputCluster> = clusters.iter().filter(|c| c.features.contains(&i) && c.features.contains(&j)).collect();
    let widest = owners.iter().map(|c| c.features.len()).max().unwrap_or(2);
    let want = config.background.unwrap_or(x.rows()).min(x.rows());
    let mut nb = fit_background(want, 1, widest - 2, config.grid_limit);
    while nb > 1 && (g + nb).pow(2) * nb.pow((widest - 2) as u32) > config.grid_limit {
        nb -= 1;
    }
    let mut r = rng::stream(config.seed, streams::ANOVA + 1);
    let background = x.select_rows(&rng::permutation(&mut r, x.rows())[..nb]);
    let scaled = |f: usize, q: &[f64]| -> Vec<f64> { q.iter().map(|v| (v - sx.mean[f]) / sx.std[f]).chain(background.col(f)).collect() };
    let y_std = model.y_scale.std[0];
    let draws: Vec<Vec<f64>> = (0..config.mc_draws)
        .into_par_iter()
        .map(|d| {
            let w = view.prune(&sample_weights(&model.q, config.seed, d), clusters);
            let mut out = vec![0.0; g * g];
            for c in &owners {
                let values: Vec<Vec<f64>> = c
                    .features
                    .iter()
                    .map(|&f| if f == i { scaled(i, &x1) } else if f == j { scaled(j, &x2) } else { background.col(f) })
                    .collect();
                let keep: Vec<bool> = c.features.iter().map(|&f| f == i || f == j).collect();
                let m = branch_grid(view, &w, c.subnet, &c.features, &values)?.mean_out(&keep);
                // axis 0 is the smaller feature index, i < j
                let side = g + nb;
                let at = |a: usize, b: usize| m.data[a + side * b];
                let bg_mean = |f: &dyn Fn(usize) -> f64| (g..side).map(f).sum::<f64>() / nb as f64;
                let both = bg_mean(&|a| bg_mean(&|b| at(a, b)));
                for a in 0..g {
                    let row_mean = bg_mean(&|b| at(a, b));
                    for b in 0..g {
                        out[a * g + b] += at(a, b) - row_mean - bg_mean(&|a2| at(a2, b)) + both;
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut mean = Matrix::zeros(g, g);
    let mut std = Matrix::zeros(g, g);
    for k in 0..g * g {
        let (m, s) = mean_std(&draws.iter().map(|d| d[k]).collect::<Vec<_>>());
        mean.set(k / g, k % g, y_std * m);
        std.set(k / g, k % g, y_std * s);
    }
    Ok(Heatmap {
        features: (i, j),
        x1,
        x2,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::build_network;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::stream(seed, 0);
        Matrix::from_fn(rows, cols, |_, _| r.gen::<f64>())
    }

    fn random_weights(net: &BayesNet, seed: u64) -> Vec<Matrix> {
        let mut r = rng::stream(seed, 1);
        net.weight_shapes().iter().map(|&(a, b)| rng::normal_matrix(&mut r, a, b)).collect()
    }

    fn small_net(p: usize, groups: Vec<Vec<usize>>, seed: u64) -> BayesNet {
        let skel = Preset::Additive {
            input_dim: p,
            groups,
            hidden: vec![3],
            activation: ActivationKind::Tanh,
        }
        .build()
        .unwrap();
        build_network(&skel, &BuildPolicy::uniform(NodeRecipe::plain(), seed).with_bias(BiasMode::TrainableInFb), None).unwrap()
    }

    fn full_clusters(net: &BayesNet) -> Vec<InputCluster> {
        extract_clusters(net, &net.initial_weights(), Threshold::Absolute(0.0)).unwrap()
    }

    /// Direct evaluation of the alternating sum with the full product grid
    /// of background values over every feature outside `A`.
    fn brute_force(net: &BayesNet, w: &[Matrix], t: &[usize], eval: &Matrix, bg: &Matrix) -> Vec<f64> {
        let p = eval.cols();
        let nb = bg.rows();
        let mut out = vec![0.0; eval.rows()];
        for a in subsets_of(t) {
            let rest: Vec<usize> = (0..p).filter(|j| !a.contains(j)).collect();
            let combos = nb.pow(rest.len() as u32);
            let sign = if (t.len() - a.len()) % 2 == 0 { 1.0 } else { -1.0 };
            for (r, o) in out.iter_mut().enumerate() {
                let x = Matrix::from_fn(combos, p, |c, j| {
                    if a.contains(&j) {
                        eval.get(r, j)
                    } else {
                        let k = rest.iter().position(|&q| q == j).unwrap();
                        bg.get(c / nb.pow(k as u32) % nb, j)
                    }
                });
                let f = net.forward(&x, w).unwrap();
                *o += sign * f.output().data().iter().sum::<f64>() / combos as f64;
            }
        }
        out
    }

    #[test]
    fn matches_brute_force() {
        for seed in 0..4u64 {
            let p = 3;
            let net = small_net(p, vec![vec![0, 1], vec![1, 2], vec![0, 2]], seed);
            let w = random_weights(&net, seed);
            let bg = random_matrix(6, p, seed + 10);
            let eval = random_matrix(4, p, seed + 20);
            let cl = full_clusters(&net);
            for t in [vec![], vec![0], vec![0, 2], vec![0, 1, 2]] {
                let got = anova_component(&net, &w, &cl, &t, &eval, &bg, true).unwrap();
                let want = brute_force(&net, &w, &t, &eval, &bg);
                for (g, e) in got.iter().zip(&want) {
                    assert!((g - e).abs() < 1e-10, "T={t:?}: {g} vs {e}");
                }
            }
        }
    }

    #[test]
    fn product_stub_is_centered_product() {
        let part = AdditivePart {
            support: vec![0, 1],
            f: Box::new(|x: &Matrix| Ok((0..x.rows()).map(|r| x.get(r, 0) * x.get(r, 1)).collect())),
        };
        let bg = random_matrix(7, 2, 3);
        let eval = random_matrix(5, 2, 4);
        let m = bg.col_means();
        let got = additive_components(&[part], &[vec![0, 1]], &eval, &bg).unwrap().remove(0);
        for (r, g) in got.iter().enumerate() {
            let want = (eval.get(r, 0) - m[0]) * (eval.get(r, 1) - m[1]);
            assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn additive_pair_vanishes() {
        let net = small_net(2, vec![vec![0], vec![1]], 5);
        let w = random_weights(&net, 5);
        let cl = full_clusters(&net);
        assert!(anova_component(&net, &w, &cl, &[0, 1], &random_matrix(8, 2, 1), &random_matrix(5, 2, 2), false).is_err());
        let v = anova_component(&net, &w, &cl, &[0, 1], &random_matrix(8, 2, 1), &random_matrix(5, 2, 2), true).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn components_telescope_to_branch() {
        let net = small_net(3, vec![vec![0, 1, 2], vec![1]], 9);
        let w = random_weights(&net, 9);
        let view = AdditiveView::new(&net).unwrap();
        let cl = full_clusters(&net);
        let eval = random_matrix(6, 3, 7);
        let bg = random_matrix(5, 3, 8);
        let parts = view.parts(&w, &cl[..1]);
        let all = subsets_of(&cl[0].features);
        let comps = additive_components(&parts[..1], &all, &eval, &bg).unwrap();
        let direct = view.branch_values(&w, 0, &eval).unwrap();
        for r in 0..6 {
            let s: f64 = comps.iter().map(|c| c[r]).sum();
            assert!((s - direct[r]).abs() < 1e-10);
        }
    }

    #[test]
    fn clusters_follow_support() {
        let net = small_net(3, vec![vec![0, 1, 2], vec![0, 1, 2]], 1);
        let zero: Vec<Matrix> = net.weight_shapes().iter().map(|&(a, b)| Matrix::zeros(a, b)).collect();
        let cl = extract_clusters(&net, &zero, Threshold::default()).unwrap();
        assert!(cl.iter().all(|c| c.features.is_empty()));
        let mut w = net.initial_weights();
        let g = net.node(1, 0).fb.group;
        w[g].row_mut(2).iter_mut().for_each(|v| *v = 0.0);
        let cl = extract_clusters(&net, &w, Threshold::Absolute(0.0)).unwrap();
        assert_eq!(cl[0].features, vec![0, 1]);
        assert_eq!(cl[1].features, vec![0, 1, 2]);
    }

    #[test]
    fn budget_counts_and_caps() {
        let cl: Vec<InputCluster> = (0..10)
            .map(|j| InputCluster {
                subnet: j,
                features: vec![j, (j + 1) % 10],
            })
            .collect();
        let b = enumeration_budget(&cl, DEFAULT_BUDGET_CAP).unwrap();
        assert!(b <= 40);
        assert_eq!(b, 10 + 10);
        let big = [InputCluster {
            subnet: 0,
            features: (0..30).collect(),
        }];
        assert!(matches!(enumeration_budget(&big, DEFAULT_BUDGET_CAP), Err(Error::Budget { .. })));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("bart".parse::<Variant>().is_err());
    }

    #[test]
    fn variant_layouts() {
        let mut cfg = AddNnConfig::default();
        for v in Variant::ALL {
            cfg.variant = v;
            let skel = cfg.skeleton(4).unwrap();
            let net = build_network(&skel, &cfg.policy(), None).unwrap();
            let stages = net.node(2, 0).stages.len();
            assert_eq!(stages, match v {
                Variant::Rf => 1,
                Variant::Drf => 2,
                _ => 0,
            });
            let plan = cfg.plan(100);
            assert!(matches!(plan.spec_for(1).prior, Prior::GroupLassoLaplace { .. }));
            assert_eq!(plan.spec_for(cfg.depth()).family, FamilyKind::PointMass);
            assert!(AdditiveView::new(&net).is_ok());
        }
    }
}
