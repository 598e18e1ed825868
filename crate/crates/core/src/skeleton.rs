//! Computation skeletons: small layered graphs whose nodes carry an
//! activation and a replication width. A skeleton says *what connects to
//! what*; [`crate::blocks::build_network`] expands each of its edges into
//! feature and function blocks.
//!
//! # Config grammar
//!
//! Skeletons are written as TOML. All per-layer fields accept either one
//! value shared by the whole layer or an array with one value per node.
//!
//! ```toml
//! layers      = [1, 1, 1]                       # nodes per layer; layer 0 = inputs
//! widths      = [4, 2, 1]                       # replication width d of each node
//! activations = ["none", "relu", "identity"]    # layer 0 must be "none"
//! edges       = [[[0]], [[0]]]                  # edges[l-1][i] = inputs of node i in layer l
//! ```
//!
//! * `widths` is optional: inputs default to 1, hidden nodes to 2, the last
//!   layer to 1.
//! * `activations` is optional: hidden layers default to `relu`, the last
//!   layer to `identity` (no activation on the network output).
//! * `edges` is optional: a missing layer entry means fully connected to the
//!   previous layer.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN_WIDTH: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonNode {
    pub activation: ActivationKind,
    pub width: usize,
    /// Indices of the connected nodes in the previous layer (`In(i)`).
    pub inputs: Vec<usize>,
}

/// A validated computation skeleton.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    input_widths: Vec<usize>,
    layers: Vec<Vec<SkeletonNode>>,
}

/// Connected group of hidden nodes feeding the output node of an additive
/// skeleton.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Branch {
    /// `(layer, node)` pairs, layer ascending.
    pub nodes: Vec<(usize, usize)>,
    /// Input-node indices read by the branch's first-layer nodes.
    pub inputs: Vec<usize>,
    /// Nodes of the pre-output layer belonging to the branch.
    pub outputs: Vec<usize>,
}

impl Skeleton {
    /// Assembles and validates a skeleton. `layers[l - 1]` holds layer `l`.
    pub fn new(input_widths: Vec<usize>, layers: Vec<Vec<SkeletonNode>>) -> Result<Self> {
        let s = Self { input_widths, layers };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.input_widths.is_empty() {
            return Err(Error::Skeleton("layer 0 is empty".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Skeleton("skeleton needs at least one non-input layer".into()));
        }
        if let Some(j) = self.input_widths.iter().position(|&w| w == 0) {
            return Err(Error::Skeleton(format!("input node {j} has width 0")));
        }
        for (li, layer) in self.layers.iter().enumerate() {
            let l = li + 1;
            if layer.is_empty() {
                return Err(Error::Skeleton(format!("layer {l} is empty")));
            }
            let prev = self.layer_size(l - 1);
            for (i, node) in layer.iter().enumerate() {
                if node.width == 0 {
                    return Err(Error::Skeleton(format!("node ({l}, {i}) has width 0")));
                }
                if node.inputs.is_empty() {
                    return Err(Error::Skeleton(format!("node ({l}, {i}) has no incoming edge")));
                }
                let uniq: BTreeSet<_> = node.inputs.iter().collect();
                if uniq.len() != node.inputs.len() {
                    return Err(Error::Skeleton(format!("node ({l}, {i}) lists a duplicate edge")));
                }
                if let Some(&j) = node.inputs.iter().find(|&&j| j >= prev) {
                    return Err(Error::Skeleton(format!(
                        "edge into node ({l}, {i}) from node {j} of layer {} which has only {prev} nodes",
                        l - 1
                    )));
                }
            }
        }
        // hidden nodes must feed something
        for l in 1..self.depth() {
            let used: BTreeSet<usize> = self.layers[l].iter().flat_map(|n| n.inputs.iter().copied()).collect();
            for i in 0..self.layer_size(l) {
                if !used.contains(&i) {
                    return Err(Error::Skeleton(format!("node ({l}, {i}) is dangling (no outgoing edge)")));
                }
            }
        }
        Ok(())
    }

    /// Number of non-input layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `s^l`, the number of nodes in layer `l` (layer 0 = inputs).
    pub fn layer_size(&self, l: usize) -> usize {
        if l == 0 {
            self.input_widths.len()
        } else {
            self.layers[l - 1].len()
        }
    }

    pub fn input_widths(&self) -> &[usize] {
        &self.input_widths
    }

    /// Total input dimension `p`.
    pub fn input_dim(&self) -> usize {
        self.input_widths.iter().sum()
    }

    /// Column offset of each input node inside the design matrix.
    pub fn input_offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.input_widths
            .iter()
            .map(|w| {
                let o = off;
                off += w;
                o
            })
            .collect()
    }

    /// Nodes of layer `l >= 1`.
    pub fn layer(&self, l: usize) -> &[SkeletonNode] {
        &self.layers[l - 1]
    }

    pub fn node(&self, l: usize, i: usize) -> &SkeletonNode {
        &self.layers[l - 1][i]
    }

    pub fn node_width(&self, l: usize, i: usize) -> usize {
        if l == 0 {
            self.input_widths[i]
        } else {
            self.layers[l - 1][i].width
        }
    }

    /// Activation applied to a node's output before the next layer reads it.
    pub fn node_activation(&self, l: usize, i: usize) -> ActivationKind {
        if l == 0 {
            ActivationKind::Identity
        } else {
            self.layers[l - 1][i].activation
        }
    }

    /// Width of layer `l`'s concatenated output.
    pub fn layer_width(&self, l: usize) -> usize {
        (0..self.layer_size(l)).map(|i| self.node_width(l, i)).sum()
    }

    pub fn output_count(&self) -> usize {
        self.layer_width(self.depth())
    }

    /// Input dimension seen by node `(l, i)`: the summed widths of `In(i)`.
    pub fn fan_in(&self, l: usize, i: usize) -> usize {
        self.node(l, i).inputs.iter().map(|&j| self.node_width(l - 1, j)).sum()
    }

    /// Splits an additive skeleton into its branches.
    ///
    /// A skeleton is additive when its last layer is a single node of width
    /// one, the pre-output layer uses the identity activation, and hidden
    /// nodes (layers `1..L`) split into connected components. Returns `None`
    /// otherwise.
    pub fn additive_branches(&self) -> Option<Vec<Branch>> {
        let depth = self.depth();
        if depth < 2 || self.layer_size(depth) != 1 || self.node_width(depth, 0) != 1 {
            return None;
        }
        if self.layer(depth - 1).iter().any(|n| n.activation != ActivationKind::Identity) {
            return None;
        }
        // union-find over hidden nodes
        let ids: Vec<(usize, usize)> = (1..depth).flat_map(|l| (0..self.layer_size(l)).map(move |i| (l, i))).collect();
        let index_of = |l: usize, i: usize| ids.iter().position(|&x| x == (l, i)).unwrap();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for l in 2..depth {
            for (i, node) in self.layer(l).iter().enumerate() {
                for &j in &node.inputs {
                    let a = find(&mut parent, index_of(l, i));
                    let b = find(&mut parent, index_of(l - 1, j));
                    parent[a] = b;
                }
            }
        }
        let mut roots: Vec<usize> = Vec::new();
        let mut branches: Vec<Branch> = Vec::new();
        for (k, &(l, i)) in ids.iter().enumerate() {
            let r = find(&mut parent, k);
            let b = match roots.iter().position(|&x| x == r) {
                Some(b) => b,
                None => {
                    roots.push(r);
                    branches.push(Branch {
                        nodes: Vec::new(),
                        inputs: Vec::new(),
                        outputs: Vec::new(),
                    });
                    branches.len() - 1
                }
            };
            let br = &mut branches[b];
            br.nodes.push((l, i));
            if l == 1 {
                br.inputs.extend(self.node(1, i).inputs.iter().copied());
            }
            if l == depth - 1 {
                br.outputs.push(i);
            }
        }
        for br in &mut branches {
            br.inputs.sort_unstable();
            br.inputs.dedup();
            if br.outputs.is_empty() {
                return None;
            }
        }
        Some(branches)
    }

    /// Parses the TOML config grammar described in the module docs.
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawSkeleton = toml::from_str(text).map_err(|e| Error::Config {
            field: "toml".into(),
            line: e.span().map(|s| line_of_offset(text, s.start)),
            msg: e.message().to_string(),
        })?;
        raw.resolve(text)
    }

    /// Canonical TOML (every field spelled out per node).
    pub fn to_toml(&self) -> String {
        let mut layers = vec![self.input_widths.len()];
        let mut widths = vec![self.input_widths.clone()];
        let mut acts = vec![vec!["none".to_string(); self.input_widths.len()]];
        let mut edges = Vec::new();
        for layer in &self.layers {
            layers.push(layer.len());
            widths.push(layer.iter().map(|n| n.width).collect::<Vec<_>>());
            acts.push(layer.iter().map(|n| n.activation.name().to_string()).collect());
            edges.push(layer.iter().map(|n| n.inputs.clone()).collect::<Vec<_>>());
        }
        let raw = CanonicalSkeleton {
            layers,
            widths,
            activations: acts,
            edges,
        };
        toml::to_string(&raw).expect("skeleton serializes")
    }
}

#[derive(Serialize)]
struct CanonicalSkeleton {
    layers: Vec<usize>,
    widths: Vec<Vec<usize>>,
    activations: Vec<Vec<String>>,
    edges: Vec<Vec<Vec<usize>>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PerLayer<T> {
    Shared(T),
    PerNode(Vec<T>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSkeleton {
    layers: Vec<usize>,
    widths: Option<Vec<PerLayer<usize>>>,
    activations: Option<Vec<PerLayer<String>>>,
    edges: Option<Vec<Option<Vec<Vec<usize>>>>>,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            t.starts_with(key) && t[key.len()..].trim_start().starts_with('=')
        })
        .map(|i| i + 1)
}

impl RawSkeleton {
    fn resolve(self, text: &str) -> Result<Skeleton> {
        let cfg_err = |field: &str, msg: String| Error::Config {
            field: field.to_string(),
            line: line_of_key(text, field.split('[').next().unwrap_or(field)),
            msg,
        };
        let n_layers = self.layers.len();
        if n_layers < 2 {
            return Err(cfg_err("layers", "need an input layer and at least one more layer".into()));
        }
        if let Some(l) = self.layers.iter().position(|&s| s == 0) {
            return Err(cfg_err(&format!("layers[{l}]"), "empty layer".into()));
        }

        let expand = |field: &str, per: Option<Vec<PerLayer<usize>>>, default: &dyn Fn(usize) -> usize| -> Result<Vec<Vec<usize>>> {
            match per {
                None => Ok((0..n_layers).map(|l| vec![default(l); self.layers[l]]).collect()),
                Some(v) => {
                    if v.len() != n_layers {
                        return Err(cfg_err(field, format!("expected {n_layers} entries, found {}", v.len())));
                    }
                    v.into_iter()
                        .enumerate()
                        .map(|(l, e)| match e {
                            PerLayer::Shared(x) => Ok(vec![x; self.layers[l]]),
                            PerLayer::PerNode(xs) if xs.len() == self.layers[l] => Ok(xs),
                            PerLayer::PerNode(xs) => Err(cfg_err(
                                &format!("{field}[{l}]"),
                                format!("layer has {} nodes but {} values given", self.layers[l], xs.len()),
                            )),
                        })
                        .collect()
                }
            }
        };
        let last = n_layers - 1;
        let widths = expand("widths", self.widths, &|l| {
            if l == 0 || l == last {
                1
            } else {
                DEFAULT_HIDDEN_WIDTH
            }
        })?;

        let activations: Vec<Vec<ActivationKind>> = match self.activations {
            None => (0..n_layers)
                .map(|l| {
                    let a = if l == 0 || l == last {
                        ActivationKind::Identity
                    } else {
                        ActivationKind::Relu
                    };
                    vec![a; self.layers[l]]
                })
                .collect(),
            Some(v) => {
                if v.len() != n_layers {
                    return Err(cfg_err("activations", format!("expected {n_layers} entries, found {}", v.len())));
                }
                let mut out = Vec::with_capacity(n_layers);
                for (l, e) in v.into_iter().enumerate() {
                    let names = match e {
                        PerLayer::Shared(x) => vec![x; self.layers[l]],
                        PerLayer::PerNode(xs) if xs.len() == self.layers[l] => xs,
                        PerLayer::PerNode(xs) => {
                            return Err(cfg_err(
                                &format!("activations[{l}]"),
                                format!("layer has {} nodes but {} values given", self.layers[l], xs.len()),
                            ))
                        }
                    };
                    let mut acts = Vec::with_capacity(names.len());
                    for (i, name) in names.iter().enumerate() {
                        if l == 0 && !matches!(name.as_str(), "none" | "identity") {
                            return Err(cfg_err(
                                &format!("activations[0][{i}]"),
                                "input nodes carry no activation".into(),
                            ));
                        }
                        let a: ActivationKind = name
                            .parse()
                            .map_err(|e: Error| cfg_err(&format!("activations[{l}][{i}]"), e.to_string()))?;
                        acts.push(a);
                    }
                    out.push(acts);
                }
                out
            }
        };

        let edges = match self.edges {
            None => vec![None; n_layers - 1],
            Some(e) => {
                if e.len() != n_layers - 1 {
                    return Err(cfg_err("edges", format!("expected {} entries (one per non-input layer), found {}", n_layers - 1, e.len())));
                }
                e
            }
        };

        let mut layers = Vec::with_capacity(n_layers - 1);
        for l in 1..n_layers {
            let ins: Vec<Vec<usize>> = match &edges[l - 1] {
                None => vec![(0..self.layers[l - 1]).collect(); self.layers[l]],
                Some(v) if v.len() == self.layers[l] => v.clone(),
                Some(v) => {
                    return Err(cfg_err(
                        &format!("edges[{}]", l - 1),
                        format!("layer {l} has {} nodes but {} adjacency lists given", self.layers[l], v.len()),
                    ))
                }
            };
            let mut nodes = Vec::with_capacity(self.layers[l]);
            for i in 0..self.layers[l] {
                if let Some(&j) = ins[i].iter().find(|&&j| j >= self.layers[l - 1]) {
                    return Err(cfg_err(
                        &format!("edges[{}][{i}]", l - 1),
                        format!("node {j} does not exist in layer {} (edges must join adjacent layers)", l - 1),
                    ));
                }
                nodes.push(SkeletonNode {
                    activation: activations[l][i],
                    width: widths[l][i],
                    inputs: ins[i].clone(),
                });
            }
            layers.push(nodes);
        }
        Skeleton::new(widths[0].clone(), layers).map_err(|e| match e {
            Error::Skeleton(msg) => Error::Config {
                field: "skeleton".into(),
                line: None,
                msg,
            },
            other => other,
        })
    }
}

/// Named skeleton shapes.
#[derive(Clone, Debug, PartialEq)]
pub enum Preset {
    /// `input_dim → 1 → … → 1`: `depth` single-node layers (the last has width one).
    Chain {
        input_dim: usize,
        depth: usize,
        width: usize,
        activation: ActivationKind,
    },
    /// `shared` single-node layers feeding `tasks` output nodes.
    MultiTask {
        input_dim: usize,
        shared: usize,
        tasks: usize,
        width: usize,
        activation: ActivationKind,
    },
    /// One branch per feature group, summed by a single output node.
    /// Each input feature is its own layer-0 node.
    Additive {
        input_dim: usize,
        groups: Vec<Vec<usize>>,
        hidden: Vec<usize>,
        activation: ActivationKind,
    },
}

impl Preset {
    /// `k` branches that each see every input.
    pub fn additive_full(input_dim: usize, k: usize, hidden: Vec<usize>, activation: ActivationKind) -> Self {
        Preset::Additive {
            input_dim,
            groups: vec![(0..input_dim).collect(); k],
            hidden,
            activation,
        }
    }

    pub fn build(&self) -> Result<Skeleton> {
        preset(self)
    }
}

fn node(activation: ActivationKind, width: usize, inputs: Vec<usize>) -> SkeletonNode {
    SkeletonNode {
        activation,
        width,
        inputs,
    }
}

pub fn preset(kind: &Preset) -> Result<Skeleton> {
    let positive = |what: &str, v: usize| {
        if v == 0 {
            Err(Error::InvalidArgument(format!("{what} must be positive")))
        } else {
            Ok(())
        }
    };
    match kind {
        Preset::Chain {
            input_dim,
            depth,
            width,
            activation,
        } => {
            positive("input_dim", *input_dim)?;
            positive("depth", *depth)?;
            positive("width", *width)?;
            let layers = (1..=*depth)
                .map(|l| {
                    if l == *depth {
                        vec![node(ActivationKind::Identity, 1, vec![0])]
                    } else {
                        vec![node(*activation, *width, vec![0])]
                    }
                })
                .collect();
            Skeleton::new(vec![*input_dim], layers)
        }
        Preset::MultiTask {
            input_dim,
            shared,
            tasks,
            width,
            activation,
        } => {
            positive("input_dim", *input_dim)?;
            positive("shared", *shared)?;
            positive("tasks", *tasks)?;
            positive("width", *width)?;
            let mut layers: Vec<Vec<SkeletonNode>> = (0..*shared).map(|_| vec![node(*activation, *width, vec![0])]).collect();
            layers.push((0..*tasks).map(|_| node(ActivationKind::Identity, 1, vec![0])).collect());
            Skeleton::new(vec![*input_dim], layers)
        }
        Preset::Additive {
            input_dim,
            groups,
            hidden,
            activation,
        } => {
            positive("input_dim", *input_dim)?;
            let k = groups.len();
            if k == 0 {
                return Err(Error::InvalidArgument("additive preset needs k >= 1 groups".into()));
            }
            for (j, g) in groups.iter().enumerate() {
                if g.is_empty() {
                    return Err(Error::InvalidArgument(format!("group {j} is empty")));
                }
                if let Some(&f) = g.iter().find(|&&f| f >= *input_dim) {
                    return Err(Error::InvalidArgument(format!("group {j} names feature {f} but input_dim is {input_dim}")));
                }
            }
            if let Some(h) = hidden.iter().position(|&h| h == 0) {
                return Err(Error::InvalidArgument(format!("hidden width {h} is zero")));
            }
            let mut layers = Vec::new();
            for (h, &w) in hidden.iter().enumerate() {
                layers.push(
                    (0..k)
                        .map(|j| {
                            let inputs = if h == 0 {
                                let mut g = groups[j].clone();
                                g.sort_unstable();
                                g.dedup();
                                g
                            } else {
                                vec![j]
                            };
                            node(*activation, w, inputs)
                        })
                        .collect(),
                );
            }
            // per-branch scalar output
            layers.push(
                (0..k)
                    .map(|j| {
                        let inputs = if hidden.is_empty() { groups[j].clone() } else { vec![j] };
                        node(ActivationKind::Identity, 1, inputs)
                    })
                    .collect(),
            );
            layers.push(vec![node(ActivationKind::Identity, 1, (0..k).collect())]);
            Skeleton::new(vec![1; *input_dim], layers)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG_A: &str = r#"
layers = [1, 1, 1]
widths = [4, 2, 1]
activations = ["none", "relu", "identity"]
edges = [[[0]], [[0]]]
"#;

    #[test]
    fn parses_two_layer_chain() {
        let s = Skeleton::parse(FIG_A).unwrap();
        assert_eq!(s.depth(), 2);
        assert_eq!(s.input_dim(), 4);
        assert_eq!(s.node_width(1, 0), 2);
        assert_eq!(s.output_count(), 1);
        let p = preset(&Preset::Chain {
            input_dim: 4,
            depth: 2,
            width: 2,
            activation: ActivationKind::Relu,
        })
        .unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn single_layer_minimal() {
        let s = Skeleton::parse("layers = [1, 1]\nwidths = [5, 1]\n").unwrap();
        assert_eq!(s.depth(), 1);
        assert_eq!(s.input_dim(), 5);
        assert_eq!(s.node_activation(1, 0), ActivationKind::Identity);
    }

    #[test]
    fn defaults_fill_widths_and_activations() {
        let s = Skeleton::parse("layers = [2, 3, 1]").unwrap();
        assert_eq!(s.input_widths(), &[1, 1]);
        assert_eq!(s.node_width(1, 2), DEFAULT_HIDDEN_WIDTH);
        assert_eq!(s.node_activation(1, 0), ActivationKind::Relu);
        assert_eq!(s.node(1, 1).inputs, vec![0, 1]);
    }

    #[test]
    fn rejects_non_adjacent_edge() {
        let err = Skeleton::parse("layers = [1, 2, 1]\nedges = [[[0], [0]], [[0, 1, 2]]]\n").unwrap_err();
        match err {
            Error::Config { field, line, .. } => {
                assert_eq!(field, "edges[1][0]");
                assert_eq!(line, Some(2));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_empty_layer() {
        assert!(matches!(Skeleton::parse("layers = [1, 0, 1]"), Err(Error::Config { .. })));
    }

    #[test]
    fn rejects_dangling_hidden_node() {
        let err = Skeleton::parse("layers = [1, 2, 1]\nedges = [[[0], [0]], [[0]]]\n").unwrap_err();
        assert!(err.to_string().contains("dangling"), "{err}");
    }

    #[test]
    fn rejects_activation_on_inputs() {
        let err = Skeleton::parse("layers = [1, 1]\nactivations = [\"relu\", \"identity\"]\n").unwrap_err();
        assert!(err.to_string().contains("activations[0][0]"), "{err}");
    }

    #[test]
    fn grammar_error_reports_line() {
        let err = Skeleton::parse("layers = [1, 1]\nwidths = [1, \"x\"]\n").unwrap_err();
        match err {
            Error::Config { line, .. } => assert_eq!(line, Some(2)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn additive_two_branches() {
        let text = r#"
layers = [4, 2, 2, 1]
widths = [1, 3, 1, 1]
activations = ["none", "relu", "identity", "identity"]
edges = [[[0, 1], [2, 3]], [[0], [1]], [[0, 1]]]
"#;
        let s = Skeleton::parse(text).unwrap();
        let branches = s.additive_branches().unwrap();
        assert_eq!(branches.len(), 2);
        assert_eq!(branches[0].inputs, vec![0, 1]);
        assert_eq!(branches[1].inputs, vec![2, 3]);
        let p = preset(&Preset::Additive {
            input_dim: 4,
            groups: vec![vec![0, 1], vec![2, 3]],
            hidden: vec![3],
            activation: ActivationKind::Relu,
        })
        .unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn addnn_preset_has_ten_components() {
        let s = Preset::additive_full(10, 10, vec![4, 8], ActivationKind::Relu).build().unwrap();
        let b = s.additive_branches().unwrap();
        assert_eq!(b.len(), 10);
        assert!(b.iter().all(|br| br.inputs.len() == 10 && br.nodes.len() == 3));
    }

    #[test]
    fn multitask_shape() {
        let s = preset(&Preset::MultiTask {
            input_dim: 3,
            shared: 1,
            tasks: 3,
            width: 2,
            activation: ActivationKind::Tanh,
        })
        .unwrap();
        assert_eq!(s.depth(), 2);
        assert_eq!(s.output_count(), 3);
        assert!(s.layer(2).iter().all(|n| n.inputs == vec![0]));
        assert!(s.additive_branches().is_none());
    }

    #[test]
    fn preset_errors() {
        assert!(preset(&Preset::Additive {
            input_dim: 3,
            groups: vec![],
            hidden: vec![2],
            activation: ActivationKind::Relu
        })
        .is_err());
        assert!(preset(&Preset::Additive {
            input_dim: 3,
            groups: vec![vec![0], vec![]],
            hidden: vec![2],
            activation: ActivationKind::Relu
        })
        .is_err());
        assert!(preset(&Preset::Chain {
            input_dim: 3,
            depth: 0,
            width: 2,
            activation: ActivationKind::Relu
        })
        .is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let s = Preset::additive_full(5, 3, vec![2, 3], ActivationKind::Tanh).build().unwrap();
        assert_eq!(Skeleton::parse(&s.to_toml()).unwrap(), s);
    }
}
