//! Bayesian neural networks assembled from computation skeletons.
//!
//! A [`skeleton::Skeleton`] fixes which nodes connect; [`blocks::build_network`]
//! expands every node into optional random-feature or inducing-point stages
//! followed by a trainable function block. [`vi`] fits a variational posterior
//! over the function-block weights, [`kernels`] checks the kernel view of the
//! random-feature stages, and [`addnn`] builds additive networks and reads
//! interaction strengths out of them. [`cli`] backs the `bnn` binary.

pub mod activation;
pub mod addnn;
pub mod blocks;
pub mod error;
pub mod kernels;
pub mod rng;
pub mod skeleton;
pub mod tensor;
pub mod bench;
pub mod cli;
pub mod vi;

pub use activation::ActivationKind;
pub use addnn::{AddNnConfig, InteractionConfig, InteractionReport, Variant};
pub use blocks::{build_network, BayesNet, BuildPolicy, NodeRecipe};
pub use error::{Error, Result};
pub use skeleton::Skeleton;
pub use tensor::{Matrix, Tape, Var};
pub use vi::{Likelihood, PosteriorPlan, TrainConfig, TrainedModel};
