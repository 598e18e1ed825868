//! Variational inference over FB weights: priors and variational families,
//! the doubly stochastic ELBO, the training loop, and posterior-predictive
//! sampling.

mod likelihood;
mod model;
mod posterior;
mod predict;
mod train;

pub use likelihood::Likelihood;
pub use model::{Scaling, TrainedModel, MODEL_BIN, MODEL_TOML};
pub use posterior::{kl_term, Covariance, FamilyKind, GroupLeaves, GroupPosterior, GroupSpec, LayerSpec, PosteriorPlan, Prior, VariationalState};
pub use predict::{predict, sample_weights, Prediction};
pub use train::{elbo_estimate, train, write_trace_csv, Adam, ElboTerms, ModelLeaves, TraceRow, TrainConfig, TrainOutcome};
