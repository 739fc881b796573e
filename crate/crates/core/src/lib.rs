//! Class-constrained t-SNE.
//!
//! Embeds data points together with one landmark per class so that point
//! neighbourhoods reflect feature similarity while point-to-landmark proximity
//! reflects class probabilities. A single parameter `alpha` moves the layout
//! between the two structures; warm-started sweeps over `alpha` give smooth
//! transitions.
//!
//! Modules, bottom-up:
//!
//! * [`model`]: validated inputs, embedding state, hyperparameters.
//! * [`affinities`]: perplexity-calibrated `P^d` and class affinities `P^c`.
//! * [`optimizer`]: costs, gradients, the descent loop, alpha sweeps.
//! * [`tsne`] / [`baseline`]: the plain t-SNE reference and the combined-KL comparison method.
//! * [`metrics`]: trustworthiness, continuity, class consistency.
//! * [`synthetic`], [`classifier`], [`io`]: experiment data, the MLP, file formats.

pub mod affinities;
pub mod baseline;
pub mod classifier;
pub mod error;
pub mod io;
pub mod lowdim;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod synthetic;
pub mod tsne;

pub use error::{Error, Result};
pub use model::{ClassProbabilityMatrix, EmbeddingState, FeatureMatrix, Hyperparams};
