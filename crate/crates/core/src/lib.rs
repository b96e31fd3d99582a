//! Energy-based models: Boltzmann machines, restricted Boltzmann machines,
//! conditional RBMs and deep belief networks.
//!
//! Every sampled or approximated quantity has an exact counterpart in
//! [`oracle`], which enumerates the full configuration space of small binary
//! models. The test suites lean on that pairing heavily.
//!
//! ## Layout
//!
//! - [`model`] parameter containers, unit families, datasets, RNG streams, energies
//! - [`units`] conditional distributions and their means for each unit family
//! - [`gibbs`] block Gibbs for RBMs, single-site Gibbs for BMs, data generation
//! - [`oracle`] brute-force partition functions, likelihoods, gradients, thermodynamics
//! - [`hopfield`] Hebbian associative memory with asynchronous recall
//! - [`trainer`] contrastive divergence for RBMs and BMs
//! - [`crbm`] conditional RBMs with autoregressive history links
//! - [`dbn`] greedy stacking, autoencoder unrolling, backprop fine-tuning
//! - [`persist`] versioned JSON model files

pub mod crbm;
pub mod dbn;
pub mod gibbs;
pub mod hopfield;
pub mod model;
pub mod oracle;
pub mod persist;
pub mod trainer;
pub mod units;

pub use model::{
    bm_energy, energy, init_params, BmParams, Dataset, Error, RbmParams, Result, RngStream,
    TrainConfig, UnitFamily,
};
