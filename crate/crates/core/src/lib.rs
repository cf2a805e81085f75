//! Preference networks for hybrid recommendation.
//!
//! Every observed rating is a node of a conditional Markov random field;
//! ratings by the same user or on the same item are linked through
//! correlation features on positively correlated pairs, and each node also
//! carries identity and content features. Weights are fitted by maximising a
//! regularised pseudo-likelihood with per-user stochastic gradient ascent.
//! The fitted network predicts ratings (with a confidence), jointly
//! predicts small sets of ratings, and ranks top-N candidates by the energy
//! change of adding them to the network.
//!
//! User-based and item-based collaborative filtering baselines and the
//! evaluation harness (MAE, 0/1 error, expected utility, recall and
//! sparsity sweeps) live alongside the model.

pub mod baselines;
pub mod checkpoint;
pub mod correlation;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod inference;
pub mod model;
pub mod par;
pub mod trainer;

pub use error::{Error, Result};
