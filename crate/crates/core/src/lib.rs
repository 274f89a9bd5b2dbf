//! Harness for measuring how well in-context predictors (remote chat models
//! and offline references) learn matrix functions — vector p-norms, nuclear
//! norm, top-k singular values — from demonstrations, compared against
//! from-scratch gradient-trained baselines under an identical sequential
//! protocol.

pub mod baseline;
pub mod config;
pub mod datagen;
pub mod eval;
pub mod linalg;
pub mod predictor;
pub mod prompt;
pub mod report;
pub mod rng;
