//! Sequential recommendation with training-data augmentation.
//!
//! The pipeline runs ingest, preprocess, augment, train and evaluate. An
//! experiment grid sweeps strategies, augmentation counts and user fractions.

pub mod augment;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod math;
pub mod preprocess;
pub mod recommender;
pub mod rng;
pub mod runner;
pub mod synthetic;
pub mod types;

pub use error::{Error, Result};
pub use types::{Interaction, ItemId, UserId};
