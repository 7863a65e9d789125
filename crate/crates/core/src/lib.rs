//! Looped pseudo-task optimization: alternate clustering of item features
//! with retraining a classifier on the cluster labels until successive
//! clusterings agree, then derive a category tree from the classifier's
//! confusion.

pub mod cluster;
pub mod data;
pub mod encode;
pub mod error;
pub mod hierarchy;
pub mod labeling;
pub mod learner;
pub mod metrics;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use error::{LdpoError, Result};
