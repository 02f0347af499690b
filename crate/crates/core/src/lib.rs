//! Sarcasm-detection benchmark toolkit.
//!
//! Two context-aware classifiers are implemented and compared against three
//! SVM baselines on SARC-style Reddit data:
//!
//! * [`cascade`]: content CNN concatenated with CCA-fused user embeddings and
//!   forum discourse vectors.
//! * [`rcnn`]: contextual encoder, BiLSTM, position-wise feedforward,
//!   max-over-time pooling.
//! * [`baselines`]: bag-of-words SVM, CNN-SVM and CUE-SVM.
//!
//! [`harness`] holds metrics, significance testing, random search and the
//! experiment runner.

pub mod archive;
pub mod corpus;
mod error;
pub mod neural;
pub mod profiles;
pub mod training;
pub mod cascade;
pub mod rcnn;
pub mod baselines;
pub mod harness;

pub use error::{Error, Result};
