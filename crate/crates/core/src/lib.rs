//! Geometric sensitivity decomposition for softmax-linear classifiers.
//!
//! A logit `<w, x>` factors as `|w| |x| cos(phi)`. Splitting `|x|` and `phi`
//! into instance-dependent and instance-independent parts gives a head whose
//! effective norm `N(|dx|)` can be recalibrated after training without
//! changing any prediction.

// `!(x > 0.0)` rejects NaN along with nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod data;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;

pub use data::{EmbeddingBatch, ShiftFamily, ShiftSpec, ClusterSpec};
pub use error::{GsdError, Result};
pub use linalg::Matrix;
pub use model::{GeometricHead, HeadKind, Inference, Model, NormMode, TrainConfig};
