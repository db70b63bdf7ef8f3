//! Source-free graph domain adaptation.
//!
//! A graph classifier is pretrained on a labeled source dataset and then
//! adapted to an unlabeled target dataset without touching the source again.
//! Adaptation combines four signals:
//!
//! * a ranking loss that aligns each graph's similarity ranks with the
//!   proximity order recovered by spectral seriation ([`seriation`]),
//! * a split of the target set into harmonic and inharmonic graphs from
//!   spectral clustering and silhouette scores ([`harmonic`]),
//! * adversarial subgraph extraction with a KL consistency term on the
//!   inharmonic graphs ([`align`]),
//! * confidence-filtered pseudo-labels on the harmonic graphs ([`pseudolabel`]).
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases at
//! the crate root fix the scalar for the common cases.

pub mod align;
pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod error;
pub mod harmonic;
pub mod linalg;
pub mod matrix;
pub mod optim;
pub mod pipeline;
pub mod pseudolabel;
pub mod scalar;
pub mod seriation;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

pub use data::{FeatureSchema, Graph, GraphBatch, GraphDataset};
pub use pipeline::{AdaptConfig, MetricsReport, ModelState};

/// Dense matrix in double precision.
pub type Matrix64 = Matrix<f64>;
/// Dense matrix in single precision.
pub type Matrix32 = Matrix<f32>;
/// Graph dataset with double precision node features.
pub type Dataset64 = GraphDataset<f64>;
/// Graph dataset with single precision node features.
pub type Dataset32 = GraphDataset<f32>;
/// Model state (encoder, extractor, discriminator, optimizer moments) in double precision.
pub type Model64 = ModelState<f64>;
/// Model state in single precision.
pub type Model32 = ModelState<f32>;
