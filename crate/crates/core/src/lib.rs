//! Retrieval experimentation library that learns document term weights from
//! term occurrence-position patterns.
//!
//! The pipeline: a positional inverted index feeds per-(term, document)
//! position distributions, quantized into fixed-size quantile vectors whose
//! L2 geometry realizes the 1-D quadratic Wasserstein (W2) distance.
//! Wasserstein k-means over those vectors yields a term-document
//! representation (distances to the centroids) and a term-collection
//! representation (their sum or mean). A small MLP maps both to a scalar
//! term weight; query-document scores are sums of term weights. Models —
//! fixed BM25, learnable BM25, or the MLP — are trained with a pairwise
//! RankNet loss under Adam and evaluated by mean average precision on
//! TREC-format collections.
//!
//! Numeric kernels are generic over the scalar type (see [`Scalar`]);
//! the concrete aliases below pin `f64`, which the CLI and all file
//! formats use.

#![forbid(unsafe_code)]

pub mod artifact;
pub mod clustering;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod index;
pub mod models;
pub mod parallel;
pub mod scalar;
pub mod training;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar for the CLI and on-disk artifacts.
pub type Real = f64;

/// Quantile vector over the default scalar.
pub type QuantileVec = transport::QuantileVector<Real>;
/// Cluster model over the default scalar.
pub type Clusters = clustering::ClusterModel<Real>;
/// Representation store over the default scalar.
pub type RepStore = models::RepStore<Real>;
/// Ranking-model parameters over the default scalar.
pub type Params = models::ModelParams<Real>;
