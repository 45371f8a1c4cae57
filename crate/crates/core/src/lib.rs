//! Self-supervised graph representation learning with jointly learned
//! feature augmentation.
//!
//! The engine trains two linear augmentation heads together with a shared
//! GCN encoder under a Laplacian-Eigenmaps-style objective: an invariance
//! term pulls the two augmented views together while a row- or column-
//! orthogonality constraint keeps the embedding from collapsing, with no
//! negative sampling. Augmentation can happen before the encoder (`pre`)
//! or in the latent space afterwards (`post`); the latter encodes each
//! node once and is correspondingly cheaper.
//!
//! Crate layout mirrors the pipeline: [`graph`] holds sparse topology and
//! sampling, [`tape`] is a small reverse-mode autodiff engine, [`augmenter`]
//! / [`encoder`] / [`objective`] build the loss graph, [`trainer`] runs the
//! joint optimization, [`probe`] does frozen-embedding linear evaluation,
//! and [`dataio`] covers the on-disk formats plus a stochastic block model
//! generator for benchmarks.

pub mod augmenter;
pub mod dataio;
pub mod dense;
pub mod encoder;
pub mod graph;
pub mod objective;
pub mod probe;
pub mod tape;
pub mod trainer;
pub mod verify;

pub use dense::{stable_rank, Mat, Scalar};
pub use graph::{
    build_graph, neighbor_sample, normalize_adjacency, random_split, Graph, GraphError,
    NormalizedAdjacency, SampledBlock, SplitMask, SplitRole,
};
pub use tape::{grad_check, GradCheckReport, OpKind, Tape, TapeError, TensorId};
