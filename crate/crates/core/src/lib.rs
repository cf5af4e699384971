//! Joke-reader segmentation pipeline.
//!
//! Takes a sparse matrix of joke ratings, binarizes it into like/dislike
//! bits, fills the missing ratings with a Bernoulli RBM trained by
//! contrastive divergence, checks cluster tendency with the Hopkins
//! statistic, picks k with the elbow method, clusters the readers with
//! k-means or k-modes (Cao initialization), and reports per-cluster
//! preference patterns plus cluster-overlap diagnostics.
//!
//! The `prefcluster` binary exposes each stage as a subcommand and a
//! one-shot `pipeline` runner; every run is reproducible from a single
//! master seed, recorded with all stage outputs in a JSON manifest.

pub mod analysis;
pub mod clusterability;
pub mod clustering;
pub mod error;
pub mod pipeline;
pub mod ratings_io;
pub mod rbm;
pub mod seeds;
pub mod synth;

pub use error::{Error, Result};
