//! Multi-scale parametric t-SNE: perplexity-free neural network embeddings
//! with an out-of-sample extension, plus neighborhood-preservation quality
//! metrics (Q_NX, R_NX, AUC).
//!
//! The pipeline: [`similarities`] builds pairwise Gaussian neighborhoods in
//! the data space, either at a fixed perplexity or averaged over the dyadic
//! perplexity ladder 2, 4, ..., 2^H ("multi-scale", no perplexity to tune).
//! [`trainer`] fits a feed-forward ReLU network ([`neural_net`]) so that the
//! Student-t similarities of the network outputs match the data-space
//! similarities under the Kullback-Leibler divergence. Because the map is an
//! explicit function, new points are embedded by a forward pass alone.
//! [`quality`] scores embeddings by K-nearest-neighbor set agreement across
//! all neighborhood sizes, and [`datasets`] covers CSV ingestion, synthetic
//! data, and train/test splitting. The `msptsne` binary ([`cli`]) exposes the
//! whole experiment protocol.

pub mod cli;
pub mod datasets;
pub mod neural_net;
pub mod quality;
pub mod similarities;
pub mod trainer;
