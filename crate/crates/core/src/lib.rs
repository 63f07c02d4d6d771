//! Decentralized content search over unstructured P2P overlays.
//!
//! Nodes summarize their locally stored document embeddings, diffuse those
//! summaries to the rest of the overlay with personalized-PageRank weighting,
//! and route search queries as biased random walks over the diffused
//! summaries. The crate provides the overlay graph model, embedding stores,
//! the diffusion algorithms (closed form, synchronous, asynchronous gossip),
//! the node-level query protocol, and a deterministic discrete-event
//! simulator with the accuracy and hop-count experiments built on top.

#![forbid(unsafe_code)]

pub mod config;
pub mod diffusion;
pub mod embeddings;
pub mod error;
pub mod graph;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
