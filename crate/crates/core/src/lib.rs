//! Synthetic packet-level header trace generation.
//!
//! The pipeline ingests real header traces (CSV or classic PCAP), fits
//! per-field schemas, encodes records either as one-hot vectors or as
//! learned skip-gram field embeddings, trains a Wasserstein GAN whose
//! critic can be augmented with graph-derived deep features, and scores
//! the synthesized traces against the originals with per-field JS
//! divergence and normalized earth mover's distance.
//!
//! Modules map onto pipeline stages:
//!
//! - [`trace_io`]: trace ingestion, seeded reference-trace generation, output
//! - [`encoding`]: field schemas, one-hot and embedding codecs
//! - [`diffcore`]: reverse-mode differentiable tensor core and optimizers
//! - [`gnn`]: per-record field graphs, message passing, autoencoder pretraining
//! - [`gan`]: generator/critic models and adversarial training
//! - [`metrics`]: distribution-fidelity metrics and reporting
//!
//! The `parallel` feature (on by default) routes the dense kernels and
//! batch loops through rayon; disabling it falls back to sequential
//! execution with bit-identical results.

pub mod diffcore;
pub mod encoding;
pub mod gan;
pub mod gnn;
pub mod metrics;
pub mod trace_io;
