//! # simca
//!
//! Learns item embeddings from an observed capacity-constrained assignment of
//! users to items.
//!
//! Users and items live in a shared latent space; each user/item pair also
//! has a geographic distance. The affinity of a pair mixes both,
//! `M = (1 - alpha) U V^T - alpha D`, and the observed matching is the
//! assignment maximizing total affinity under item capacities. Given `U`,
//! `D`, the capacities and that matching, training recovers `V` by
//! minimizing the cross-entropy between the matching and the
//! entropy-regularized optimal transport plan of `M`, whose gradient has a
//! closed form in terms of the plan.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`model`] | domain types, affinity function and its gradients |
//! | [`lap`] | exact capacity-constrained assignment, brute-force oracle, coupling rounding |
//! | [`sinkhorn`] | log-domain Sinkhorn with slack handling, entropy, regularized value |
//! | [`trainer`] | loss, analytic gradients, Adam, training loop |
//! | [`datagen`] | synthetic datasets and noise models |
//! | [`metrics`] | F1 scores, embedding distance, evaluation |
//! | [`bundle`] | dataset bundle and history file formats |
//! | [`experiment`] | configuration, train/evaluate/sweep commands |
//! | [`plot`] | SVG charts |
//!
//! ```
//! use simca::datagen::{generate_dataset, GenConfig};
//! use simca::trainer::{train, TrainConfig};
//!
//! let data = generate_dataset(&GenConfig { n: 40, m: 3, k: 3, seed: 1, ..GenConfig::default() })?;
//! let out = train(&data, &TrainConfig { epochs: 20, ..TrainConfig::default() })?;
//! assert_eq!(out.history.len(), 20);
//! # Ok::<(), simca::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod datagen;
mod error;
pub mod experiment;
pub mod lap;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod sinkhorn;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{
    AffinityParams, CapacityVector, Coupling, Dataset, DistanceMatrix, EmbeddingMatrix,
    PureMatching,
};
