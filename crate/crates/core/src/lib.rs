//! Order-preserving taxonomy embeddings and hierarchy-aware classifiers.
//!
//! The crate is organised bottom-up:
//!
//! - [`hierarchy`]: leveled label hierarchies, closure/reduction, edge splits,
//!   negative sampling and class weights.
//! - [`geometry`]: order-violation energies (order-embeddings, Euclidean and
//!   hyperbolic entailment cones), Poincaré-ball primitives and gradients.
//! - [`optim`]: SGD, Adam and Riemannian SGD update rules.
//! - [`trainer`]: max-margin training of label embeddings and threshold tuning.
//! - [`joint`]: joint label + item embeddings and classification by minimum
//!   order violation.
//! - [`heads`]: probability heads over logits (one-vs-rest, per-level,
//!   marginalization, masked per-level, hierarchical softmax).
//! - [`metrics`]: micro/macro scores, rates, hit@k and graph reconstruction.
//! - [`io`]: the TSV/JSON file formats shared with the command-line tool.

pub mod error;
pub mod geometry;
pub mod heads;
pub mod hierarchy;
pub mod io;
pub mod joint;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{ConeFormulation, EnergyModel, ModelKind};
pub use heads::{HeadConfig, HeadKind, LabelLayout};
pub use hierarchy::{Edge, EdgeSplit, Hierarchy, HierarchyMode, NodeIdx};
pub use joint::{ItemMap, ItemSet};
pub use metrics::{ConfusionCounts, MetricsReport};
pub use optim::{OptimizerKind, OptimizerState, ParamSpace};
pub use trainer::{EmbeddingTable, Space, TrainConfig, TrainReport};
