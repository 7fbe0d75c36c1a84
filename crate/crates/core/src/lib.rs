//! Desk-scale dual-encoder retrieval laboratory.
//!
//! Trains bag-of-tokens two-tower encoders (symmetric, asymmetric, and
//! asymmetric with a shared projection) with in-batch contrastive
//! objectives: the standard softmax loss, its bidirectional form,
//! same-tower negatives (SamToNe) and the PAIR hybrid. Trained models are
//! evaluated with exact cosine retrieval (P@1, MRR, NDCG@10) and probed
//! with embedding-space diagnostics (top-1 similarity distributions,
//! query-query / query-document ratio histograms, exact t-SNE).
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` deliberately rejects NaN

pub mod data;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod fsutil;
pub mod losses;
pub mod numerics;
pub mod retrieval;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use encoder::{Architecture, Tower, TowerConfig};
pub use losses::{LossConfig, Objective, SamToNeMode};
pub use trainer::{OptimizerKind, TrainConfig};

pub type Matrix = numerics::Matrix<f64>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type ModelParams = encoder::ModelParams<f64>;
pub type ModelParams32 = encoder::ModelParams<f32>;
pub type Checkpoint = encoder::Checkpoint<f64>;
pub type SimMatrices = losses::SimMatrices<f64>;
pub type LossResult = losses::LossResult<f64>;
pub type Index = retrieval::Index<f64>;
pub type Ranking = retrieval::Ranking<f64>;
pub type Projection2D = diagnostics::Projection2D<f64>;
pub type TrainOutcome = trainer::TrainOutcome<f64>;
