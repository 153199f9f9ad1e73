//! Noise-robust temporal alignment between clip and caption token sequences.
//!
//! Similarities between clips and captions are computed with a log-sum-exp
//! soft maximum over frame-word dot products. Sequences are aligned with
//! entropic optimal transport, optionally with an extra prompt bucket that
//! absorbs unalignable items. Dynamic time warping baselines, contrastive
//! losses, a retrieval harness and brute-force oracles sit alongside.

// Negated comparisons are how validation rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod bucket;
pub mod data;
pub mod error;
pub mod eval;
pub mod export;
pub mod io;
pub mod losses;
pub mod numeric;
pub mod oracle;
pub mod similarity;
pub mod sinkhorn;
pub mod synthetic;
pub mod tempalign;
pub mod verify;

pub use bucket::{
    extract_realignment, norton_distance, AlignmentMap, BucketConfig, FilteredPlan, MarginalScheme,
    PromptSource, RealignStrategy,
};
pub use data::{
    ClipRecord, Dataset, Marginals, SimilarityMatrix, TokenMatrix, TransportPlan, VideoDocument,
};
pub use error::{Error, Result};
pub use eval::{Measure, RecallReport, RetrievalConfig};
pub use losses::{LossConfig, TargetMatrix};
pub use similarity::{SimilarityConfig, SimilarityMode};
pub use sinkhorn::{sinkhorn_plan, SolverConfig};
pub use tempalign::{dtw, otam, CostMatrix};
