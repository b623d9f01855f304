//! Normalized linear autoencoder recommenders.
//!
//! The crate fits closed-form item-to-item models (LAE, EASE, DLAE) over
//! degree-normalized item grams, evaluates them with sliced top-K metrics,
//! and runs sweep/ablation/noise/timing experiments.
//!
//! ```no_run
//! use lare::{fit, ingest, k_core, split, InputFormat, NormRecipe, SolverConfig, SplitConfig};
//! # fn main() -> lare::Result<()> {
//! let raw = ingest("ratings.tsv".as_ref(), InputFormat::Tsv, None)?;
//! let x = k_core(&raw, 5, 5)?;
//! let bundle = split(&x, &SplitConfig::strong(42))?;
//! let model = fit(&bundle.train, &SolverConfig::lae(1.0, NormRecipe::dan(0.2, 0.5)))?;
//! # Ok(()) }
//! ```

// `!(x > 0.0)` style checks are how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod interactions;
pub mod linalg;
pub mod manifest;
pub mod models;
pub mod normalization;
pub mod synthetic;

pub use error::{ErrorClass, LareError, Result};
pub use evaluation::{evaluate, evaluate_set, EvalConfig, EvalReport, Metric, Slice};
pub use interactions::{
    ingest, inject_noise, k_core, split, EvalSet, InputFormat, InteractionMatrix, NoiseConfig,
    Protocol, SplitBundle, SplitConfig,
};
pub use linalg::{DenseMatrix, SpectrumReport};
pub use models::{fit, ItemModel, ModelKind, PopularityScorer, Scorer, SolverConfig};
pub use normalization::{build_gram, DegreePolicy, NormKind, NormRecipe, NormalizedGram};
