//! Linear probing on the CLS and register-token embeddings of a vision
//! transformer, with OOD-generalization and anomaly-rejection evaluation.
//!
//! The main pieces:
//!
//! - [`backbone`]: a small frozen ViT with register tokens producing a
//!   [`TokenSet`] (CLS, patch and register embeddings after the final
//!   LayerNorm).
//! - [`features`]: mean pooling and the fusion strategies that build the
//!   probe input, e.g. `[CLS ; mean(registers)]`, plus the `RPF1` cache.
//! - [`probe`]: the linear classifier and its SGD trainer.
//! - [`scoring`] and [`metrics`]: MSP / energy scores, top-1 accuracy,
//!   AUROC and FPR@TPR95.
//! - [`harness`]: synthetic data, the experiment grid, reports and the CLI.

pub mod backbone;
pub mod error;
pub mod features;
mod framing;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod par;
pub mod probe;
pub mod scoring;

pub use backbone::{Backbone, BackboneConfig, Image, TokenSet};
pub use error::{Error, FormatError, Result};
pub use features::{FeatureVector, FusionStrategy, SplitTag};
pub use numerics::{Matrix, SeededRng};
pub use par::Exec;
pub use probe::{ProbeParams, TrainConfig};
pub use scoring::ScoreKind;
