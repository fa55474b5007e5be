//! Discovery of history-dependent material models by gradient-based updating.
//!
//! The library covers the full loop from synthetic data generation to parameter
//! recovery:
//!
//! - [`tensor`] — symmetric tensor algebra, stress invariants, isotropic elasticity;
//! - [`autodiff`] — reverse-mode automatic differentiation over batched arrays,
//!   with differentiable Newton solves and vectorizing maps;
//! - [`constitutive`] — von Mises, Drucker-Prager and Lou-Zhang-Yoon elasto-plastic
//!   models with implicit return mappings, consistent tangents and yield-surface
//!   convexity enforcement;
//! - [`gru`] — a multi-layer gated recurrent unit material model;
//! - [`hybrid`] — hybridization graphs combining conventional and recurrent models;
//! - [`fem`] — hex8 meshes, strain extraction, internal-force assembly, the
//!   force-equilibrium loss, and a small forward solver for synthetic data;
//! - [`datagen`] — random polynomial strain paths, measurement-noise families,
//!   randomly deformed material patches and specimen loading schedules;
//! - [`discovery`] — the Adam-based local/global discovery loops, evaluation
//!   metrics and data set pruning;
//! - [`runner`] — config-driven entry points shared by the CLI binary and tests.
//!
//! See the crate `examples/` directory for one runnable example per capability.

pub mod autodiff;
pub mod config;
pub mod constitutive;
pub mod datagen;
pub mod discovery;
pub mod error;
pub mod fem;
pub mod gru;
pub mod hybrid;
pub mod runner;
pub mod tensor;

pub use error::{Error, Result};
