//! Channel-state training protocols for amplify-and-forward relay networks.
//!
//! The crate pairs every closed-form effective-SNR and capacity expression
//! with a signal-level Monte Carlo simulator that serves as its independent
//! check:
//!
//! - [`stats`]: seeded circular complex Gaussian sampling and a deterministic,
//!   parallel Monte Carlo engine with streaming moments.
//! - [`channel`]: block-fading channels, the training-based MMSE estimator and
//!   the estimate/error variance split.
//! - [`single`]: the single-antenna relay network and the P1/P2/P3 training
//!   protocols.
//! - [`mimo`]: the multi-antenna network with relay partitioning and the
//!   S1a/S1b/S2 schemes.
//! - [`experiments`]: canned reproductions of the tables and figure data with
//!   run manifests.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x >= 0.0)` deliberately rejects NaN.

pub mod channel;
pub mod error;
pub mod experiments;
pub mod mimo;
pub mod single;
pub mod stats;

pub use channel::{ChannelDraw, TrainingConfig, VarianceSplit};
pub use error::{Error, Result};
pub use mimo::{LemmaIdentity, MimoConfig, SchemeKind};
pub use single::{CapacityEstimate, EsnrEstimate, Method, ProtocolKind, SingleAntennaConfig};
pub use stats::{ComplexScalar, McPlan, MomentEstimate, RatioEstimate};

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
