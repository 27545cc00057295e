//! Low-rank compositional orthogonal transforms.
//!
//! Rotations are built from skew generators `A = U·Vᵀ − V·Uᵀ` through the
//! Cayley transform `R = (I − A)⁻¹(I + A)`, evaluated on input batches with the
//! Woodbury identity so that only `2r×2r` systems are ever inverted. Chains
//! of such rotations run exactly or to first order; [`adapter`] wraps a chain
//! around a frozen weight for fine-tuning.

pub mod adapter;
pub mod baselines;
pub mod bench;
pub mod cayley;
pub mod chain;
pub mod checkpoint;
pub mod error;
mod gemm;
pub mod matrix;
pub mod recovery;
pub mod rng;
pub mod skew;

pub use adapter::{backward, forward, merge, sgd_step, FactorGradients, LocoAdapter};
pub use cayley::{apply_rotation, cayley_naive, cayley_woodbury, materialize, TemperatureParam, WoodburyCore};
pub use chain::{chain_exact, chain_first_order, deviation_report, ChainMode, DeviationReport, RotationChain};
pub use error::{LocoError, Result};
pub use matrix::Matrix;
pub use rng::Rng;
pub use skew::{auxiliary_xy, build_skew, init_factors, LowRankSkewFactors};
