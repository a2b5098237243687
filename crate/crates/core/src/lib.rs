//! Suprema of canonical processes `X_t = Σ_k t_k X_k` over finite sets
//! `T ⊂ ℝⁿ`, driven by symmetric variables with Weibull tails
//! `P(|X| > t) = exp(-t^r)`, `0 < r ≤ 2`.
//!
//! The crate estimates `E sup_{t∈T} X_t` by Monte Carlo, evaluates the
//! `γ_α` partition functionals and their companions, builds the
//! conditionally Gaussian rearrangement representation and the permuted
//! weight transforms `T_π`, and runs end-to-end comparison experiments.
//!
//! Monte Carlo work is split into fixed chunks with their own random
//! substreams, so results are bit-identical for any worker count. The
//! `parallel` feature (on by default) runs chunks on rayon.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gamma;
pub mod harness;
pub mod laws;
pub mod mc_sup;
pub mod par;
pub mod points;
mod quad;
pub mod stream;
pub mod transforms;

pub use error::{Error, Result};
pub use gamma::{GammaKind, GammaValue, PartitionTree};
pub use laws::{MomentFunctional, WeibullLaw};
pub use mc_sup::{Driver, SupEstimate};
pub use points::{distance, MetricKind, PointSet};
pub use stream::RandomStream;
pub use transforms::{GammaMethod, Permutation, WeightVector};
