//! Locally-balanced Metropolis–Hastings samplers with non-Gaussian noise.
//!
//! The crate provides balancing functions, symmetric noise laws, exact
//! proposal samplers and acceptance ratios, an adaptive chain driver, the
//! high-dimensional efficiency calculator, and the experiment harness used by
//! the `lbmh` command-line tool.
//!
//! ```
//! use lbmh::asymptotics::{abc_functionals, optimal_ell};
//! use lbmh::targets::ProductFactor;
//! use lbmh::Preset;
//!
//! let f = abc_functionals(&ProductFactor::hyperbolic(0.1)?)?;
//! let barker = optimal_ell(Preset::Barker.theta_sq(&f)?)?;
//! let rademacher = optimal_ell(Preset::BarkerRademacher.theta_sq(&f)?)?;
//! assert!((rademacher.h_star / barker.h_star - 2.47).abs() < 0.01);
//! # Ok::<(), lbmh::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod balancing;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod noise;
pub mod presets;
pub mod proposal;
pub mod quadrature;
pub mod seeds;
pub mod targets;

pub use balancing::{BalancingFunction, BalancingKind, BalancingSpec};
pub use error::{Error, Result};
pub use noise::{NoiseDistribution, NoiseKind, NoiseSpec};
pub use proposal::{LBProposal, NormalizerBranch, ProposalDraw, SamplingPath, Scales};
pub use targets::{FactorSpec, TargetConfig, TargetKind, TargetModel};
pub use presets::Preset;
pub use asymptotics::{EfficiencySummary, TargetFunctionals};
pub use engine::{ChainOutput, ChainSettings, AdaptState};
