//! Quantitative unlinkability evaluation for biometric template protection.
//!
//! Given mated and non-mated linkage-score samples, the crate estimates both
//! conditional score densities on a shared grid and derives the score-wise
//! linkability `D(s)` and the system-wide linkability `D_sys`. Around that
//! core sit accuracy-style baselines (KL divergence, DET/EER, cross-key DET,
//! RTMR), a synthetic template-protection testbed and a driver that runs the
//! full multi-key evaluation protocol and renders reports.

pub mod baselines;
pub mod bits;
pub mod cli;
pub mod container;
pub mod density;
pub mod linkability;
pub mod plot;
pub mod protocol;
pub mod score;
pub mod synth;

pub use density::{estimate_densities, evaluate_density, BinCount, DensityConfig, DensityPair};
pub use linkability::{
    evaluate, global_linkability, likelihood_ratio, local_linkability, Evaluation, LikelihoodRatio,
    LinkabilityProfile,
};
pub use score::{load_score_set, omega_from_enrollment, Label, PriorConfig, ScoreSet};
