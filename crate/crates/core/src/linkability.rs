//! Score-wise and system-wide linkability of protected templates.
//!
//! For a linkage score `s` the likelihood ratio `LR(s) = p(s|H_m) / p(s|H_nm)`
//! and the prior ratio `omega = p(H_m) / p(H_nm)` give the posterior odds
//! `LR(s) * omega`. The local measure is
//!
//! ```text
//! D(s) = 0                                  if LR(s) * omega <= 1
//! D(s) = 2 * LR*omega / (1 + LR*omega) - 1  otherwise
//! ```
//!
//! i.e. `p(H_m|s) - p(H_nm|s)` clipped at zero, and the global measure is the
//! mated-density-weighted integral `D_sys = ∫ p(s|H_m) D(s) ds`. Both lie in
//! `[0, 1]`.
//!
//! Zero densities are handled explicitly: a bin with mated mass and no
//! non-mated mass has an infinite ratio (`D = 1`), and a bin with no mass on
//! either side carries no evidence (`D = 0`, and it adds nothing to `D_sys`).

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::density::{estimate_densities, DensityConfig, DensityError, DensityPair};
use crate::score::{Label, PriorConfig, ScoreSet};

/// Slack allowed on `[0, 1]` before `D_sys` counts as an internal error.
pub const RANGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LinkabilityError {
    #[error("local measure has {got} bins but the density grid has {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("local measure at bin {0} is outside [0, 1]")]
    LocalOutOfRange(usize),
    #[error("internal invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// Point-wise likelihood ratio of the two score densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LikelihoodRatio {
    Finite(f64),
    /// Mated mass where the non-mated density is zero.
    Infinite,
    /// Neither hypothesis has mass here.
    NoEvidence,
}

impl LikelihoodRatio {
    /// Posterior odds `LR * omega`; `None` when there is no evidence.
    pub fn odds(self, omega: f64) -> Option<f64> {
        match self {
            LikelihoodRatio::Finite(lr) => Some(lr * omega),
            LikelihoodRatio::Infinite => Some(f64::INFINITY),
            LikelihoodRatio::NoEvidence => None,
        }
    }

    /// True where the templates are more likely mated than not.
    pub fn favours_mated(self, omega: f64) -> bool {
        self.odds(omega).is_some_and(|x| x > 1.0)
    }
}

impl fmt::Display for LikelihoodRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LikelihoodRatio::Finite(v) => write!(f, "{v}"),
            LikelihoodRatio::Infinite => f.write_str("inf"),
            LikelihoodRatio::NoEvidence => f.write_str("none"),
        }
    }
}

// JSON: finite ratios as numbers, +infinity as "inf", no evidence as null.
impl Serialize for LikelihoodRatio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LikelihoodRatio::Finite(v) => s.serialize_f64(*v),
            LikelihoodRatio::Infinite => s.serialize_str("inf"),
            LikelihoodRatio::NoEvidence => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for LikelihoodRatio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = LikelihoodRatio;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative number, \"inf\" or null")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Self::Value, E> {
                if v.is_finite() && v >= 0.0 {
                    Ok(LikelihoodRatio::Finite(v))
                } else {
                    Err(E::custom(format!("invalid likelihood ratio {v}")))
                }
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
                Ok(LikelihoodRatio::Finite(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                match v {
                    "inf" => Ok(LikelihoodRatio::Infinite),
                    _ => Err(E::custom(format!("unexpected string {v:?}"))),
                }
            }

            fn visit_none<E: de::Error>(self) -> Result<Self::Value, E> {
                Ok(LikelihoodRatio::NoEvidence)
            }

            fn visit_unit<E: de::Error>(self) -> Result<Self::Value, E> {
                Ok(LikelihoodRatio::NoEvidence)
            }
        }
        d.deserialize_any(V)
    }
}

/// `p_m / p_nm` with the zero-density conventions described above.
pub fn likelihood_ratio(p_m: f64, p_nm: f64) -> LikelihoodRatio {
    debug_assert!(p_m >= 0.0 && p_nm >= 0.0, "densities must be non-negative");
    if p_nm > 0.0 {
        LikelihoodRatio::Finite(p_m / p_nm)
    } else if p_m > 0.0 {
        LikelihoodRatio::Infinite
    } else {
        LikelihoodRatio::NoEvidence
    }
}

/// Local linkability `D(s)` for a likelihood ratio and prior ratio.
pub fn local_linkability(lr: LikelihoodRatio, omega: f64) -> f64 {
    match lr.odds(omega) {
        Some(x) if x > 1.0 => {
            if x.is_infinite() {
                1.0
            } else {
                // 2x/(1+x) - 1, written to avoid cancellation near x = 1.
                (x - 1.0) / (x + 1.0)
            }
        }
        _ => 0.0,
    }
}

/// Global linkability `D_sys` as a Riemann sum over the grid.
///
/// The sum is divided by the total mated mass (which is 1 within the density
/// tolerance) so that the bounds `D = 0 everywhere ⇒ 0` and
/// `D = 1 on all mated mass ⇒ 1` hold exactly in floating point.
pub fn global_linkability(dp: &DensityPair, d_local: &[f64]) -> Result<f64, LinkabilityError> {
    if d_local.len() != dp.bins() {
        return Err(LinkabilityError::GridMismatch {
            expected: dp.bins(),
            got: d_local.len(),
        });
    }
    if let Some(b) = d_local.iter().position(|d| !(0.0..=1.0).contains(d)) {
        return Err(LinkabilityError::LocalOutOfRange(b));
    }
    let masses = dp.masses(Label::Mated);
    let total: f64 = masses.iter().sum();
    let weighted: f64 = masses.iter().zip(d_local).map(|(m, d)| m * d).sum();
    let d_sys = weighted / total;
    if !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(&d_sys) {
        return Err(LinkabilityError::InvariantViolation(format!(
            "D_sys = {d_sys} outside [0, 1]"
        )));
    }
    Ok(d_sys.clamp(0.0, 1.0))
}

/// Per-bin likelihood ratios, local linkability and the global value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkabilityProfile {
    pub omega: f64,
    pub d_sys: f64,
    pub edges: Vec<f64>,
    pub lr: Vec<LikelihoodRatio>,
    pub d_local: Vec<f64>,
    /// Scores where `LR * omega` crosses 1.
    pub boundary_scores: Vec<f64>,
}

impl LinkabilityProfile {
    pub fn bins(&self) -> usize {
        self.d_local.len()
    }
}

/// Locations where the sign of `LR * omega - 1` changes between bins that
/// carry evidence. Empty bins in between are skipped; the crossing is put in
/// the middle of the gap.
fn boundary_scores(edges: &[f64], lr: &[LikelihoodRatio], omega: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut prev: Option<(usize, bool)> = None;
    for (b, r) in lr.iter().enumerate() {
        if *r == LikelihoodRatio::NoEvidence {
            continue;
        }
        let side = r.favours_mated(omega);
        if let Some((pb, pside)) = prev {
            if pside != side {
                out.push(0.5 * (edges[pb + 1] + edges[b]));
            }
        }
        prev = Some((b, side));
    }
    out
}

/// Linkability of an already-estimated density pair.
pub fn profile_from_densities(
    dp: &DensityPair,
    omega: f64,
) -> Result<LinkabilityProfile, LinkabilityError> {
    let lr: Vec<LikelihoodRatio> = dp
        .p_mated()
        .iter()
        .zip(dp.p_non_mated())
        .map(|(&m, &nm)| likelihood_ratio(m, nm))
        .collect();
    let d_local: Vec<f64> = lr.iter().map(|&r| local_linkability(r, omega)).collect();
    let d_sys = global_linkability(dp, &d_local)?;
    Ok(LinkabilityProfile {
        omega,
        d_sys,
        edges: dp.edges().to_vec(),
        boundary_scores: boundary_scores(dp.edges(), &lr, omega),
        lr,
        d_local,
    })
}

/// Densities and linkability profile for one score set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub densities: DensityPair,
    pub profile: LinkabilityProfile,
}

/// Estimates densities, then evaluates `LR`, `D(s)` and `D_sys`.
pub fn evaluate(
    scores: &ScoreSet,
    prior: &PriorConfig,
    density_cfg: &DensityConfig,
) -> Result<Evaluation, LinkabilityError> {
    let densities = estimate_densities(scores, density_cfg)?;
    let profile = profile_from_densities(&densities, prior.omega())?;
    Ok(Evaluation { densities, profile })
}

/// `D_sys` on a fixed density pair for each prior ratio in `omegas`.
pub fn omega_sweep(
    dp: &DensityPair,
    omegas: &[f64],
) -> Result<Vec<LinkabilityProfile>, LinkabilityError> {
    omegas
        .iter()
        .map(|&w| profile_from_densities(dp, w))
        .collect()
}
