//! Estimates of `p(s|H_m)` and `p(s|H_nm)` on one shared grid.
//!
//! The likelihood ratio is taken bin by bin, so both densities must always
//! live on identical edges. The default estimator is a histogram whose edges
//! cover the pooled support plus one guard bin on each side. Zero-count bins
//! keep density exactly 0; the likelihood-ratio layer decides what that means.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::score::{Label, ScoreSet};

/// Tolerance on `sum(p * width) == 1`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Clamp applied to the Freedman–Diaconis bin count.
pub const AUTO_BINS_MIN: usize = 20;
pub const AUTO_BINS_MAX: usize = 400;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("all {0} scores are identical and point-mass handling is disabled")]
    DegenerateSupport(Label),
    #[error("bin count must be at least 2, got {0}")]
    InvalidBins(usize),
    #[error("invalid grid range [{lo}, {hi}): {reason}")]
    InvalidRange { lo: f64, hi: f64, reason: String },
    #[error("invalid density pair: {0}")]
    Invalid(String),
}

/// Number of histogram bins spanning the pooled score support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BinCount {
    /// Freedman–Diaconis on the pooled sample, clamped to `[20, 400]`.
    #[default]
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for BinCount {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(BinCount::Auto);
        }
        let n: usize = s
            .parse()
            .map_err(|_| format!("expected `auto` or an integer, got {s:?}"))?;
        if n < 2 {
            return Err(format!("bin count must be at least 2, got {n}"));
        }
        Ok(BinCount::Fixed(n))
    }
}

impl Serialize for BinCount {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BinCount::Auto => s.serialize_str("auto"),
            BinCount::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BinCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            N(u64),
            S(String),
        }
        match Repr::deserialize(d)? {
            Repr::N(n) if n >= 2 => Ok(BinCount::Fixed(n as usize)),
            Repr::N(n) => Err(serde::de::Error::custom(format!(
                "bin count must be at least 2, got {n}"
            ))),
            Repr::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub bins: BinCount,
    /// Gaussian kernel smoothing with a per-side Silverman bandwidth.
    pub kde: bool,
    /// Represent a side whose scores are all identical as an ε-wide bin.
    pub point_mass: bool,
    /// Explicit `[lo, hi)` grid. Disables the automatic guard bins.
    pub range: Option<(f64, f64)>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            bins: BinCount::Auto,
            kde: false,
            point_mass: true,
            range: None,
        }
    }
}

/// Aligned density estimates of the mated and non-mated scores.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPair {
    edges: Vec<f64>,
    p_mated: Vec<f64>,
    p_non_mated: Vec<f64>,
    widths: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DensityPairRepr {
    edges: Vec<f64>,
    p_mated: Vec<f64>,
    p_non_mated: Vec<f64>,
}

impl Serialize for DensityPair {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DensityPairRepr {
            edges: self.edges.clone(),
            p_mated: self.p_mated.clone(),
            p_non_mated: self.p_non_mated.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityPair {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = DensityPairRepr::deserialize(d)?;
        DensityPair::new(r.edges, r.p_mated, r.p_non_mated).map_err(serde::de::Error::custom)
    }
}

impl DensityPair {
    /// Validates a pair given explicitly on `edges`.
    pub fn new(
        edges: Vec<f64>,
        p_mated: Vec<f64>,
        p_non_mated: Vec<f64>,
    ) -> Result<Self, DensityError> {
        let bins = p_mated.len();
        if bins == 0 || edges.len() != bins + 1 || p_non_mated.len() != bins {
            return Err(DensityError::Invalid(format!(
                "need B+1 edges and B densities per side; got {} edges, {} and {} densities",
                edges.len(),
                bins,
                p_non_mated.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DensityError::Invalid(
                "edges must be finite and strictly increasing".into(),
            ));
        }
        let widths: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
        for (name, p) in [("p_mated", &p_mated), ("p_non_mated", &p_non_mated)] {
            if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(DensityError::Invalid(format!(
                    "{name} must be finite and non-negative"
                )));
            }
            let total: f64 = p.iter().zip(&widths).map(|(p, w)| p * w).sum();
            if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(DensityError::Invalid(format!(
                    "{name} integrates to {total}, not 1"
                )));
            }
        }
        Ok(Self {
            edges,
            p_mated,
            p_non_mated,
            widths,
        })
    }

    /// Two discrete pmfs on unit-width bins `[0,1), [1,2), ...`.
    pub fn from_pmfs(p_mated: Vec<f64>, p_non_mated: Vec<f64>) -> Result<Self, DensityError> {
        let edges = (0..=p_mated.len()).map(|i| i as f64).collect();
        Self::new(edges, p_mated, p_non_mated)
    }

    pub fn bins(&self) -> usize {
        self.p_mated.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn p_mated(&self) -> &[f64] {
        &self.p_mated
    }

    pub fn p_non_mated(&self) -> &[f64] {
        &self.p_non_mated
    }

    pub fn density(&self, label: Label) -> &[f64] {
        match label {
            Label::Mated => &self.p_mated,
            Label::NonMated => &self.p_non_mated,
        }
    }

    /// Probability mass per bin, `p[b] * width[b]`.
    pub fn masses(&self, label: Label) -> Vec<f64> {
        self.density(label)
            .iter()
            .zip(&self.widths)
            .map(|(p, w)| p * w)
            .collect()
    }

    pub fn bin_of(&self, s: f64) -> Option<usize> {
        let first = *self.edges.first()?;
        let last = *self.edges.last()?;
        if !(s >= first && s < last) {
            return None;
        }
        Some(self.edges.partition_point(|&e| e <= s) - 1)
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

/// Densities of the bin containing `s`; `(0, 0)` outside the grid.
///
/// Bins are half-open `[e_b, e_{b+1})`, so a score on an interior edge belongs
/// to the bin on its right.
pub fn evaluate_density(dp: &DensityPair, s: f64) -> (f64, f64) {
    match dp.bin_of(s) {
        Some(b) => (dp.p_mated[b], dp.p_non_mated[b]),
        None => (0.0, 0.0),
    }
}

fn point_mass_width(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// Linear-interpolation quantile of a sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Freedman–Diaconis bin count for the pooled sample, clamped.
pub fn freedman_diaconis_bins(pooled: &[f64]) -> usize {
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n < 2 {
        return AUTO_BINS_MIN;
    }
    let range = sorted[n - 1] - sorted[0];
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let h = 2.0 * iqr * (n as f64).powf(-1.0 / 3.0);
    let bins = if h > 0.0 && range > 0.0 {
        (range / h).ceil()
    } else {
        AUTO_BINS_MAX as f64
    };
    (bins as usize).clamp(AUTO_BINS_MIN, AUTO_BINS_MAX)
}

fn minmax(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn base_edges(scores: &ScoreSet, cfg: &DensityConfig) -> Result<Vec<f64>, DensityError> {
    let pooled: Vec<f64> = scores.pooled().collect();
    let (min, max) = minmax(&pooled);
    let bins = match cfg.bins {
        BinCount::Fixed(n) if n < 2 => return Err(DensityError::InvalidBins(n)),
        BinCount::Fixed(n) => n,
        BinCount::Auto => freedman_diaconis_bins(&pooled),
    };

    if let Some((lo, hi)) = cfg.range {
        let bad = |reason: &str| DensityError::InvalidRange {
            lo,
            hi,
            reason: reason.into(),
        };
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(bad("bounds must be finite with lo < hi"));
        }
        if min < lo || max >= hi {
            return Err(bad("range does not cover every score"));
        }
        let w = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|k| lo + k as f64 * w).collect();
        edges.push(hi);
        return Ok(edges);
    }

    if max == min {
        let eps = point_mass_width(min);
        return Ok(vec![
            min - 1.5 * eps,
            min - 0.5 * eps,
            min + 0.5 * eps,
            min + 1.5 * eps,
        ]);
    }
    let w = (max - min) / bins as f64;
    let mut edges: Vec<f64> = (0..=bins + 2).map(|k| min + (k as f64 - 1.0) * w).collect();
    // Bins are half-open, so the largest score needs the last interior edge
    // strictly above it to stay out of the upper guard bin.
    if edges[bins + 1] <= max {
        edges[bins + 1] = max.next_up();
        edges[bins + 2] = edges[bins + 1] + w;
    }
    Ok(edges)
}

/// Splits the grid so that `v` sits alone in a bin of width ε.
fn insert_point_mass(edges: &mut Vec<f64>, v: f64) {
    let half = 0.5 * point_mass_width(v);
    let (a, b) = (v - half, v + half);
    edges.retain(|&e| e < a || e > b);
    edges.push(a);
    edges.push(b);
    edges.sort_by(f64::total_cmp);
    if edges[0] == a {
        let w = edges[1] - edges[0];
        edges.insert(0, a - w);
    }
    let n = edges.len();
    if edges[n - 1] == b {
        let w = edges[n - 1] - edges[n - 2];
        edges.push(b + w);
    }
}

fn histogram_masses(values: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut counts = vec![0usize; edges.len() - 1];
    for &v in values {
        let b = edges.partition_point(|&e| e <= v) - 1;
        counts[b] += 1;
    }
    let n = values.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Kernel mass in each bin, renormalized to the grid.
fn kde_masses(values: &[f64], edges: &[f64], bandwidth: f64) -> Vec<f64> {
    let cdf_at: Vec<f64> = edges
        .iter()
        .map(|&e| {
            values
                .iter()
                .map(|&x| normal_cdf((e - x) / bandwidth))
                .sum()
        })
        .collect();
    let raw: Vec<f64> = cdf_at.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|m| m / total).collect()
}

/// Estimates both conditional densities on one shared grid.
pub fn estimate_densities(
    scores: &ScoreSet,
    cfg: &DensityConfig,
) -> Result<DensityPair, DensityError> {
    let mut degenerate = Vec::new();
    for side in [Label::Mated, Label::NonMated] {
        let (lo, hi) = minmax(scores.side(side));
        if lo == hi {
            if !cfg.point_mass {
                return Err(DensityError::DegenerateSupport(side));
            }
            degenerate.push(lo);
        }
    }

    let mut edges = base_edges(scores, cfg)?;
    if cfg.range.is_none() {
        for &v in &degenerate {
            insert_point_mass(&mut edges, v);
        }
    }

    let side_masses = |values: &[f64]| {
        let (lo, hi) = minmax(values);
        if cfg.kde && lo < hi {
            let h = silverman_bandwidth(values);
            if h > 0.0 && h.is_finite() {
                let m = kde_masses(values, &edges, h);
                if m.iter().all(|v| v.is_finite()) {
                    return m;
                }
            }
        }
        histogram_masses(values, &edges)
    };
    let m_mass = side_masses(scores.mated());
    let nm_mass = side_masses(scores.non_mated());

    let widths: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
    let to_density = |mass: Vec<f64>| -> Vec<f64> {
        mass.into_iter().zip(&widths).map(|(m, w)| m / w).collect()
    };
    DensityPair::new(edges, to_density(m_mass), to_density(nm_mass))
}
