//! Accuracy-oriented comparison metrics: KL divergence, DET curves with EER,
//! cross-key DET (CMR/FCMR) and the RTMR curve.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{Label, ScoreSet, MIN_SCORES_PER_SIDE};

/// Per-bin slack under which two pmfs count as equal.
pub const KL_EQUALITY_TOLERANCE: f64 = 1e-12;
const PMF_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum KlError {
    #[error("pmfs have different lengths ({p} vs {q})")]
    LengthMismatch { p: usize, q: usize },
    #[error("{0} is not a normalized pmf")]
    NotNormalized(&'static str),
}

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("too few {side} scores: {count} (need at least {MIN_SCORES_PER_SIDE})")]
    TooFewScores { side: Label, count: usize },
    #[error("scores must be finite")]
    NonFinite,
}

/// KL divergence, or `Undefined` where `Q` is zero under mass of `P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlResult {
    Value(f64),
    Undefined,
}

impl KlResult {
    pub fn value(self) -> Option<f64> {
        match self {
            KlResult::Value(v) => Some(v),
            KlResult::Undefined => None,
        }
    }
}

impl fmt::Display for KlResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KlResult::Value(v) => write!(f, "{v:.5}"),
            KlResult::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for KlResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            KlResult::Value(v) => s.serialize_f64(*v),
            KlResult::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for KlResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(KlResult::Value(v)),
            Repr::Str(s) if s == "undefined" => Ok(KlResult::Undefined),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("unexpected {s:?}"))),
        }
    }
}

fn check_pmf(p: &[f64], name: &'static str) -> Result<(), KlError> {
    let ok = p.iter().all(|v| v.is_finite() && *v >= 0.0)
        && (p.iter().sum::<f64>() - 1.0).abs() <= PMF_TOLERANCE;
    if ok {
        Ok(())
    } else {
        Err(KlError::NotNormalized(name))
    }
}

/// `sum_s P(s) ln(P(s) / Q(s))` over the bins where `P(s) > 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<KlResult, KlError> {
    if p.len() != q.len() {
        return Err(KlError::LengthMismatch {
            p: p.len(),
            q: q.len(),
        });
    }
    check_pmf(p, "P")?;
    check_pmf(q, "Q")?;
    if p.iter()
        .zip(q)
        .all(|(a, b)| (a - b).abs() <= KL_EQUALITY_TOLERANCE)
    {
        return Ok(KlResult::Value(0.0));
    }
    let mut sum = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b == 0.0 {
                return Ok(KlResult::Undefined);
            }
            sum += a * (a / b).ln();
        }
    }
    Ok(KlResult::Value(sum.max(0.0)))
}

/// Whether larger scores mean "more alike" or "less alike".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Similarity,
    #[default]
    Dissimilarity,
}

impl FromStr for Orientation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "similarity" => Ok(Orientation::Similarity),
            "dissimilarity" | "distance" => Ok(Orientation::Dissimilarity),
            other => Err(format!(
                "unknown orientation {other:?} (expected similarity or dissimilarity)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetMode {
    /// Same-key comparisons: FMR / FNMR.
    Accuracy,
    /// Cross-key comparisons: CMR / FCMR.
    CrossKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub mode: DetMode,
    pub orientation: Orientation,
    pub thresholds: Vec<f64>,
    pub fmr: Vec<f64>,
    pub fnmr: Vec<f64>,
    pub eer: f64,
}

impl DetCurve {
    fn column_names(&self) -> (&'static str, &'static str) {
        match self.mode {
            DetMode::Accuracy => ("fmr", "fnmr"),
            DetMode::CrossKey => ("cmr", "fcmr"),
        }
    }

    /// Two-column CSV of the operating points.
    pub fn to_csv(&self) -> String {
        let (a, b) = self.column_names();
        two_column_csv(a, b, &self.fmr, &self.fnmr)
    }
}

/// FNMR against the rate at which renewed templates are still matched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtmrCurve {
    pub orientation: Orientation,
    pub thresholds: Vec<f64>,
    pub fnmr: Vec<f64>,
    pub rtmr: Vec<f64>,
    /// Rate at the operating point where FNMR equals RTMR.
    pub crossing: f64,
}

impl RtmrCurve {
    pub fn to_csv(&self) -> String {
        two_column_csv("fnmr", "rtmr", &self.fnmr, &self.rtmr)
    }
}

fn two_column_csv(a: &str, b: &str, xs: &[f64], ys: &[f64]) -> String {
    let mut out = format!("{a},{b}\n");
    for (x, y) in xs.iter().zip(ys) {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Thresholds and acceptance rates of the genuine (`g`) and impostor (`i`)
/// score sets, plus the rate at the crossing.
struct Sweep {
    thresholds: Vec<f64>,
    false_accept: Vec<f64>,
    false_reject: Vec<f64>,
    crossing: f64,
}

fn sweep(genuine: &[f64], impostor: &[f64], orientation: Orientation) -> Result<Sweep, CurveError> {
    for (side, v) in [(Label::Mated, genuine), (Label::NonMated, impostor)] {
        if v.len() < MIN_SCORES_PER_SIDE {
            return Err(CurveError::TooFewScores {
                side,
                count: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CurveError::NonFinite);
        }
    }
    let g = sorted(genuine);
    let i = sorted(impostor);
    let mut thresholds: Vec<f64> = g.iter().chain(&i).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    match orientation {
        Orientation::Similarity => thresholds.push(thresholds[thresholds.len() - 1].next_up()),
        Orientation::Dissimilarity => thresholds.insert(0, thresholds[0].next_down()),
    }

    let (ng, ni) = (g.len() as f64, i.len() as f64);
    // count of values strictly below / at most t
    let below = |v: &[f64], t: f64| v.partition_point(|&x| x < t);
    let at_most = |v: &[f64], t: f64| v.partition_point(|&x| x <= t);
    let (mut fa, mut fr) = (Vec::new(), Vec::new());
    for &t in &thresholds {
        match orientation {
            Orientation::Similarity => {
                fa.push((i.len() - below(&i, t)) as f64 / ni);
                fr.push(below(&g, t) as f64 / ng);
            }
            Orientation::Dissimilarity => {
                fa.push(at_most(&i, t) as f64 / ni);
                fr.push((g.len() - at_most(&g, t)) as f64 / ng);
            }
        }
    }
    let crossing = crossing_rate(&fa, &fr);
    Ok(Sweep {
        thresholds,
        false_accept: fa,
        false_reject: fr,
        crossing,
    })
}

/// Linear interpolation at the first sign change of `fr - fa`, scanning from
/// the lowest threshold.
fn crossing_rate(fa: &[f64], fr: &[f64]) -> f64 {
    let diff = |k: usize| fr[k] - fa[k];
    let start = diff(0).signum();
    for k in 0..fa.len() {
        let d = diff(k);
        if d == 0.0 {
            return fa[k];
        }
        if d.signum() != start {
            let a = diff(k - 1);
            let alpha = a / (a - d);
            return fa[k - 1] + alpha * (fa[k] - fa[k - 1]);
        }
    }
    // no crossing: the curves only touch at the end
    fa[fa.len() - 1].min(fr[fr.len() - 1])
}

/// Empirical DET curve over all distinct thresholds.
pub fn det_curve(
    mated: &[f64],
    non_mated: &[f64],
    orientation: Orientation,
) -> Result<DetCurve, CurveError> {
    let s = sweep(mated, non_mated, orientation)?;
    Ok(DetCurve {
        mode: DetMode::Accuracy,
        orientation,
        thresholds: s.thresholds,
        fmr: s.false_accept,
        fnmr: s.false_reject,
        eer: s.crossing,
    })
}

/// Accuracy DET on single-key scores and CMR/FCMR DET on cross-key scores.
pub fn cross_key_det(
    single_key: &ScoreSet,
    cross_key: &ScoreSet,
    orientation: Orientation,
) -> Result<(DetCurve, DetCurve), CurveError> {
    let acc = det_curve(single_key.mated(), single_key.non_mated(), orientation)?;
    let mut ck = det_curve(cross_key.mated(), cross_key.non_mated(), orientation)?;
    ck.mode = DetMode::CrossKey;
    Ok((acc, ck))
}

/// FNMR from same-key mated scores against RTMR, the share of renewed
/// templates (same instance, different key) that are still accepted.
pub fn rtmr_curve(
    same_key_mated: &[f64],
    renewed: &[f64],
    orientation: Orientation,
) -> Result<RtmrCurve, CurveError> {
    let s = sweep(same_key_mated, renewed, orientation)?;
    Ok(RtmrCurve {
        orientation,
        thresholds: s.thresholds,
        fnmr: s.false_reject,
        rtmr: s.false_accept,
        crossing: s.crossing,
    })
}
