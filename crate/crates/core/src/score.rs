//! Linkage scores, labelled score sets and the prior ratio between the
//! mated and non-mated hypotheses.
//!
//! Two on-disk layouts are accepted:
//!
//! * a labelled CSV with header `score,label`, where `label` is `mated` or
//!   `nonmated`;
//! * a headerless single-column file holding the scores of one side.
//!
//! Both are UTF-8, one record per line, with `.` as decimal point. Scientific
//! notation is accepted. Line numbers in errors are 1-based physical lines.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this many scores per side a statistical-adequacy warning is emitted.
pub const ADEQUATE_SCORES_PER_SIDE: usize = 1_000;

/// Minimum number of scores per side for a valid [`ScoreSet`].
pub const MIN_SCORES_PER_SIDE: usize = 2;

/// Hypothesis a linkage score was drawn under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Mated,
    #[serde(rename = "nonmated")]
    NonMated,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Mated => "mated",
            Label::NonMated => "nonmated",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("could not read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("parse error on line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("non-finite score on line {0}")]
    NonFiniteScore(usize),
    #[error("non-finite score at index {index} of the {side} scores")]
    NonFiniteValue { side: Label, index: usize },
    #[error("too few {side} scores: {count} (need at least {MIN_SCORES_PER_SIDE})")]
    TooFewScores { side: Label, count: usize },
    #[error("enrollment count must be at least 2, got {0}")]
    InvalidEnrollmentCount(u64),
    #[error("omega must be positive and finite, got {0}")]
    InvalidOmega(f64),
}

/// A single linkage score `s = LS(T1, T2)` with its ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkageScore {
    value: f64,
    label: Label,
}

impl LinkageScore {
    pub fn new(value: f64, label: Label) -> Option<Self> {
        value.is_finite().then_some(Self { value, label })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn label(&self) -> Label {
        self.label
    }
}

/// Empirical mated and non-mated linkage scores for one linkage function.
///
/// Duplicates are kept; the density estimators rely on multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    mated: Vec<f64>,
    non_mated: Vec<f64>,
    source: String,
}

impl ScoreSet {
    pub fn new(
        mated: Vec<f64>,
        non_mated: Vec<f64>,
        source: impl Into<String>,
    ) -> Result<Self, ScoreError> {
        check_side(&mated, Label::Mated)?;
        check_side(&non_mated, Label::NonMated)?;
        Ok(Self {
            mated,
            non_mated,
            source: source.into(),
        })
    }

    /// Builds a set from labelled scores.
    pub fn from_labeled(
        scores: impl IntoIterator<Item = LinkageScore>,
        source: impl Into<String>,
    ) -> Result<Self, ScoreError> {
        let (mut mated, mut non_mated) = (Vec::new(), Vec::new());
        for s in scores {
            match s.label {
                Label::Mated => mated.push(s.value),
                Label::NonMated => non_mated.push(s.value),
            }
        }
        Self::new(mated, non_mated, source)
    }

    pub fn mated(&self) -> &[f64] {
        &self.mated
    }

    pub fn non_mated(&self) -> &[f64] {
        &self.non_mated
    }

    pub fn side(&self, label: Label) -> &[f64] {
        match label {
            Label::Mated => &self.mated,
            Label::NonMated => &self.non_mated,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    /// Both sides pooled, mated first.
    pub fn pooled(&self) -> impl Iterator<Item = f64> + '_ {
        self.mated.iter().chain(self.non_mated.iter()).copied()
    }

    /// Statistical-adequacy warnings. These never make a set invalid.
    pub fn warnings(&self) -> Vec<String> {
        [Label::Mated, Label::NonMated]
            .into_iter()
            .filter(|&l| self.side(l).len() < ADEQUATE_SCORES_PER_SIDE)
            .map(|l| {
                format!(
                    "only {} {l} scores; estimates below {ADEQUATE_SCORES_PER_SIDE} scores per side are statistically weak",
                    self.side(l).len()
                )
            })
            .collect()
    }

    /// Writes the set as a labelled `score,label` CSV.
    ///
    /// Values use the shortest representation that parses back to the same
    /// `f64`, so a load of the output reproduces every score bit-exactly.
    pub fn write_labeled_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "score,label")?;
        for &s in &self.mated {
            writeln!(w, "{s},mated")?;
        }
        for &s in &self.non_mated {
            writeln!(w, "{s},nonmated")?;
        }
        Ok(())
    }

    /// Writes one side as a headerless single-column file.
    pub fn write_column<W: Write>(&self, label: Label, mut w: W) -> io::Result<()> {
        for &s in self.side(label) {
            writeln!(w, "{s}")?;
        }
        Ok(())
    }

    pub fn to_labeled_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_labeled_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

fn check_side(values: &[f64], side: Label) -> Result<(), ScoreError> {
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(ScoreError::NonFiniteValue { side, index });
    }
    if values.len() < MIN_SCORES_PER_SIDE {
        return Err(ScoreError::TooFewScores {
            side,
            count: values.len(),
        });
    }
    Ok(())
}

fn parse_value(field: &str, line: usize) -> Result<f64, ScoreError> {
    let v: f64 = field.trim().parse().map_err(|_| ScoreError::ParseError {
        line,
        message: format!("not a number: {:?}", truncate(field.trim(), 40)),
    })?;
    if !v.is_finite() {
        return Err(ScoreError::NonFiniteScore(line));
    }
    Ok(v)
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn is_labeled_header(line: &str) -> bool {
    let mut parts = line.split(',').map(str::trim);
    matches!(
        (parts.next(), parts.next(), parts.next()),
        (Some(a), Some(b), None) if a.eq_ignore_ascii_case("score") && b.eq_ignore_ascii_case("label")
    )
}

fn strip_bom(text: &str) -> &str {
    text.strip_prefix('\u{feff}').unwrap_or(text)
}

/// Parses a labelled `score,label` CSV.
pub fn parse_labeled_csv(text: &str) -> Result<Vec<LinkageScore>, ScoreError> {
    let mut lines = strip_bom(text).lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i + 1, l),
            None => return Ok(Vec::new()),
        }
    };
    if !is_labeled_header(header.1) {
        return Err(ScoreError::ParseError {
            line: header.0,
            message: "expected header `score,label`".into(),
        });
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (value, label) = raw.split_once(',').ok_or_else(|| ScoreError::ParseError {
            line,
            message: "expected two fields `score,label`".into(),
        })?;
        let label = match label.trim() {
            "mated" => Label::Mated,
            "nonmated" => Label::NonMated,
            other => {
                return Err(ScoreError::ParseError {
                    line,
                    message: format!("unknown label {:?}", truncate(other, 40)),
                })
            }
        };
        let value = parse_value(value, line)?;
        out.push(LinkageScore { value, label });
    }
    Ok(out)
}

/// Parses the scores of one side from either accepted layout.
///
/// For a labelled file only the records carrying `side`'s label are kept, so
/// the same labelled file may be passed for both sides.
pub fn parse_score_column(text: &str, side: Label) -> Result<Vec<f64>, ScoreError> {
    let text = strip_bom(text);
    let first = text.lines().find(|l| !l.trim().is_empty());
    if first.is_some_and(is_labeled_header) {
        return Ok(parse_labeled_csv(text)?
            .into_iter()
            .filter(|s| s.label == side)
            .map(|s| s.value)
            .collect());
    }
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        out.push(parse_value(raw, i + 1)?);
    }
    Ok(out)
}

fn read_file(path: &Path) -> Result<String, ScoreError> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ScoreError::MissingFile(path.to_path_buf()),
        _ => ScoreError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    })
}

/// Reads the scores of one side from a file in either accepted layout.
pub fn load_score_column(path: &Path, side: Label) -> Result<Vec<f64>, ScoreError> {
    parse_score_column(&read_file(path)?, side)
}

/// Loads and validates a score set from one file per side.
pub fn load_score_set(mated_path: &Path, non_mated_path: &Path) -> Result<ScoreSet, ScoreError> {
    let mated = load_score_column(mated_path, Label::Mated)?;
    let non_mated = load_score_column(non_mated_path, Label::NonMated)?;
    let source = format!(
        "mated={} nonmated={}",
        mated_path.display(),
        non_mated_path.display()
    );
    ScoreSet::new(mated, non_mated, source)
}

/// Loads a score set from a single labelled CSV.
pub fn load_labeled_csv(path: &Path) -> Result<ScoreSet, ScoreError> {
    ScoreSet::from_labeled(
        parse_labeled_csv(&read_file(path)?)?,
        path.display().to_string(),
    )
}

/// Ratio of priors `p(H_m) / p(H_nm)` for `n` subjects enrolled in the
/// database being linked against: `1 / (n - 1)`.
pub fn omega_from_enrollment(n: u64) -> Result<f64, ScoreError> {
    if n < 2 {
        return Err(ScoreError::InvalidEnrollmentCount(n));
    }
    Ok(1.0 / (n - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorDerivation {
    Explicit,
    FromEnrollmentCount { subjects: u64 },
    Default,
}

/// The prior ratio `omega` and how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriorConfig {
    omega: f64,
    derivation: PriorDerivation,
}

impl PriorConfig {
    pub fn explicit(omega: f64) -> Result<Self, ScoreError> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(ScoreError::InvalidOmega(omega));
        }
        Ok(Self {
            omega,
            derivation: PriorDerivation::Explicit,
        })
    }

    pub fn from_enrollment(subjects: u64) -> Result<Self, ScoreError> {
        Ok(Self {
            omega: omega_from_enrollment(subjects)?,
            derivation: PriorDerivation::FromEnrollmentCount { subjects },
        })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn derivation(&self) -> PriorDerivation {
        self.derivation
    }

    pub fn warnings(&self) -> Vec<String> {
        if self.omega > 1.0 {
            vec![format!(
                "omega = {} exceeds 1; cross-database linkage implies p(H_m) <= p(H_nm)",
                self.omega
            )]
        } else {
            Vec::new()
        }
    }
}

/// Equal priors, the worst case for unlinkability.
impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            omega: 1.0,
            derivation: PriorDerivation::Default,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_labeled_file() {
        let text = "score,label\n0.1,mated\n0.2,mated\n0.8,nonmated\n0.9,nonmated\n";
        let set = ScoreSet::from_labeled(parse_labeled_csv(text).unwrap(), "t").unwrap();
        assert_eq!(set.mated(), &[0.1, 0.2]);
        assert_eq!(set.non_mated(), &[0.8, 0.9]);
    }

    #[test]
    fn nan_reports_its_line() {
        let text = "score,label\n0.1,mated\nNaN,mated\n";
        assert_eq!(parse_labeled_csv(text), Err(ScoreError::NonFiniteScore(3)));
        assert_eq!(
            parse_score_column("0.5\n0.25\nNaN\n", Label::Mated),
            Err(ScoreError::NonFiniteScore(3))
        );
        assert_eq!(
            parse_score_column("0.5\n-inf\n", Label::Mated),
            Err(ScoreError::NonFiniteScore(2))
        );
    }

    #[test]
    fn garbage_is_a_parse_error() {
        assert!(matches!(
            parse_score_column("0.5\nabc\n", Label::Mated),
            Err(ScoreError::ParseError { line: 2, .. })
        ));
        assert!(matches!(
            parse_labeled_csv("score,label\n0.5,maybe\n"),
            Err(ScoreError::ParseError { line: 2, .. })
        ));
        assert!(matches!(
            parse_labeled_csv("value,kind\n0.5,mated\n"),
            Err(ScoreError::ParseError { line: 1, .. })
        ));
    }

    #[test]
    fn one_mated_row_is_too_few() {
        let err = ScoreSet::new(vec![0.1], vec![0.5, 0.6], "t").unwrap_err();
        assert_eq!(
            err,
            ScoreError::TooFewScores {
                side: Label::Mated,
                count: 1
            }
        );
    }

    #[test]
    fn scientific_notation_and_blank_lines() {
        let v = parse_score_column("1e-3\n\n  2.5E2 \r\n-0\n", Label::NonMated).unwrap();
        assert_eq!(v, vec![1e-3, 250.0, -0.0]);
    }

    #[test]
    fn labeled_file_can_feed_either_side() {
        let text = "score,label\n1,mated\n2,nonmated\n3,mated\n";
        assert_eq!(
            parse_score_column(text, Label::Mated).unwrap(),
            vec![1.0, 3.0]
        );
        assert_eq!(
            parse_score_column(text, Label::NonMated).unwrap(),
            vec![2.0]
        );
    }

    #[test]
    fn missing_file() {
        let p = Path::new("/definitely/not/here.csv");
        assert_eq!(
            load_score_set(p, p).unwrap_err(),
            ScoreError::MissingFile(p.to_path_buf())
        );
    }

    #[test]
    fn adequacy_warning_below_threshold() {
        let set = ScoreSet::new(vec![0.0; 10], vec![1.0; 2000], "t").unwrap();
        let w = set.warnings();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("10 mated"));
    }

    #[test]
    fn omega_from_enrollment_examples() {
        assert_eq!(omega_from_enrollment(2).unwrap(), 1.0);
        // p(H_m) = 1/N, p(H_nm) = (N-1)/N.
        let n = 11.0_f64;
        let oracle = (1.0 / n) / ((n - 1.0) / n);
        assert!((omega_from_enrollment(11).unwrap() - oracle).abs() < 1e-15);
        assert!((omega_from_enrollment(11).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(
            omega_from_enrollment(1),
            Err(ScoreError::InvalidEnrollmentCount(1))
        );
    }

    #[test]
    fn prior_configs() {
        assert_eq!(PriorConfig::default().omega(), 1.0);
        assert_eq!(PriorConfig::from_enrollment(5).unwrap().omega(), 0.25);
        assert!(PriorConfig::explicit(-1.0).is_err());
        assert!(PriorConfig::explicit(0.0).is_err());
        assert!(PriorConfig::explicit(f64::NAN).is_err());
        assert!(PriorConfig::explicit(2.0).unwrap().warnings().len() == 1);
        assert!(PriorConfig::explicit(0.5).unwrap().warnings().is_empty());
    }

    proptest! {
        #[test]
        fn omega_decreasing_and_bounded(n in 2u64..1_000_000) {
            let a = omega_from_enrollment(n).unwrap();
            let b = omega_from_enrollment(n + 1).unwrap();
            prop_assert!(a <= 1.0);
            prop_assert!(b < a);
        }

        #[test]
        fn csv_round_trip_is_bit_exact(
            mated in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 2..40),
            non_mated in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 2..40),
        ) {
            let set = ScoreSet::new(mated, non_mated, "p").unwrap();
            let text = set.to_labeled_csv_string();
            let back = ScoreSet::from_labeled(parse_labeled_csv(&text).unwrap(), "p").unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.mated()), bits(set.mated()));
            prop_assert_eq!(bits(back.non_mated()), bits(set.non_mated()));
        }
    }
}
