//! End-to-end multi-key evaluation.
//!
//! A corpus is protected under `K` keys, giving `K` databases. Each linkage
//! function is scored across databases (mated: same subject under different
//! keys; non-mated: different subjects under different keys), evaluated for
//! linkability and compared against the accuracy baselines. The system value
//! is the maximum `D_sys` over all functions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    cross_key_det, kl_divergence, rtmr_curve, CurveError, DetCurve, KlResult, Orientation,
    RtmrCurve,
};
use crate::bits::Bits;
use crate::container::TemplateDatabase;
use crate::density::{DensityConfig, DensityPair};
use crate::linkability::{evaluate, LinkabilityError, LinkabilityProfile};
use crate::plot::linkability_svg;
use crate::score::{load_score_set, Label, PriorConfig, PriorDerivation, ScoreError, ScoreSet};
use crate::synth::{
    bloom_dissimilarity, check_combination, generate_corpus, AdversaryModel, KeyRing, LinkageKind,
    Scheme, SchemeConfig, SubjectCorpus, SynthError,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_KEYS: usize = 10;
/// Fewer keys than this draws a warning.
pub const RECOMMENDED_MIN_KEYS: usize = 6;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("inconsistent databases: {0}")]
    InconsistentDatabases(String),
    #[error("invalid protocol configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Linkability(#[from] LinkabilityError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl ProtocolError {
    fn io(path: &Path, e: impl fmt::Display) -> Self {
        ProtocolError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

// --------------------------------------------------------------- pairing

/// Which template pairs become mated and non-mated scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingRule {
    /// Mated: every pair of (sample, key) slots of a subject with different
    /// keys. Non-mated: first samples of two subjects under any two
    /// different keys.
    #[default]
    Exhaustive,
    /// Mated: sample `i` under key `a` against sample `j > i` under key
    /// `b > a`. Non-mated: first samples of two subjects under keys `a < b`.
    DistinctSamples,
    /// Exhaustive mated pairs; non-mated uses every sample of both subjects.
    AllPairs,
}

impl PairingRule {
    pub fn as_str(self) -> &'static str {
        match self {
            PairingRule::Exhaustive => "exhaustive",
            PairingRule::DistinctSamples => "distinct_samples",
            PairingRule::AllPairs => "all_pairs",
        }
    }
}

impl FromStr for PairingRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exhaustive" => Ok(PairingRule::Exhaustive),
            "distinct_samples" | "distinct-samples" => Ok(PairingRule::DistinctSamples),
            "all_pairs" | "all-pairs" => Ok(PairingRule::AllPairs),
            other => Err(format!(
                "unknown pairing rule {other:?} (expected exhaustive, distinct_samples or all_pairs)"
            )),
        }
    }
}

/// A template position: subject, sample and key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub subject: usize,
    pub sample: usize,
    pub key: usize,
}

fn slot(subject: usize, sample: usize, key: usize) -> Slot {
    Slot {
        subject,
        sample,
        key,
    }
}

/// Mated pairs of one subject.
pub fn mated_pairs(
    subject: usize,
    samples: usize,
    keys: usize,
    rule: PairingRule,
) -> Vec<(Slot, Slot)> {
    let mut out = Vec::new();
    match rule {
        PairingRule::Exhaustive | PairingRule::AllPairs => {
            let slots: Vec<Slot> = (0..samples)
                .flat_map(|i| (0..keys).map(move |a| slot(subject, i, a)))
                .collect();
            for (x, s) in slots.iter().enumerate() {
                for t in &slots[x + 1..] {
                    if s.key != t.key {
                        out.push((*s, *t));
                    }
                }
            }
        }
        PairingRule::DistinctSamples => {
            for i in 0..samples {
                for j in i + 1..samples {
                    for a in 0..keys {
                        for b in a + 1..keys {
                            out.push((slot(subject, i, a), slot(subject, j, b)));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Non-mated pairs between subject `u` and every later subject.
pub fn non_mated_pairs(
    u: usize,
    subjects: usize,
    samples: usize,
    keys: usize,
    rule: PairingRule,
) -> Vec<(Slot, Slot)> {
    let mut out = Vec::new();
    for v in u + 1..subjects {
        match rule {
            PairingRule::Exhaustive => {
                for a in 0..keys {
                    for b in 0..keys {
                        if a != b {
                            out.push((slot(u, 0, a), slot(v, 0, b)));
                        }
                    }
                }
            }
            PairingRule::DistinctSamples => {
                for a in 0..keys {
                    for b in a + 1..keys {
                        out.push((slot(u, 0, a), slot(v, 0, b)));
                    }
                }
            }
            PairingRule::AllPairs => {
                for i in 0..samples {
                    for j in 0..samples {
                        for a in 0..keys {
                            for b in 0..keys {
                                if a != b {
                                    out.push((slot(u, i, a), slot(v, j, b)));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn choose2(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Closed-form `(mated, non_mated)` score counts.
pub fn pair_counts(
    subjects: usize,
    samples: usize,
    keys: usize,
    rule: PairingRule,
) -> (usize, usize) {
    let (s, n, k) = (subjects, samples, keys);
    match rule {
        PairingRule::Exhaustive => (
            s * (choose2(n * k) - k * choose2(n)),
            choose2(s) * k * (k - 1),
        ),
        PairingRule::DistinctSamples => (s * choose2(n) * choose2(k), choose2(s) * choose2(k)),
        PairingRule::AllPairs => (
            s * (choose2(n * k) - k * choose2(n)),
            choose2(s) * n * n * k * (k - 1),
        ),
    }
}

// ----------------------------------------------------------------- scoring

#[derive(Debug, Clone, Copy)]
enum Comparator {
    Hamming,
    Bloom,
    Weight,
}

impl Comparator {
    fn score(self, a: &Bits, b: &Bits) -> f64 {
        match self {
            Comparator::Hamming => a.normalized_hamming(b).expect("equal lengths checked"),
            Comparator::Bloom => bloom_dissimilarity(a, b).expect("equal lengths checked"),
            Comparator::Weight => {
                if a.is_empty() {
                    0.0
                } else {
                    a.count_ones().abs_diff(b.count_ones()) as f64 / a.len() as f64
                }
            }
        }
    }
}

/// Per-template views a linkage function compares, indexed
/// `[database][subject][sample]`, so every pair score is one comparison.
struct Prepared {
    views: Vec<Vec<Vec<Bits>>>,
    comparator: Comparator,
}

impl Prepared {
    fn score(&self, s: Slot, t: Slot) -> f64 {
        self.comparator.score(
            &self.views[s.key][s.subject][s.sample],
            &self.views[t.key][t.subject][t.sample],
        )
    }
}

fn check_databases(dbs: &[TemplateDatabase], ring: &KeyRing) -> Result<(), ProtocolError> {
    let first = dbs
        .first()
        .ok_or_else(|| ProtocolError::InconsistentDatabases("no databases".into()))?;
    for (i, db) in dbs.iter().enumerate() {
        let ragged = db.templates.iter().any(|s| {
            s.len() != first.samples_per_subject()
                || s.iter().any(|t| t.len() != first.template_bits)
        });
        if db.n_subjects() != first.n_subjects()
            || db.samples_per_subject() != first.samples_per_subject()
            || db.template_bits != first.template_bits
            || db.scheme != first.scheme
            || ragged
        {
            return Err(ProtocolError::InconsistentDatabases(format!(
                "database {i} does not match the shape of database 0"
            )));
        }
        if db.scheme != ring.scheme().scheme() || db.key_id as usize >= ring.len() {
            return Err(ProtocolError::InconsistentDatabases(format!(
                "database {i} was not protected with this key ring"
            )));
        }
    }
    let ids: BTreeSet<u32> = dbs.iter().map(|d| d.key_id).collect();
    if ids.len() != dbs.len() {
        return Err(ProtocolError::InconsistentDatabases(
            "two databases share a key".into(),
        ));
    }
    if first.n_subjects() < 2 || first.samples_per_subject() < 1 {
        return Err(ProtocolError::InconsistentDatabases(
            "need at least two subjects".into(),
        ));
    }
    Ok(())
}

fn prepare(
    dbs: &[TemplateDatabase],
    kind: LinkageKind,
    ring: &KeyRing,
    experimental: bool,
) -> Result<Prepared, ProtocolError> {
    check_databases(dbs, ring)?;
    let scheme = ring.scheme().scheme();
    check_combination(scheme, kind, experimental)?;
    let comparator = match (kind, scheme) {
        (LinkageKind::PicHd, Scheme::BloomFilter) => Comparator::Bloom,
        (LinkageKind::HammingWeight, _) => Comparator::Weight,
        _ => Comparator::Hamming,
    };
    let views = match kind {
        LinkageKind::PicHd | LinkageKind::HammingWeight => {
            dbs.iter().map(|d| d.templates.clone()).collect()
        }
        // Both bring every template into the raw frame; for permutation-only
        // schemes that is the same distance as aligning T2 onto T1's key.
        LinkageKind::PermutedXor | LinkageKind::Reconstruction => dbs
            .par_iter()
            .map(|d| {
                d.templates
                    .iter()
                    .map(|s| {
                        s.iter()
                            .map(|t| {
                                let p = crate::synth::ProtectedTemplate {
                                    bits: t.clone(),
                                    key_id: d.key_id as usize,
                                    scheme,
                                };
                                ring.reconstruct(&p, experimental)
                            })
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    Ok(Prepared { views, comparator })
}

/// Mated and non-mated scores across `K >= 2` databases of the same corpus.
pub fn cross_database_scores(
    dbs: &[TemplateDatabase],
    kind: LinkageKind,
    ring: &KeyRing,
    rule: PairingRule,
    experimental: bool,
) -> Result<ScoreSet, ProtocolError> {
    if dbs.len() < 2 {
        return Err(ProtocolError::InconsistentDatabases(format!(
            "cross-key scores need at least 2 databases, got {}",
            dbs.len()
        )));
    }
    let prep = prepare(dbs, kind, ring, experimental)?;
    let (s, n, k) = (dbs[0].n_subjects(), dbs[0].samples_per_subject(), dbs.len());
    let mated: Vec<f64> = (0..s)
        .into_par_iter()
        .flat_map_iter(|u| {
            mated_pairs(u, n, k, rule)
                .into_iter()
                .map(|(a, b)| prep.score(a, b))
                .collect::<Vec<_>>()
        })
        .collect();
    let non_mated: Vec<f64> = (0..s)
        .into_par_iter()
        .flat_map_iter(|u| {
            non_mated_pairs(u, s, n, k, rule)
                .into_iter()
                .map(|(a, b)| prep.score(a, b))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(ScoreSet::new(
        mated,
        non_mated,
        format!("{kind} cross-key ({})", rule.as_str()),
    )?)
}

/// Scores within one database: every sample pair of a subject (mated) and
/// the first samples of every subject pair (non-mated).
pub fn single_database_scores(
    db: &TemplateDatabase,
    kind: LinkageKind,
    ring: &KeyRing,
    experimental: bool,
) -> Result<ScoreSet, ProtocolError> {
    let prep = prepare(std::slice::from_ref(db), kind, ring, experimental)?;
    let (s, n) = (db.n_subjects(), db.samples_per_subject());
    let at = |subject, sample| slot(subject, sample, 0);
    let mut mated = Vec::with_capacity(s * choose2(n));
    for u in 0..s {
        for i in 0..n {
            for j in i + 1..n {
                mated.push(prep.score(at(u, i), at(u, j)));
            }
        }
    }
    let mut non_mated = Vec::with_capacity(choose2(s));
    for u in 0..s {
        for v in u + 1..s {
            non_mated.push(prep.score(at(u, 0), at(v, 0)));
        }
    }
    Ok(ScoreSet::new(
        mated,
        non_mated,
        format!("{kind} single key {}", db.key_id),
    )?)
}

// ------------------------------------------------------------------ config

/// How the prior ratio is set in a configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub omega: Option<f64>,
    pub subjects: Option<u64>,
}

impl PriorSpec {
    pub fn resolve(&self) -> Result<PriorConfig, ProtocolError> {
        match (self.omega, self.subjects) {
            (Some(_), Some(_)) => Err(ProtocolError::InvalidConfig(
                "prior: give either omega or subjects, not both".into(),
            )),
            (Some(w), None) => Ok(PriorConfig::explicit(w)?),
            (None, Some(n)) => Ok(PriorConfig::from_enrollment(n)?),
            (None, None) => Ok(PriorConfig::default()),
        }
    }
}

/// Corpus parameters; the seed comes from the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_subjects: usize,
    pub samples_per_subject: usize,
    pub template_bits: usize,
    pub intra_flip_rate: f64,
    #[serde(default)]
    pub capture_failure_rate: f64,
}

impl CorpusSpec {
    pub fn with_seed(&self, seed: u64) -> SubjectCorpus {
        SubjectCorpus {
            n_subjects: self.n_subjects,
            samples_per_subject: self.samples_per_subject,
            template_bits: self.template_bits,
            intra_flip_rate: self.intra_flip_rate,
            capture_failure_rate: self.capture_failure_rate,
            seed,
        }
    }
}

/// A function entry: either a bare name or a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionEntry {
    Name(String),
    Table(FunctionTable),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionTable {
    pub id: Option<String>,
    pub kind: Option<LinkageKind>,
    /// External cross-key score files, instead of a built-in kind.
    pub mated: Option<PathBuf>,
    pub nonmated: Option<PathBuf>,
    /// Optional same-key score files for the accuracy baselines.
    pub accuracy_mated: Option<PathBuf>,
    pub accuracy_nonmated: Option<PathBuf>,
    pub adversary: Option<AdversaryModel>,
    pub orientation: Option<Orientation>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionSource {
    Builtin(LinkageKind),
    External {
        mated: PathBuf,
        nonmated: PathBuf,
        accuracy: Option<(PathBuf, PathBuf)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSpec {
    pub id: String,
    pub source: FunctionSource,
    pub adversary: AdversaryModel,
    pub orientation: Orientation,
}

impl FunctionEntry {
    fn resolve(&self, base: &Path) -> Result<FunctionSpec, ProtocolError> {
        let table = match self {
            FunctionEntry::Name(n) => FunctionTable {
                kind: Some(n.parse().map_err(ProtocolError::InvalidConfig)?),
                ..Default::default()
            },
            FunctionEntry::Table(t) => t.clone(),
        };
        let path = |p: &PathBuf| base.join(p);
        let source = match (&table.kind, &table.mated, &table.nonmated) {
            (Some(k), None, None) => FunctionSource::Builtin(*k),
            (None, Some(m), Some(nm)) => FunctionSource::External {
                mated: path(m),
                nonmated: path(nm),
                accuracy: match (&table.accuracy_mated, &table.accuracy_nonmated) {
                    (Some(a), Some(b)) => Some((path(a), path(b))),
                    (None, None) => None,
                    _ => {
                        return Err(ProtocolError::InvalidConfig(
                            "accuracy_mated and accuracy_nonmated go together".into(),
                        ))
                    }
                },
            },
            _ => {
                return Err(ProtocolError::InvalidConfig(
                    "a function needs either `kind` or both `mated` and `nonmated`".into(),
                ))
            }
        };
        let id = match (&table.id, &source) {
            (Some(id), _) => id.clone(),
            (None, FunctionSource::Builtin(k)) => k.as_str().to_string(),
            (None, FunctionSource::External { .. }) => {
                return Err(ProtocolError::InvalidConfig(
                    "external score functions need an `id`".into(),
                ))
            }
        };
        if id.is_empty()
            || !id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(ProtocolError::InvalidConfig(format!(
                "function id {id:?} must be non-empty ASCII letters, digits, '_' or '-'"
            )));
        }
        let adversary = table.adversary.unwrap_or(match source {
            FunctionSource::Builtin(k) => k.default_adversary(),
            FunctionSource::External { .. } => AdversaryModel::TemplateOnly,
        });
        Ok(FunctionSpec {
            id,
            source,
            adversary,
            orientation: table.orientation.unwrap_or_default(),
        })
    }
}

fn default_keys() -> usize {
    DEFAULT_KEYS
}

/// A full protocol run description, read from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    #[serde(default = "default_keys")]
    pub keys: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pairing: PairingRule,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub density: DensityConfig,
    pub corpus: Option<CorpusSpec>,
    #[serde(default)]
    pub scheme: SchemeConfig,
    pub functions: Vec<FunctionEntry>,
    /// Enables the approximate bloom-filter decoder.
    #[serde(default)]
    pub experimental: bool,
    pub output_dir: Option<PathBuf>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A checked configuration ready to run.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub config: ProtocolConfig,
    pub prior: PriorConfig,
    pub functions: Vec<FunctionSpec>,
    pub corpus: Option<SubjectCorpus>,
    pub warnings: Vec<String>,
}

impl ProtocolConfig {
    /// Parses TOML, or JSON when `path` ends in `.json`.
    pub fn parse(text: &str, json: bool) -> Result<Self, ProtocolError> {
        if json {
            serde_json::from_str(text).map_err(|e| ProtocolError::InvalidConfig(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| ProtocolError::InvalidConfig(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        let text = fs::read_to_string(path).map_err(|e| ProtocolError::io(path, e))?;
        let json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = Self::parse(&text, json)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<ValidatedConfig, ProtocolError> {
        let bad = |m: String| Err(ProtocolError::InvalidConfig(m));
        let mut warnings = Vec::new();
        if self.keys < 2 {
            return bad(format!("keys must be at least 2, got {}", self.keys));
        }
        if self.keys < RECOMMENDED_MIN_KEYS {
            warnings.push(format!(
                "only {} keys; at least {RECOMMENDED_MIN_KEYS} are recommended",
                self.keys
            ));
        }
        if self.functions.is_empty() {
            return bad("functions must list at least one linkage function".into());
        }
        let functions = self
            .functions
            .iter()
            .map(|f| f.resolve(&self.base_dir))
            .collect::<Result<Vec<_>, _>>()?;
        let mut ids = BTreeSet::new();
        for f in &functions {
            if !ids.insert(f.id.as_str()) {
                return bad(format!("duplicate function id {:?}", f.id));
            }
        }
        let needs_corpus = functions
            .iter()
            .any(|f| matches!(f.source, FunctionSource::Builtin(_)));
        let corpus = match (&self.corpus, needs_corpus) {
            (Some(c), _) => {
                let c = c.with_seed(self.seed);
                c.validate()?;
                self.scheme.validate(c.template_bits)?;
                Some(c)
            }
            (None, true) => return bad("built-in linkage functions need a [corpus] table".into()),
            (None, false) => None,
        };
        let prior = self.prior.resolve()?;
        warnings.extend(prior.warnings());
        Ok(ValidatedConfig {
            config: self.clone(),
            prior,
            functions,
            corpus,
            warnings,
        })
    }
}

// ------------------------------------------------------------------ report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetPair {
    pub accuracy: DetCurve,
    pub cross_key: DetCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub mated: usize,
    pub non_mated: usize,
}

/// Results of one linkage function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionReport {
    pub id: String,
    /// Built-in function kind, or `external`.
    pub kind: String,
    pub adversary: AdversaryModel,
    pub orientation: Orientation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_sys: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<ScoreCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub densities: Option<DensityPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<LinkabilityProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<KlResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub det: Option<DetPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtmr: Option<RtmrCurve>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FunctionReport {
    fn failed(spec: &FunctionSpec, err: &ProtocolError) -> Self {
        Self {
            id: spec.id.clone(),
            kind: kind_name(spec),
            adversary: spec.adversary,
            orientation: spec.orientation,
            error: Some(err.to_string()),
            d_sys: None,
            counts: None,
            densities: None,
            profile: None,
            kl: None,
            det: None,
            rtmr: None,
            warnings: Vec::new(),
        }
    }
}

fn kind_name(spec: &FunctionSpec) -> String {
    match spec.source {
        FunctionSource::Builtin(k) => k.as_str().into(),
        FunctionSource::External { .. } => "external".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMetadata {
    pub description: String,
    pub seed: u64,
    pub keys: usize,
    pub pairing: PairingRule,
    pub omega: f64,
    pub prior: PriorDerivation,
    pub density: DensityConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<SubjectCorpus>,
    pub scheme: SchemeConfig,
    pub experimental: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    /// Maximum `D_sys` over the functions that succeeded.
    pub aggregated_d_sys: Option<f64>,
    pub aggregated_from: Option<String>,
    pub adversary_models: BTreeMap<String, AdversaryModel>,
    pub per_function: BTreeMap<String, FunctionReport>,
    pub metadata: ProtocolMetadata,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Maximum of the successful per-function values and its function id.
pub fn aggregate(per_function: &BTreeMap<String, FunctionReport>) -> Option<(f64, String)> {
    per_function
        .values()
        .filter_map(|f| f.d_sys.map(|d| (d, f.id.clone())))
        .fold(None, |best, (d, id)| match best {
            Some((b, _)) if b >= d => best,
            _ => Some((d, id)),
        })
}

/// Scores behind one function's report, kept for artefact output.
#[derive(Debug, Clone)]
pub struct FunctionScores {
    pub cross_key: ScoreSet,
    pub accuracy: Option<ScoreSet>,
}

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub report: EvaluationReport,
    pub scores: BTreeMap<String, FunctionScores>,
}

struct Testbed {
    ring: KeyRing,
    databases: Vec<TemplateDatabase>,
}

fn build_testbed(v: &ValidatedConfig) -> Result<Option<Testbed>, ProtocolError> {
    let Some(corpus_cfg) = &v.corpus else {
        return Ok(None);
    };
    let corpus = generate_corpus(corpus_cfg)?;
    let cfg = &v.config;
    let ring = KeyRing::generate(&cfg.scheme, corpus.template_bits(), cfg.keys, cfg.seed)?;
    let databases = (0..cfg.keys)
        .into_par_iter()
        .map(|k| TemplateDatabase::protect(&corpus, &ring, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(Testbed { ring, databases }))
}

fn function_scores(
    spec: &FunctionSpec,
    testbed: Option<&Testbed>,
    cfg: &ProtocolConfig,
) -> Result<FunctionScores, ProtocolError> {
    match &spec.source {
        FunctionSource::Builtin(kind) => {
            let tb = testbed.ok_or_else(|| {
                ProtocolError::InvalidConfig("built-in function without a corpus".into())
            })?;
            let cross = cross_database_scores(
                &tb.databases,
                *kind,
                &tb.ring,
                cfg.pairing,
                cfg.experimental,
            )?;
            let acc = single_database_scores(&tb.databases[0], *kind, &tb.ring, cfg.experimental)?;
            Ok(FunctionScores {
                cross_key: cross,
                accuracy: Some(acc),
            })
        }
        FunctionSource::External {
            mated,
            nonmated,
            accuracy,
        } => Ok(FunctionScores {
            cross_key: load_score_set(mated, nonmated)?,
            accuracy: accuracy
                .as_ref()
                .map(|(m, nm)| load_score_set(m, nm))
                .transpose()?,
        }),
    }
}

fn evaluate_function(
    spec: &FunctionSpec,
    scores: &FunctionScores,
    prior: &PriorConfig,
    density: &DensityConfig,
) -> Result<FunctionReport, ProtocolError> {
    let cross = &scores.cross_key;
    let eval = evaluate(cross, prior, density)?;
    let kl = kl_divergence(
        &eval.densities.masses(Label::Mated),
        &eval.densities.masses(Label::NonMated),
    )
    .ok();
    let (det, rtmr) = match &scores.accuracy {
        Some(acc) => {
            let (accuracy, cross_key) = cross_key_det(acc, cross, spec.orientation)?;
            let rtmr = rtmr_curve(acc.mated(), cross.mated(), spec.orientation)?;
            (
                Some(DetPair {
                    accuracy,
                    cross_key,
                }),
                Some(rtmr),
            )
        }
        None => (None, None),
    };
    Ok(FunctionReport {
        id: spec.id.clone(),
        kind: kind_name(spec),
        adversary: spec.adversary,
        orientation: spec.orientation,
        error: None,
        d_sys: Some(eval.profile.d_sys),
        counts: Some(ScoreCounts {
            mated: cross.mated().len(),
            non_mated: cross.non_mated().len(),
        }),
        densities: Some(eval.densities),
        profile: Some(eval.profile),
        kl,
        det,
        rtmr,
        warnings: cross.warnings(),
    })
}

fn describe(v: &ValidatedConfig) -> String {
    let cfg = &v.config;
    match &v.corpus {
        Some(c) => format!(
            "{} databases protected with {} under distinct keys; synthetic corpus of {} subjects x {} samples, {} bits, flip rate {}, capture failure rate {}; {} pairing",
            cfg.keys,
            cfg.scheme.scheme(),
            c.n_subjects,
            c.samples_per_subject,
            c.template_bits,
            c.intra_flip_rate,
            c.capture_failure_rate,
            cfg.pairing.as_str()
        ),
        None => "external cross-key score files".to_string(),
    }
}

/// Runs every function, isolating failures, and aggregates by maximum.
pub fn run_protocol(cfg: &ProtocolConfig) -> Result<ProtocolRun, ProtocolError> {
    let v = cfg.validate()?;
    let testbed = build_testbed(&v)?;
    let results: Vec<(FunctionReport, Option<FunctionScores>)> = v
        .functions
        .par_iter()
        .map(|spec| {
            let run = function_scores(spec, testbed.as_ref(), &v.config).and_then(|scores| {
                evaluate_function(spec, &scores, &v.prior, &v.config.density).map(|r| (r, scores))
            });
            match run {
                Ok((r, s)) => (r, Some(s)),
                Err(e) => (FunctionReport::failed(spec, &e), None),
            }
        })
        .collect();

    let mut per_function = BTreeMap::new();
    let mut scores = BTreeMap::new();
    let mut warnings = v.warnings.clone();
    for (r, s) in results {
        if let Some(e) = &r.error {
            warnings.push(format!("function {} failed: {e}", r.id));
        }
        if let Some(s) = s {
            scores.insert(r.id.clone(), s);
        }
        per_function.insert(r.id.clone(), r);
    }
    let agg = aggregate(&per_function);
    let report = EvaluationReport {
        schema_version: SCHEMA_VERSION,
        aggregated_d_sys: agg.as_ref().map(|a| a.0),
        aggregated_from: agg.map(|a| a.1),
        adversary_models: v
            .functions
            .iter()
            .map(|f| (f.id.clone(), f.adversary))
            .collect(),
        per_function,
        metadata: ProtocolMetadata {
            description: describe(&v),
            seed: cfg.seed,
            keys: cfg.keys,
            pairing: cfg.pairing,
            omega: v.prior.omega(),
            prior: v.prior.derivation(),
            density: cfg.density.clone(),
            corpus: v.corpus.clone(),
            scheme: cfg.scheme.clone(),
            experimental: cfg.experimental,
        },
        warnings,
    };
    Ok(ProtocolRun { report, scores })
}

impl ProtocolRun {
    /// Writes `report.json`, one linkability SVG per function and the score
    /// files. Returns the report path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, ProtocolError> {
        fs::create_dir_all(dir).map_err(|e| ProtocolError::io(dir, e))?;
        let write = |name: String, body: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| ProtocolError::io(&p, e))
        };
        for (id, f) in &self.report.per_function {
            if let (Some(d), Some(p)) = (&f.densities, &f.profile) {
                write(
                    format!("{id}_linkability.svg"),
                    linkability_svg(id, d, p).as_bytes(),
                )?;
            }
        }
        for (id, s) in &self.scores {
            let mut m = Vec::new();
            let mut nm = Vec::new();
            s.cross_key
                .write_column(Label::Mated, &mut m)
                .and_then(|_| s.cross_key.write_column(Label::NonMated, &mut nm))
                .map_err(|e| ProtocolError::io(dir, e))?;
            write(format!("{id}_mated.csv"), &m)?;
            write(format!("{id}_nonmated.csv"), &nm)?;
        }
        let report = dir.join("report.json");
        write("report.json".into(), self.report.to_json().as_bytes())?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SubjectCorpus;

    // Independent counter: walk every slot pair once and classify it.
    fn brute_force_counts(s: usize, n: usize, k: usize, rule: PairingRule) -> (usize, usize) {
        let slots: Vec<Slot> = (0..s)
            .flat_map(|u| (0..n).flat_map(move |i| (0..k).map(move |a| slot(u, i, a))))
            .collect();
        let (mut m, mut nm) = (0, 0);
        for (x, p) in slots.iter().enumerate() {
            for q in &slots[x + 1..] {
                if p.key == q.key {
                    continue;
                }
                if p.subject == q.subject {
                    let keep = match rule {
                        PairingRule::DistinctSamples => p.sample < q.sample && p.key < q.key,
                        _ => true,
                    };
                    m += usize::from(keep);
                } else {
                    let keep = match rule {
                        PairingRule::Exhaustive => p.sample == 0 && q.sample == 0,
                        PairingRule::DistinctSamples => p.sample == 0 && q.sample == 0 && p.key < q.key,
                        PairingRule::AllPairs => true,
                    };
                    nm += usize::from(keep);
                }
            }
        }
        (m, nm)
    }

    fn enumerated(s: usize, n: usize, k: usize, rule: PairingRule) -> (usize, usize) {
        let m: usize = (0..s).map(|u| mated_pairs(u, n, k, rule).len()).sum();
        let nm: usize = (0..s)
            .map(|u| non_mated_pairs(u, s, n, k, rule).len())
            .sum();
        (m, nm)
    }

    #[test]
    fn two_by_two_by_two_gives_eight_mated() {
        assert_eq!(pair_counts(2, 2, 2, PairingRule::Exhaustive).0, 8);
        assert_eq!(enumerated(2, 2, 2, PairingRule::Exhaustive).0, 8);
        assert_eq!(brute_force_counts(2, 2, 2, PairingRule::Exhaustive).0, 8);
    }

    #[test]
    fn counts_agree_across_methods() {
        for rule in [
            PairingRule::Exhaustive,
            PairingRule::DistinctSamples,
            PairingRule::AllPairs,
        ] {
            for (s, n, k) in [(2, 2, 2), (3, 4, 3), (5, 3, 6), (7, 2, 10)] {
                let c = pair_counts(s, n, k, rule);
                assert_eq!(c, enumerated(s, n, k, rule), "{rule:?} {s} {n} {k}");
                assert_eq!(c, brute_force_counts(s, n, k, rule), "{rule:?} {s} {n} {k}");
            }
        }
    }

    #[test]
    fn pairs_never_repeat() {
        let mut seen = BTreeSet::new();
        for u in 0..4 {
            for p in mated_pairs(u, 3, 3, PairingRule::Exhaustive)
                .into_iter()
                .chain(non_mated_pairs(u, 4, 3, 3, PairingRule::AllPairs))
            {
                assert!(p.0.key != p.1.key);
                assert!(seen.insert(p));
            }
        }
    }

    fn small_testbed(scheme: SchemeConfig, keys: usize) -> (KeyRing, Vec<TemplateDatabase>) {
        let corpus = generate_corpus(&SubjectCorpus {
            n_subjects: 6,
            samples_per_subject: 2,
            template_bits: 512,
            intra_flip_rate: 0.05,
            capture_failure_rate: 0.0,
            seed: 3,
        })
        .unwrap();
        let ring = KeyRing::generate(&scheme, 512, keys, 3).unwrap();
        let dbs = (0..keys)
            .map(|k| TemplateDatabase::protect(&corpus, &ring, k).unwrap())
            .collect();
        (ring, dbs)
    }

    #[test]
    fn one_database_is_inconsistent() {
        let (ring, dbs) = small_testbed(SchemeConfig::XorSalt, 1);
        assert!(matches!(
            cross_database_scores(
                &dbs,
                LinkageKind::PicHd,
                &ring,
                PairingRule::Exhaustive,
                false
            ),
            Err(ProtocolError::InconsistentDatabases(_))
        ));
        let (ring, mut dbs) = small_testbed(SchemeConfig::XorSalt, 2);
        dbs[1].templates.pop();
        assert!(matches!(
            cross_database_scores(
                &dbs,
                LinkageKind::PicHd,
                &ring,
                PairingRule::Exhaustive,
                false
            ),
            Err(ProtocolError::InconsistentDatabases(_))
        ));
    }

    #[test]
    fn prepared_scores_match_pairwise_linkage_functions() {
        use crate::synth::{
            linkage_permuted_xor, linkage_pic_hd, linkage_reconstruction, ProtectedTemplate,
        };
        let remap = SchemeConfig::with_defaults(Scheme::BlockRemap);
        let (ring, dbs) = small_testbed(remap, 3);
        let pt = |s: Slot| ProtectedTemplate {
            bits: dbs[s.key].templates[s.subject][s.sample].clone(),
            key_id: s.key,
            scheme: Scheme::BlockRemap,
        };
        let pairs: Vec<(Slot, Slot)> = mated_pairs(1, 2, 3, PairingRule::Exhaustive)
            .into_iter()
            .chain(non_mated_pairs(0, 6, 2, 3, PairingRule::Exhaustive))
            .collect();
        for kind in [
            LinkageKind::PicHd,
            LinkageKind::PermutedXor,
            LinkageKind::Reconstruction,
        ] {
            let prep = prepare(&dbs, kind, &ring, false).unwrap();
            for &(a, b) in &pairs {
                let (ta, tb) = (pt(a), pt(b));
                let direct = match kind {
                    LinkageKind::PicHd => linkage_pic_hd(&ta, &tb).unwrap(),
                    LinkageKind::PermutedXor => {
                        let rel = ring.inter_key_relation(a.key, b.key).unwrap();
                        linkage_permuted_xor(&ta.bits, &tb.bits, &rel).unwrap()
                    }
                    _ => linkage_reconstruction(&ta, &tb, &ring, false).unwrap(),
                };
                assert_eq!(prep.score(a, b), direct, "{kind} {a:?} {b:?}");
            }
        }
    }

    #[test]
    fn single_database_counts() {
        let (ring, dbs) = small_testbed(SchemeConfig::XorSalt, 2);
        let s = single_database_scores(&dbs[0], LinkageKind::PicHd, &ring, false).unwrap();
        assert_eq!((s.mated().len(), s.non_mated().len()), (6, 15));
    }

    fn config(functions: &str, keys: usize) -> String {
        format!(
            r#"
keys = {keys}
seed = 5
functions = {functions}

[corpus]
n_subjects = 12
samples_per_subject = 3
template_bits = 512
intra_flip_rate = 0.05
"#
        )
    }

    #[test]
    fn config_validation() {
        let cfg = ProtocolConfig::parse(&config(r#"["pic_hd"]"#, 10), false).unwrap();
        let v = cfg.validate().unwrap();
        assert!(v.warnings.is_empty());
        assert_eq!(v.functions[0].adversary, AdversaryModel::TemplateOnly);

        let cfg = ProtocolConfig::parse(&config(r#"["pic_hd"]"#, 1), false).unwrap();
        assert!(matches!(
            cfg.validate(),
            Err(ProtocolError::InvalidConfig(_))
        ));
        let cfg = ProtocolConfig::parse(&config(r#"["pic_hd"]"#, 3), false).unwrap();
        assert_eq!(cfg.validate().unwrap().warnings.len(), 1);
        let cfg = ProtocolConfig::parse(&config("[]", 10), false).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ProtocolConfig::parse(&config(r#"["pic_hd", "pic_hd"]"#, 10), false).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ProtocolConfig::parse(&config(r#"["sha256"]"#, 10), false).unwrap();
        assert!(cfg.validate().is_err());
        assert!(ProtocolConfig::parse("keys = 10\n", false).is_err());
        assert!(ProtocolConfig::parse("functions = [\"pic_hd\"]\nbogus = 1\n", false).is_err());
        let cfg = ProtocolConfig::parse(r#"{"functions": ["pic_hd"]}"#, true).unwrap();
        assert_eq!(cfg.keys, DEFAULT_KEYS);
        assert!(cfg.validate().is_err(), "missing corpus");
    }

    #[test]
    fn failing_function_does_not_stop_the_others() {
        let cfg = ProtocolConfig::parse(
            &config(r#"["pic_hd", "permuted_xor", "reconstruction"]"#, 6),
            false,
        )
        .unwrap();
        let run = run_protocol(&cfg).unwrap();
        let r = &run.report;
        assert!(r.per_function["permuted_xor"].error.is_some());
        assert!(r.per_function["pic_hd"].d_sys.is_some());
        let rec = r.per_function["reconstruction"].d_sys.unwrap();
        assert_eq!(
            r.aggregated_d_sys,
            Some(rec.max(r.per_function["pic_hd"].d_sys.unwrap()))
        );
        assert_eq!(
            r.adversary_models["reconstruction"],
            AdversaryModel::KeyKnowledge
        );
        assert_eq!(r.schema_version, SCHEMA_VERSION);
        let (m, nm) = pair_counts(12, 3, 6, PairingRule::Exhaustive);
        assert_eq!(
            r.per_function["pic_hd"].counts,
            Some(ScoreCounts {
                mated: m,
                non_mated: nm
            })
        );
    }

    #[test]
    fn outputs_are_written() {
        let cfg = ProtocolConfig::parse(&config(r#"["pic_hd"]"#, 6), false).unwrap();
        let run = run_protocol(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report = run.write(dir.path()).unwrap();
        assert!(report.ends_with("report.json"));
        for f in [
            "pic_hd_linkability.svg",
            "pic_hd_mated.csv",
            "pic_hd_nonmated.csv",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back: EvaluationReport =
            serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
        assert_eq!(back.aggregated_d_sys, run.report.aggregated_d_sys);
    }

    #[test]
    fn aggregate_is_max() {
        let mk = |id: &str, d: Option<f64>| FunctionReport {
            id: id.into(),
            kind: "external".into(),
            adversary: AdversaryModel::TemplateOnly,
            orientation: Orientation::Dissimilarity,
            error: d.is_none().then(|| "boom".into()),
            d_sys: d,
            counts: None,
            densities: None,
            profile: None,
            kl: None,
            det: None,
            rtmr: None,
            warnings: vec![],
        };
        let mut m = BTreeMap::new();
        assert_eq!(aggregate(&m), None);
        m.insert("a".into(), mk("a", Some(0.2)));
        assert_eq!(aggregate(&m), Some((0.2, "a".into())));
        m.insert("b".into(), mk("b", None));
        m.insert("c".into(), mk("c", Some(0.7)));
        assert_eq!(aggregate(&m), Some((0.7, "c".into())));
    }
}
