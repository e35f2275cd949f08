//! The `unlink-eval` command line.
//!
//! Exit codes: 0 on success, 2 for usage and validation errors, 3 when an
//! internal invariant is violated.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::baselines::{
    cross_key_det, det_curve, kl_divergence, rtmr_curve, DetCurve, KlResult, Orientation, RtmrCurve,
};
use crate::container::{DatabaseManifest, TemplateDatabase};
use crate::density::{BinCount, DensityConfig, DensityError, DensityPair};
use crate::linkability::{evaluate, omega_sweep, Evaluation, LinkabilityError, LinkabilityProfile};
use crate::plot;
use crate::protocol::{
    cross_database_scores, single_database_scores, PairingRule, ProtocolConfig, ProtocolError,
    RECOMMENDED_MIN_KEYS, SCHEMA_VERSION,
};
use crate::score::{load_score_column, Label, PriorConfig, ScoreError, ScoreSet};
use crate::synth::{
    check_combination, generate_corpus, AdversaryModel, KeyRing, LinkageKind, Scheme, SchemeConfig,
    SubjectCorpus, SynthError, DEFAULT_BLOCK_SIZE, DEFAULT_BLOOM_HEIGHT, DEFAULT_BLOOM_WIDTH,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "UNLINK_EVAL_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn context(self, what: &str) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{what}: {m}")),
            CliError::Internal(m) => CliError::Internal(format!("{what}: {m}")),
        }
    }
}

impl From<LinkabilityError> for CliError {
    fn from(e: LinkabilityError) -> Self {
        match e {
            LinkabilityError::Density(d) => d.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<DensityError> for CliError {
    fn from(e: DensityError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Linkability(l) => l.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Validation(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "unlink-eval",
    version,
    about = "Linkability of protected biometric templates from linkage scores"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate D(s) and D_sys for a pair of score files.
    Eval(EvalArgs),
    /// Generate synthetic cross-key scores for a scheme and linkage function.
    Synth(SynthArgs),
    /// Compare accuracy-style metrics with D_sys on the same score files.
    Compare(CompareArgs),
    /// Run the full multi-key protocol from a TOML or JSON configuration.
    Protocol(ProtocolArgs),
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    /// Prior ratio p(H_m)/p(H_nm).
    #[arg(long, allow_hyphen_values = true, conflicts_with = "subjects")]
    pub omega: Option<f64>,
    /// Number of enrolled subjects N; sets omega = 1/(N-1).
    #[arg(long)]
    pub subjects: Option<u64>,
}

impl PriorArgs {
    fn resolve(&self) -> Result<PriorConfig, CliError> {
        match (self.omega, self.subjects) {
            (Some(w), _) => {
                PriorConfig::explicit(w).map_err(|e| CliError::from(e).context("--omega"))
            }
            (None, Some(n)) => {
                PriorConfig::from_enrollment(n).map_err(|e| CliError::from(e).context("--subjects"))
            }
            (None, None) => Ok(PriorConfig::default()),
        }
    }
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    /// Number of bins, or `auto` for the Freedman-Diaconis rule.
    #[arg(long, default_value = "auto")]
    pub bins: BinCount,
    /// Use Gaussian kernel density estimates instead of histograms.
    #[arg(long)]
    pub kde: bool,
}

impl DensityArgs {
    fn config(&self) -> DensityConfig {
        DensityConfig {
            bins: self.bins,
            kde: self.kde,
            ..DensityConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Mated scores (one column, or a labelled `score,label` CSV).
    #[arg(long)]
    pub mated: PathBuf,
    /// Non-mated scores (one column, or a labelled `score,label` CSV).
    #[arg(long)]
    pub nonmated: PathBuf,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub density: DensityArgs,
    /// Score orientation used by the baseline metrics.
    #[arg(long, default_value = "dissimilarity")]
    pub orientation: Orientation,
    /// Also evaluate D_sys at these prior ratios (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub sweep: Vec<f64>,
    /// Directory for the JSON reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write SVG plots next to the reports.
    #[arg(long, requires = "out")]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "xor")]
    pub scheme: Scheme,
    #[arg(long, default_value = "pic_hd")]
    pub function: LinkageKind,
    #[arg(long, default_value_t = 50)]
    pub subjects: usize,
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
    #[arg(long, default_value_t = 4096)]
    pub bits: usize,
    #[arg(long, default_value_t = 0.1)]
    pub flip_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub capture_failure_rate: f64,
    #[arg(long, default_value_t = 10)]
    pub keys: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "exhaustive")]
    pub pairing: PairingRule,
    /// Block size of the block re-mapping scheme.
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,
    /// Share of blocks each re-mapping key reshuffles (1 = independent keys).
    #[arg(long, default_value_t = 1.0)]
    pub rekey_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_BLOOM_WIDTH)]
    pub bloom_width: usize,
    #[arg(long, default_value_t = DEFAULT_BLOOM_HEIGHT)]
    pub bloom_height: usize,
    /// Enable the approximate bloom-filter decoder.
    #[arg(long)]
    pub experimental: bool,
    /// Also write the raw corpus and protected databases as containers.
    #[arg(long)]
    pub save_databases: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Same-key mated scores.
    #[arg(long)]
    pub accuracy_mated: PathBuf,
    /// Same-key non-mated scores.
    #[arg(long)]
    pub accuracy_nonmated: PathBuf,
    /// Cross-key mated scores (same instance, different keys).
    #[arg(long)]
    pub crosskey_mated: PathBuf,
    /// Cross-key non-mated scores.
    #[arg(long)]
    pub crosskey_nonmated: PathBuf,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub density: DensityArgs,
    #[arg(long, default_value = "dissimilarity")]
    pub orientation: Orientation,
    /// Directory for compare.json and the plots.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// TOML or JSON protocol configuration.
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Sizes the global thread pool from `UNLINK_EVAL_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Validation(format!(
            "{THREADS_ENV} must be a positive integer, got {v:?}"
        ))
    })?;
    // A pool that already exists (e.g. in tests) keeps its size.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Eval(a) => cmd_eval(&a, stdout, stderr),
        Command::Synth(a) => cmd_synth(&a, stdout, stderr),
        Command::Compare(a) => cmd_compare(&a, stdout, stderr),
        Command::Protocol(a) => cmd_protocol(&a, stdout, stderr),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn warn_all(stderr: &mut dyn Write, warnings: &[String]) {
    for w in warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Internal(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Loads one score set, naming the offending flag on failure.
fn load_pair(
    mated: (&str, &Path),
    non_mated: (&str, &Path),
    source: &str,
) -> Result<ScoreSet, CliError> {
    let load = |(flag, path): (&str, &Path), side| {
        load_score_column(path, side)
            .map_err(|e| CliError::from(e).context(&format!("{flag} {}", path.display())))
    };
    let m = load(mated, Label::Mated)?;
    let nm = load(non_mated, Label::NonMated)?;
    ScoreSet::new(m, nm, source).map_err(|e| {
        let flag = match e {
            ScoreError::TooFewScores {
                side: Label::Mated, ..
            }
            | ScoreError::NonFiniteValue {
                side: Label::Mated, ..
            } => mated.0,
            _ => non_mated.0,
        };
        CliError::from(e).context(flag)
    })
}

fn format_d_sys(d: f64) -> String {
    format!("D_sys = {d:.4}")
}

#[derive(Serialize)]
struct BaselineReport<'a> {
    kl: KlResult,
    eer: f64,
    det: &'a DetCurve,
}

fn cmd_eval(a: &EvalArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let prior = a.prior.resolve()?;
    let scores = load_pair(("--mated", &a.mated), ("--nonmated", &a.nonmated), "eval")?;
    warn_all(stderr, &prior.warnings());
    warn_all(stderr, &scores.warnings());
    let Evaluation { densities, profile } = evaluate(&scores, &prior, &a.density.config())?;
    let kl = kl_from(&densities)?;
    let det = det_curve(scores.mated(), scores.non_mated(), a.orientation)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    if a.sweep.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(CliError::Validation(
            "--sweep: omega must be positive".into(),
        ));
    }
    let sweep = omega_sweep(&densities, &a.sweep)?;

    if let Some(out) = &a.out {
        create_dir(out)?;
        write_json(&out.join("linkability.json"), &profile)?;
        write_json(&out.join("densities.json"), &densities)?;
        write_json(
            &out.join("baselines.json"),
            &BaselineReport {
                kl,
                eer: det.eer,
                det: &det,
            },
        )?;
        if !sweep.is_empty() {
            write_json(&out.join("omega_sweep.json"), &sweep)?;
        }
        if a.plot {
            write_file(
                &out.join("linkability.svg"),
                plot::linkability_svg("scores", &densities, &profile).as_bytes(),
            )?;
            if !sweep.is_empty() {
                write_file(
                    &out.join("omega_sweep.svg"),
                    plot::omega_sweep_svg("D(s) for several prior ratios", &sweep).as_bytes(),
                )?;
            }
        }
    }
    let _ = writeln!(stdout, "{}", format_d_sys(profile.d_sys));
    for p in &sweep {
        let _ = writeln!(stdout, "omega = {}: {}", p.omega, format_d_sys(p.d_sys));
    }
    Ok(())
}

fn kl_from(dp: &DensityPair) -> Result<KlResult, CliError> {
    kl_divergence(&dp.masses(Label::Mated), &dp.masses(Label::NonMated))
        .map_err(|e| CliError::Internal(format!("KL divergence: {e}")))
}

#[derive(Serialize)]
struct SynthManifest {
    schema_version: u32,
    corpus: SubjectCorpus,
    scheme: SchemeConfig,
    keys: usize,
    function: LinkageKind,
    adversary: AdversaryModel,
    pairing: PairingRule,
    experimental: bool,
    counts: SynthCounts,
    files: SynthFiles,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    databases: Vec<DatabaseManifest>,
}

#[derive(Serialize)]
struct SynthCounts {
    mated: usize,
    non_mated: usize,
    accuracy_mated: usize,
    accuracy_non_mated: usize,
}

#[derive(Serialize)]
struct SynthFiles {
    mated: &'static str,
    nonmated: &'static str,
    accuracy_mated: &'static str,
    accuracy_nonmated: &'static str,
}

fn scheme_config(a: &SynthArgs) -> SchemeConfig {
    match a.scheme {
        Scheme::None => SchemeConfig::None,
        Scheme::XorSalt => SchemeConfig::XorSalt,
        Scheme::BlockRemap => SchemeConfig::BlockRemap {
            block_size: a.block_size,
            rekey_fraction: a.rekey_fraction,
        },
        Scheme::BloomFilter => SchemeConfig::BloomFilter {
            block_width: a.bloom_width,
            block_height: a.bloom_height,
        },
    }
}

fn write_scores(dir: &Path, name: &str, s: &ScoreSet, label: Label) -> Result<(), CliError> {
    let mut buf = Vec::new();
    s.write_column(label, &mut buf)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&dir.join(name), &buf)
}

fn cmd_synth(
    a: &SynthArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    check_combination(a.scheme, a.function, a.experimental)
        .map_err(|e| CliError::from(e).context("--scheme/--function"))?;
    if a.keys < 2 {
        return Err(CliError::Validation(format!(
            "--keys: cross-key scores need at least 2 keys, got {}",
            a.keys
        )));
    }
    if a.keys < RECOMMENDED_MIN_KEYS {
        warn_all(
            stderr,
            &[format!(
                "only {} keys; at least {RECOMMENDED_MIN_KEYS} are recommended",
                a.keys
            )],
        );
    }
    let corpus_cfg = SubjectCorpus {
        n_subjects: a.subjects,
        samples_per_subject: a.samples,
        template_bits: a.bits,
        intra_flip_rate: a.flip_rate,
        capture_failure_rate: a.capture_failure_rate,
        seed: a.seed,
    };
    let scheme = scheme_config(a);
    corpus_cfg.validate()?;
    let corpus = generate_corpus(&corpus_cfg)?;
    let ring = KeyRing::generate(&scheme, a.bits, a.keys, a.seed)?;
    let dbs = (0..a.keys)
        .map(|k| TemplateDatabase::protect(&corpus, &ring, k))
        .collect::<Result<Vec<_>, _>>()?;
    let cross = cross_database_scores(&dbs, a.function, &ring, a.pairing, a.experimental)?;
    let acc = single_database_scores(&dbs[0], a.function, &ring, a.experimental)?;

    create_dir(&a.out)?;
    let files = SynthFiles {
        mated: "mated.csv",
        nonmated: "nonmated.csv",
        accuracy_mated: "accuracy_mated.csv",
        accuracy_nonmated: "accuracy_nonmated.csv",
    };
    write_scores(&a.out, files.mated, &cross, Label::Mated)?;
    write_scores(&a.out, files.nonmated, &cross, Label::NonMated)?;
    write_scores(&a.out, files.accuracy_mated, &acc, Label::Mated)?;
    write_scores(&a.out, files.accuracy_nonmated, &acc, Label::NonMated)?;

    let mut databases = Vec::new();
    if a.save_databases {
        let raw = TemplateDatabase::raw(&corpus);
        let name = "corpus.ubtp".to_string();
        raw.write(&a.out.join(&name))
            .map_err(|e| CliError::Validation(e.to_string()))?;
        databases.push(raw.manifest(&name));
        for db in &dbs {
            let name = format!("key{}.ubtp", db.key_id);
            db.write(&a.out.join(&name))
                .map_err(|e| CliError::Validation(e.to_string()))?;
            databases.push(db.manifest(&name));
        }
    }
    let manifest = SynthManifest {
        schema_version: SCHEMA_VERSION,
        corpus: corpus_cfg,
        scheme,
        keys: a.keys,
        function: a.function,
        adversary: a.function.default_adversary(),
        pairing: a.pairing,
        experimental: a.experimental,
        counts: SynthCounts {
            mated: cross.mated().len(),
            non_mated: cross.non_mated().len(),
            accuracy_mated: acc.mated().len(),
            accuracy_non_mated: acc.non_mated().len(),
        },
        files,
        databases,
    };
    write_json(&a.out.join("manifest.json"), &manifest)?;
    let _ = writeln!(
        stdout,
        "wrote {} mated and {} non-mated scores to {}",
        cross.mated().len(),
        cross.non_mated().len(),
        a.out.display()
    );
    Ok(())
}

/// Side-by-side values of the compare command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub eer_accuracy: f64,
    pub eer_cross_key: f64,
    pub rtmr_crossing: f64,
    pub kl: KlResult,
    pub d_sys: f64,
    pub omega: f64,
    pub det_accuracy: DetCurve,
    pub det_cross_key: DetCurve,
    pub rtmr: RtmrCurve,
    pub profile: LinkabilityProfile,
    pub densities: DensityPair,
}

/// Computes every metric of the comparison from the same two score sets.
pub fn compare(
    accuracy: &ScoreSet,
    cross_key: &ScoreSet,
    prior: &PriorConfig,
    density: &DensityConfig,
    orientation: Orientation,
) -> Result<Comparison, CliError> {
    let (acc, ck) = cross_key_det(accuracy, cross_key, orientation)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let rtmr = rtmr_curve(accuracy.mated(), cross_key.mated(), orientation)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let eval = evaluate(cross_key, prior, density)?;
    let kl = kl_from(&eval.densities)?;
    Ok(Comparison {
        eer_accuracy: acc.eer,
        eer_cross_key: ck.eer,
        rtmr_crossing: rtmr.crossing,
        kl,
        d_sys: eval.profile.d_sys,
        omega: prior.omega(),
        det_accuracy: acc,
        det_cross_key: ck,
        rtmr,
        profile: eval.profile,
        densities: eval.densities,
    })
}

/// Plain-text table of a comparison.
pub fn comparison_table(c: &Comparison) -> String {
    let rows = [
        ("EER (accuracy)", format!("{:.4}", c.eer_accuracy)),
        ("EER (cross-key)", format!("{:.4}", c.eer_cross_key)),
        ("RTMR crossing", format!("{:.4}", c.rtmr_crossing)),
        ("KL divergence", c.kl.to_string()),
        ("D_sys", format!("{:.4}", c.d_sys)),
    ];
    let mut out = format!("{:<18}{}\n", "metric", "value");
    for (k, v) in rows {
        out.push_str(&format!("{k:<18}{v}\n"));
    }
    out
}

fn cmd_compare(
    a: &CompareArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let prior = a.prior.resolve()?;
    let accuracy = load_pair(
        ("--accuracy-mated", &a.accuracy_mated),
        ("--accuracy-nonmated", &a.accuracy_nonmated),
        "accuracy",
    )?;
    let cross = load_pair(
        ("--crosskey-mated", &a.crosskey_mated),
        ("--crosskey-nonmated", &a.crosskey_nonmated),
        "cross-key",
    )?;
    warn_all(stderr, &prior.warnings());
    warn_all(stderr, &cross.warnings());
    let c = compare(
        &accuracy,
        &cross,
        &prior,
        &a.density.config(),
        a.orientation,
    )?;
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_json(&out.join("compare.json"), &c)?;
        write_file(
            &out.join("det.svg"),
            plot::det_svg(
                "DET: accuracy vs cross-key",
                &[&c.det_accuracy, &c.det_cross_key],
            )
            .as_bytes(),
        )?;
        write_file(
            &out.join("rtmr.svg"),
            plot::rtmr_svg("FNMR vs RTMR", &c.rtmr).as_bytes(),
        )?;
        write_file(
            &out.join("linkability.svg"),
            plot::linkability_svg("cross-key", &c.densities, &c.profile).as_bytes(),
        )?;
    }
    let _ = write!(stdout, "{}", comparison_table(&c));
    Ok(())
}

const DEFAULT_PROTOCOL_DIR: &str = "protocol-report";

fn cmd_protocol(
    a: &ProtocolArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = ProtocolConfig::load(&a.config)
        .map_err(|e| CliError::from(e).context(&a.config.display().to_string()))?;
    let v = cfg.validate()?;
    warn_all(stderr, &v.warnings);
    let run = crate::protocol::run_protocol(&cfg)?;
    for (id, f) in &run.report.per_function {
        if let Some(e) = &f.error {
            let _ = writeln!(stderr, "warning: function {id} failed: {e}");
        }
    }
    let dir = match (&a.out, &cfg.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => cfg.base_dir.join(o),
        (None, None) => PathBuf::from(DEFAULT_PROTOCOL_DIR),
    };
    let path = run.write(&dir)?;
    for (id, f) in &run.report.per_function {
        if let Some(d) = f.d_sys {
            let _ = writeln!(stdout, "{id}: {}", format_d_sys(d));
        }
    }
    match (&run.report.aggregated_d_sys, &run.report.aggregated_from) {
        (Some(d), Some(from)) => {
            let _ = writeln!(stdout, "aggregated: {} (from {from})", format_d_sys(*d));
        }
        _ => {
            return Err(CliError::Validation(format!(
                "every linkage function failed; see {}",
                path.display()
            )))
        }
    }
    let _ = writeln!(stdout, "report: {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            std::iter::once("unlink-eval").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    fn write_scores(dir: &Path, name: &str, v: &[f64]) -> String {
        let p = dir.join(name);
        let body: String = v.iter().map(|x| format!("{x}\n")).collect();
        fs::write(&p, body).unwrap();
        p.display().to_string()
    }

    #[test]
    fn negative_omega_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_scores(dir.path(), "m.csv", &[0.1, 0.2, 0.3]);
        let (code, _, err) = run_args(&["eval", "--mated", &m, "--nonmated", &m, "--omega", "-1"]);
        assert_eq!(code, 2);
        assert!(err.contains("omega must be positive"), "{err}");
    }

    #[test]
    fn missing_file_names_the_flag() {
        let (code, _, err) =
            run_args(&["eval", "--mated", "/nonexistent/m.csv", "--nonmated", "x"]);
        assert_eq!(code, 2);
        assert!(err.contains("--mated"), "{err}");
    }

    #[test]
    fn disjoint_scores_print_one() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_scores(dir.path(), "m.csv", &[0.1, 0.12, 0.15, 0.11]);
        let nm = write_scores(dir.path(), "nm.csv", &[0.5, 0.52, 0.49, 0.55]);
        let (code, out, _) = run_args(&["eval", "--mated", &m, "--nonmated", &nm]);
        assert_eq!(code, 0);
        assert_eq!(out.trim(), "D_sys = 1.0000");
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_args(&["eval"]).0, 2);
        assert_eq!(run_args(&["frobnicate"]).0, 2);
        assert_eq!(run_args(&["--help"]).0, 0);
    }

    #[test]
    fn comparison_table_renders_undefined() {
        let acc = ScoreSet::new(vec![0.1, 0.2, 0.15], vec![0.5, 0.45, 0.55], "a").unwrap();
        let c = compare(
            &acc,
            &acc,
            &PriorConfig::default(),
            &DensityConfig::default(),
            Orientation::Dissimilarity,
        )
        .unwrap();
        let t = comparison_table(&c);
        assert!(t.contains("KL divergence     undefined"), "{t}");
        assert!(t.contains("D_sys             1.0000"), "{t}");
    }
}
