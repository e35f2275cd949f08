//! Synthetic binary templates, template protection schemes and linkage
//! functions.
//!
//! Every subject has one latent random template; samples are i.i.d. per-bit
//! flips of it. An optional capture-failure rate replaces a sample with an
//! unrelated random string, which gives mated comparisons that look
//! non-mated. Protection schemes are keyed with a [`KeyRing`] of `K` keys.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{Bits, LengthMismatch};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid corpus configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    LengthMismatch(#[from] LengthMismatch),
    #[error("template length {len} is not divisible by block size {block_size}")]
    NotDivisible { len: usize, block_size: usize },
    #[error("block permutation is not a bijection")]
    NotBijective,
    #[error("bloom filter shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("templates use different schemes ({left} vs {right})")]
    SchemeMismatch { left: Scheme, right: Scheme },
    #[error("scheme {0} cannot be inverted (the approximate bloom decoder needs --experimental)")]
    SchemeNotInvertible(Scheme),
    #[error("could not draw {0} pairwise distinct keys")]
    KeysNotDistinct(usize),
    #[error("key id {key} out of range for {count} keys")]
    UnknownKey { key: usize, count: usize },
    #[error("linkage function {function} does not apply to scheme {scheme}")]
    InvalidCombination {
        scheme: Scheme,
        function: LinkageKind,
    },
}

// ---------------------------------------------------------------- corpus

/// Parameters of the synthetic subject population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectCorpus {
    pub n_subjects: usize,
    pub samples_per_subject: usize,
    pub template_bits: usize,
    pub intra_flip_rate: f64,
    /// Probability that a sample is an unrelated random string.
    #[serde(default)]
    pub capture_failure_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SubjectCorpus {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_subjects < 2 {
            return bad(format!(
                "n_subjects must be at least 2, got {}",
                self.n_subjects
            ));
        }
        if self.samples_per_subject < 2 {
            return bad(format!(
                "samples_per_subject must be at least 2, got {}",
                self.samples_per_subject
            ));
        }
        if self.template_bits == 0 {
            return bad("template_bits must be positive".into());
        }
        if !(0.0..0.5).contains(&self.intra_flip_rate) {
            return bad(format!(
                "intra_flip_rate must lie in [0, 0.5), got {}",
                self.intra_flip_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.capture_failure_rate) {
            return bad(format!(
                "capture_failure_rate must lie in [0, 1], got {}",
                self.capture_failure_rate
            ));
        }
        Ok(())
    }
}

/// Raw templates indexed by subject, then sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: SubjectCorpus,
    pub samples: Vec<Vec<Bits>>,
}

impl Corpus {
    pub fn n_subjects(&self) -> usize {
        self.samples.len()
    }

    pub fn samples_per_subject(&self) -> usize {
        self.config.samples_per_subject
    }

    pub fn template_bits(&self) -> usize {
        self.config.template_bits
    }
}

pub fn generate_corpus(cfg: &SubjectCorpus) -> Result<Corpus, SynthError> {
    cfg.validate()?;
    let samples = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|subject| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(subject as u64);
            let latent = Bits::random(cfg.template_bits, &mut rng);
            (0..cfg.samples_per_subject)
                .map(|_| {
                    if cfg.capture_failure_rate > 0.0 && rng.random_bool(cfg.capture_failure_rate) {
                        return Bits::random(cfg.template_bits, &mut rng);
                    }
                    let mut s = latent.clone();
                    if cfg.intra_flip_rate > 0.0 {
                        for i in 0..s.len() {
                            if rng.random_bool(cfg.intra_flip_rate) {
                                s.flip(i);
                            }
                        }
                    }
                    s
                })
                .collect()
        })
        .collect();
    Ok(Corpus {
        config: cfg.clone(),
        samples,
    })
}

// --------------------------------------------------------------- schemes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    None,
    XorSalt,
    BlockRemap,
    BloomFilter,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::None => "none",
            Scheme::XorSalt => "xor_salt",
            Scheme::BlockRemap => "block_remap",
            Scheme::BloomFilter => "bloom_filter",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Scheme::None),
            "xor" | "xor_salt" => Ok(Scheme::XorSalt),
            "remap" | "block_remap" => Ok(Scheme::BlockRemap),
            "bloom" | "bloom_filter" => Ok(Scheme::BloomFilter),
            other => Err(format!(
                "unknown scheme {other:?} (expected none, xor, remap or bloom)"
            )),
        }
    }
}

pub const DEFAULT_BLOCK_SIZE: usize = 16;
pub const DEFAULT_BLOOM_WIDTH: usize = 32;
pub const DEFAULT_BLOOM_HEIGHT: usize = 8;

fn default_block_size() -> usize {
    DEFAULT_BLOCK_SIZE
}
fn default_rekey_fraction() -> f64 {
    1.0
}
fn default_bloom_width() -> usize {
    DEFAULT_BLOOM_WIDTH
}
fn default_bloom_height() -> usize {
    DEFAULT_BLOOM_HEIGHT
}

/// A protection scheme with its parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeConfig {
    None,
    #[default]
    XorSalt,
    BlockRemap {
        #[serde(default = "default_block_size")]
        block_size: usize,
        /// Share of block positions each key reshuffles relative to a master
        /// permutation common to all keys. `1.0` gives independent keys;
        /// smaller values leak the master permutation across keys.
        #[serde(default = "default_rekey_fraction")]
        rekey_fraction: f64,
    },
    BloomFilter {
        #[serde(default = "default_bloom_width")]
        block_width: usize,
        #[serde(default = "default_bloom_height")]
        block_height: usize,
    },
}

impl SchemeConfig {
    pub fn with_defaults(scheme: Scheme) -> Self {
        match scheme {
            Scheme::None => SchemeConfig::None,
            Scheme::XorSalt => SchemeConfig::XorSalt,
            Scheme::BlockRemap => SchemeConfig::BlockRemap {
                block_size: DEFAULT_BLOCK_SIZE,
                rekey_fraction: 1.0,
            },
            Scheme::BloomFilter => SchemeConfig::BloomFilter {
                block_width: DEFAULT_BLOOM_WIDTH,
                block_height: DEFAULT_BLOOM_HEIGHT,
            },
        }
    }

    pub fn scheme(&self) -> Scheme {
        match self {
            SchemeConfig::None => Scheme::None,
            SchemeConfig::XorSalt => Scheme::XorSalt,
            SchemeConfig::BlockRemap { .. } => Scheme::BlockRemap,
            SchemeConfig::BloomFilter { .. } => Scheme::BloomFilter,
        }
    }

    /// Checks the parameters against a template length.
    pub fn validate(&self, template_bits: usize) -> Result<(), SynthError> {
        match *self {
            SchemeConfig::None | SchemeConfig::XorSalt => Ok(()),
            SchemeConfig::BlockRemap {
                block_size,
                rekey_fraction,
            } => {
                if block_size == 0 || !template_bits.is_multiple_of(block_size) {
                    return Err(SynthError::NotDivisible {
                        len: template_bits,
                        block_size,
                    });
                }
                if !(rekey_fraction > 0.0 && rekey_fraction <= 1.0) {
                    return Err(SynthError::InvalidConfig(format!(
                        "rekey_fraction must lie in (0, 1], got {rekey_fraction}"
                    )));
                }
                Ok(())
            }
            SchemeConfig::BloomFilter {
                block_width,
                block_height,
            } => bloom_shape(template_bits, block_width, block_height).map(|_| ()),
        }
    }

    /// Length of a protected template for raw templates of `template_bits`.
    pub fn protected_bits(&self, template_bits: usize) -> Result<usize, SynthError> {
        match *self {
            SchemeConfig::BloomFilter {
                block_width,
                block_height,
            } => {
                let blocks = bloom_shape(template_bits, block_width, block_height)?;
                Ok(blocks << block_height)
            }
            _ => {
                self.validate(template_bits)?;
                Ok(template_bits)
            }
        }
    }
}

/// A template after protection with one key of a ring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectedTemplate {
    pub bits: Bits,
    pub key_id: usize,
    pub scheme: Scheme,
}

// ------------------------------------------------------- protection ops

pub fn xor_salt(template: &Bits, key: &Bits) -> Result<Bits, SynthError> {
    Ok(template.xor(key)?)
}

fn check_block_permutation(perm: &[usize]) -> Result<(), SynthError> {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
            return Err(SynthError::NotBijective);
        }
    }
    Ok(())
}

/// Reorders blocks so that output block `i` is input block `perm[i]`.
pub fn block_remap(template: &Bits, perm: &[usize], block_size: usize) -> Result<Bits, SynthError> {
    if block_size == 0 || !template.len().is_multiple_of(block_size) {
        return Err(SynthError::NotDivisible {
            len: template.len(),
            block_size,
        });
    }
    if perm.len() != template.len() / block_size {
        return Err(SynthError::NotBijective);
    }
    check_block_permutation(perm)?;
    Ok(template.gather(&expand_block_permutation(perm, block_size)))
}

fn expand_block_permutation(perm: &[usize], block_size: usize) -> Vec<usize> {
    perm.iter()
        .flat_map(|&p| (0..block_size).map(move |o| p * block_size + o))
        .collect()
}

fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Number of bloom blocks for a template of `len` bits.
fn bloom_shape(len: usize, width: usize, height: usize) -> Result<usize, SynthError> {
    if !(1..=16).contains(&height) {
        return Err(SynthError::ShapeMismatch(format!(
            "block height must lie in 1..=16, got {height}"
        )));
    }
    if width == 0
        || !len.is_multiple_of(height)
        || !(len / height).is_multiple_of(width)
        || len == 0
    {
        return Err(SynthError::ShapeMismatch(format!(
            "{len} bits do not reshape to {height} rows of whole {width}-column blocks"
        )));
    }
    Ok(len / height / width)
}

/// Column `c` of the `h x W` row-major reshaping, row 0 as the most
/// significant bit.
fn column_value(template: &Bits, columns: usize, height: usize, c: usize) -> usize {
    (0..height).fold(0, |acc, r| {
        (acc << 1) | usize::from(template.get(r * columns + c))
    })
}

/// Bloom-filter encoding: every column of a block, XORed with the block key,
/// selects one bit of a `2^h`-bit filter.
pub fn bloom_protect(
    template: &Bits,
    key: &[u16],
    block_width: usize,
    block_height: usize,
) -> Result<Bits, SynthError> {
    let blocks = bloom_shape(template.len(), block_width, block_height)?;
    if key.len() != blocks {
        return Err(SynthError::ShapeMismatch(format!(
            "{} block keys for {blocks} blocks",
            key.len()
        )));
    }
    let columns = template.len() / block_height;
    let filter = 1usize << block_height;
    let mut out = Bits::zeros(blocks * filter);
    for (j, &k) in key.iter().enumerate() {
        if usize::from(k) >= filter {
            return Err(SynthError::ShapeMismatch(format!(
                "block key {k} exceeds {block_height} bits"
            )));
        }
        for c in j * block_width..(j + 1) * block_width {
            let idx = column_value(template, columns, block_height, c) ^ usize::from(k);
            out.set(j * filter + idx, true);
        }
    }
    Ok(out)
}

/// Approximate inverse of [`bloom_protect`]: the columns recovered from the
/// set bits of each filter fill the block from the left, the rest stay zero.
pub fn bloom_decode(
    filter_bits: &Bits,
    key: &[u16],
    block_width: usize,
    block_height: usize,
) -> Result<Bits, SynthError> {
    let filter = 1usize << block_height;
    if filter_bits.len() != key.len() * filter {
        return Err(SynthError::ShapeMismatch(format!(
            "{} filter bits for {} blocks of {filter}",
            filter_bits.len(),
            key.len()
        )));
    }
    let columns = key.len() * block_width;
    let mut out = Bits::zeros(columns * block_height);
    for (j, &k) in key.iter().enumerate() {
        let found = (0..filter)
            .filter(|&i| filter_bits.get(j * filter + i))
            .map(|i| i ^ usize::from(k))
            .take(block_width);
        for (slot, v) in found.enumerate() {
            let c = j * block_width + slot;
            for r in 0..block_height {
                out.set(r * columns + c, (v >> (block_height - 1 - r)) & 1 == 1);
            }
        }
    }
    Ok(out)
}

// ------------------------------------------------------------------ keys

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum KeyMaterial {
    Identity,
    Xor(Bits),
    Remap(Vec<usize>),
    Bloom(Vec<u16>),
}

/// `K` keys for one scheme, derived deterministically from a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyRing {
    scheme: SchemeConfig,
    template_bits: usize,
    keys: Vec<KeyMaterial>,
}

// Keeps key streams apart from corpus streams drawn from the same seed.
const KEY_DOMAIN: u64 = 0x6b65_7972_696e_6701;
const MAX_KEY_REDRAWS: usize = 64;

impl KeyRing {
    pub fn generate(
        scheme: &SchemeConfig,
        template_bits: usize,
        count: usize,
        seed: u64,
    ) -> Result<Self, SynthError> {
        if count == 0 {
            return Err(SynthError::InvalidConfig(
                "a key ring needs at least one key".into(),
            ));
        }
        scheme.validate(template_bits)?;
        let mut master = ChaCha8Rng::seed_from_u64(seed ^ KEY_DOMAIN);
        master.set_stream(u64::MAX);
        let master_perm = match *scheme {
            SchemeConfig::BlockRemap { block_size, .. } => {
                let mut p: Vec<usize> = (0..template_bits / block_size).collect();
                p.shuffle(&mut master);
                p
            }
            _ => Vec::new(),
        };

        let mut keys: Vec<KeyMaterial> = Vec::with_capacity(count);
        for id in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ KEY_DOMAIN);
            rng.set_stream(id as u64);
            let mut attempt = 0;
            let key = loop {
                let key = draw_key(scheme, template_bits, &master_perm, &mut rng);
                if key == KeyMaterial::Identity || !keys.contains(&key) {
                    break key;
                }
                attempt += 1;
                if attempt == MAX_KEY_REDRAWS {
                    return Err(SynthError::KeysNotDistinct(count));
                }
            };
            keys.push(key);
        }
        Ok(Self {
            scheme: scheme.clone(),
            template_bits,
            keys,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn scheme(&self) -> &SchemeConfig {
        &self.scheme
    }

    pub fn template_bits(&self) -> usize {
        self.template_bits
    }

    pub fn key(&self, id: usize) -> Result<&KeyMaterial, SynthError> {
        self.keys.get(id).ok_or(SynthError::UnknownKey {
            key: id,
            count: self.keys.len(),
        })
    }

    /// Applies key `id` to a raw template.
    pub fn protect(&self, template: &Bits, id: usize) -> Result<ProtectedTemplate, SynthError> {
        let bits = match (&self.scheme, self.key(id)?) {
            (_, KeyMaterial::Identity) => template.clone(),
            (_, KeyMaterial::Xor(k)) => xor_salt(template, k)?,
            (SchemeConfig::BlockRemap { block_size, .. }, KeyMaterial::Remap(p)) => {
                block_remap(template, p, *block_size)?
            }
            (
                SchemeConfig::BloomFilter {
                    block_width,
                    block_height,
                },
                KeyMaterial::Bloom(k),
            ) => bloom_protect(template, k, *block_width, *block_height)?,
            _ => unreachable!("key material always matches the ring's scheme"),
        };
        Ok(ProtectedTemplate {
            bits,
            key_id: id,
            scheme: self.scheme.scheme(),
        })
    }

    /// Recovers the raw template with full knowledge of the keys. Bloom
    /// filters are only approximately invertible and need `experimental`.
    pub fn reconstruct(
        &self,
        t: &ProtectedTemplate,
        experimental: bool,
    ) -> Result<Bits, SynthError> {
        if t.scheme != self.scheme.scheme() {
            return Err(SynthError::SchemeMismatch {
                left: t.scheme,
                right: self.scheme.scheme(),
            });
        }
        match (&self.scheme, self.key(t.key_id)?) {
            (_, KeyMaterial::Identity) => Ok(t.bits.clone()),
            (_, KeyMaterial::Xor(k)) => xor_salt(&t.bits, k),
            (SchemeConfig::BlockRemap { block_size, .. }, KeyMaterial::Remap(p)) => {
                block_remap(&t.bits, &invert_permutation(p), *block_size)
            }
            (
                SchemeConfig::BloomFilter {
                    block_width,
                    block_height,
                },
                KeyMaterial::Bloom(k),
            ) => {
                if !experimental {
                    return Err(SynthError::SchemeNotInvertible(Scheme::BloomFilter));
                }
                bloom_decode(&t.bits, k, *block_width, *block_height)
            }
            _ => unreachable!("key material always matches the ring's scheme"),
        }
    }

    /// Bit permutation `rel` with `gather(T_b, rel)` aligned to the frame of
    /// key `a`, for schemes whose keys only move bits around.
    pub fn inter_key_relation(&self, a: usize, b: usize) -> Result<Vec<usize>, SynthError> {
        match (&self.scheme, self.key(a)?, self.key(b)?) {
            (_, KeyMaterial::Identity, KeyMaterial::Identity) => {
                Ok((0..self.template_bits).collect())
            }
            (
                SchemeConfig::BlockRemap { block_size, .. },
                KeyMaterial::Remap(pa),
                KeyMaterial::Remap(pb),
            ) => {
                let inv_b = invert_permutation(pb);
                let blocks: Vec<usize> = pa.iter().map(|&x| inv_b[x]).collect();
                Ok(expand_block_permutation(&blocks, *block_size))
            }
            _ => Err(SynthError::InvalidCombination {
                scheme: self.scheme.scheme(),
                function: LinkageKind::PermutedXor,
            }),
        }
    }
}

fn draw_key(
    scheme: &SchemeConfig,
    template_bits: usize,
    master_perm: &[usize],
    rng: &mut ChaCha8Rng,
) -> KeyMaterial {
    match *scheme {
        SchemeConfig::None => KeyMaterial::Identity,
        SchemeConfig::XorSalt => KeyMaterial::Xor(Bits::random(template_bits, rng)),
        SchemeConfig::BlockRemap { rekey_fraction, .. } => {
            let mut perm = master_perm.to_vec();
            let n = perm.len();
            let moved = ((rekey_fraction * n as f64).round() as usize).clamp(2.min(n), n);
            let positions: Vec<usize> = rand::seq::index::sample(rng, n, moved).into_vec();
            let mut values: Vec<usize> = positions.iter().map(|&p| perm[p]).collect();
            values.shuffle(rng);
            for (&p, v) in positions.iter().zip(values) {
                perm[p] = v;
            }
            KeyMaterial::Remap(perm)
        }
        SchemeConfig::BloomFilter {
            block_width,
            block_height,
        } => {
            let blocks = template_bits / block_height / block_width;
            KeyMaterial::Bloom(
                (0..blocks)
                    .map(|_| rng.random_range(0..(1u32 << block_height)) as u16)
                    .collect(),
            )
        }
    }
}

// -------------------------------------------------------------- linkage

/// The linkage-function families an adversary may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkageKind {
    PicHd,
    HammingWeight,
    PermutedXor,
    Reconstruction,
}

impl LinkageKind {
    pub const ALL: [LinkageKind; 4] = [
        LinkageKind::PicHd,
        LinkageKind::HammingWeight,
        LinkageKind::PermutedXor,
        LinkageKind::Reconstruction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkageKind::PicHd => "pic_hd",
            LinkageKind::HammingWeight => "hamming_weight",
            LinkageKind::PermutedXor => "permuted_xor",
            LinkageKind::Reconstruction => "reconstruction",
        }
    }

    /// What the adversary needs to know to run this function.
    pub fn default_adversary(self) -> AdversaryModel {
        match self {
            LinkageKind::PicHd | LinkageKind::HammingWeight => AdversaryModel::TemplateOnly,
            LinkageKind::PermutedXor => AdversaryModel::StructuralKnowledge,
            LinkageKind::Reconstruction => AdversaryModel::KeyKnowledge,
        }
    }
}

impl fmt::Display for LinkageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LinkageKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                format!(
                    "unknown linkage function {s:?} (expected pic_hd, hamming_weight, permuted_xor or reconstruction)"
                )
            })
    }
}

/// Declared knowledge of the adversary running a linkage function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryModel {
    TemplateOnly,
    KeyKnowledge,
    StructuralKnowledge,
}

/// Rejects function/scheme pairs that cannot be evaluated.
pub fn check_combination(
    scheme: Scheme,
    function: LinkageKind,
    experimental: bool,
) -> Result<(), SynthError> {
    match (function, scheme) {
        (LinkageKind::PermutedXor, Scheme::XorSalt | Scheme::BloomFilter) => {
            Err(SynthError::InvalidCombination { scheme, function })
        }
        (LinkageKind::Reconstruction, Scheme::BloomFilter) if !experimental => {
            Err(SynthError::SchemeNotInvertible(scheme))
        }
        _ => Ok(()),
    }
}

/// `|A xor B| / (|A| + |B|)`, 0 when both filters are empty.
pub fn bloom_dissimilarity(a: &Bits, b: &Bits) -> Result<f64, LengthMismatch> {
    let diff = a.hamming(b)?;
    let total = a.count_ones() + b.count_ones();
    Ok(if total == 0 {
        0.0
    } else {
        diff as f64 / total as f64
    })
}

/// The comparator of the protection scheme.
pub fn linkage_pic_hd(t1: &ProtectedTemplate, t2: &ProtectedTemplate) -> Result<f64, SynthError> {
    if t1.scheme != t2.scheme {
        return Err(SynthError::SchemeMismatch {
            left: t1.scheme,
            right: t2.scheme,
        });
    }
    Ok(match t1.scheme {
        Scheme::BloomFilter => bloom_dissimilarity(&t1.bits, &t2.bits)?,
        _ => t1.bits.normalized_hamming(&t2.bits)?,
    })
}

/// `|HW(T1) - HW(T2)| / length`.
pub fn linkage_hamming_weight(t1: &Bits, t2: &Bits) -> Result<f64, SynthError> {
    if t1.len() != t2.len() {
        return Err(LengthMismatch {
            left: t1.len(),
            right: t2.len(),
        }
        .into());
    }
    if t1.is_empty() {
        return Ok(0.0);
    }
    Ok(t1.count_ones().abs_diff(t2.count_ones()) as f64 / t1.len() as f64)
}

/// Normalized Hamming distance between `T1` and `T2` moved by `relation`.
pub fn linkage_permuted_xor(t1: &Bits, t2: &Bits, relation: &[usize]) -> Result<f64, SynthError> {
    if relation.len() != t2.len() {
        return Err(LengthMismatch {
            left: relation.len(),
            right: t2.len(),
        }
        .into());
    }
    check_block_permutation(relation)?;
    Ok(t1.normalized_hamming(&t2.gather(relation))?)
}

/// Normalized Hamming distance between the reconstructed raw templates.
pub fn linkage_reconstruction(
    t1: &ProtectedTemplate,
    t2: &ProtectedTemplate,
    keys: &KeyRing,
    experimental: bool,
) -> Result<f64, SynthError> {
    let r1 = keys.reconstruct(t1, experimental)?;
    let r2 = keys.reconstruct(t2, experimental)?;
    Ok(r1.normalized_hamming(&r2)?)
}
