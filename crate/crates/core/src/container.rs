//! Binary container for raw corpora and protected template databases.
//!
//! Layout (little endian):
//!
//! ```text
//! offset size field
//!      0    4 magic "UBTP"
//!      4    2 version (1)
//!      6    1 kind (0 raw, 1 protected)
//!      7    1 scheme (0 none, 1 xor_salt, 2 block_remap, 3 bloom_filter)
//!      8    4 key id
//!     12    4 subjects
//!     16    4 samples per subject
//!     20    4 bits per template
//!     24    . templates, subject-major, each ceil(bits / 8) bytes LSB-first
//! ```
//!
//! Padding bits in the last byte of every template must be zero.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bits;
use crate::synth::{Corpus, KeyRing, Scheme, SynthError};

pub const MAGIC: &[u8; 4] = b"UBTP";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Error, PartialEq)]
pub enum ContainerError {
    #[error("container is {0} bytes, shorter than the {HEADER_LEN}-byte header")]
    TooShort(usize),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown container kind {0}")]
    UnknownKind(u8),
    #[error("unknown scheme code {0}")]
    UnknownScheme(u8),
    #[error("raw containers must use scheme none and key id 0")]
    RawWithKey,
    #[error("declared sizes overflow")]
    SizeOverflow,
    #[error("payload is {got} bytes, header declares {expected}")]
    PayloadLength { expected: usize, got: usize },
    #[error("non-zero padding bits in template {subject}/{sample}")]
    NonZeroPadding { subject: usize, sample: usize },
    #[error("templates have inconsistent lengths")]
    RaggedTemplates,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerKind {
    Raw,
    Protected,
}

fn scheme_code(s: Scheme) -> u8 {
    match s {
        Scheme::None => 0,
        Scheme::XorSalt => 1,
        Scheme::BlockRemap => 2,
        Scheme::BloomFilter => 3,
    }
}

fn scheme_from_code(c: u8) -> Result<Scheme, ContainerError> {
    Ok(match c {
        0 => Scheme::None,
        1 => Scheme::XorSalt,
        2 => Scheme::BlockRemap,
        3 => Scheme::BloomFilter,
        other => return Err(ContainerError::UnknownScheme(other)),
    })
}

/// Templates of one database indexed by subject, then sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateDatabase {
    pub kind: ContainerKind,
    pub scheme: Scheme,
    pub key_id: u32,
    pub template_bits: usize,
    pub templates: Vec<Vec<Bits>>,
}

impl TemplateDatabase {
    pub fn raw(corpus: &Corpus) -> Self {
        Self {
            kind: ContainerKind::Raw,
            scheme: Scheme::None,
            key_id: 0,
            template_bits: corpus.template_bits(),
            templates: corpus.samples.clone(),
        }
    }

    /// Protects every template of the corpus with key `key_id`.
    pub fn protect(corpus: &Corpus, ring: &KeyRing, key_id: usize) -> Result<Self, SynthError> {
        let templates = corpus
            .samples
            .iter()
            .map(|s| {
                s.iter()
                    .map(|t| ring.protect(t, key_id).map(|p| p.bits))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            kind: ContainerKind::Protected,
            scheme: ring.scheme().scheme(),
            key_id: key_id as u32,
            template_bits: ring.scheme().protected_bits(corpus.template_bits())?,
            templates,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.templates.len()
    }

    pub fn samples_per_subject(&self) -> usize {
        self.templates.first().map_or(0, Vec::len)
    }

    pub fn encode(&self) -> Result<Vec<u8>, ContainerError> {
        let samples = self.samples_per_subject();
        let ragged = self
            .templates
            .iter()
            .any(|s| s.len() != samples || s.iter().any(|t| t.len() != self.template_bits));
        if ragged {
            return Err(ContainerError::RaggedTemplates);
        }
        let to_u32 = |v: usize| u32::try_from(v).map_err(|_| ContainerError::SizeOverflow);
        let per = self.template_bits.div_ceil(8);
        let mut out = Vec::with_capacity(HEADER_LEN + per * samples * self.n_subjects());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.kind {
            ContainerKind::Raw => 0,
            ContainerKind::Protected => 1,
        });
        out.push(scheme_code(self.scheme));
        out.extend_from_slice(&self.key_id.to_le_bytes());
        out.extend_from_slice(&to_u32(self.n_subjects())?.to_le_bytes());
        out.extend_from_slice(&to_u32(samples)?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.template_bits)?.to_le_bytes());
        for t in self.templates.iter().flatten() {
            out.extend_from_slice(&t.to_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < HEADER_LEN {
            return Err(ContainerError::TooShort(bytes.len()));
        }
        if &bytes[0..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at =
            |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let version = u16_at(4);
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let kind = match bytes[6] {
            0 => ContainerKind::Raw,
            1 => ContainerKind::Protected,
            k => return Err(ContainerError::UnknownKind(k)),
        };
        let scheme = scheme_from_code(bytes[7])?;
        let key_id = u32_at(8);
        if kind == ContainerKind::Raw && (scheme != Scheme::None || key_id != 0) {
            return Err(ContainerError::RawWithKey);
        }
        let subjects = u32_at(12) as usize;
        let samples = u32_at(16) as usize;
        let bits = u32_at(20) as usize;
        let per = bits.div_ceil(8);
        let expected = subjects
            .checked_mul(samples)
            .and_then(|n| n.checked_mul(per))
            .ok_or(ContainerError::SizeOverflow)?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(ContainerError::PayloadLength {
                expected,
                got: payload.len(),
            });
        }
        let mut templates = Vec::with_capacity(subjects);
        let mut chunks = payload.chunks_exact(per.max(1));
        for subject in 0..subjects {
            let mut row = Vec::with_capacity(samples);
            for sample in 0..samples {
                let chunk = if per == 0 {
                    &[][..]
                } else {
                    chunks.next().unwrap_or(&[])
                };
                let t = Bits::from_bytes(chunk, bits)
                    .ok_or(ContainerError::NonZeroPadding { subject, sample })?;
                row.push(t);
            }
            templates.push(row);
        }
        Ok(Self {
            kind,
            scheme,
            key_id,
            template_bits: bits,
            templates,
        })
    }

    pub fn manifest(&self, file: &str) -> DatabaseManifest {
        DatabaseManifest {
            file: file.to_string(),
            kind: self.kind,
            scheme: self.scheme,
            key_id: self.key_id,
            n_subjects: self.n_subjects(),
            samples_per_subject: self.samples_per_subject(),
            template_bits: self.template_bits,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), ContainerError> {
        fs::write(path, self.encode()?).map_err(|e| ContainerError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, ContainerError> {
        let bytes = fs::read(path).map_err(|e| ContainerError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::decode(&bytes)
    }
}

/// JSON description of one container file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseManifest {
    pub file: String,
    pub kind: ContainerKind,
    pub scheme: Scheme,
    pub key_id: u32,
    pub n_subjects: usize,
    pub samples_per_subject: usize,
    pub template_bits: usize,
}
