use std::borrow::Cow;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DocumentEmbedding, PreparedDocument, DEFAULT_MAX_SEQ_LEN};
use crate::error::{Error, Result};

const CHECKPOINT_VERSION: u8 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"NSHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub buckets: u32,
    pub dim: usize,
    pub seed: u64,
    pub word_unigrams: bool,
    /// Character n-gram order over `<token>`; 0 disables.
    pub char_ngram: usize,
    pub max_seq_len: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            buckets: 1 << 18,
            dim: 256,
            seed: 0,
            word_unigrams: true,
            char_ngram: 3,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
        }
    }
}

/// Hashed feature rows of one document with weights `count / total`, sorted
/// by row index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocFeatures {
    pub(crate) entries: Vec<(u32, f64)>,
}

impl DocFeatures {
    /// Builds from explicit `(row, weight)` entries; duplicate rows are summed.
    pub fn from_weights(entries: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut map: HashMap<u32, f64> = HashMap::new();
        for (r, w) in entries {
            *map.entry(r).or_insert(0.0) += w;
        }
        let mut entries: Vec<_> = map.into_iter().collect();
        entries.sort_unstable_by_key(|(r, _)| *r);
        DocFeatures { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn fnv1a(seed: u64, kind: u8, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().iter().chain(std::iter::once(&kind)).chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mean-pooled hashed n-gram embedding table.
///
/// Rows are materialized on first write; an untouched row is a pure function
/// of `(seed, row)`, uniform in `[-1/sqrt(d), 1/sqrt(d)]`.
#[derive(Debug, Clone)]
pub struct HashedEncoder {
    config: FeatureConfig,
    rows: HashMap<u32, Vec<f64>>,
}

impl HashedEncoder {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        if config.buckets == 0 || config.dim == 0 {
            return Err(Error::domain("encoder shape", "buckets and dim must be positive"));
        }
        if !config.word_unigrams && config.char_ngram == 0 {
            return Err(Error::domain("encoder features", "no feature family enabled"));
        }
        Ok(HashedEncoder {
            config,
            rows: HashMap::new(),
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn initial_row(&self, row: u32) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.config.seed ^ splitmix64(u64::from(row))));
        let bound = 1.0 / (self.config.dim as f64).sqrt();
        (0..self.config.dim).map(|_| rng.random_range(-bound..=bound)).collect()
    }

    pub fn row(&self, row: u32) -> Cow<'_, [f64]> {
        match self.rows.get(&row) {
            Some(r) => Cow::Borrowed(r),
            None => Cow::Owned(self.initial_row(row)),
        }
    }

    pub fn row_mut(&mut self, row: u32) -> &mut Vec<f64> {
        if !self.rows.contains_key(&row) {
            let init = self.initial_row(row);
            self.rows.insert(row, init);
        }
        self.rows.get_mut(&row).expect("row just materialized")
    }

    pub fn set_row(&mut self, row: u32, values: Vec<f64>) -> Result<()> {
        if values.len() != self.config.dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                actual: values.len(),
            });
        }
        if row >= self.config.buckets {
            return Err(Error::domain("row index", format!("{row} >= {}", self.config.buckets)));
        }
        self.rows.insert(row, values);
        Ok(())
    }

    pub fn materialized_rows(&self) -> usize {
        self.rows.len()
    }

    fn bucket(&self, kind: u8, feature: &str) -> u32 {
        (fnv1a(self.config.seed, kind, feature.as_bytes()) % u64::from(self.config.buckets)) as u32
    }

    pub fn features(&self, doc: &PreparedDocument) -> DocFeatures {
        let mut raw = Vec::new();
        let n = self.config.char_ngram;
        for token in &doc.tokens {
            let token = token.to_lowercase();
            if self.config.word_unigrams {
                raw.push(self.bucket(b'w', &token));
            }
            if n > 0 {
                let padded: Vec<char> = std::iter::once('<').chain(token.chars()).chain(std::iter::once('>')).collect();
                if padded.len() <= n {
                    raw.push(self.bucket(b'c', &padded.iter().collect::<String>()));
                } else {
                    for w in padded.windows(n) {
                        raw.push(self.bucket(b'c', &w.iter().collect::<String>()));
                    }
                }
            }
        }
        if raw.is_empty() {
            return DocFeatures::default();
        }
        let weight = 1.0 / raw.len() as f64;
        DocFeatures::from_weights(raw.into_iter().map(|r| (r, weight)))
    }

    pub fn embed_features(&self, features: &DocFeatures) -> DocumentEmbedding {
        let mut out = vec![0.0; self.config.dim];
        for &(r, w) in &features.entries {
            for (o, x) in out.iter_mut().zip(self.row(r).iter()) {
                *o += w * x;
            }
        }
        DocumentEmbedding(out)
    }

    /// Mean of the rows of all hashed features; the zero vector when the
    /// document has no tokens.
    pub fn encode(&self, doc: &PreparedDocument) -> DocumentEmbedding {
        self.embed_features(&self.features(doc))
    }

    /// Little-endian dump: magic, version byte, feature config, then the
    /// materialized rows in index order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + self.rows.len() * (4 + 8 * c.dim));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&c.buckets.to_le_bytes());
        out.extend_from_slice(&(c.dim as u32).to_le_bytes());
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.push(u8::from(c.word_unigrams));
        out.push(c.char_ngram as u8);
        out.extend_from_slice(&(c.max_seq_len as u32).to_le_bytes());
        let mut keys: Vec<u32> = self.rows.keys().copied().collect();
        keys.sort_unstable();
        out.extend_from_slice(&(keys.len() as u64).to_le_bytes());
        for k in keys {
            out.extend_from_slice(&k.to_le_bytes());
            for x in &self.rows[&k] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err("not an encoder checkpoint".into());
        }
        let version = r.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let config = FeatureConfig {
            buckets: r.u32()?,
            dim: r.u32()? as usize,
            seed: r.u64()?,
            word_unigrams: r.u8()? != 0,
            char_ngram: r.u8()? as usize,
            max_seq_len: r.u32()? as usize,
        };
        let mut enc = HashedEncoder::new(config).map_err(|e| e.to_string())?;
        let n = r.u64()?;
        for _ in 0..n {
            let k = r.u32()?;
            let row = (0..config.dim).map(|_| r.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
            enc.set_row(k, row).map_err(|e| e.to_string())?;
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes after checkpoint".into());
        }
        Ok(enc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        HashedEncoder::from_bytes(&bytes).map_err(|d| Error::format("encoder checkpoint", path, d))
    }

    #[cfg(test)]
    pub(crate) fn rows_equal(&self, other: &HashedEncoder) -> bool {
        self.config == other.config
            && self.rows.keys().chain(other.rows.keys()).all(|&k| self.row(k) == other.row(k))
    }
}

pub(crate) struct ByteReader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
