use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::UNK;

/// 64-bit FNV-1a over the UTF-8 bytes of a token.
pub fn token_hash(token: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    token
        .bytes()
        .fold(OFFSET, |h, b| (h ^ b as u64).wrapping_mul(PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic vector for a token: every component is uniform on [-1, 1)
/// and depends only on (token, seed, component index).
pub fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let h = token_hash(token);
    (0..dim as u64)
        .map(|i| {
            let bits = splitmix64(h ^ splitmix64(seed.wrapping_add(splitmix64(i))));
            let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
            2.0 * unit - 1.0
        })
        .collect()
}

/// Fixed random word embeddings; unknown tokens share the `<unk>` vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    seed: u64,
    table: BTreeMap<String, Vec<f64>>,
    unknown: Vec<f64>,
}

/// Serialized form: the vectors are a pure function of (token, dim, seed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub dim: usize,
    pub seed: u64,
    pub vocab: Vec<String>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.table.contains_key(token)
    }

    pub fn lookup(&self, token: &str) -> &[f64] {
        self.table.get(token).unwrap_or(&self.unknown)
    }

    pub fn to_spec(&self) -> EmbeddingSpec {
        EmbeddingSpec {
            dim: self.dim,
            seed: self.seed,
            vocab: self.table.keys().cloned().collect(),
        }
    }

    pub fn from_spec(spec: &EmbeddingSpec) -> Result<Self> {
        build_embeddings(spec.vocab.iter().map(String::as_str), spec.dim, spec.seed)
    }
}

pub fn build_embeddings<'a, I>(vocab: I, dim: usize, seed: u64) -> Result<EmbeddingTable>
where
    I: IntoIterator<Item = &'a str>,
{
    if dim == 0 {
        return Err(Error::invalid("embeddings", "dimension must be positive"));
    }
    let table = vocab
        .into_iter()
        .filter(|t| *t != UNK)
        .map(|t| (t.to_string(), token_vector(t, dim, seed)))
        .collect();
    Ok(EmbeddingTable {
        dim,
        seed,
        table,
        unknown: token_vector(UNK, dim, seed),
    })
}
