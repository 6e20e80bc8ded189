//! Substring index over a document corpus.
//!
//! Documents are stored as Unicode scalar values. Every `gram`-character
//! window of every document is fingerprinted with a polynomial rolling hash
//! modulo 2^61 - 1, and the `(fingerprint, position)` pairs are kept in one
//! sorted vector. Candidate hits are always verified against the stored text,
//! so hash collisions never produce false positives.
//!
//! Memory: 4 bytes per character of text plus 16 bytes per indexed window,
//! plus the UTF-8 text used for queries shorter than `gram`.

use memchr::memmem;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MODULUS: u64 = (1 << 61) - 1;
const BASE: u64 = 0x1F3D_5B79_A2C4_E681 % MODULUS;

/// Default fingerprint width in characters.
pub const DEFAULT_GRAM: usize = 64;
/// Default cap on a single document's length in characters.
pub const DEFAULT_MAX_DOC_CHARS: usize = 64 << 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("the corpus has no documents")]
    NoDocuments,
    #[error("document {id:?} has {chars} characters, above the cap of {cap}")]
    DocumentTooLarge { id: String, chars: usize, cap: usize },
    #[error("the corpus exceeds {} characters", u32::MAX)]
    CorpusTooLarge,
    #[error("gram width must be at least 1")]
    ZeroGram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `\r\n` and lone `\r` become `\n`.
    #[default]
    Newlines,
    /// Newline canonicalization, then every run of whitespace becomes one space.
    CollapseWhitespace,
}

impl Normalization {
    pub fn apply(self, text: &str) -> String {
        let canonical = text.replace("\r\n", "\n").replace('\r', "\n");
        match self {
            Normalization::Newlines => canonical,
            Normalization::CollapseWhitespace => {
                let mut out = String::with_capacity(canonical.len());
                let mut in_space = false;
                for c in canonical.chars() {
                    if c.is_whitespace() {
                        if !in_space {
                            out.push(' ');
                        }
                        in_space = true;
                    } else {
                        out.push(c);
                        in_space = false;
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document { id: id.into(), text: text.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub gram: usize,
    pub max_doc_chars: usize,
    pub normalization: Normalization,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig { gram: DEFAULT_GRAM, max_doc_chars: DEFAULT_MAX_DOC_CHARS, normalization: Normalization::Newlines }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexStats {
    pub documents: usize,
    pub characters: usize,
    pub windows: usize,
}

/// A verified occurrence of query text in the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub doc: usize,
    /// Start of the match in the query, in characters.
    pub query_start: usize,
    /// Length of the maximal common run around the hit, in characters.
    pub len: usize,
}

fn mul_mod(a: u64, b: u64) -> u64 {
    let p = u128::from(a) * u128::from(b);
    let folded = (p as u64 & MODULUS) + (p >> 61) as u64;
    if folded >= MODULUS {
        folded - MODULUS
    } else {
        folded
    }
}

fn add_mod(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= MODULUS {
        s - MODULUS
    } else {
        s
    }
}

fn sub_mod(a: u64, b: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + MODULUS - b
    }
}

fn pow_mod(mut base: u64, mut exp: usize) -> u64 {
    let mut acc = 1;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base);
        }
        base = mul_mod(base, base);
        exp >>= 1;
    }
    acc
}

fn hash_of(chars: &[u32]) -> u64 {
    chars.iter().fold(0, |h, &c| add_mod(mul_mod(h, BASE), u64::from(c) + 1))
}

/// Calls `f(start, hash)` for every `gram`-wide window of `chars`.
fn rolling(chars: &[u32], gram: usize, top: u64, mut f: impl FnMut(usize, u64)) {
    if chars.len() < gram {
        return;
    }
    let mut h = hash_of(&chars[..gram]);
    f(0, h);
    for start in 1..=chars.len() - gram {
        h = sub_mod(h, mul_mod(u64::from(chars[start - 1]) + 1, top));
        h = add_mod(mul_mod(h, BASE), u64::from(chars[start + gram - 1]) + 1);
        f(start, h);
    }
}

pub(crate) fn to_scalars(text: &str) -> Vec<u32> {
    text.chars().map(u32::from).collect()
}

#[derive(Debug, Clone)]
pub struct CorpusIndex {
    config: IndexConfig,
    ids: Vec<String>,
    texts: Vec<String>,
    chars: Vec<u32>,
    /// `starts[d]..starts[d + 1]` is document `d` within `chars`.
    starts: Vec<usize>,
    windows: Vec<(u64, u32)>,
}

/// Builds the index. Documents are normalized with `config.normalization`.
pub fn build_corpus_index(documents: Vec<Document>, config: IndexConfig) -> Result<CorpusIndex, IndexError> {
    if documents.is_empty() {
        return Err(IndexError::NoDocuments);
    }
    if config.gram == 0 {
        return Err(IndexError::ZeroGram);
    }
    let mut ids = Vec::with_capacity(documents.len());
    let mut texts = Vec::with_capacity(documents.len());
    let mut chars = Vec::new();
    let mut starts = vec![0];
    for doc in documents {
        let text = config.normalization.apply(&doc.text);
        let scalars = to_scalars(&text);
        if scalars.len() > config.max_doc_chars {
            return Err(IndexError::DocumentTooLarge { id: doc.id, chars: scalars.len(), cap: config.max_doc_chars });
        }
        chars.extend_from_slice(&scalars);
        if chars.len() > u32::MAX as usize {
            return Err(IndexError::CorpusTooLarge);
        }
        starts.push(chars.len());
        ids.push(doc.id);
        texts.push(text);
    }
    let top = pow_mod(BASE, config.gram - 1);
    let mut windows = Vec::new();
    for d in 0..ids.len() {
        let (lo, hi) = (starts[d], starts[d + 1]);
        rolling(&chars[lo..hi], config.gram, top, |s, h| windows.push((h, (lo + s) as u32)));
    }
    windows.sort_unstable();
    log::debug!("indexed {} documents, {} characters, {} windows", ids.len(), chars.len(), windows.len());
    Ok(CorpusIndex { config, ids, texts, chars, starts, windows })
}

impl CorpusIndex {
    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats { documents: self.ids.len(), characters: self.chars.len(), windows: self.windows.len() }
    }

    pub fn document_id(&self, doc: usize) -> &str {
        &self.ids[doc]
    }

    fn doc_of(&self, pos: usize) -> usize {
        self.starts.partition_point(|&s| s <= pos) - 1
    }

    fn positions(&self, hash: u64) -> impl Iterator<Item = usize> + '_ {
        let lo = self.windows.partition_point(|&(h, _)| h < hash);
        self.windows[lo..].iter().take_while(move |&&(h, _)| h == hash).map(|&(_, p)| p as usize)
    }

    /// First document containing `query` verbatim. `query` must already be normalized.
    pub fn find_exact(&self, query: &str) -> Option<usize> {
        let q = to_scalars(query);
        if q.is_empty() {
            return Some(0);
        }
        if q.len() < self.config.gram {
            let finder = memmem::Finder::new(query.as_bytes());
            return self.texts.iter().position(|t| finder.find(t.as_bytes()).is_some());
        }
        let h = hash_of(&q[..self.config.gram]);
        self.positions(h)
            .filter(|&p| {
                let d = self.doc_of(p);
                p + q.len() <= self.starts[d + 1] && self.chars[p..p + q.len()] == q[..]
            })
            .map(|p| self.doc_of(p))
            .min()
    }

    /// A maximal common run of at least `min_len` characters between the
    /// query and one document, or `None`. `query` must already be normalized.
    ///
    /// Any such run contains a fingerprinted window starting at a multiple of
    /// `min_len - gram + 1`, so only those query offsets are probed.
    pub fn find_window(&self, query: &[u32], min_len: usize) -> Option<Hit> {
        let gram = self.config.gram;
        if min_len == 0 || query.len() < min_len {
            return None;
        }
        if min_len < gram {
            return self.find_window_slow(query, min_len);
        }
        let step = min_len - gram + 1;
        let mut best: Option<Hit> = None;
        let mut j = 0;
        while j + gram <= query.len() {
            let h = hash_of(&query[j..j + gram]);
            for p in self.positions(h) {
                let d = self.doc_of(p);
                let (lo, hi) = (self.starts[d], self.starts[d + 1]);
                if p + gram > hi || self.chars[p..p + gram] != query[j..j + gram] {
                    continue;
                }
                let mut back = 0;
                while back < j && p - back > lo && self.chars[p - back - 1] == query[j - back - 1] {
                    back += 1;
                }
                let mut fwd = gram;
                while j + fwd < query.len() && p + fwd < hi && self.chars[p + fwd] == query[j + fwd] {
                    fwd += 1;
                }
                let hit = Hit { doc: d, query_start: j - back, len: back + fwd };
                if hit.len >= min_len && best.map_or(true, |b| hit.len > b.len) {
                    best = Some(hit);
                }
            }
            if best.is_some() {
                return best;
            }
            j += step;
        }
        None
    }

    fn find_window_slow(&self, query: &[u32], min_len: usize) -> Option<Hit> {
        if query.len() < min_len {
            return None;
        }
        let text: Vec<String> =
            (0..=query.len() - min_len).map(|s| query[s..s + min_len].iter().filter_map(|&c| char::from_u32(c)).collect()).collect();
        for (s, w) in text.iter().enumerate() {
            if let Some(d) = self.find_exact(w) {
                return Some(Hit { doc: d, query_start: s, len: min_len });
            }
        }
        None
    }
}
