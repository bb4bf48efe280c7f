//! Token-aligned vectors produced outside this crate (e.g. by a contextual
//! language model), keyed by essay, sentence and token position.
//!
//! ```text
//! "ARGSEGPV"  u32 version  u32 dim  u64 count
//! count × { u32 id length, essay id (UTF-8), u32 sentence, u32 token, dim × f64 }
//! u32 CRC32 of every preceding byte
//! ```
//!
//! All values little-endian.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const PRECOMPUTED_MAGIC: &[u8; 8] = b"ARGSEGPV";
pub const PRECOMPUTED_VERSION: u32 = 1;

pub type VectorKey = (String, u32, u32);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrecomputedStore {
    dim: usize,
    vectors: BTreeMap<VectorKey, Vec<f64>>,
}

impl PrecomputedStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, essay: &str, sentence: u32, token: u32, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Format(format!(
                "vector for ({essay}, {sentence}, {token}) has {} components, store dim is {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert((essay.to_string(), sentence, token), vector);
        Ok(())
    }

    pub fn get(&self, essay: &str, sentence: u32, token: u32) -> Option<&[f64]> {
        self.vectors
            .get(&(essay.to_string(), sentence, token))
            .map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VectorKey, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(24 + self.len() * (16 + 8 * self.dim));
        buf.extend_from_slice(PRECOMPUTED_MAGIC);
        buf.extend_from_slice(&PRECOMPUTED_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for ((essay, sentence, token), v) in &self.vectors {
            buf.extend_from_slice(&(essay.len() as u32).to_le_bytes());
            buf.extend_from_slice(essay.as_bytes());
            buf.extend_from_slice(&sentence.to_le_bytes());
            buf.extend_from_slice(&token.to_le_bytes());
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }
}

fn truncated(what: &str) -> Error {
    Error::Format(format!("precomputed store truncated in {what}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(truncated(what));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parse and verify a store produced by [`PrecomputedStore::to_bytes`].
pub fn load_precomputed(content: &[u8]) -> Result<PrecomputedStore> {
    if content.len() < 4 {
        return Err(truncated("the checksum"));
    }
    let (payload, crc) = content.split_at(content.len() - 4);
    let mut r = Reader {
        bytes: payload,
        pos: 0,
    };
    if r.take(8, "the header")? != PRECOMPUTED_MAGIC {
        return Err(Error::Format("not a precomputed vector store".into()));
    }
    let version = r.u32("the header")?;
    if version != PRECOMPUTED_VERSION {
        return Err(Error::Format(format!("unsupported store version {version}")));
    }
    let dim = r.u32("the header")? as usize;
    let count = u64::from_le_bytes(r.take(8, "the header")?.try_into().unwrap());
    if dim == 0 {
        return Err(Error::Format("store declares dimension 0".into()));
    }
    let expected = u32::from_le_bytes(crc.try_into().unwrap());
    let actual = crc32fast::hash(payload);
    let mut store = PrecomputedStore::new(dim);
    for i in 0..count {
        let what = format!("record {i}");
        let len = r.u32(&what)? as usize;
        let essay = std::str::from_utf8(r.take(len, &what)?)
            .map_err(|_| Error::Format(format!("{what}: essay id is not UTF-8")))?
            .to_string();
        let sentence = r.u32(&what)?;
        let token = r.u32(&what)?;
        let vector = r
            .take(dim * 8, &what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if store.vectors.insert((essay.clone(), sentence, token), vector).is_some() {
            return Err(Error::Format(format!(
                "{what}: duplicate key ({essay}, {sentence}, {token})"
            )));
        }
    }
    if r.pos != payload.len() {
        return Err(Error::Format(format!(
            "{} bytes after the declared {count} records (dimension mismatch?)",
            payload.len() - r.pos
        )));
    }
    if actual != expected {
        return Err(Error::Format(format!(
            "checksum mismatch: stored {expected:08x}, computed {actual:08x}"
        )));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one() -> PrecomputedStore {
        let mut s = PrecomputedStore::new(3);
        s.insert("essay001", 0, 0, vec![0.5, -1.25, 3e-300]).unwrap();
        s
    }

    #[test]
    fn single_vector_store() {
        let back = load_precomputed(&one().to_bytes()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.get("essay001", 0, 0).unwrap(), [0.5, -1.25, 3e-300]);
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = one().to_bytes();
        for cut in [3, 10, 30, bytes.len() - 5] {
            assert!(matches!(load_precomputed(&bytes[..cut]), Err(Error::Format(_))), "{cut}");
        }
    }

    #[test]
    fn header_dimension_must_match_records() {
        let mut bytes = one().to_bytes();
        bytes[12] = 2;
        let body = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body]);
        bytes[body..].copy_from_slice(&crc.to_le_bytes());
        let err = load_precomputed(&bytes).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn corrupted_payload_fails_the_checksum() {
        let mut bytes = one().to_bytes();
        let at = bytes.len() - 10;
        bytes[at] ^= 0x40;
        assert!(matches!(load_precomputed(&bytes), Err(Error::Format(m)) if m.contains("checksum")));
    }

    #[test]
    fn wrong_vector_length_is_rejected_on_insert() {
        assert!(PrecomputedStore::new(4).insert("e", 0, 0, vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_identical(
            dim in 1usize..6,
            entries in proptest::collection::vec(
                ("essay[0-9]{3}", 0u32..5, 0u32..40, proptest::collection::vec(proptest::num::f64::ANY, 6)),
                0..12,
            ),
        ) {
            let mut store = PrecomputedStore::new(dim);
            for (e, s, t, v) in &entries {
                store.insert(e, *s, *t, v[..dim].to_vec()).unwrap();
            }
            let bytes = store.to_bytes();
            let back = load_precomputed(&bytes).unwrap();
            prop_assert_eq!(back.len(), store.len());
            for ((k, a), (k2, b)) in store.iter().zip(back.iter()) {
                prop_assert_eq!(k, k2);
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(a), bits(b));
            }
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
