//! Canonical byte encoding for protocol values.
//!
//! Every digest, signature payload, proof-of-work input and wire message in
//! this crate is built from the same small value algebra: unsigned 64-bit
//! integers, UTF-8 strings, byte strings, 32-byte digests and ordered lists.
//! The encoding is deterministic and, for values of a fixed shape, injective:
//!
//! * integers: 8 bytes, big-endian
//! * strings and byte strings: 8-byte big-endian length prefix, then bytes
//! * digests: 32 raw bytes (fixed width)
//! * lists: 8-byte big-endian element count, then each element
//!
//! There are deliberately no type tags, so the encoding of `0u64`, the empty
//! string and the empty list coincide. Injectivity therefore holds per
//! declared shape (which is how the protocol uses it), not across shapes.

use crate::crypto::Digest;

/// A dynamically composed encodable value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Value {
    U64(u64),
    Str(String),
    Bytes(Vec<u8>),
    Digest(Digest),
    List(Vec<Value>),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Value {
        Value::Str(s.into())
    }

    pub fn bytes(b: impl Into<Vec<u8>>) -> Value {
        Value::Bytes(b.into())
    }

    pub fn list(items: impl Into<Vec<Value>>) -> Value {
        Value::List(items.into())
    }

    /// Canonical encoding of an optional value: an empty list for `None`,
    /// a one-element list for `Some`.
    pub fn option(v: Option<Value>) -> Value {
        match v {
            None => Value::List(vec![]),
            Some(v) => Value::List(vec![v]),
        }
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Value {
        Value::U64(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Value {
        Value::Str(v.to_owned())
    }
}

impl From<Digest> for Value {
    fn from(v: Digest) -> Value {
        Value::Digest(v)
    }
}

/// Encode a value into its canonical byte form.
pub fn canonical_encode(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    encode_into(value, &mut out);
    out
}

fn encode_into(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::U64(n) => out.extend_from_slice(&n.to_be_bytes()),
        Value::Str(s) => {
            out.extend_from_slice(&(s.len() as u64).to_be_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        Value::Bytes(b) => {
            out.extend_from_slice(&(b.len() as u64).to_be_bytes());
            out.extend_from_slice(b);
        }
        Value::Digest(d) => out.extend_from_slice(d.as_bytes()),
        Value::List(items) => {
            out.extend_from_slice(&(items.len() as u64).to_be_bytes());
            for item in items {
                encode_into(item, out);
            }
        }
    }
}

/// Errors produced when reading canonical bytes back into typed fields.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("unexpected end of input")]
    UnexpectedEof,
    #[error("length prefix too large for remaining input")]
    BadLength,
    #[error("invalid utf-8 in string field")]
    BadUtf8,
    #[error("trailing bytes after value")]
    TrailingBytes,
    #[error("invalid field value: {0}")]
    BadField(&'static str),
}

/// Shape-directed reader over canonical bytes. Callers know the declared
/// shape of what they are decoding and pull fields in order.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError::UnexpectedEof);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let len = self.u64()?;
        if len > (self.buf.len() - self.pos) as u64 {
            return Err(DecodeError::BadLength);
        }
        Ok(self.take(len as usize)?.to_vec())
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let b = self.bytes()?;
        String::from_utf8(b).map_err(|_| DecodeError::BadUtf8)
    }

    pub fn digest(&mut self) -> Result<Digest, DecodeError> {
        let b = self.take(32)?;
        Ok(Digest::from_bytes(b.try_into().unwrap()))
    }

    /// Reads a list element count. The caller iterates the elements itself.
    pub fn list_len(&mut self) -> Result<u64, DecodeError> {
        let len = self.u64()?;
        // Every element occupies at least one byte in practice, but a list of
        // zero-width values does not exist in this protocol; bound the count
        // by the remaining bytes to fail fast on garbage.
        if len > (self.buf.len() - self.pos) as u64 {
            return Err(DecodeError::BadLength);
        }
        Ok(len)
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    /// Asserts the input was fully consumed.
    pub fn finish(self) -> Result<(), DecodeError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(DecodeError::TrailingBytes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[test]
    fn integer_zero_is_eight_zero_bytes() {
        assert_eq!(canonical_encode(&Value::U64(0)), vec![0u8; 8]);
    }

    #[test]
    fn empty_string_is_length_prefix_only() {
        assert_eq!(canonical_encode(&Value::str("")), vec![0u8; 8]);
    }

    #[test]
    fn known_layouts() {
        assert_eq!(
            canonical_encode(&Value::U64(1)),
            vec![0, 0, 0, 0, 0, 0, 0, 1]
        );
        let enc = canonical_encode(&Value::str("ab"));
        assert_eq!(enc, vec![0, 0, 0, 0, 0, 0, 0, 2, b'a', b'b']);
        let enc = canonical_encode(&Value::list(vec![Value::U64(7), Value::str("x")]));
        assert_eq!(enc.len(), 8 + 8 + 8 + 1);
        assert_eq!(&enc[..8], &[0, 0, 0, 0, 0, 0, 0, 2]);
    }

    #[test]
    fn roundtrip_through_reader() {
        let v = Value::list(vec![
            Value::U64(42),
            Value::str("hello"),
            Value::bytes(vec![1, 2, 3]),
        ]);
        let enc = canonical_encode(&v);
        let mut r = Reader::new(&enc);
        assert_eq!(r.list_len().unwrap(), 3);
        assert_eq!(r.u64().unwrap(), 42);
        assert_eq!(r.string().unwrap(), "hello");
        assert_eq!(r.bytes().unwrap(), vec![1, 2, 3]);
        r.finish().unwrap();
    }

    #[test]
    fn reader_rejects_truncation_and_trailing() {
        let enc = canonical_encode(&Value::str("hello"));
        let mut r = Reader::new(&enc[..enc.len() - 1]);
        assert_eq!(r.string(), Err(DecodeError::BadLength));

        let mut longer = enc.clone();
        longer.push(0);
        let mut r = Reader::new(&longer);
        r.string().unwrap();
        assert_eq!(r.finish(), Err(DecodeError::TrailingBytes));
    }

    // Generator for values of one fixed compound shape:
    //   [u64, str, bytes, [u64...]]
    // Injectivity is a per-shape property, so the corpus fixes the shape and
    // varies the leaf content and list lengths.
    fn shaped_value() -> impl Strategy<Value = Value> {
        (
            any::<u64>(),
            "[a-z0-9]{0,12}",
            proptest::collection::vec(any::<u8>(), 0..12),
            proptest::collection::vec(any::<u64>(), 0..6),
        )
            .prop_map(|(n, s, b, list)| {
                Value::list(vec![
                    Value::U64(n),
                    Value::Str(s),
                    Value::Bytes(b),
                    Value::List(list.into_iter().map(Value::U64).collect()),
                ])
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn encoding_is_injective_over_shaped_corpus(values in proptest::collection::vec(shaped_value(), 200)) {
            // Collision map oracle: identical encodings must come from
            // identical values.
            let mut seen: HashMap<Vec<u8>, Value> = HashMap::new();
            for v in values {
                let enc = canonical_encode(&v);
                if let Some(prev) = seen.get(&enc) {
                    prop_assert_eq!(prev, &v);
                } else {
                    seen.insert(enc, v);
                }
            }
        }
    }

    #[test]
    fn injectivity_scan_10k_random_values() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0x7131);
        let mut seen: HashMap<Vec<u8>, Value> = HashMap::new();
        for _ in 0..10_000 {
            let n: u64 = rng.gen();
            let slen = rng.gen_range(0..10);
            let s: String = (0..slen)
                .map(|_| char::from(rng.gen_range(b'a'..=b'z')))
                .collect();
            let blen = rng.gen_range(0..10);
            let b: Vec<u8> = (0..blen).map(|_| rng.gen()).collect();
            let v = Value::list(vec![Value::U64(n), Value::Str(s), Value::Bytes(b)]);
            let enc = canonical_encode(&v);
            if let Some(prev) = seen.get(&enc) {
                assert_eq!(prev, &v, "distinct values share an encoding");
            } else {
                seen.insert(enc, v);
            }
        }
    }
}
