//! Binary Merkle tree over registration records, for thin clients that keep
//! only the chain of block header hashes and verify individual registrations
//! by inclusion proof.
//!
//! Leaves and internal nodes are domain-separated (0x00 / 0x01 prefix) so a
//! crafted leaf encoding can never masquerade as an internal node. Odd nodes
//! are carried up a level unhashed, so a single-leaf tree has root equal to
//! the leaf hash and an empty proof path.

use crate::crypto::{hash, Digest};
use crate::encode::{DecodeError, Reader, Value};

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;

pub fn leaf_hash(encoded_leaf: &[u8]) -> Digest {
    let mut buf = Vec::with_capacity(1 + encoded_leaf.len());
    buf.push(LEAF_PREFIX);
    buf.extend_from_slice(encoded_leaf);
    hash(&buf)
}

fn node_hash(left: &Digest, right: &Digest) -> Digest {
    let mut buf = [0u8; 65];
    buf[0] = NODE_PREFIX;
    buf[1..33].copy_from_slice(left.as_bytes());
    buf[33..].copy_from_slice(right.as_bytes());
    hash(&buf)
}

/// Root over already-hashed leaves. An empty leaf set gets a fixed sentinel
/// root (the hash of the canonical empty-list encoding).
pub fn merkle_root(leaves: &[Digest]) -> Digest {
    if leaves.is_empty() {
        return empty_root();
    }
    let mut level: Vec<Digest> = leaves.to_vec();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            match pair {
                [l, r] => next.push(node_hash(l, r)),
                [odd] => next.push(*odd),
                _ => unreachable!(),
            }
        }
        level = next;
    }
    level[0]
}

pub fn empty_root() -> Digest {
    crate::crypto::hash_value(&Value::List(vec![]))
}

/// One step of an inclusion path: the sibling digest and which side it sits on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProofStep {
    pub sibling_is_left: bool,
    pub sibling: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleProof {
    pub path: Vec<ProofStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ProofError {
    #[error("leaf index out of range")]
    IndexOutOfRange,
}

/// Build the inclusion proof for `index` within `leaves`.
pub fn prove(leaves: &[Digest], index: usize) -> Result<MerkleProof, ProofError> {
    if index >= leaves.len() {
        return Err(ProofError::IndexOutOfRange);
    }
    let mut path = Vec::new();
    let mut level: Vec<Digest> = leaves.to_vec();
    let mut pos = index;
    while level.len() > 1 {
        let sibling_pos = pos ^ 1;
        if sibling_pos < level.len() {
            path.push(ProofStep {
                sibling_is_left: sibling_pos < pos,
                sibling: level[sibling_pos],
            });
        }
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            match pair {
                [l, r] => next.push(node_hash(l, r)),
                [odd] => next.push(*odd),
                _ => unreachable!(),
            }
        }
        pos /= 2;
        level = next;
    }
    Ok(MerkleProof { path })
}

/// Fold a leaf up the proof path and compare with the committed root.
pub fn verify(root: &Digest, leaf: &Digest, proof: &MerkleProof) -> bool {
    let mut current = *leaf;
    for step in &proof.path {
        current = if step.sibling_is_left {
            node_hash(&step.sibling, &current)
        } else {
            node_hash(&current, &step.sibling)
        };
    }
    current == *root
}

impl MerkleProof {
    pub fn encode_value(&self) -> Value {
        Value::List(
            self.path
                .iter()
                .map(|s| {
                    Value::list(vec![
                        Value::U64(if s.sibling_is_left { 1 } else { 0 }),
                        Value::Digest(s.sibling),
                    ])
                })
                .collect(),
        )
    }

    pub fn decode(r: &mut Reader) -> Result<MerkleProof, DecodeError> {
        let steps = r.list_len()?;
        let mut path = Vec::new();
        for _ in 0..steps {
            let pair = r.list_len()?;
            if pair != 2 {
                return Err(DecodeError::BadField("proof step arity"));
            }
            let side = r.u64()?;
            if side > 1 {
                return Err(DecodeError::BadField("proof step side"));
            }
            let sibling = r.digest()?;
            path.push(ProofStep {
                sibling_is_left: side == 1,
                sibling,
            });
        }
        Ok(MerkleProof { path })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaves(n: usize) -> Vec<Digest> {
        (0..n).map(|i| hash(&(i as u64).to_be_bytes())).collect()
    }

    // Independent oracle: recompute the root by explicit level-by-level
    // reduction, separate from prove()'s incremental bookkeeping.
    fn naive_root(leaves: &[Digest]) -> Digest {
        if leaves.is_empty() {
            return empty_root();
        }
        let mut level = leaves.to_vec();
        while level.len() > 1 {
            let mut next = Vec::new();
            let mut i = 0;
            while i < level.len() {
                if i + 1 < level.len() {
                    next.push(node_hash(&level[i], &level[i + 1]));
                    i += 2;
                } else {
                    next.push(level[i]);
                    i += 1;
                }
            }
            level = next;
        }
        level[0]
    }

    #[test]
    fn single_leaf_root_is_leaf_and_proof_is_empty() {
        let l = leaves(1);
        assert_eq!(merkle_root(&l), l[0]);
        let proof = prove(&l, 0).unwrap();
        assert!(proof.path.is_empty());
        assert!(verify(&merkle_root(&l), &l[0], &proof));
    }

    #[test]
    fn all_proofs_verify_for_sizes_up_to_33() {
        for n in 1..=33 {
            let l = leaves(n);
            let root = merkle_root(&l);
            assert_eq!(root, naive_root(&l), "root mismatch at n={n}");
            for (i, leaf) in l.iter().enumerate() {
                let proof = prove(&l, i).unwrap();
                assert!(verify(&root, leaf, &proof), "n={n} i={i}");
            }
        }
    }

    #[test]
    fn altered_sibling_fails() {
        let l = leaves(9);
        let root = merkle_root(&l);
        for i in 0..l.len() {
            let mut proof = prove(&l, i).unwrap();
            if proof.path.is_empty() {
                continue;
            }
            let mut raw = *proof.path[0].sibling.as_bytes();
            raw[7] ^= 0x40;
            proof.path[0].sibling = Digest::from_bytes(raw);
            assert!(!verify(&root, &l[i], &proof));
        }
    }

    #[test]
    fn wrong_leaf_fails() {
        let l = leaves(5);
        let root = merkle_root(&l);
        let proof = prove(&l, 2).unwrap();
        assert!(!verify(&root, &l[3], &proof));
    }

    #[test]
    fn index_out_of_range() {
        let l = leaves(3);
        assert_eq!(prove(&l, 3), Err(ProofError::IndexOutOfRange));
    }

    #[test]
    fn proof_encoding_roundtrip() {
        let l = leaves(12);
        let proof = prove(&l, 7).unwrap();
        let enc = crate::encode::canonical_encode(&proof.encode_value());
        let mut r = Reader::new(&enc);
        let back = MerkleProof::decode(&mut r).unwrap();
        r.finish().unwrap();
        assert_eq!(back, proof);
    }
}
