//! Hashing, signatures, sealed asymmetric encryption and partial-hash-collision
//! proof of work.
//!
//! These are the primitives every overlay consumes. Hashing is SHA-256.
//! Signatures are Ed25519 over the SHA-256 digest of the payload, which keeps
//! them deterministic: the same key and payload always produce the same
//! signature bytes, so simulation traces replay bit-exactly. Sealed encryption
//! is a hybrid scheme (ephemeral X25519 agreement + ChaCha20-Poly1305) exposed
//! only through the seal/open contract; the randomness is an explicit caller
//! argument for the same reason.

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use ed25519_dalek::{Signer, Verifier};
use rand_core::RngCore;
use sha2::{Digest as _, Sha256};

use crate::chain::Username;
use crate::encode::{canonical_encode, Value};

/// A 256-bit identifier. Addresses users, nodes, storage targets and blocks.
/// Ordering is bytewise big-endian.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest([u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn from_bytes(bytes: [u8; 32]) -> Digest {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Number of leading zero bits, the proof-of-work metric.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut count = 0;
        for byte in self.0 {
            if byte == 0 {
                count += 8;
            } else {
                count += byte.leading_zeros();
                break;
            }
        }
        count
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First 8 hex characters, the node label used in trace logs.
    pub fn hex_prefix8(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", self.hex_prefix8())
    }
}

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// SHA-256 of a byte string.
pub fn hash(data: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(data);
    Digest(h.finalize().into())
}

/// Hash of the canonical encoding of a value. Most protocol identifiers are
/// built this way.
pub fn hash_value(value: &Value) -> Digest {
    hash(&canonical_encode(value))
}

/// Public half of a user identity: an Ed25519 verifying key plus an X25519
/// sealing key, both derived from the same seed.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PublicKey {
    verify: [u8; 32],
    seal: [u8; 32],
}

impl PublicKey {
    /// Canonical wire form: the two keys concatenated, 64 bytes.
    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.verify);
        out[32..].copy_from_slice(&self.seal);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<PublicKey> {
        if bytes.len() != 64 {
            return None;
        }
        Some(PublicKey {
            verify: bytes[..32].try_into().unwrap(),
            seal: bytes[32..].try_into().unwrap(),
        })
    }

    pub fn encode_value(&self) -> Value {
        Value::Bytes(self.to_bytes().to_vec())
    }
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({})", &hex::encode(self.verify)[..8])
    }
}

/// Private half of a user identity.
#[derive(Clone)]
pub struct PrivateKey {
    sign: ed25519_dalek::SigningKey,
    open: x25519_dalek::StaticSecret,
}

impl std::fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

/// Deterministically derive a keypair from a 32-byte seed. The sealing key is
/// domain-separated from the signing key so the two halves are independent.
pub fn generate_keypair(seed: &[u8; 32]) -> KeyPair {
    let sign = ed25519_dalek::SigningKey::from_bytes(seed);
    let seal_seed = hash_value(&Value::list(vec![
        Value::bytes(seed.to_vec()),
        Value::str("seal"),
    ]));
    let open = x25519_dalek::StaticSecret::from(*seal_seed.as_bytes());
    let public = PublicKey {
        verify: sign.verifying_key().to_bytes(),
        seal: x25519_dalek::PublicKey::from(&open).to_bytes(),
    };
    KeyPair {
        public,
        private: PrivateKey { sign, open },
    }
}

/// Signed content: a signature over the hash of the payload, the payload
/// carried verbatim, and the username the receiver should resolve the key
/// under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedContent {
    pub signature: Vec<u8>,
    pub payload: Vec<u8>,
    pub signer_hint: Username,
}

impl SignedContent {
    pub fn encode_value(&self) -> Value {
        Value::list(vec![
            Value::Bytes(self.signature.clone()),
            Value::Bytes(self.payload.clone()),
            Value::str(self.signer_hint.as_str()),
        ])
    }
}

/// Sign a payload. The signature covers `hash(payload)`.
pub fn sign(private: &PrivateKey, signer: &Username, payload: &[u8]) -> SignedContent {
    let digest = hash(payload);
    let sig = private.sign.sign(digest.as_bytes());
    SignedContent {
        signature: sig.to_bytes().to_vec(),
        payload: payload.to_vec(),
        signer_hint: signer.clone(),
    }
}

/// Raw signature bytes over a payload, for fields that carry a bare signature
/// (key-replacement authorizations, listener challenge responses).
pub fn sign_detached(private: &PrivateKey, payload: &[u8]) -> Vec<u8> {
    let digest = hash(payload);
    private.sign.sign(digest.as_bytes()).to_bytes().to_vec()
}

/// True iff `signed.signature` is valid for `signed.payload` under `public`.
/// Malformed signature bytes yield `false`, never an error.
pub fn verify(public: &PublicKey, signed: &SignedContent) -> bool {
    verify_detached(public, &signed.payload, &signed.signature)
}

pub fn verify_detached(public: &PublicKey, payload: &[u8], signature: &[u8]) -> bool {
    let Ok(sig_bytes) = <&[u8; 64]>::try_from(signature) else {
        return false;
    };
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&public.verify) else {
        return false;
    };
    let digest = hash(payload);
    vk.verify(digest.as_bytes(), &ed25519_dalek::Signature::from_bytes(sig_bytes))
        .is_ok()
}

/// Ciphertext addressed to exactly one private key, plus the digest of the
/// plaintext so the opener can confirm integrity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBox {
    pub ciphertext: Vec<u8>,
    pub payload_digest: Digest,
}

impl SealedBox {
    pub fn encode_value(&self) -> Value {
        Value::list(vec![
            Value::Bytes(self.ciphertext.clone()),
            Value::Digest(self.payload_digest),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SealError {
    #[error("plaintext must not be empty")]
    EmptyPlaintext,
    #[error("ciphertext does not open under this key")]
    DecryptFailed,
    #[error("plaintext digest mismatch after decryption")]
    IntegrityFailed,
}

fn sealing_key(shared: &[u8; 32], ephemeral_pub: &[u8; 32], recipient_seal: &[u8; 32]) -> [u8; 32] {
    *hash_value(&Value::list(vec![
        Value::bytes(shared.to_vec()),
        Value::bytes(ephemeral_pub.to_vec()),
        Value::bytes(recipient_seal.to_vec()),
        Value::str("sealed-box"),
    ]))
    .as_bytes()
}

/// Seal a plaintext for a recipient. A fresh ephemeral key is drawn from the
/// supplied randomness, so sealing the same plaintext twice with different rng
/// states yields different ciphertexts.
pub fn seal_for(
    public: &PublicKey,
    plaintext: &[u8],
    rng: &mut impl RngCore,
) -> Result<SealedBox, SealError> {
    if plaintext.is_empty() {
        return Err(SealError::EmptyPlaintext);
    }
    let mut eph_seed = [0u8; 32];
    rng.fill_bytes(&mut eph_seed);
    let eph_secret = x25519_dalek::StaticSecret::from(eph_seed);
    let eph_public = x25519_dalek::PublicKey::from(&eph_secret);
    let recipient = x25519_dalek::PublicKey::from(public.seal);
    let shared = eph_secret.diffie_hellman(&recipient);
    let key = sealing_key(shared.as_bytes(), eph_public.as_bytes(), &public.seal);

    // The key is single-use (fresh ephemeral per box) so a zero nonce is safe.
    let cipher = ChaCha20Poly1305::new((&key).into());
    let mut ciphertext = eph_public.as_bytes().to_vec();
    ciphertext.extend(
        cipher
            .encrypt(Nonce::from_slice(&[0u8; 12]), plaintext)
            .expect("encryption is infallible for in-memory buffers"),
    );
    Ok(SealedBox {
        ciphertext,
        payload_digest: hash(plaintext),
    })
}

/// Open a sealed box. Fails distinguishably when the key does not match and
/// when the recovered plaintext does not hash to the recorded digest.
pub fn open_with(private: &PrivateKey, sealed: &SealedBox) -> Result<Vec<u8>, SealError> {
    if sealed.ciphertext.len() < 32 + 16 {
        return Err(SealError::DecryptFailed);
    }
    let eph_public_bytes: [u8; 32] = sealed.ciphertext[..32].try_into().unwrap();
    let eph_public = x25519_dalek::PublicKey::from(eph_public_bytes);
    let shared = private.open.diffie_hellman(&eph_public);
    let own_seal = x25519_dalek::PublicKey::from(&private.open);
    let key = sealing_key(shared.as_bytes(), &eph_public_bytes, own_seal.as_bytes());
    let cipher = ChaCha20Poly1305::new((&key).into());
    let plaintext = cipher
        .decrypt(Nonce::from_slice(&[0u8; 12]), &sealed.ciphertext[32..])
        .map_err(|_| SealError::DecryptFailed)?;
    if hash(&plaintext) != sealed.payload_digest {
        return Err(SealError::IntegrityFailed);
    }
    Ok(plaintext)
}

/// Digest that the proof-of-work criterion is evaluated on.
pub fn pow_digest(payload: &[u8], nonce: u64) -> Digest {
    hash_value(&Value::list(vec![
        Value::bytes(payload.to_vec()),
        Value::U64(nonce),
    ]))
}

/// True iff `hash([payload, nonce])` has at least `difficulty_bits` leading
/// zero bits.
pub fn pow_check(payload: &[u8], nonce: u64, difficulty_bits: u32) -> bool {
    pow_digest(payload, nonce).leading_zero_bits() >= difficulty_bits
}

/// Brute-force search: the least nonce >= `start_nonce` whose digest meets the
/// difficulty. `difficulty_bits` must be small enough that the caller is
/// willing to wait (0..=64 supported).
pub fn pow_search(payload: &[u8], difficulty_bits: u32, start_nonce: u64) -> u64 {
    debug_assert!(difficulty_bits <= 64);
    let mut nonce = start_nonce;
    loop {
        if pow_check(payload, nonce, difficulty_bits) {
            return nonce;
        }
        nonce = nonce.wrapping_add(1);
    }
}
