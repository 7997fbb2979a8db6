//! Commitments and signatures.
//!
//! Commitments are `SHA-256(nonce ‖ message)` with a 64-byte nonce. Signatures
//! are Ed25519: deterministic, so identical inputs always produce identical
//! bytes, which keeps simulation traces reproducible.

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub const NONCE_LEN: usize = 64;
pub const SIGNATURE_LEN: usize = 64;
pub const PUBLIC_KEY_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("commitment nonce must be {NONCE_LEN} bytes, got {0}")]
    NonceLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Commitment(pub [u8; DIGEST_LEN]);

impl Commitment {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }
}

/// The secret half of a commitment: the committed message and its nonce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Opening {
    pub message: Vec<u8>,
    pub nonce: [u8; NONCE_LEN],
}

impl Opening {
    pub fn new(message: Vec<u8>, nonce: [u8; NONCE_LEN]) -> Self {
        Opening { message, nonce }
    }

    /// `message ‖ nonce`, the reveal body on the wire.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.message.len() + NONCE_LEN);
        out.extend_from_slice(&self.message);
        out.extend_from_slice(&self.nonce);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let split = bytes.len().checked_sub(NONCE_LEN)?;
        let (message, nonce) = bytes.split_at(split);
        Some(Opening {
            message: message.to_vec(),
            nonce: nonce.try_into().ok()?,
        })
    }
}

pub fn commit(message: &[u8], nonce: &[u8]) -> Result<Commitment, CryptoError> {
    if nonce.len() != NONCE_LEN {
        return Err(CryptoError::NonceLength(nonce.len()));
    }
    Ok(digest(message, nonce))
}

fn digest(message: &[u8], nonce: &[u8]) -> Commitment {
    let mut hasher = Sha256::new();
    hasher.update(nonce);
    hasher.update(message);
    Commitment(hasher.finalize().into())
}

pub fn verify_commitment(commitment: &Commitment, opening: &Opening) -> bool {
    digest(&opening.message, &opening.nonce) == *commitment
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey(VerifyingKey);

impl PublicKey {
    pub fn to_bytes(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.0.to_bytes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }
}

#[derive(Clone)]
pub struct KeyPair {
    secret: SigningKey,
    public: PublicKey,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn public(&self) -> PublicKey {
        self.public
    }
}

/// Derives a key pair deterministically from `seed`.
pub fn keygen(seed: u64) -> KeyPair {
    let mut hasher = Sha256::new();
    hasher.update(b"auction-channel/keygen");
    hasher.update(seed.to_le_bytes());
    let secret = SigningKey::from_bytes(&hasher.finalize().into());
    let public = PublicKey(secret.verifying_key());
    KeyPair { secret, public }
}

pub fn sign(key: &KeyPair, message: &[u8]) -> Signature {
    Signature(key.secret.sign(message).to_bytes())
}

pub fn verify_sig(public: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    public.0.verify_strict(message, &sig).is_ok()
}
