//! Identities, certificates, signatures and the hybrid media envelope.
//!
//! A [`KeyPair`] carries an Ed25519 signing key and an X25519 key-agreement
//! key. Media are sealed with [`hybrid_encrypt`]: a fresh 256-bit session key
//! encrypts the body with ChaCha20-Poly1305, and the session key itself is
//! wrapped for the recipient with ephemeral X25519 + HKDF-SHA256 +
//! ChaCha20-Poly1305. Both layers are authenticated, so any bit flip in either
//! part of a [`HybridCiphertext`] fails decryption.
//!
//! Session keys come from a seeded generator so scenario runs are
//! reproducible. A deployment outside the simulator must seed from the OS.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;
use x25519_dalek::{PublicKey as ExchangePublic, StaticSecret};

use crate::b64;

const WRAP_INFO: &[u8] = b"copyledger/key-wrap/v1";
const CERT_DOMAIN: &[u8] = b"copyledger/certificate/v1";
const SESSION_KEY_LEN: usize = 32;
const TAG_LEN: usize = 16;
const NONCE_LEN: usize = 12;
const WRAPPED_KEY_LEN: usize = 32 + SESSION_KEY_LEN + TAG_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("plaintext is empty")]
    EmptyPlaintext,
    #[error("decryption failed")]
    DecryptionFailure,
    #[error("recipient public key is not usable for key agreement")]
    InvalidPublicKey,
    #[error("certificate of {0:?} side failed verification")]
    InvalidCertificate(Side),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    First,
    Second,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature(#[serde(with = "b64::array")] pub [u8; 64]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..8]))
    }
}

/// Public half of a [`KeyPair`]: 32 bytes of Ed25519 verifying key followed
/// by 32 bytes of X25519 public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicKey(#[serde(with = "b64::array")] pub [u8; 64]);

impl PublicKey {
    fn verifying(&self) -> [u8; 32] {
        self.0[..32].try_into().expect("32 bytes")
    }

    fn exchange(&self) -> [u8; 32] {
        self.0[32..].try_into().expect("32 bytes")
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}..)", hex::encode(&self.0[..8]))
    }
}

/// Secret half of a [`KeyPair`]; same layout as [`PublicKey`] with the two
/// 32-byte secret seeds.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretKey(#[serde(with = "b64::array")] [u8; 64]);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    exchange: StaticSecret,
}

impl KeyPair {
    pub fn generate<R: RngCore>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 64];
        rng.fill_bytes(&mut bytes);
        Self::from_secret(&SecretKey(bytes))
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::generate(&mut ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn from_secret(secret: &SecretKey) -> Self {
        let sign_seed: [u8; 32] = secret.0[..32].try_into().expect("32 bytes");
        let dh_seed: [u8; 32] = secret.0[32..].try_into().expect("32 bytes");
        Self {
            signing: SigningKey::from_bytes(&sign_seed),
            exchange: StaticSecret::from(dh_seed),
        }
    }

    pub fn public_key(&self) -> PublicKey {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(self.signing.verifying_key().as_bytes());
        out[32..].copy_from_slice(ExchangePublic::from(&self.exchange).as_bytes());
        PublicKey(out)
    }

    pub fn secret_key(&self) -> SecretKey {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.signing.to_bytes());
        out[32..].copy_from_slice(self.exchange.as_bytes());
        SecretKey(out)
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public_key())
            .finish_non_exhaustive()
    }
}

pub fn sign(secret: &SecretKey, message: &[u8]) -> Signature {
    KeyPair::from_secret(secret).sign(message)
}

pub fn verify_sig(public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&public.verifying()) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    key.verify_strict(message, &sig).is_ok()
}

/// Binds an identity to a public key under a CA signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub identity: String,
    pub public_key: PublicKey,
    pub issuer: String,
    pub signature: Signature,
}

fn length_prefixed(out: &mut Vec<u8>, field: &[u8]) {
    out.extend_from_slice(&(field.len() as u64).to_be_bytes());
    out.extend_from_slice(field);
}

impl Certificate {
    fn signed_bytes(identity: &str, public_key: &PublicKey, issuer: &str) -> Vec<u8> {
        let mut out = CERT_DOMAIN.to_vec();
        length_prefixed(&mut out, identity.as_bytes());
        out.extend_from_slice(&public_key.0);
        length_prefixed(&mut out, issuer.as_bytes());
        out
    }

    pub fn verify(&self, authority: &AuthorityRecord) -> bool {
        self.issuer == authority.identity
            && verify_sig(
                &authority.public_key,
                &Self::signed_bytes(&self.identity, &self.public_key, &self.issuer),
                &self.signature,
            )
    }
}

/// What verifiers need to know about a CA.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityRecord {
    pub identity: String,
    pub public_key: PublicKey,
}

/// Simulated certificate authority.
#[derive(Clone, Debug)]
pub struct CertificateAuthority {
    identity: String,
    keys: KeyPair,
}

impl CertificateAuthority {
    pub fn new(identity: impl Into<String>, keys: KeyPair) -> Self {
        Self {
            identity: identity.into(),
            keys,
        }
    }

    pub fn record(&self) -> AuthorityRecord {
        AuthorityRecord {
            identity: self.identity.clone(),
            public_key: self.keys.public_key(),
        }
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn issue(&self, identity: &str, public_key: PublicKey) -> Certificate {
        let signature = self
            .keys
            .sign(&Certificate::signed_bytes(identity, &public_key, &self.identity));
        Certificate {
            identity: identity.to_string(),
            public_key,
            issuer: self.identity.clone(),
            signature,
        }
    }
}

/// Identity and key extracted from a verified certificate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Peer {
    pub identity: String,
    pub public_key: PublicKey,
}

/// Both parties check each other's certificate against the CA; either
/// failure aborts the exchange with no partial result.
pub fn mutual_authenticate(
    first: &Certificate,
    second: &Certificate,
    authority: &AuthorityRecord,
) -> Result<(Peer, Peer), CryptoError> {
    if !first.verify(authority) {
        return Err(CryptoError::InvalidCertificate(Side::First));
    }
    if !second.verify(authority) {
        return Err(CryptoError::InvalidCertificate(Side::Second));
    }
    let peer = |c: &Certificate| Peer {
        identity: c.identity.clone(),
        public_key: c.public_key,
    };
    Ok((peer(first), peer(second)))
}

/// `(wrapped session key, encrypted body)`.
///
/// `wrapped_key` is `ephemeral X25519 public key || AEAD(kek, session key)`;
/// `body` is `nonce || AEAD(session key, media)` with `wrapped_key` as
/// associated data.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridCiphertext {
    #[serde(with = "b64::vec")]
    pub wrapped_key: Vec<u8>,
    #[serde(with = "b64::vec")]
    pub body: Vec<u8>,
}

impl fmt::Debug for HybridCiphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridCiphertext")
            .field("wrapped_key", &self.wrapped_key.len())
            .field("body", &self.body.len())
            .finish()
    }
}

impl HybridCiphertext {
    /// Self-delimiting byte form used as the stored blob.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.wrapped_key.len() + self.body.len());
        out.extend_from_slice(&(self.wrapped_key.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.wrapped_key);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let (len, rest) = bytes.split_first_chunk::<4>().ok_or(CryptoError::DecryptionFailure)?;
        let len = u32::from_be_bytes(*len) as usize;
        if rest.len() < len {
            return Err(CryptoError::DecryptionFailure);
        }
        let (wrapped, body) = rest.split_at(len);
        Ok(Self {
            wrapped_key: wrapped.to_vec(),
            body: body.to_vec(),
        })
    }
}

fn key_encryption_key(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> [u8; 32] {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral);
    salt[32..].copy_from_slice(recipient);
    let mut kek = [0u8; 32];
    Hkdf::<Sha256>::new(Some(&salt), shared)
        .expand(WRAP_INFO, &mut kek)
        .expect("32 bytes is a valid HKDF-SHA256 length");
    kek
}

pub fn hybrid_encrypt(recipient: &PublicKey, media: &[u8], rng_seed: u64) -> Result<HybridCiphertext, CryptoError> {
    if media.is_empty() {
        return Err(CryptoError::EmptyPlaintext);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let mut session_key = [0u8; SESSION_KEY_LEN];
    rng.fill_bytes(&mut session_key);
    let mut eph_seed = [0u8; 32];
    rng.fill_bytes(&mut eph_seed);
    let mut body_nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut body_nonce);

    let ephemeral = StaticSecret::from(eph_seed);
    let eph_public = ExchangePublic::from(&ephemeral);
    let recipient_exchange = recipient.exchange();
    let shared = ephemeral.diffie_hellman(&ExchangePublic::from(recipient_exchange));
    if !shared.was_contributory() {
        return Err(CryptoError::InvalidPublicKey);
    }
    let kek = key_encryption_key(shared.as_bytes(), eph_public.as_bytes(), &recipient_exchange);
    // the KEK is unique per ephemeral key, so a fixed nonce is safe here
    let wrapped = ChaCha20Poly1305::new(Key::from_slice(&kek))
        .encrypt(Nonce::from_slice(&[0u8; NONCE_LEN]), session_key.as_slice())
        .expect("in-memory AEAD encryption cannot fail");
    let mut wrapped_key = eph_public.as_bytes().to_vec();
    wrapped_key.extend_from_slice(&wrapped);

    let sealed = ChaCha20Poly1305::new(Key::from_slice(&session_key))
        .encrypt(
            Nonce::from_slice(&body_nonce),
            Payload {
                msg: media,
                aad: &wrapped_key,
            },
        )
        .expect("in-memory AEAD encryption cannot fail");
    let mut body = body_nonce.to_vec();
    body.extend_from_slice(&sealed);
    Ok(HybridCiphertext { wrapped_key, body })
}

pub fn hybrid_decrypt(secret: &SecretKey, ct: &HybridCiphertext) -> Result<Vec<u8>, CryptoError> {
    if ct.wrapped_key.len() != WRAPPED_KEY_LEN || ct.body.len() < NONCE_LEN + TAG_LEN {
        return Err(CryptoError::DecryptionFailure);
    }
    let keys = KeyPair::from_secret(secret);
    let eph: [u8; 32] = ct.wrapped_key[..32].try_into().expect("32 bytes");
    let shared = keys.exchange.diffie_hellman(&ExchangePublic::from(eph));
    if !shared.was_contributory() {
        return Err(CryptoError::DecryptionFailure);
    }
    let own_exchange = keys.public_key().exchange();
    let kek = key_encryption_key(shared.as_bytes(), &eph, &own_exchange);
    let session_key = ChaCha20Poly1305::new(Key::from_slice(&kek))
        .decrypt(Nonce::from_slice(&[0u8; NONCE_LEN]), &ct.wrapped_key[32..])
        .map_err(|_| CryptoError::DecryptionFailure)?;
    let (nonce, sealed) = ct.body.split_at(NONCE_LEN);
    ChaCha20Poly1305::new(Key::from_slice(&session_key))
        .decrypt(
            Nonce::from_slice(nonce),
            Payload {
                msg: sealed,
                aad: &ct.wrapped_key,
            },
        )
        .map_err(|_| CryptoError::DecryptionFailure)
}
