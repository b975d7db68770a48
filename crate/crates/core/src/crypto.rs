//! Cryptographic primitives shared by every other module: authenticated
//! encryption, the SHA-256 based key derivation, MAC tags and randomness.

use std::fmt;

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes128Gcm, Nonce, Tag};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::{self, Stage};

pub const KEY_LEN: usize = 16;
pub const TAG_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
pub const HASH_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("cipher suite {0} has no implementation")]
    UnsupportedCipher(CipherSuite),
    #[error("key is the reserved all-zero value")]
    InvalidKey,
    #[error("authentication tag mismatch")]
    AuthFailure,
    #[error("expected {expected} bytes, got {actual}")]
    InvalidLength { expected: usize, actual: usize },
}

/// 128-bit symmetric key. The all-zero value means "unset".
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Key128([u8; KEY_LEN]);

impl Key128 {
    pub const UNSET: Key128 = Key128([0; KEY_LEN]);

    pub const fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Key128(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::InvalidLength {
            expected: KEY_LEN,
            actual: bytes.len(),
        })?;
        Ok(Key128(arr))
    }

    pub fn from_hex(text: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(text.trim()).map_err(|_| CryptoError::InvalidLength {
            expected: KEY_LEN,
            actual: text.len() / 2,
        })?;
        Self::from_slice(&bytes)
    }

    /// Draws a fresh key, never the reserved all-zero value.
    pub fn generate(rng: &mut SecureRng) -> Self {
        loop {
            let mut bytes = [0u8; KEY_LEN];
            rng.fill_bytes(&mut bytes);
            let key = Key128(bytes);
            if !key.is_unset() {
                return key;
            }
        }
    }

    pub fn is_unset(&self) -> bool {
        self.0.iter().all(|b| *b == 0)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Key128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_unset() {
            f.write_str("Key128(unset)")
        } else {
            f.write_str("Key128(..)")
        }
    }
}

impl Serialize for Key128 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Key128 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Key128::from_hex(&text).map_err(serde::de::Error::custom)
    }
}

/// 128-bit authentication tag.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tag128(pub [u8; TAG_LEN]);

impl Tag128 {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; TAG_LEN] = bytes.try_into().map_err(|_| CryptoError::InvalidLength {
            expected: TAG_LEN,
            actual: bytes.len(),
        })?;
        Ok(Tag128(arr))
    }

    pub fn as_bytes(&self) -> &[u8; TAG_LEN] {
        &self.0
    }
}

impl fmt::Debug for Tag128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tag128({})", hex::encode(self.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum CipherSuite {
    #[serde(rename = "aes")]
    AesGcm128 = 0,
    #[serde(rename = "spongent")]
    Spongent128 = 1,
}

impl CipherSuite {
    pub fn from_u8(value: u8) -> Option<Self> {
        match value {
            0 => Some(CipherSuite::AesGcm128),
            1 => Some(CipherSuite::Spongent128),
            _ => None,
        }
    }
}

impl fmt::Display for CipherSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CipherSuite::AesGcm128 => f.write_str("AES-GCM-128"),
            CipherSuite::Spongent128 => f.write_str("SPONGENT-128"),
        }
    }
}

/// Separates the nonce spaces of the different uses of one key.
///
/// `Event` with a counter gives the plain layout of ten zero bytes followed
/// by the big-endian counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum NonceDomain {
    Event = 0x00,
    Reply = 0x01,
    SetKey = 0x02,
    Grant = 0x03,
}

/// 96-bit AEAD nonce: domain byte, nine zero bytes, 16-bit big-endian counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AeadNonce([u8; NONCE_LEN]);

impl AeadNonce {
    pub fn new(domain: NonceDomain, counter: u16) -> Self {
        let mut bytes = [0u8; NONCE_LEN];
        bytes[0] = domain as u8;
        bytes[10..].copy_from_slice(&counter.to_be_bytes());
        AeadNonce(bytes)
    }

    pub fn event(counter: u16) -> Self {
        Self::new(NonceDomain::Event, counter)
    }

    /// Domain byte followed by the first eleven bytes of `unique`; used when
    /// a fresh random value rather than a counter makes the nonce unique.
    pub fn from_unique(domain: NonceDomain, unique: &[u8; 16]) -> Self {
        let mut bytes = [0u8; NONCE_LEN];
        bytes[0] = domain as u8;
        bytes[1..].copy_from_slice(&unique[..NONCE_LEN - 1]);
        AeadNonce(bytes)
    }

    /// Raw 96-bit nonce, for known-answer vectors.
    pub const fn from_bytes(bytes: [u8; NONCE_LEN]) -> Self {
        AeadNonce(bytes)
    }

    pub fn counter(&self) -> u16 {
        u16::from_be_bytes([self.0[10], self.0[11]])
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }
}

/// Ciphertext with its detached tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sealed {
    pub ciphertext: Vec<u8>,
    pub tag: Tag128,
}

impl Sealed {
    /// Wire form: ciphertext followed by the 16-byte tag.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.ciphertext.len() + TAG_LEN);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < TAG_LEN {
            return Err(CryptoError::InvalidLength {
                expected: TAG_LEN,
                actual: bytes.len(),
            });
        }
        let (ct, tag) = bytes.split_at(bytes.len() - TAG_LEN);
        Ok(Sealed {
            ciphertext: ct.to_vec(),
            tag: Tag128::from_slice(tag)?,
        })
    }
}

/// Pluggable authenticated-encryption backend for one cipher suite.
pub trait AuthenticatedCipher: Send + Sync {
    fn suite(&self) -> CipherSuite;
    fn seal(&self, key: &Key128, nonce: &AeadNonce, plaintext: &[u8], aad: &[u8]) -> Sealed;
    fn open(
        &self,
        key: &Key128,
        nonce: &AeadNonce,
        ciphertext: &[u8],
        tag: &Tag128,
        aad: &[u8],
    ) -> Result<Vec<u8>, CryptoError>;
}

pub struct AesGcm128;

impl AuthenticatedCipher for AesGcm128 {
    fn suite(&self) -> CipherSuite {
        CipherSuite::AesGcm128
    }

    fn seal(&self, key: &Key128, nonce: &AeadNonce, plaintext: &[u8], aad: &[u8]) -> Sealed {
        let _stage = metrics::enter(Stage::Aes);
        let cipher = Aes128Gcm::new(key.as_bytes().into());
        let mut buffer = plaintext.to_vec();
        let tag = cipher
            .encrypt_in_place_detached(Nonce::from_slice(nonce.as_bytes()), aad, &mut buffer)
            .expect("AES-GCM input within length limits");
        Sealed {
            ciphertext: buffer,
            tag: Tag128(tag.into()),
        }
    }

    fn open(
        &self,
        key: &Key128,
        nonce: &AeadNonce,
        ciphertext: &[u8],
        tag: &Tag128,
        aad: &[u8],
    ) -> Result<Vec<u8>, CryptoError> {
        let _stage = metrics::enter(Stage::Aes);
        let cipher = Aes128Gcm::new(key.as_bytes().into());
        let mut buffer = ciphertext.to_vec();
        cipher
            .decrypt_in_place_detached(
                Nonce::from_slice(nonce.as_bytes()),
                aad,
                &mut buffer,
                Tag::from_slice(&tag.0),
            )
            .map_err(|_| CryptoError::AuthFailure)?;
        Ok(buffer)
    }
}

static AES_GCM_128: AesGcm128 = AesGcm128;

/// Looks up the backend for `suite`. SPONGENT-128 is a declared slot without
/// an implementation.
pub fn cipher_for(suite: CipherSuite) -> Result<&'static dyn AuthenticatedCipher, CryptoError> {
    match suite {
        CipherSuite::AesGcm128 => Ok(&AES_GCM_128),
        CipherSuite::Spongent128 => Err(CryptoError::UnsupportedCipher(suite)),
    }
}

pub fn aead_seal(
    suite: CipherSuite,
    key: &Key128,
    nonce: &AeadNonce,
    plaintext: &[u8],
    aad: &[u8],
) -> Result<Sealed, CryptoError> {
    let cipher = cipher_for(suite)?;
    if key.is_unset() {
        return Err(CryptoError::InvalidKey);
    }
    Ok(cipher.seal(key, nonce, plaintext, aad))
}

pub fn aead_open(
    suite: CipherSuite,
    key: &Key128,
    nonce: &AeadNonce,
    ciphertext: &[u8],
    tag: &Tag128,
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let cipher = cipher_for(suite)?;
    if key.is_unset() {
        return Err(CryptoError::AuthFailure);
    }
    cipher.open(key, nonce, ciphertext, tag, aad)
}

/// AES-GCM keystream decryption that skips tag verification.
///
/// Only reachable through the negative-control fault switch of the runtime.
pub(crate) fn aes_gcm_decrypt_unverified(key: &Key128, nonce: &AeadNonce, ciphertext: &[u8]) -> Vec<u8> {
    use ctr::cipher::{KeyIvInit, StreamCipher};
    type Aes128Ctr32 = ctr::Ctr32BE<aes::Aes128>;

    let mut iv = [0u8; 16];
    iv[..NONCE_LEN].copy_from_slice(nonce.as_bytes());
    iv[15] = 2;
    let mut cipher = Aes128Ctr32::new(key.as_bytes().into(), &iv.into());
    let mut buffer = ciphertext.to_vec();
    cipher.apply_keystream(&mut buffer);
    buffer
}

pub fn sha256(data: &[u8]) -> [u8; HASH_LEN] {
    Sha256::digest(data).into()
}

/// First 16 bytes of SHA-256(parent || data).
pub fn kdf128(parent: &[u8], data: &[u8]) -> Key128 {
    let mut hasher = Sha256::new();
    hasher.update(parent);
    hasher.update(data);
    let digest = hasher.finalize();
    let mut out = [0u8; KEY_LEN];
    out.copy_from_slice(&digest[..KEY_LEN]);
    Key128(out)
}

/// Tag of an AES-GCM-128 seal with the zero-counter nonce, empty plaintext
/// and `data` as associated data.
pub fn mac_tag(key: &Key128, data: &[u8]) -> Result<Tag128, CryptoError> {
    if key.is_unset() {
        return Err(CryptoError::InvalidKey);
    }
    let sealed = aead_seal(CipherSuite::AesGcm128, key, &AeadNonce::event(0), &[], data)?;
    Ok(sealed.tag)
}

pub fn verify_mac(key: &Key128, data: &[u8], tag: &Tag128) -> bool {
    aead_open(CipherSuite::AesGcm128, key, &AeadNonce::event(0), &[], tag, data).is_ok()
}

/// ChaCha20-based generator: OS-seeded in production, seedable in the harness.
#[derive(Clone, Debug)]
pub struct SecureRng(ChaCha20Rng);

impl SecureRng {
    pub fn from_entropy() -> Self {
        SecureRng(ChaCha20Rng::from_entropy())
    }

    pub fn seeded(seed: u64) -> Self {
        SecureRng(ChaCha20Rng::seed_from_u64(seed))
    }

    /// Derives an independent child stream, e.g. one per simulated node.
    pub fn fork(&mut self) -> Self {
        let mut seed = [0u8; 32];
        self.0.fill_bytes(&mut seed);
        SecureRng(ChaCha20Rng::from_seed(seed))
    }

    pub fn random_bytes(&mut self, n: usize) -> Vec<u8> {
        let mut out = vec![0u8; n];
        self.0.fill_bytes(&mut out);
        out
    }

    pub fn array<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        self.0.fill_bytes(&mut out);
        out
    }
}

impl RngCore for SecureRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

impl CryptoRng for SecureRng {}

pub fn random_bytes(rng: &mut SecureRng, n: usize) -> Vec<u8> {
    rng.random_bytes(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(byte: u8) -> Key128 {
        Key128::from_bytes([byte; KEY_LEN])
    }

    #[test]
    fn empty_plaintext_gives_bare_tag() {
        let sealed = aead_seal(CipherSuite::AesGcm128, &key(7), &AeadNonce::event(3), b"", b"aad").unwrap();
        assert!(sealed.ciphertext.is_empty());
        assert_eq!(sealed.to_bytes().len(), TAG_LEN);
    }

    #[test]
    fn zero_key_is_rejected() {
        let err = aead_seal(CipherSuite::AesGcm128, &Key128::UNSET, &AeadNonce::event(0), b"x", b"").unwrap_err();
        assert_eq!(err, CryptoError::InvalidKey);
        assert_eq!(mac_tag(&Key128::UNSET, b"c").unwrap_err(), CryptoError::InvalidKey);
    }

    #[test]
    fn spongent_slot_is_unsupported() {
        let err = aead_seal(CipherSuite::Spongent128, &key(1), &AeadNonce::event(0), b"x", b"").unwrap_err();
        assert_eq!(err, CryptoError::UnsupportedCipher(CipherSuite::Spongent128));
        let err = aead_open(CipherSuite::Spongent128, &key(1), &AeadNonce::event(0), b"x", &Tag128([0; 16]), b"")
            .unwrap_err();
        assert_eq!(err, CryptoError::UnsupportedCipher(CipherSuite::Spongent128));
    }

    #[test]
    fn event_nonce_layout() {
        let nonce = AeadNonce::event(0x0102);
        assert_eq!(&nonce.as_bytes()[..10], &[0u8; 10]);
        assert_eq!(&nonce.as_bytes()[10..], &[1, 2]);
        assert_eq!(nonce.counter(), 0x0102);
        assert_ne!(AeadNonce::new(NonceDomain::Reply, 0x0102), nonce);
    }

    #[test]
    fn kdf_of_empty_suffix_is_hash_of_parent() {
        let parent = key(9);
        assert_eq!(kdf128(parent.as_bytes(), b"").as_bytes()[..], sha256(parent.as_bytes())[..16]);
    }

    #[test]
    fn mac_is_tag_of_empty_seal() {
        let k = key(4);
        let tag = mac_tag(&k, b"challenge").unwrap();
        assert!(aead_open(CipherSuite::AesGcm128, &k, &AeadNonce::event(0), b"", &tag, b"challenge").is_ok());
        assert!(verify_mac(&k, b"challenge", &tag));
        assert!(!verify_mac(&k, b"challengf", &tag));
        assert_ne!(tag, mac_tag(&k, b"challenge2").unwrap());
    }

    #[test]
    fn unverified_decrypt_matches_keystream() {
        let k = key(5);
        let nonce = AeadNonce::event(11);
        let sealed = aead_seal(CipherSuite::AesGcm128, &k, &nonce, b"forty bytes of plaintext for ctr mode!!", b"a").unwrap();
        assert_eq!(
            aes_gcm_decrypt_unverified(&k, &nonce, &sealed.ciphertext),
            b"forty bytes of plaintext for ctr mode!!".to_vec()
        );
    }

    #[test]
    fn seeded_rng_is_reproducible() {
        let mut a = SecureRng::seeded(42);
        let mut b = SecureRng::seeded(42);
        assert_eq!(a.random_bytes(64), b.random_bytes(64));
        assert!(random_bytes(&mut a, 0).is_empty());
    }

    #[test]
    fn generated_keys_are_never_unset() {
        let mut rng = SecureRng::seeded(1);
        for _ in 0..100 {
            assert!(!Key128::generate(&mut rng).is_unset());
        }
    }

    #[test]
    fn key_debug_is_redacted() {
        assert_eq!(format!("{:?}", key(0xAB)), "Key128(..)");
    }

    proptest! {
        #[test]
        fn seal_open_round_trip(
            k in any::<[u8; 16]>().prop_filter("non-zero", |k| k.iter().any(|b| *b != 0)),
            counter in any::<u16>(),
            pt in proptest::collection::vec(any::<u8>(), 0..128),
            aad in proptest::collection::vec(any::<u8>(), 0..64),
        ) {
            let key = Key128::from_bytes(k);
            let nonce = AeadNonce::event(counter);
            let sealed = aead_seal(CipherSuite::AesGcm128, &key, &nonce, &pt, &aad).unwrap();
            prop_assert_eq!(sealed.ciphertext.len(), pt.len());
            let opened = aead_open(CipherSuite::AesGcm128, &key, &nonce, &sealed.ciphertext, &sealed.tag, &aad).unwrap();
            prop_assert_eq!(opened, pt);
            let wrong = AeadNonce::event(counter.wrapping_add(1));
            prop_assert_eq!(
                aead_open(CipherSuite::AesGcm128, &key, &wrong, &sealed.ciphertext, &sealed.tag, &aad),
                Err(CryptoError::AuthFailure)
            );
        }

        #[test]
        fn kdf_is_pure(parent in proptest::collection::vec(any::<u8>(), 1..48), data in proptest::collection::vec(any::<u8>(), 0..48)) {
            prop_assert_eq!(kdf128(&parent, &data), kdf128(&parent, &data));
        }
    }
}
