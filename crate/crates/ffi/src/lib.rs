//! C ABI over the authex core: key derivation, MAC and AEAD primitives,
//! and an opaque node handle that processes wire frames.
//!
//! Every function returns an [`AuthexStatus`]. On failure a message is kept
//! per thread and can be read with [`authex_last_error`]. Buffers returned
//! through [`AuthexBuffer`] are owned by the library and released with
//! [`authex_buffer_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;
use std::time::Duration;

use authex::behavior::BehaviorRegistry;
use authex::clock::WallClock;
use authex::crypto::{self, AeadNonce, CipherSuite, CryptoError, Key128, NonceDomain, Tag128};
use authex::manager::{EventManager, Frame, TcpTransport};
use authex::tee::{derive_module_key, derive_vendor_key, Node, NodeConfig};
use authex::ErrorKind;

pub const AUTHEX_KEY_LEN: usize = 16;
pub const AUTHEX_TAG_LEN: usize = 16;
pub const AUTHEX_HASH_LEN: usize = 32;

/// Result codes. Positive values mirror the core error kinds; negative
/// values are specific to the C boundary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthexStatus {
    Ok = 0,
    UnsupportedCipher = 1,
    InvalidKey = 2,
    AuthFailure = 3,
    StaleSequence = 4,
    UnknownConnection = 5,
    Unestablished = 6,
    NonceExhausted = 7,
    ChallengeTooShort = 8,
    UnknownEntry = 9,
    UnknownBehavior = 10,
    DuplicateIoId = 11,
    Timeout = 12,
    MalformedPackage = 13,
    UnknownVendor = 14,
    CapacityExceeded = 15,
    UnknownModule = 16,
    CallerRejected = 17,
    NonceMismatch = 18,
    LeaseHeld = 19,
    UnknownDriver = 20,
    UnknownDevice = 21,
    SchemaError = 22,
    NodeUnreachable = 23,
    AttestationFailed = 24,
    SetKeyRejected = 25,
    KeyMismatch = 26,
    ScenarioError = 27,
    MalformedFrame = 28,
    Busy = 29,
    Rejected = 30,
    Io = 31,
    Config = 32,
    NullPointer = -1,
    InvalidArgument = -2,
    Panic = -3,
}

impl From<ErrorKind> for AuthexStatus {
    fn from(kind: ErrorKind) -> Self {
        use AuthexStatus as S;
        match kind {
            ErrorKind::UnsupportedCipher => S::UnsupportedCipher,
            ErrorKind::InvalidKey => S::InvalidKey,
            ErrorKind::AuthFailure => S::AuthFailure,
            ErrorKind::StaleSequence => S::StaleSequence,
            ErrorKind::UnknownConnection => S::UnknownConnection,
            ErrorKind::Unestablished => S::Unestablished,
            ErrorKind::NonceExhausted => S::NonceExhausted,
            ErrorKind::ChallengeTooShort => S::ChallengeTooShort,
            ErrorKind::UnknownEntry => S::UnknownEntry,
            ErrorKind::UnknownBehavior => S::UnknownBehavior,
            ErrorKind::DuplicateIoId => S::DuplicateIoId,
            ErrorKind::Timeout => S::Timeout,
            ErrorKind::MalformedPackage => S::MalformedPackage,
            ErrorKind::UnknownVendor => S::UnknownVendor,
            ErrorKind::CapacityExceeded => S::CapacityExceeded,
            ErrorKind::UnknownModule => S::UnknownModule,
            ErrorKind::CallerRejected => S::CallerRejected,
            ErrorKind::NonceMismatch => S::NonceMismatch,
            ErrorKind::LeaseHeld => S::LeaseHeld,
            ErrorKind::UnknownDriver => S::UnknownDriver,
            ErrorKind::UnknownDevice => S::UnknownDevice,
            ErrorKind::SchemaError => S::SchemaError,
            ErrorKind::NodeUnreachable => S::NodeUnreachable,
            ErrorKind::AttestationFailed => S::AttestationFailed,
            ErrorKind::SetKeyRejected => S::SetKeyRejected,
            ErrorKind::KeyMismatch => S::KeyMismatch,
            ErrorKind::ScenarioError => S::ScenarioError,
            ErrorKind::MalformedFrame => S::MalformedFrame,
            ErrorKind::Busy => S::Busy,
            ErrorKind::Rejected => S::Rejected,
            ErrorKind::Io => S::Io,
            ErrorKind::Config => S::Config,
        }
    }
}

/// Byte buffer allocated by the library.
#[repr(C)]
#[derive(Debug)]
pub struct AuthexBuffer {
    pub data: *mut u8,
    pub len: usize,
}

impl AuthexBuffer {
    fn empty() -> Self {
        AuthexBuffer {
            data: ptr::null_mut(),
            len: 0,
        }
    }

    fn from_vec(v: Vec<u8>) -> Self {
        let mut boxed = v.into_boxed_slice();
        let out = AuthexBuffer {
            data: boxed.as_mut_ptr(),
            len: boxed.len(),
        };
        std::mem::forget(boxed);
        out
    }
}

/// A node and its event manager. Outgoing events travel over TCP.
pub struct AuthexNode {
    manager: EventManager,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(AuthexStatus, String);

impl From<authex::Error> for Failure {
    fn from(e: authex::Error) -> Self {
        Failure(e.kind.into(), e.to_string())
    }
}

impl From<CryptoError> for Failure {
    fn from(e: CryptoError) -> Self {
        let status = match e {
            CryptoError::UnsupportedCipher(_) => AuthexStatus::UnsupportedCipher,
            CryptoError::InvalidKey => AuthexStatus::InvalidKey,
            CryptoError::AuthFailure => AuthexStatus::AuthFailure,
            CryptoError::InvalidLength { .. } => AuthexStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(AuthexStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AuthexStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err(Failure(AuthexStatus::Panic, "panic".into())));
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            AuthexStatus::Ok
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

/// Input slice; a null pointer is accepted only for an empty slice.
unsafe fn input<'a>(data: *const u8, len: usize) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(Failure(AuthexStatus::NullPointer, "null input buffer".into()));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn output<'a>(data: *mut u8, len: usize) -> Result<&'a mut [u8], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(Failure(AuthexStatus::NullPointer, "null output buffer".into()));
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

unsafe fn key_at(p: *const u8) -> Result<Key128, Failure> {
    Ok(Key128::from_slice(input(p, AUTHEX_KEY_LEN)?)?)
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(AuthexStatus::NullPointer, "null string".into()));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid("string is not UTF-8"))
}

fn nonce(domain: u8, counter: u16) -> Result<AeadNonce, Failure> {
    let domain = match domain {
        0 => NonceDomain::Event,
        1 => NonceDomain::Reply,
        2 => NonceDomain::SetKey,
        3 => NonceDomain::Grant,
        _ => return Err(invalid("unknown nonce domain")),
    };
    Ok(AeadNonce::new(domain, counter))
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `cap`. Returns the full message length.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn authex_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// # Safety
/// `data` must be valid for `len` bytes; `out` for 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn authex_sha256(data: *const u8, len: usize, out: *mut u8) -> AuthexStatus {
    guard(|| {
        let digest = crypto::sha256(input(data, len)?);
        output(out, AUTHEX_HASH_LEN)?.copy_from_slice(&digest);
        Ok(())
    })
}

/// First 16 bytes of SHA-256(parent || data).
///
/// # Safety
/// Buffers must be valid for their lengths; `out` for 16 bytes.
#[no_mangle]
pub unsafe extern "C" fn authex_kdf128(
    parent: *const u8,
    parent_len: usize,
    data: *const u8,
    data_len: usize,
    out: *mut u8,
) -> AuthexStatus {
    guard(|| {
        let key = crypto::kdf128(input(parent, parent_len)?, input(data, data_len)?);
        output(out, AUTHEX_KEY_LEN)?.copy_from_slice(key.as_bytes());
        Ok(())
    })
}

/// # Safety
/// `root` and `out` must be valid for 16 bytes.
#[no_mangle]
pub unsafe extern "C" fn authex_vendor_key(root: *const u8, vendor_id: u16, out: *mut u8) -> AuthexStatus {
    guard(|| {
        let key = derive_vendor_key(&key_at(root)?, vendor_id);
        output(out, AUTHEX_KEY_LEN)?.copy_from_slice(key.as_bytes());
        Ok(())
    })
}

/// # Safety
/// `vendor_key` and `out` must be valid for 16 bytes, `identity` for 32.
#[no_mangle]
pub unsafe extern "C" fn authex_module_key(vendor_key: *const u8, identity: *const u8, out: *mut u8) -> AuthexStatus {
    guard(|| {
        let identity: [u8; AUTHEX_HASH_LEN] = input(identity, AUTHEX_HASH_LEN)?.try_into().expect("length checked");
        let key = derive_module_key(&key_at(vendor_key)?, &identity);
        output(out, AUTHEX_KEY_LEN)?.copy_from_slice(key.as_bytes());
        Ok(())
    })
}

/// # Safety
/// `key` and `tag` must be valid for 16 bytes, `data` for `len`.
#[no_mangle]
pub unsafe extern "C" fn authex_mac(key: *const u8, data: *const u8, len: usize, tag: *mut u8) -> AuthexStatus {
    guard(|| {
        let t = crypto::mac_tag(&key_at(key)?, input(data, len)?)?;
        output(tag, AUTHEX_TAG_LEN)?.copy_from_slice(t.as_bytes());
        Ok(())
    })
}

/// AES-GCM-128 seal at nonce (`domain`, `counter`). `ciphertext` receives
/// `len` bytes and `tag` 16.
///
/// # Safety
/// All buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn authex_seal(
    key: *const u8,
    domain: u8,
    counter: u16,
    plaintext: *const u8,
    len: usize,
    aad: *const u8,
    aad_len: usize,
    ciphertext: *mut u8,
    tag: *mut u8,
) -> AuthexStatus {
    guard(|| {
        let sealed = crypto::aead_seal(
            CipherSuite::AesGcm128,
            &key_at(key)?,
            &nonce(domain, counter)?,
            input(plaintext, len)?,
            input(aad, aad_len)?,
        )?;
        output(ciphertext, len)?.copy_from_slice(&sealed.ciphertext);
        output(tag, AUTHEX_TAG_LEN)?.copy_from_slice(sealed.tag.as_bytes());
        Ok(())
    })
}

/// Inverse of [`authex_seal`]. Nothing is written unless the tag verifies.
///
/// # Safety
/// All buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn authex_open(
    key: *const u8,
    domain: u8,
    counter: u16,
    ciphertext: *const u8,
    len: usize,
    tag: *const u8,
    aad: *const u8,
    aad_len: usize,
    plaintext: *mut u8,
) -> AuthexStatus {
    guard(|| {
        let tag = Tag128::from_slice(input(tag, AUTHEX_TAG_LEN)?)?;
        let plain = crypto::aead_open(
            CipherSuite::AesGcm128,
            &key_at(key)?,
            &nonce(domain, counter)?,
            input(ciphertext, len)?,
            &tag,
            input(aad, aad_len)?,
        )?;
        output(plaintext, len)?.copy_from_slice(&plain);
        Ok(())
    })
}

/// Creates a node from a TOML configuration document.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn authex_node_new(config_toml: *const c_char, out: *mut *mut AuthexNode) -> AuthexStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(AuthexStatus::NullPointer, "null out pointer".into()));
        }
        *out = ptr::null_mut();
        let cfg = NodeConfig::parse_toml(c_str(config_toml)?)?;
        let node = Node::new(
            cfg,
            BehaviorRegistry::builtin(),
            WallClock::shared(),
            crypto::SecureRng::from_entropy(),
        )?;
        let transport = TcpTransport::new(Duration::from_secs(5));
        let handle = Box::new(AuthexNode {
            manager: EventManager::new(node, transport as Arc<dyn authex::manager::Transport>),
        });
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// # Safety
/// `node` must come from [`authex_node_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn authex_node_free(node: *mut AuthexNode) {
    if !node.is_null() {
        drop(Box::from_raw(node));
    }
}

unsafe fn node_mut<'a>(node: *mut AuthexNode) -> Result<&'a mut AuthexNode, Failure> {
    node.as_mut().ok_or_else(|| Failure(AuthexStatus::NullPointer, "null node handle".into()))
}

/// Processes one encoded wire frame and returns the encoded reply frame.
/// Protocol errors come back as error frames with status `Ok`.
///
/// # Safety
/// `node` must be a live handle, `frame` valid for `len`, `reply` writable.
#[no_mangle]
pub unsafe extern "C" fn authex_node_handle_frame(
    node: *mut AuthexNode,
    frame: *const u8,
    len: usize,
    reply: *mut AuthexBuffer,
) -> AuthexStatus {
    guard(|| {
        if reply.is_null() {
            return Err(Failure(AuthexStatus::NullPointer, "null reply".into()));
        }
        *reply = AuthexBuffer::empty();
        let node = node_mut(node)?;
        let frame = Frame::decode(input(frame, len)?)?;
        *reply = AuthexBuffer::from_vec(node.manager.handle_frame(&frame).encode());
        Ok(())
    })
}

/// Senses `value` on an input device of the node.
///
/// # Safety
/// `node` must be a live handle, `device` NUL-terminated, `value` valid for `len`.
#[no_mangle]
pub unsafe extern "C" fn authex_node_inject_input(
    node: *mut AuthexNode,
    device: *const c_char,
    value: *const u8,
    len: usize,
) -> AuthexStatus {
    guard(|| {
        let node = node_mut(node)?;
        let device = c_str(device)?;
        node.manager.inject_physical_input(device, input(value, len)?)?;
        Ok(())
    })
}

/// Line-oriented physical log of one device.
///
/// # Safety
/// `node` must be a live handle, `device` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn authex_node_device_log(
    node: *mut AuthexNode,
    device: *const c_char,
    out: *mut AuthexBuffer,
) -> AuthexStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(AuthexStatus::NullPointer, "null out".into()));
        }
        *out = AuthexBuffer::empty();
        let node = node_mut(node)?;
        let name = c_str(device)?;
        let dev = node
            .manager
            .node()
            .device(name)
            .ok_or_else(|| Failure(AuthexStatus::UnknownDevice, name.to_string()))?;
        *out = AuthexBuffer::from_vec(dev.export_log().into_bytes());
        Ok(())
    })
}

/// Releases a buffer returned by the library and resets it.
///
/// # Safety
/// `buf` must be null or hold a buffer produced by this library.
#[no_mangle]
pub unsafe extern "C" fn authex_buffer_free(buf: *mut AuthexBuffer) {
    if let Some(b) = buf.as_mut() {
        if !b.data.is_null() {
            drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
        }
        *b = AuthexBuffer::empty();
    }
}

/// Library version, NUL-terminated and static.
#[no_mangle]
pub extern "C" fn authex_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
