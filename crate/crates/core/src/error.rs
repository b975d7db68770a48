use std::fmt;

use crate::crypto::CryptoError;

/// Error kinds surfaced across module boundaries, wire Error frames and the
/// C interface. The discriminant is the stable numeric code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorKind {
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
}

impl ErrorKind {
    const ALL: [ErrorKind; 32] = [
        ErrorKind::UnsupportedCipher,
        ErrorKind::InvalidKey,
        ErrorKind::AuthFailure,
        ErrorKind::StaleSequence,
        ErrorKind::UnknownConnection,
        ErrorKind::Unestablished,
        ErrorKind::NonceExhausted,
        ErrorKind::ChallengeTooShort,
        ErrorKind::UnknownEntry,
        ErrorKind::UnknownBehavior,
        ErrorKind::DuplicateIoId,
        ErrorKind::Timeout,
        ErrorKind::MalformedPackage,
        ErrorKind::UnknownVendor,
        ErrorKind::CapacityExceeded,
        ErrorKind::UnknownModule,
        ErrorKind::CallerRejected,
        ErrorKind::NonceMismatch,
        ErrorKind::LeaseHeld,
        ErrorKind::UnknownDriver,
        ErrorKind::UnknownDevice,
        ErrorKind::SchemaError,
        ErrorKind::NodeUnreachable,
        ErrorKind::AttestationFailed,
        ErrorKind::SetKeyRejected,
        ErrorKind::KeyMismatch,
        ErrorKind::ScenarioError,
        ErrorKind::MalformedFrame,
        ErrorKind::Busy,
        ErrorKind::Rejected,
        ErrorKind::Io,
        ErrorKind::Config,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<ErrorKind> {
        Self::ALL.iter().copied().find(|k| k.code() == code)
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Error {
    pub kind: ErrorKind,
    pub detail: String,
}

impl Error {
    pub fn new(kind: ErrorKind, detail: impl Into<String>) -> Self {
        Error {
            kind,
            detail: detail.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        self.kind
    }

    /// Error frame body: code(1) followed by the UTF-8 detail.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = vec![self.kind.code()];
        out.extend_from_slice(self.detail.as_bytes());
        out
    }

    pub fn from_wire(body: &[u8]) -> Error {
        match body.split_first() {
            Some((code, rest)) => Error {
                kind: ErrorKind::from_code(*code).unwrap_or(ErrorKind::Rejected),
                detail: String::from_utf8_lossy(rest).into_owned(),
            },
            None => Error::new(ErrorKind::MalformedFrame, "empty error body"),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.detail.is_empty() {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}: {}", self.kind, self.detail)
        }
    }
}

impl std::error::Error for Error {}

impl From<ErrorKind> for Error {
    fn from(kind: ErrorKind) -> Self {
        Error::new(kind, "")
    }
}

impl From<CryptoError> for Error {
    fn from(err: CryptoError) -> Self {
        let kind = match err {
            CryptoError::UnsupportedCipher(_) => ErrorKind::UnsupportedCipher,
            CryptoError::InvalidKey => ErrorKind::InvalidKey,
            CryptoError::AuthFailure => ErrorKind::AuthFailure,
            CryptoError::InvalidLength { .. } => ErrorKind::MalformedFrame,
        };
        Error::new(kind, err.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::new(ErrorKind::Io, err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
