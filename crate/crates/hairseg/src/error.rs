use std::fmt;
use std::path::Path;

use hairseg_core::{GuidanceError, MaskError, PlanError, PromptError, SegError, SynthError};
use serde::Serialize;

/// Error classes, each with its own process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    /// Malformed command line.
    Usage,
    /// Well-formed request with bad inputs: missing files, invalid
    /// parameters, undecodable masks.
    Validation,
    /// Failure while doing the work: IO, network, backend errors.
    Runtime,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Validation => 3,
            ErrorKind::Runtime => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Error {
    pub kind: ErrorKind,
    pub message: String,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Runtime, message)
    }

    /// Prefixes the message with the file it concerns.
    pub fn at(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// Single-line JSON document written to stderr on failure.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: ErrorKind,
            code: i32,
            message: &'a str,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Wrapper {
            error: Body {
                kind: self.kind,
                code: self.exit_code(),
                message: &self.message,
            },
        })
        .expect("plain strings serialize")
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::validation(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            Error::runtime(e.to_string())
        } else {
            Error::validation(e.to_string())
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Error {
            fn from(e: $t) -> Self {
                Error::validation(e.to_string())
            }
        }
    )*};
}

validation_from!(MaskError, SynthError, PromptError, PlanError);

impl From<GuidanceError> for Error {
    fn from(e: GuidanceError) -> Self {
        match e {
            GuidanceError::Denoiser(_) | GuidanceError::Provider(_) => Error::runtime(e.to_string()),
            _ => Error::validation(e.to_string()),
        }
    }
}

impl From<SegError> for Error {
    fn from(e: SegError) -> Self {
        match e {
            SegError::Transport(_) | SegError::BadResponse(_) | SegError::Backend(_) => {
                Error::runtime(e.to_string())
            }
            _ => Error::validation(e.to_string()),
        }
    }
}
