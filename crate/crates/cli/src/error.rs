use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Input,
    Runtime,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: msg.into(),
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Input,
            message: msg.into(),
        }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            message: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Input => 3,
            ErrorKind::Runtime => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ErrorKind::Config => "configuration error",
            ErrorKind::Input => "input error",
            ErrorKind::Runtime => "runtime error",
        };
        write!(f, "{kind}: {}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<patchfield::Error> for CliError {
    fn from(e: patchfield::Error) -> Self {
        use patchfield::Error as E;
        let kind = match &e {
            E::Config(_) | E::InvalidArgument(_) => ErrorKind::Config,
            E::Shape(_) | E::Region(_) | E::NoRegions | E::Selection(_) | E::ImageIo { .. } | E::Io(_) => {
                ErrorKind::Input
            }
            E::Transport(_) | E::Protocol(_) | E::Remote(_) => ErrorKind::Runtime,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}
