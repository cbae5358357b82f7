use std::fmt;
use std::path::Path;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    /// Malformed file, manifest or config, or an unsupported file version.
    pub const FORMAT: i32 = 4;
    /// Window, grid or model dimensions disagree.
    pub const SHAPE: i32 = 5;
    /// Inputs are well formed but unusable: unknown ids, too little data,
    /// protocol violations.
    pub const DATA: i32 = 6;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: exit::IO,
            msg: format!("{}: {e}", path.display()),
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Self {
            code: exit::FORMAT,
            msg: msg.into(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: exit::USAGE,
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self {
            code: exit::DATA,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<egoid::Error> for CliError {
    fn from(e: egoid::Error) -> Self {
        use egoid::Error as E;
        let code = match &e {
            E::Io { .. } => exit::IO,
            E::Manifest { .. } | E::Image { .. } | E::Format(_) | E::Version { .. } => exit::FORMAT,
            E::Shape(_) | E::FrameCountMismatch { .. } => exit::SHAPE,
            E::DuplicateSubject(_)
            | E::DuplicateSequence { .. }
            | E::UnknownId(_)
            | E::TooShort(_)
            | E::Invalid(_)
            | E::Protocol(_) => exit::DATA,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}
