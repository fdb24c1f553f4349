use std::fmt;
use std::io;
use std::path::Path;

use pda_core::PdaError;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExitKind {
    Config = 2,
    Data = 3,
    Numeric = 4,
}

#[derive(Debug, Clone)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Data,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.kind as u8
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn kind_of(err: &PdaError) -> ExitKind {
    if err.is_data_error() {
        ExitKind::Data
    } else if err.is_numeric_error() {
        ExitKind::Numeric
    } else {
        ExitKind::Config
    }
}

impl From<PdaError> for CliError {
    fn from(err: PdaError) -> Self {
        Self {
            kind: kind_of(&err),
            message: err.to_string(),
        }
    }
}

/// Reads a config document; a missing file is a config error.
pub fn read_config(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => CliError::config(format!("config not found: {}", path.display())),
        _ => CliError::config(format!("cannot read config {}: {e}", path.display())),
    })
}

/// Reads an input artifact; anything missing or unreadable is a data error.
pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}
