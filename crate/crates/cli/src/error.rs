use std::fmt;
use std::io;
use std::path::PathBuf;

/// Exit status for bad configuration, unreadable firmware and usage errors
/// caught after argument parsing.
pub const EXIT_CONFIG: i32 = 3;
/// Exit status for failures while a campaign or replay is running.
pub const EXIT_CAMPAIGN: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    ConfigLine { line: usize, msg: String },
    Firmware(String),
    Io { path: PathBuf, source: io::Error },
    Campaign(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> CliError {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ConfigLine { .. } | CliError::Firmware(_) => {
                EXIT_CONFIG
            }
            CliError::Io { .. } | CliError::Campaign(_) => EXIT_CAMPAIGN,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config: {msg}"),
            CliError::ConfigLine { line, msg } => write!(f, "config line {line}: {msg}"),
            CliError::Firmware(msg) => write!(f, "firmware: {msg}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Campaign(msg) => write!(f, "campaign: {msg}"),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
