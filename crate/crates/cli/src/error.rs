use std::fmt;

/// Command failures, each tied to a process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or values: exit 2.
    Usage(String),
    /// Missing, unreadable or inconsistent input files: exit 3.
    Data(String),
    /// Non-finite losses or gradients during training: exit 4.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<jnt_core::Error> for CliError {
    fn from(e: jnt_core::Error) -> Self {
        use jnt_core::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) => CliError::Usage(msg),
            E::Numeric(_) | E::Tape(_) => CliError::Numeric(msg),
            E::Shape(_) | E::Format { .. } | E::Io { .. } => CliError::Data(msg),
        }
    }
}
