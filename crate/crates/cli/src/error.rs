use std::fmt;

/// Failure of a subcommand, printed as one `error[CLASS]: message` line.
#[derive(Debug)]
pub enum CliError {
    /// Every configuration problem found.
    Config(Vec<String>),
    Io(String),
    Core(ivmap_core::Error),
    Usage(String),
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "CONFIG_INVALID",
            CliError::Io(_) => "IO",
            CliError::Core(e) => e.class(),
            CliError::Usage(_) => "USAGE",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// The single diagnostic line.
    pub fn line(&self) -> String {
        format!("error[{}]: {}", self.class(), self.to_string().replace('\n', " "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(p) => write!(f, "{}", p.join("; ")),
            CliError::Io(m) | CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ivmap_core::Error> for CliError {
    fn from(e: ivmap_core::Error) -> Self {
        CliError::Core(e)
    }
}
