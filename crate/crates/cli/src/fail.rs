use std::fmt;
use std::process::ExitCode;

/// Command failure, mapped to a stable exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or inputs: exit 2.
    Invalid(String),
    /// The optimizer produced non-finite coordinates: exit 3.
    Diverged(String),
    /// The service port is taken: exit 4.
    PortInUse(String),
    /// Anything else: exit 1.
    Other(String),
}

impl Failure {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self::Invalid(message.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Self::Other(_) => 1,
            Self::Invalid(_) => 2,
            Self::Diverged(_) => 3,
            Self::PortInUse(_) => 4,
        })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Invalid(m) | Self::Diverged(m) | Self::PortInUse(m) | Self::Other(m) => f.write_str(m),
        }
    }
}

fn diverged(e: &cctsne::Error) -> bool {
    match e {
        cctsne::Error::NonFiniteUpdate { .. } => true,
        cctsne::Error::SweepFailed { source, .. } => diverged(source),
        _ => false,
    }
}

impl From<cctsne::Error> for Failure {
    fn from(e: cctsne::Error) -> Self {
        if diverged(&e) {
            Self::Diverged(e.to_string())
        } else {
            // Unreadable inputs count as invalid arguments.
            Self::Invalid(e.to_string())
        }
    }
}

/// Attaches a path to an error message.
pub trait Context<T> {
    fn at(self, path: &std::path::Path) -> Result<T, Failure>;
}

impl<T> Context<T> for cctsne::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T, Failure> {
        self.map_err(|e| match Failure::from(e) {
            Failure::Invalid(m) => Failure::Invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
