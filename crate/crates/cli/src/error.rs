use std::fmt;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Usage = 1,
    Data = 2,
    Detector = 3,
}

/// An error carrying the exit status it should produce.
pub struct CliError {
    pub exit: Exit,
    pub error: anyhow::Error,
}

impl fmt::Debug for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {:#}", self.exit, self.error)
    }
}

impl CliError {
    pub fn new(exit: Exit, error: impl Into<anyhow::Error>) -> Self {
        Self {
            exit,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::new(Exit::Usage, anyhow::anyhow!("{msg}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags a fallible result with an exit status and context.
pub trait OrExit<T> {
    fn or_exit(self, exit: Exit, context: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, exit: Exit, context: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::new(exit, e.into().context(context.to_string())))
    }
}
