use std::fmt;

/// Exit status classes: bad input (1) or a broken internal invariant (2).
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Invariant(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Invariant(_) => 2,
        }
    }

    pub fn invariant(msg: impl fmt::Display) -> Self {
        Failure::Invariant(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(e) => write!(f, "error: {e:#}"),
            Failure::Invariant(e) => write!(f, "internal error: {e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

pub type CliResult<T> = Result<T, Failure>;
