use std::fmt;

/// Errors produced anywhere in the simulator.
///
/// The variants map one-to-one onto the CLI exit codes (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// An argument was outside its admissible range.
    #[error("range error: {0}")]
    Range(String),
    /// Non-finite values, non-convergence and similar numerical failures.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed or semantically invalid data.
    #[error("data error: {0}")]
    Data(String),
    /// A parse failure at a known location (file:line, row, key).
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// An inner error annotated with where it happened (round, step, file).
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl fmt::Display) -> Self {
        Error::Contract(msg.to_string())
    }

    pub fn numerical(msg: impl fmt::Display) -> Self {
        Error::Numerical(msg.to_string())
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Error::Data(msg.to_string())
    }

    pub fn parse(location: impl fmt::Display, message: impl fmt::Display) -> Self {
        Error::Parse {
            location: location.to_string(),
            message: message.to_string(),
        }
    }

    /// Innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Contract(_) | Error::Range(_) | Error::Config(_) => 2,
            Error::Data(_) | Error::Parse { .. } => 3,
            Error::Numerical(_) => 4,
            Error::Io(_) => 5,
            Error::Context { .. } => unreachable!("root() strips context"),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Data(format!("{other:?}")),
        }
    }
}

/// Attach context to a fallible result.
pub trait ResultExt<T> {
    fn context<C: fmt::Display>(self, ctx: impl FnOnce() -> C) -> Result<T>;
}

impl<T, E: Into<Error>> ResultExt<T> for std::result::Result<T, E> {
    fn context<C: fmt::Display>(self, ctx: impl FnOnce() -> C) -> Result<T> {
        self.map_err(|source| Error::Context {
            context: ctx().to_string(),
            source: Box::new(source.into()),
        })
    }
}
