use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by every module of the crate, tagged with the module that raised them.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("expr: {0}")]
    Parse(#[from] crate::expr::ParseError),
    #[error("expr: {0}")]
    Eval(#[from] crate::expr::EvalError),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("groups: {0}")]
    Group(String),
    #[error("groupoid: {0}")]
    Groupoid(String),
    #[error("fields: {0}")]
    Field(String),
    #[error("flows: {0}")]
    Flow(String),
    #[error("etale: {0}")]
    Etale(String),
    #[error("scenario {path}:{line}: {message}")]
    Scenario { path: String, line: usize, message: String },
    #[error("harness: {0}")]
    Harness(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }
    pub fn group(msg: impl Into<String>) -> Self {
        Error::Group(msg.into())
    }
    pub fn groupoid(msg: impl Into<String>) -> Self {
        Error::Groupoid(msg.into())
    }
    pub fn field(msg: impl Into<String>) -> Self {
        Error::Field(msg.into())
    }
    pub fn flow(msg: impl Into<String>) -> Self {
        Error::Flow(msg.into())
    }
    pub fn etale(msg: impl Into<String>) -> Self {
        Error::Etale(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
