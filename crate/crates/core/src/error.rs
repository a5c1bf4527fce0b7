use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in example `{id}`: {reason}")]
    Parse { id: String, reason: String },

    #[error("unsatisfiable synthetic spec: {0}")]
    Spec(String),

    #[error("length {len} exceeds the maximum of {max} ({detail})")]
    Length { len: usize, max: usize, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{module}: {source}")]
    Module {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

/// Attach the name of the pipeline stage that produced an error.
pub(crate) trait ModuleContext<T> {
    fn in_module(self, module: &'static str) -> Result<T>;
}

impl<T> ModuleContext<T> for Result<T> {
    fn in_module(self, module: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            already @ Error::Module { .. } => already,
            other => Error::Module { module, source: Box::new(other) },
        })
    }
}
