use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("sample budget exceeded: {needed} simulator calls requested, cap is {cap}")]
    Budget { needed: u64, cap: u64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("delta floor reached at t={t}: halving {delta:e} would go below floor {floor:e}")]
    DeltaFloor { t: u64, delta: f64, floor: f64 },

    #[error("at step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: row {row}: {msg}")]
    Parse { path: String, row: u64, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn at_step(self, step: u64) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// Innermost error, with step annotations peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 budget/contract, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Budget { .. } | Error::Contract(_) | Error::DeltaFloor { .. } => 2,
            Error::Parse { .. } | Error::Io(_) => 3,
            Error::AtStep { .. } => unreachable!(),
        }
    }

    pub fn is_budget(&self) -> bool {
        matches!(self.root(), Error::Budget { .. })
    }
}
