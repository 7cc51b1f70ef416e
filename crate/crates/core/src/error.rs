use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("observation {observation} after action {action} has zero likelihood under the model")]
    ZeroLikelihood { action: usize, observation: usize },

    #[error("model failed validation: {0}")]
    Validation(String),

    #[error("need at least {needed} missions, found {found}")]
    TooFewMissions { found: usize, needed: usize },

    #[error("configuration `{config}` has training steps of a single class only")]
    MissingClass { config: String },

    #[error("group splits need at least three participant groups")]
    TooFewGroups,

    #[error("no held-out steps with true class `{class}` for configuration `{config}`")]
    EmptyRow { config: String, class: &'static str },

    #[error("feature vector has dimension {found}, classifier expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no observation sequences to fit")]
    EmptyData,

    #[error("log-likelihood is not finite: emission zeros are inconsistent with sequence {sequence}")]
    NonFiniteLikelihood { sequence: usize },

    #[error("quantile of an empty sample")]
    EmptySample,

    #[error("rank correlation is undefined for a constant series")]
    DegenerateRanks,

    #[error("controller already observed the terminal state")]
    Terminated,

    #[error("initial belief puts all mass on the terminal state")]
    TerminalStart,

    #[error("only {survived} of {requested} sampled models survived EM (need 90%)")]
    TooManyDroppedModels { survived: usize, requested: usize },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
