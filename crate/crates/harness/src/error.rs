use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Stack,
    Power,
    Steady,
    Sensors,
    Transient,
    Policy,
    Pdn,
    Reliability,
    Export,
    Compare,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Stack => "stack",
            Stage::Power => "power",
            Stage::Steady => "steady",
            Stage::Sensors => "sensors",
            Stage::Transient => "transient",
            Stage::Policy => "policy",
            Stage::Pdn => "pdn",
            Stage::Reliability => "reliability",
            Stage::Export => "export",
            Stage::Compare => "compare",
        };
        f.write_str(s)
    }
}

/// Failure class; selects the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage}: {message}")]
pub struct HarnessError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl HarnessError {
    pub fn new(stage: Stage, kind: ErrorKind, message: impl Into<String>) -> Self {
        HarnessError {
            stage,
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Stage::Config, ErrorKind::Validation, message)
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::new(Stage::Export, ErrorKind::Io, format!("{}: {e}", path.display()))
    }

    pub fn model(stage: Stage, e: stackemu_core::Error) -> Self {
        use stackemu_core::Error as E;
        let kind = match &e {
            E::ConvergenceFailure { .. } | E::NumericalFailure(_) => ErrorKind::Numerical,
            E::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        };
        Self::new(stage, kind, e.to_string())
    }

    pub fn at(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => 1,
            ErrorKind::Numerical => 2,
            ErrorKind::Io => 3,
        }
    }
}

/// `map_err` shorthand for core results.
pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, HarnessError>;
}

impl<T> AtStage<T> for stackemu_core::Result<T> {
    fn at(self, stage: Stage) -> Result<T, HarnessError> {
        self.map_err(|e| HarnessError::model(stage, e))
    }
}
