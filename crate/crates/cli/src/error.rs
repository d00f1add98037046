use std::fmt;
use std::io;

use kge_core::autoconf::AutoconfError;
use kge_core::continual::CheckpointError;
use kge_core::models::ModelError;
use kge_core::serve::ServeError;
use kge_core::train::TrainError;
use kge_core::vocab::VocabError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Runtime,
    Parse,
    Config,
    Io,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Runtime => 1,
            Kind::Parse => 2,
            Kind::Config => 3,
            Kind::Io => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Runtime => "runtime",
            Kind::Parse => "parse",
            Kind::Config => "config",
            Kind::Io => "io",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl fmt::Display) -> Self {
        Self { kind, message: message.to_string() }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn parse(message: impl fmt::Display) -> Self {
        Self::new(Kind::Parse, message)
    }

    /// `{"error":"<kind>","message":"..."}` on a single line.
    pub fn to_json(&self) -> String {
        serde_json::json!({"error": self.kind.name(), "message": self.message}).to_string()
    }

    pub fn with_path(mut self, path: &std::path::Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        let kind = if e.kind() == io::ErrorKind::InvalidData { Kind::Parse } else { Kind::Io };
        Self::new(kind, e)
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(io) => io.into(),
            other => Self::parse(other),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteGradient { .. } | TrainError::GradientShape { .. } => Self::new(Kind::Runtime, e),
            TrainError::EmptyDataset => Self::parse(e),
            _ => Self::config(e),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::config(e)
    }
}

impl From<VocabError> for CliError {
    fn from(e: VocabError) -> Self {
        Self::parse(e)
    }
}

impl From<AutoconfError> for CliError {
    fn from(e: AutoconfError) -> Self {
        Self::config(e)
    }
}

impl From<ServeError> for CliError {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::Checkpoint(c) => c.into(),
            ServeError::Io(io) => Self::new(Kind::Io, io),
            ServeError::Address(_) => Self::config(e),
        }
    }
}
