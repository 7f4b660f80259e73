use std::fmt;

use crate::config::ConfigError;

/// Failure classes, each with its own exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Other,
    Config,
    Data,
    Numerical,
    Checkpoint,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Other => 1,
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Numerical => 4,
            Kind::Checkpoint => 5,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Other => "other",
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Numerical => "numerical",
            Kind::Checkpoint => "checkpoint",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub line: Option<usize>,
    pub keys: Vec<String>,
    pub msg: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: Kind, msg: impl Into<String>) -> Self {
        Self { kind, line: None, keys: Vec::new(), msg: msg.into() }
    }

    /// Reclassifies a core error raised while reading input data.
    pub fn data(e: hieb_core::Error) -> Self {
        let mut c = Self::from(e);
        if matches!(c.kind, Kind::Other) {
            c.kind = Kind::Data;
        }
        c
    }
}

/// One line: `error kind=<kind> code=<n> [line=<l>] [keys=<a,b>] msg="<text>"`.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error kind={} code={}", self.kind.name(), self.kind.exit_code())?;
        if let Some(l) = self.line {
            write!(f, " line={l}")?;
        }
        if !self.keys.is_empty() {
            write!(f, " keys={}", self.keys.join(","))?;
        }
        let msg = self.msg.replace(['\n', '\r'], " ").replace('"', "'");
        write!(f, " msg=\"{msg}\"")
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self { kind: Kind::Config, line: e.line, keys: e.keys, msg: e.msg }
    }
}

impl From<hieb_core::Error> for CliError {
    fn from(e: hieb_core::Error) -> Self {
        use hieb_core::Error as E;
        let kind = match &e {
            E::Config(_) => Kind::Config,
            E::Data(_) | E::Format { .. } => Kind::Data,
            E::NonFinite { .. } | E::Diverged { .. } | E::TrainingAborted { .. } => Kind::Numerical,
            E::Checkpoint(_) => Kind::Checkpoint,
            _ => Kind::Other,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(Kind::Other, e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::new(Kind::Other, e.to_string())
    }
}
