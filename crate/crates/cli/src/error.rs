use std::path::{Path, PathBuf};

use serde_json::json;

/// Process exit codes.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const MISSING_ARTIFACT: i32 = 3;
    pub const INPUT_DATA: i32 = 4;
    pub const COMPUTATION: i32 = 5;
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    MissingArtifacts(Vec<PathBuf>),
    Input(String),
    Computation(String),
    Other(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Other(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => exit::USAGE,
            CliError::MissingArtifacts(_) => exit::MISSING_ARTIFACT,
            CliError::Input(_) => exit::INPUT_DATA,
            CliError::Computation(_) => exit::COMPUTATION,
            CliError::Other(_) => exit::OTHER,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let (kind, message, missing) = match self {
            CliError::Usage(m) => ("usage", m.clone(), None),
            CliError::Config(m) => ("invalid_config", m.clone(), None),
            CliError::MissingArtifacts(p) => (
                "missing_artifacts",
                "missing artifacts".to_string(),
                Some(p.iter().map(|p| p.display().to_string()).collect::<Vec<_>>()),
            ),
            CliError::Input(m) => ("input_data", m.clone(), None),
            CliError::Computation(m) => ("computation", m.clone(), None),
            CliError::Other(m) => ("other", m.clone(), None),
        };
        let mut v = json!({"error": kind, "message": message, "exit_code": self.exit_code()});
        if let Some(m) = missing {
            v["missing"] = json!(m);
        }
        v
    }
}

impl From<floodgt::Error> for CliError {
    fn from(e: floodgt::Error) -> Self {
        use floodgt::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } => CliError::Other(msg),
            E::Csv(_)
            | E::Json(_)
            | E::Parse { .. }
            | E::Row { .. }
            | E::NoData
            | E::Schema(_)
            | E::ConstantFeature(_)
            | E::InsufficientClass { .. }
            | E::MissingReplacement(_)
            | E::Geometry(_)
            | E::Raster(_) => CliError::Input(msg),
            _ => CliError::Computation(msg),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("json: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(format!("csv: {e}"))
    }
}
