//! File formats, configuration, result documents, and the command
//! implementations behind the `pama` binary.

pub mod checks;
pub mod commands;
pub mod config;
pub mod io;
pub mod report;

/// Exit codes: 0 success, 1 validation error, 2 runtime/convergence failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Validation,
    Runtime,
}

/// An error carrying its exit classification.
#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn validation(message: impl Into<String>) -> anyhow::Error {
        anyhow::Error::new(Self {
            kind: ExitKind::Validation,
            message: message.into(),
        })
    }

    pub fn runtime(message: impl Into<String>) -> anyhow::Error {
        anyhow::Error::new(Self {
            kind: ExitKind::Runtime,
            message: message.into(),
        })
    }
}

/// Classify an error chain into an exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(cli) = cause.downcast_ref::<CliError>() {
            return match cli.kind {
                ExitKind::Validation => 1,
                ExitKind::Runtime => 2,
            };
        }
        if let Some(core) = cause.downcast_ref::<pama_core::Error>() {
            return match core {
                pama_core::Error::InvalidConfig(_)
                | pama_core::Error::EmptyInput(_)
                | pama_core::Error::UnknownMethod(_)
                | pama_core::Error::DimensionMismatch(_)
                | pama_core::Error::NotAPermutation(_)
                | pama_core::Error::InvalidIndicator(_)
                | pama_core::Error::InvalidPartial
                | pama_core::Error::EntityMismatch { .. } => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
            || cause.downcast_ref::<csv::Error>().is_some()
        {
            return 1;
        }
    }
    2
}

/// Machine-readable error document printed to stdout on failure.
pub fn error_document(err: &anyhow::Error, code: i32) -> String {
    let kind = if code == 1 { "validation" } else { "runtime" };
    serde_json::json!({
        "error": {
            "kind": kind,
            "message": format!("{err:#}"),
        }
    })
    .to_string()
}
