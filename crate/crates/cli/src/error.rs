use std::fmt;
use std::path::Path;

/// Failure of a command: a stable category plus a human-readable message.
#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(category: &'static str, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new("input", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self.category {
            "input" | "config" | "usage" => 2,
            "format" => 3,
            "io" => 4,
            "divergence" => 5,
            "registration" => 6,
            "extractor" => 7,
            _ => 70,
        }
    }

    /// Single-line JSON written to stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": { "category": self.category, "message": self.message } }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<refnpr_core::Error> for CliError {
    fn from(e: refnpr_core::Error) -> Self {
        Self::new(e.category(), e.to_string())
    }
}
