use std::fmt;

use phasesteer::Error;

/// Failure category, reported through the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Io,
    Numeric,
    Degenerate,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Io => 3,
            Category::Numeric => 4,
            Category::Degenerate => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Config => "config error",
            Category::Io => "i/o error",
            Category::Numeric => "numerical error",
            Category::Degenerate => "degenerate input",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category.label(), self.message)
    }
}

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Category::Config, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(Category::Io, message)
    }

    pub fn degenerate(message: impl Into<String>) -> Self {
        Self::new(Category::Degenerate, message)
    }

    /// A required upstream file is absent; `hint` names the command that
    /// produces it.
    pub fn missing(path: impl fmt::Display, hint: &str) -> Self {
        Self::io(format!("missing artifact {path}; run `phasesteer {hint}` first"))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let category = match &e {
            Error::Config(_) | Error::InvalidArgument(_) => Category::Config,
            Error::Numerical(_) => Category::Numeric,
            Error::Degenerate(_) | Error::Shape(_) => Category::Degenerate,
            Error::Format { .. } | Error::Missing(_) | Error::Io { .. } | Error::Serde(_) => Category::Io,
        };
        Self::new(category, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
