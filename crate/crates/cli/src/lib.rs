//! Command-line pipeline for generated-text query expansion experiments.

pub mod cli;
pub mod config;
pub mod pipeline;

use std::fmt;

/// Bad invocation or contradictory configuration (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<qgen_core::Error>() {
            return if e.is_backend() { EXIT_BACKEND } else { EXIT_DATA };
        }
    }
    EXIT_DATA
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn exit_codes_follow_the_cause() {
        let backend: anyhow::Result<()> = Err(qgen_core::Error::Backend {
            produced: 0,
            message: "down".into(),
        }
        .into());
        assert_eq!(exit_code(&backend.context("generating").unwrap_err()), EXIT_BACKEND);
        let data = anyhow::Error::from(qgen_core::Error::EmptyCollection);
        assert_eq!(exit_code(&data), EXIT_DATA);
        assert_eq!(exit_code(&anyhow::Error::from(UsageError("x".into()))), EXIT_USAGE);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), EXIT_DATA);
    }
}
