//! Pass infrastructure: self-contained module-to-module transformations
//! applied in order, with verification after every pass in debug builds.

use thiserror::Error;

use super::verify::{verify_with, DialectVerifier};
use super::Module;

#[derive(Debug, Error, PartialEq)]
pub enum PassError {
    #[error("pass {pass}: {message}")]
    Failed { pass: String, message: String },
    #[error("pass {pass} requires dialect {dialect} but the module contains none of it")]
    MissingDialect { pass: String, dialect: String },
    #[error("pass {pass} left the module in an invalid state:\n{report}")]
    VerificationFailed { pass: String, report: String },
}

impl PassError {
    pub fn failed(pass: &str, message: impl Into<String>) -> PassError {
        PassError::Failed {
            pass: pass.to_string(),
            message: message.into(),
        }
    }
}

pub trait Pass {
    fn name(&self) -> &str;
    /// Dialects this pass consumes; their absence is a pipeline error.
    fn consumes(&self) -> &[&str] {
        &[]
    }
    fn run(&self, module: &mut Module) -> Result<(), PassError>;
}

/// Applies `passes` in order. Each pass must find its consumed dialects in
/// the module; in debug builds the module is re-verified after every pass.
pub fn run_pipeline(
    module: &mut Module,
    passes: &[&dyn Pass],
    verifiers: &[&dyn DialectVerifier],
) -> Result<(), PassError> {
    for pass in passes {
        for dialect in pass.consumes() {
            if !module.top.contains_dialect(dialect) {
                return Err(PassError::MissingDialect {
                    pass: pass.name().to_string(),
                    dialect: dialect.to_string(),
                });
            }
        }
        pass.run(module)?;
        if cfg!(debug_assertions) {
            if let Err(violations) = verify_with(module, verifiers) {
                let report = violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("\n");
                return Err(PassError::VerificationFailed {
                    pass: pass.name().to_string(),
                    report,
                });
            }
        }
    }
    Ok(())
}
