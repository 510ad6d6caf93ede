//! Schemas, canonical serialization and output mirrors for the
//! `switchlyap` binary.

pub mod output;
pub mod schema;

#[derive(Debug)]
pub enum CliError {
    /// Malformed input: exit code 2.
    Input(String),
    /// Numerical failure in the analysis: exit code 3.
    Numerical(String),
    Internal(String),
}

impl From<switchlyap_core::Error> for CliError {
    fn from(e: switchlyap_core::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}
